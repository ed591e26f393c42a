"""GAN-based data augmentation and CNN classification of ocular images."""

__version__ = "0.1.0"

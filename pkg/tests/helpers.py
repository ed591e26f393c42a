"""Synthetic fixtures shared by the test modules."""

import numpy as np

from ganaug.dataio import encode_image

CLASS_NAMES = ("circle", "square", "triangle")


def two_tone_fixture(n=64, size=16, seed=0):
    """Half vertical stripes, half offset squares; tones 32 and 224."""
    r = np.random.default_rng(seed)
    imgs = np.full((n, size, size, 3), 32, np.uint8)
    half = size // 2
    for i in range(n):
        if i % 2 == 0:
            w = r.integers(2, 5)
            imgs[i, :, ::w * 2] = 224
        else:
            y0, x0 = r.integers(0, size - half, 2)
            imgs[i, y0:y0 + half, x0:x0 + half] = 224
    return imgs


def shapes_fixture(per_class=10, size=64, seed=0):
    """Circles, squares and triangles in random colours; labels 0, 1, 2."""
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    imgs, labels = [], []
    for k in range(3):
        for _ in range(per_class):
            bg = r.integers(0, 80, 3)
            fg = r.integers(150, 256, 3)
            im = np.empty((size, size, 3), np.uint8)
            im[:] = bg
            cy, cx = r.integers(size // 4, 3 * size // 4, 2)
            rad = r.integers(size // 8, size // 4)
            if k == 0:
                m = (yy - cy) ** 2 + (xx - cx) ** 2 <= rad ** 2
            elif k == 1:
                m = (abs(yy - cy) <= rad) & (abs(xx - cx) <= rad)
            else:
                m = (yy >= cy - rad) & (yy <= cy + rad) & (abs(xx - cx) <= (yy - (cy - rad)) // 2)
            im[m] = fg
            imgs.append(im)
            labels.append(k)
    return np.stack(imgs), np.array(labels)


def write_tree(root, imgs, labels, names=CLASS_NAMES, suffix=".ppm"):
    """Write ``root/<class>/img_<i>.ppm`` and return ``root``."""
    for i, (im, lab) in enumerate(zip(imgs, labels)):
        d = root / names[lab]
        d.mkdir(parents=True, exist_ok=True)
        encode_image(im, d / f"img_{i:04d}{suffix}")
    return root


def pixel_hist(x, bins=16):
    h, _ = np.histogram(np.asarray(x), bins=bins, range=(-1, 1))
    return h / h.sum()

"""DCGAN generator/discriminator pair and the alternating training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import nn
from .dataio import denormalize, save_checkpoint, write_csv
from .errors import EmptyDataset, InvalidConfig, NonFiniteLoss
from .losses import disc_loss, gen_loss, minimax_value
from .nn import NetworkSpec, init_params
from .optim import AdamState
from .tensor import Rng, Tape, Tensor, backward, no_grad

log = logging.getLogger(__name__)


@dataclass
class GanTrainConfig:
    latent_dim: int = 100
    channels: int = 3
    image_size: int = 64
    epochs: int = 650
    batch_size: int = 128
    lr: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    checkpoint_every: int = 50
    base_width: int = 64
    leaky_slope: float = 0.2
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def validate(self) -> "GanTrainConfig":
        s = self.image_size
        if s < 16 or s & (s - 1):
            raise InvalidConfig(f"image_size must be a power of two >= 16, got {s}")
        if self.latent_dim < 1:
            raise InvalidConfig("latent_dim must be >= 1")
        if self.channels < 1 or self.base_width < 1:
            raise InvalidConfig("channels and base_width must be >= 1")
        if self.epochs < 0 or self.batch_size < 1 or self.checkpoint_every < 0:
            raise InvalidConfig("epochs/batch_size/checkpoint_every out of range")
        if self.lr < 0:
            raise InvalidConfig("lr must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidConfig("Adam betas must lie in [0, 1)")
        return self

    @property
    def n_upsample(self) -> int:
        return int(math.log2(self.image_size)) - 2


def build_generator(cfg: GanTrainConfig) -> NetworkSpec:
    """Latent ``(latent_dim, 1, 1)`` -> image ``(channels, image_size, image_size)``.

    A 4x4 seed from a stride-1 transposed conv, then stride-2 transposed convs
    that halve the channels and double the resolution; batch norm and ReLU on
    every block except the Tanh output.
    """
    cfg.validate()
    width = cfg.base_width * 2 ** (cfg.n_upsample - 1)
    bn = dict(momentum=cfg.bn_momentum, eps=cfg.bn_eps)
    layers = [nn.conv_t(cfg.latent_dim, width, 4, 1, 0, bias=False),
              nn.batchnorm(width, **bn), nn.act("relu")]
    for _ in range(cfg.n_upsample - 1):
        layers += [nn.conv_t(width, width // 2, 4, 2, 1, bias=False),
                   nn.batchnorm(width // 2, **bn), nn.act("relu")]
        width //= 2
    layers += [nn.conv_t(width, cfg.channels, 4, 2, 1, bias=False), nn.act("tanh")]
    meta = {"latent_dim": cfg.latent_dim}
    return NetworkSpec((cfg.latent_dim, 1, 1), layers, "generator", meta)


def build_discriminator(cfg: GanTrainConfig) -> NetworkSpec:
    """Image -> probability of being real, shape ``(1,)`` per sample."""
    cfg.validate()
    width = cfg.base_width
    bn = dict(momentum=cfg.bn_momentum, eps=cfg.bn_eps)
    layers = [nn.conv(cfg.channels, width, 4, 2, 1, bias=False), nn.act("leaky_relu", cfg.leaky_slope)]
    for _ in range(cfg.n_upsample - 1):
        layers += [nn.conv(width, width * 2, 4, 2, 1, bias=False), nn.batchnorm(width * 2, **bn),
                   nn.act("leaky_relu", cfg.leaky_slope)]
        width *= 2
    layers += [nn.conv(width, 1, 4, 1, 0, bias=False), nn.act("sigmoid"), nn.flatten_layer()]
    shape = (cfg.channels, cfg.image_size, cfg.image_size)
    return NetworkSpec(shape, layers, "discriminator")


@dataclass
class LossRecord:
    epoch: int
    iter: int
    loss_d: float
    loss_g: float
    d_real: float
    d_fake: float
    minimax: float


@dataclass
class LossHistory:
    records: list[LossRecord] = field(default_factory=list)

    HEADER = ("epoch", "iter", "loss_d", "loss_g", "d_real", "d_fake")

    def append(self, rec: LossRecord) -> None:
        if self.records and (rec.epoch, rec.iter) <= (self.records[-1].epoch, self.records[-1].iter):
            raise ValueError("loss records must be appended in (epoch, iter) order")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def rows(self) -> list[tuple]:
        return [(r.epoch, r.iter, r.loss_d, r.loss_g, r.d_real, r.d_fake) for r in self.records]

    def to_csv(self, path) -> None:
        write_csv(path, self.HEADER, self.rows())


def _as_batch(images) -> np.ndarray:
    arr = images.data if isinstance(images, Tensor) else np.asarray(images, dtype=np.float32)
    if arr.ndim != 4:
        raise EmptyDataset(f"expected an (N, C, H, W) image batch, got shape {arr.shape}")
    return arr


def train_dcgan(images, cfg: GanTrainConfig, checkpoint_dir=None,
                on_epoch: Callable[[int, NetworkSpec, NetworkSpec, LossHistory], None] | None = None):
    """Train one unconditional DCGAN on a single class of images.

    ``images`` is an (N, C, H, W) array scaled to [-1, 1].  Each iteration makes
    one discriminator step on a real batch plus a fresh fake batch, then one
    generator step on newly drawn noise.  Returns ``(G, D, history)``.
    """
    cfg.validate()
    data = _as_batch(images)
    if data.shape[0] == 0:
        raise EmptyDataset("no training images")
    expected = (cfg.channels, cfg.image_size, cfg.image_size)
    if data.shape[1:] != expected:
        raise InvalidConfig(f"images have shape {data.shape[1:]}, config expects {expected}")

    root = Rng(cfg.seed)
    G = init_params(build_generator(cfg), root.spawn(1), "dcgan")
    D = init_params(build_discriminator(cfg), root.spawn(2), "dcgan")
    shuffle_rng, noise_rng = root.spawn(3), root.spawn(4)
    opt_g = AdamState(G.parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    opt_d = AdamState(D.parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    history = LossHistory()
    n = data.shape[0]
    bs = min(cfg.batch_size, n)
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)

    def noise(m):
        return Tensor(noise_rng.normal((m, cfg.latent_dim, 1, 1)))

    for epoch in range(1, cfg.epochs + 1):
        G.train()
        D.train()
        order = shuffle_rng.permutation(n)
        for it, start in enumerate(range(0, n, bs), start=1):
            idx = order[start:start + bs]
            real = Tensor(data[idx])
            m = len(idx)

            # discriminator step; the generator only supplies detached samples
            with no_grad():
                fake = G(noise(m))
            D.zero_grad()
            with Tape() as tape:
                d_real = D(real)
                d_fake = D(fake)
                loss_d = disc_loss(d_real, d_fake)
                backward(tape, loss_d)
            rec = LossRecord(epoch, it, loss_d.item(), float("nan"),
                             float(d_real.data.mean()), float(d_fake.data.mean()),
                             minimax_value(d_real, d_fake))
            if not math.isfinite(rec.loss_d):
                raise NonFiniteLoss(f"discriminator loss is {rec.loss_d} at epoch {epoch} iter {it}", rec)
            opt_d.step()

            # generator step through the (not updated) discriminator
            G.zero_grad()
            with Tape() as tape:
                loss_g = gen_loss(D(G(noise(m))))
                backward(tape, loss_g)
            rec.loss_g = loss_g.item()
            if not math.isfinite(rec.loss_g):
                raise NonFiniteLoss(f"generator loss is {rec.loss_g} at epoch {epoch} iter {it}", rec)
            opt_g.step()
            D.zero_grad()
            history.append(rec)

        if ckpt is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_checkpoint(G, ckpt / f"generator_epoch_{epoch:04d}.gacp")
            save_checkpoint(D, ckpt / f"discriminator_epoch_{epoch:04d}.gacp")
        if on_epoch is not None:
            on_epoch(epoch, G, D, history)
        last = history.records[-1]
        log.debug("epoch %d loss_d=%.4f loss_g=%.4f", epoch, last.loss_d, last.loss_g)

    if ckpt is not None:
        save_checkpoint(G, ckpt / "generator.gacp")
        save_checkpoint(D, ckpt / "discriminator.gacp")
    return G, D, history


def generate(G: NetworkSpec, n: int, rng: Rng, batch: int = 256) -> np.ndarray:
    """``n`` generator outputs in [-1, 1] as an (n, C, H, W) float array.

    Batch norm runs on running statistics, so each image depends only on its
    own latent vector.
    """
    latent = G.input_shape
    out = np.zeros((n,) + G.output_shape, dtype=np.float32)
    was_training = G.training
    G.eval()
    try:
        with no_grad():
            for start in range(0, n, batch):
                m = min(batch, n - start)
                out[start:start + m] = G(Tensor(rng.normal((m,) + latent))).data
    finally:
        G.training = was_training
    return out


def sample_images(G: NetworkSpec, n: int, rng: Rng, batch: int = 256) -> np.ndarray:
    """``n`` synthetic images as (n, H, W, C) uint8, mapped from [-1, 1] to [0, 255]."""
    return denormalize(generate(G, n, rng, batch), "gan")


def config_dict(cfg: GanTrainConfig) -> dict:
    return asdict(cfg)

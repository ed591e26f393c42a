"""Adversarial objectives and the classifier cross-entropy.

Expectations over the real and generated distributions are realized as batch
means.  Probabilities are clamped to ``[PROB_EPS, 1 - PROB_EPS]`` before any
logarithm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LabelOutOfRange, ShapeMismatch
from .tensor import Tensor, clamp, log, make_result

PROB_EPS = 1e-7


@dataclass
class GanLossPair:
    loss_d: float
    loss_g: float
    d_on_real: float
    d_on_fake: float


def _check_probs(t: Tensor, name: str) -> None:
    if t.ndim != 2 or t.shape[1] != 1:
        raise ShapeMismatch(f"{name} must have shape [N, 1], got {t.shape}")


def _log_prob(p: Tensor) -> Tensor:
    return log(clamp(p, PROB_EPS, 1.0 - PROB_EPS))


def _log_one_minus(p: Tensor) -> Tensor:
    return log(1.0 - clamp(p, PROB_EPS, 1.0 - PROB_EPS))


def _gan_terms(d_real: Tensor, d_fake: Tensor) -> tuple[Tensor, Tensor]:
    _check_probs(d_real, "d_real")
    _check_probs(d_fake, "d_fake")
    return _log_prob(d_real).mean(), _log_one_minus(d_fake).mean()


def disc_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """``-mean(log D(x)) - mean(log(1 - D(G(z))))``."""
    real_term, fake_term = _gan_terms(d_real, d_fake)
    return -real_term - fake_term


def gen_loss(d_fake: Tensor) -> Tensor:
    """Non-saturating generator loss ``-mean(log D(G(z)))``."""
    _check_probs(d_fake, "d_fake")
    return -_log_prob(d_fake).mean()


def minimax_value(d_real: Tensor, d_fake: Tensor) -> float:
    """Value of the two-player objective; only logged, never optimized."""
    real_term, fake_term = _gan_terms(d_real.detach(), d_fake.detach())
    return (real_term + fake_term).item()


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    if logits.ndim != 2:
        raise ShapeMismatch(f"logits must be [N, K], got {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise ShapeMismatch(f"{labels.shape[0]} labels for {n} rows of logits")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(n)
    loss = -logp[rows, labels].mean(dtype=np.float64)

    def bw(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1
        return (grad * (g.reshape(()) / n),)

    return make_result(np.array([loss], dtype=z.dtype), (logits,), bw)

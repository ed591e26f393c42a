"""SSIM quality gate and classification evaluation (confusion matrix, ROC, AUC)."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataio import write_csv
from .errors import DegenerateClass, DimensionMismatch, EmptyClass, LabelOutOfRange, ShapeMismatch
from .tensor import Rng

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 255.0
    channel_policy: str = "luma"  # or "per_channel"
    pairing: str = "max"  # or "mean"
    real_cap: int = 100
    seed: int = 0

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


def gaussian_window_1d(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    g = gaussian_window_1d(size, sigma)
    return np.outer(g, g)


def _planes(img, policy: str) -> list[np.ndarray]:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return [arr]
    if arr.ndim != 3:
        raise DimensionMismatch(f"expected an (H, W) or (H, W, C) image, got {arr.shape}")
    if policy == "luma":
        if arr.shape[2] == 1:
            return [arr[..., 0]]
        return [arr[..., :3] @ np.array(LUMA_WEIGHTS)]
    if policy == "per_channel":
        return [arr[..., c] for c in range(arr.shape[2])]
    raise ValueError(f"unknown channel policy {policy!r}")


def _filter(plane: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Valid-mode separable Gaussian filter."""
    n = g.size
    rows = sliding_window_view(plane, n, axis=0) @ g
    return sliding_window_view(rows, n, axis=1) @ g


def _ssim_plane(a: np.ndarray, b: np.ndarray, cfg: SsimConfig) -> float:
    g = gaussian_window_1d(cfg.window, cfg.sigma)
    mu_a, mu_b = _filter(a, g), _filter(b, g)
    var_a = _filter(a * a, g) - mu_a * mu_a
    var_b = _filter(b * b, g) - mu_b * mu_b
    cov = _filter(a * b, g) - mu_a * mu_b
    c1, c2 = cfg.c1, cfg.c2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim_pair(a, b, cfg: SsimConfig | None = None) -> float:
    """Mean SSIM over every valid window position (stride 1)."""
    cfg = cfg or SsimConfig()
    if np.shape(a) != np.shape(b):
        raise DimensionMismatch(f"image shapes differ: {np.shape(a)} vs {np.shape(b)}")
    pa, pb = _planes(a, cfg.channel_policy), _planes(b, cfg.channel_policy)
    h, w = pa[0].shape
    if h < cfg.window or w < cfg.window:
        raise DimensionMismatch(f"{h}x{w} image is smaller than the {cfg.window}x{cfg.window} window")
    return float(np.mean([_ssim_plane(x, y, cfg) for x, y in zip(pa, pb)]))


@dataclass
class SsimRow:
    class_name: str
    max: float
    mean: float
    min: float
    scores: list[float] = field(default_factory=list, repr=False)


@dataclass
class SsimReport:
    rows: list[SsimRow]

    HEADER = ("class", "max", "mean", "min")

    def to_csv(self, path) -> None:
        write_csv(path, self.HEADER, [(r.class_name, r.max, r.mean, r.min) for r in self.rows])

    def __getitem__(self, name: str) -> SsimRow:
        for r in self.rows:
            if r.class_name == name:
                return r
        raise KeyError(name)


def ssim_report(generated: dict, real: dict, cfg: SsimConfig | None = None) -> SsimReport:
    """Per-class max/mean/min of per-generated-image SSIM scores.

    Each generated image is scored against a seeded sample of at most
    ``cfg.real_cap`` real images of its class, keeping the best match
    (``pairing="max"``) or the average (``pairing="mean"``).
    """
    cfg = cfg or SsimConfig()
    if cfg.pairing not in ("max", "mean"):
        raise ValueError(f"unknown pairing policy {cfg.pairing!r}")
    rows = []
    for ci, name in enumerate(generated):
        gen = list(generated[name])
        ref = list(real.get(name, []))
        if not gen or not ref:
            raise EmptyClass(f"class {name!r} needs generated and real images")
        rng = Rng(cfg.seed).spawn(ci)
        if len(ref) > cfg.real_cap > 0:
            ref = [ref[i] for i in sorted(rng.choice(len(ref), cfg.real_cap))]
        scores = []
        for g in gen:
            vals = [ssim_pair(g, r, cfg) for r in ref]
            scores.append(max(vals) if cfg.pairing == "max" else float(np.mean(vals)))
        rows.append(SsimRow(name, max(scores), float(np.mean(scores)), min(scores), scores))
    return SsimReport(rows)


# classification --------------------------------------------------------------

@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows: true class, columns: predicted class

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]


def _labels(values, k: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.int64).reshape(-1)
    if arr.size and (arr.min() < 0 or arr.max() >= k):
        raise LabelOutOfRange(f"{name} labels must lie in [0, {k})")
    return arr


def confusion_matrix(true, pred, k: int) -> ConfusionMatrix:
    t, p = _labels(true, k, "true"), _labels(pred, k, "predicted")
    if t.shape != p.shape:
        raise ShapeMismatch(f"{t.size} true labels but {p.size} predictions")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def accuracy(true, pred) -> float:
    t, p = np.asarray(true), np.asarray(pred)
    return float(np.mean(t == p)) if t.size else float("nan")


def per_class_accuracy(cm: ConfusionMatrix) -> tuple[list[float], float]:
    """Diagonal over row sums (NaN for a class with no samples) and trace over total."""
    counts = cm.counts
    if counts.size == 0 or cm.total == 0:
        raise EmptyClass("confusion matrix is empty")
    rows = counts.sum(axis=1)
    per = [float(counts[i, i] / rows[i]) if rows[i] else float("nan") for i in range(len(rows))]
    return per, float(np.trace(counts) / cm.total)


@dataclass
class RocCurve:
    class_index: int
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def rows(self) -> list[tuple]:
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))


def roc_curve(scores, true, k: int) -> RocCurve:
    """One-vs-rest ROC for class ``k``.

    ``scores`` is either an (N, K) probability matrix or the N scores of class
    ``k``.  Thresholds sweep the distinct scores in descending order (ties
    share a point), preceded by +inf so the curve starts at (0, 0).
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim == 2:
        s = s[:, k]
    positive = np.asarray(true).reshape(-1) == k
    if s.shape != positive.shape:
        raise ShapeMismatch(f"{s.size} scores but {positive.size} labels")
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateClass(f"class {k} has {n_pos} positives and {n_neg} negatives")
    order = np.argsort(-s, kind="stable")
    s_sorted, pos_sorted = s[order], positive[order]
    tp = np.cumsum(pos_sorted)
    fp = np.cumsum(~pos_sorted)
    # the last index of each run of equal scores closes that threshold
    last = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    thresholds = np.r_[np.inf, s_sorted[last]]
    tpr = np.r_[0.0, tp[last] / n_pos]
    fpr = np.r_[0.0, fp[last] / n_neg]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return RocCurve(k, thresholds, fpr, tpr, auc)


def pairwise_auc(scores, positive) -> float:
    """Fraction of (positive, negative) pairs ranked correctly, ties counted 1/2."""
    s = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    pos, neg = s[positive], s[~positive]
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


@dataclass
class EvalReport:
    class_names: list[str]
    confusion: ConfusionMatrix
    per_class_acc: list[float]
    overall_acc: float
    rocs: list[RocCurve | None]
    macro_auc: float

    @property
    def aucs(self) -> list[float]:
        return [r.auc if r is not None else float("nan") for r in self.rocs]


def evaluate_predictions(probs, true, class_names) -> EvalReport:
    probs = np.asarray(probs, dtype=np.float64)
    k = len(class_names)
    true = _labels(true, k, "true")
    pred = np.argmax(probs, axis=1)
    cm = confusion_matrix(true, pred, k)
    per, overall = per_class_accuracy(cm)
    rocs = []
    for c in range(k):
        try:
            rocs.append(roc_curve(probs, true, c))
        except DegenerateClass:
            rocs.append(None)
    defined = [r.auc for r in rocs if r is not None]
    macro = float(np.mean(defined)) if defined else float("nan")
    return EvalReport(list(class_names), cm, per, overall, rocs, macro)


def write_eval_reports(report: EvalReport, out_dir) -> list[Path]:
    """``confusion.csv``, ``roc_class_<k>.csv`` per class and ``summary.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = report.class_names
    written = []
    path = out / "confusion.csv"
    write_csv(path, ["true\\pred"] + names,
              [[names[i]] + [int(v) for v in row] for i, row in enumerate(report.confusion.counts)])
    written.append(path)
    for k, roc in enumerate(report.rocs):
        path = out / f"roc_class_{k}.csv"
        write_csv(path, ("threshold", "fpr", "tpr"), roc.rows() if roc is not None else [])
        written.append(path)
    path = out / "summary.csv"
    rows = [(names[k], report.per_class_acc[k], report.aucs[k]) for k in range(len(names))]
    rows.append(("overall", report.overall_acc, report.macro_auc))
    write_csv(path, ("class", "accuracy", "auc"), rows)
    written.append(path)
    return written

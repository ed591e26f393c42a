"""Class-per-directory datasets, stratified splits and CSV output."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import MissingClassDir, NoImages, UndecodableImage
from ..tensor import Rng
from .images import IMAGE_SUFFIXES, decode_image

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass
class ImageRecord:
    pixels: np.ndarray
    class_label: int
    source_path: str


@dataclass
class DatasetManifest:
    class_names: list[str]
    paths: list[str]
    labels: list[int]
    splits: list[str]
    seed: int = 0
    skipped: int = 0

    @property
    def counts(self) -> dict[str, int]:
        out = {name: 0 for name in self.class_names}
        for lab in self.labels:
            out[self.class_names[lab]] += 1
        return out

    def indices(self, split: str) -> list[int]:
        return [i for i, s in enumerate(self.splits) if s == split]

    def to_json(self) -> str:
        return json.dumps({
            "class_names": self.class_names,
            "counts": self.counts,
            "seed": self.seed,
            "skipped": self.skipped,
            "records": [{"path": p, "label": l, "split": s}
                        for p, l, s in zip(self.paths, self.labels, self.splits)],
        }, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        recs = d["records"]
        return cls(d["class_names"], [r["path"] for r in recs], [r["label"] for r in recs],
                   [r["split"] for r in recs], d.get("seed", 0), d.get("skipped", 0))


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    return sorted((p for p in directory.iterdir()
                   if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES), key=lambda p: p.name)


def class_dirs(root) -> list[str]:
    root = Path(root)
    if not root.is_dir():
        raise MissingClassDir(f"dataset root {root} does not exist")
    return sorted(p.name for p in root.iterdir() if p.is_dir())


def load_dataset(root, classes=None) -> tuple[list[ImageRecord], DatasetManifest]:
    """Read ``root/<class>/*.{ppm,png}`` in lexicographic order.

    Labels follow the order of ``classes`` (all subdirectories, sorted, when
    None).  Undecodable files are skipped and counted; a class left with no
    images raises :class:`NoImages`.
    """
    root = Path(root)
    if classes is None:
        classes = class_dirs(root)
    classes = list(classes)
    if not classes:
        raise NoImages(f"{root} has no class directories")
    records: list[ImageRecord] = []
    skipped = 0
    for label, name in enumerate(classes):
        cdir = root / name
        if not cdir.is_dir():
            raise MissingClassDir(f"missing class directory {cdir}")
        n_before = len(records)
        for path in list_images(cdir):
            try:
                pixels = decode_image(path)
            except UndecodableImage as e:
                log.warning("skipping %s: %s", path, e)
                skipped += 1
                continue
            records.append(ImageRecord(pixels, label, f"{name}/{path.name}"))
        if len(records) == n_before:
            raise NoImages(f"no decodable images in {cdir}")
    manifest = DatasetManifest(classes, [r.source_path for r in records],
                               [r.class_label for r in records], ["train"] * len(records),
                               skipped=skipped)
    return records, manifest


def stratified_assign(labels, num_classes: int, val_fraction: float, seed: int,
                      test_fraction: float = 0.0) -> list[str]:
    """Split names per record, chosen per class with a seeded shuffle.

    Each class with at least two records keeps at least one training and one
    validation record when ``val_fraction`` > 0.
    """
    rng = Rng(seed)
    labels = np.asarray(labels)
    splits = ["train"] * len(labels)
    for k in range(num_classes):
        idx = np.flatnonzero(labels == k)
        idx = idx[rng.permutation(len(idx))]
        n = len(idx)
        n_val = int(round(val_fraction * n))
        if val_fraction > 0 and n >= 2:
            n_val = min(max(n_val, 1), n - 1)
        n_test = max(0, min(int(round(test_fraction * n)), n - n_val - 1))
        for i in idx[:n_val]:
            splits[i] = "val"
        for i in idx[n_val:n_val + n_test]:
            splits[i] = "test"
    return splits


def stratified_split(manifest: DatasetManifest, val_fraction: float, seed: int,
                     test_fraction: float = 0.0) -> DatasetManifest:
    splits = stratified_assign(manifest.labels, len(manifest.class_names), val_fraction, seed,
                               test_fraction)
    return DatasetManifest(list(manifest.class_names), list(manifest.paths), list(manifest.labels),
                           splits, seed, manifest.skipped)


def stack_images(records) -> np.ndarray:
    """(N, H, W, 3) uint8 array; all records must share one size."""
    return np.stack([r.pixels for r in records]) if records else np.zeros((0, 1, 1, 3), np.uint8)


# CSV --------------------------------------------------------------------------

def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.6g" % float(v)
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(csv_text(header, rows))
    os.replace(tmp, path)


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

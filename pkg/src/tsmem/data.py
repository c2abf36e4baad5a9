"""Dataset ingestion and synthesis.

Input files are UCR-style delimited text: one series per line, integer label
first, then the values, tab- or comma-separated. NaN cells mark unobserved
trailing timesteps. Native lengths are aligned to the model's input length by
right-padding (shorter) or linear-interpolation resampling (longer).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .preprocess import SeriesBatch
from .rng import RngState


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class DatasetMeta:
    name: str
    num_classes: int
    series_length: int  # native length before alignment
    train_size: int = 0
    test_size: int = 0
    type_tag: str | None = None
    label_map: dict[int, int] = field(default_factory=dict)  # original -> contiguous

    def manifest_row(self) -> str:
        verdict = "pass" if bakeoff_filter(self) else "excluded"
        return f"{self.name},{self.num_classes},{self.series_length},{self.train_size},{self.test_size},{verdict}"


@dataclass
class Split:
    train: SeriesBatch
    test: SeriesBatch
    meta: DatasetMeta

    def __post_init__(self):
        train_labels = set(np.unique(self.train.labels))
        test_labels = set(np.unique(self.test.labels))
        if not test_labels <= train_labels:
            raise DataError(f"test labels {sorted(test_labels - train_labels)} never appear in train split")


def _parse_label(cell: str, lineno: int) -> int:
    try:
        value = float(cell)
    except ValueError as exc:
        raise DataError(f"line {lineno}: non-numeric label {cell!r}") from exc
    if not value.is_integer():
        raise DataError(f"line {lineno}: label {cell!r} is not an integer")
    return int(value)


def load_tsv(path, name: str | None = None, require_classes: bool = True) -> tuple[DatasetMeta, SeriesBatch]:
    """Parse one UCR-style file into a labeled batch.

    Labels are remapped to contiguous 0..C-1 (ascending original order); the
    mapping is recorded in the returned metadata. ``require_classes=False``
    admits single-class files (unlabeled pretraining corpora).
    """
    rows: list[list[str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            sep = "\t" if "\t" in line else ","
            cells = [c for c in line.split(sep) if c != ""]
            if len(cells) < 3:
                raise DataError(f"line {lineno}: expected a label and at least 2 values")
            rows.append(cells)
            if len(cells) != len(rows[0]):
                raise DataError(
                    f"line {lineno}: ragged row ({len(cells)} cells, expected {len(rows[0])})"
                )
    if not rows:
        raise DataError(f"{path}: empty dataset file")

    n, length = len(rows), len(rows[0]) - 1
    labels_raw = np.empty(n, dtype=np.int64)
    values = np.zeros((n, length))
    valid = np.zeros((n, length), dtype=bool)
    for i, cells in enumerate(rows):
        labels_raw[i] = _parse_label(cells[0], i + 1)
        for j, cell in enumerate(cells[1:]):
            try:
                v = float(cell)
            except ValueError as exc:
                raise DataError(f"line {i + 1}: non-numeric cell {cell!r}") from exc
            if math.isnan(v):
                valid[i, j] = False
            else:
                values[i, j] = v
                valid[i, j] = True

    uniq = sorted(set(labels_raw.tolist()))
    if require_classes and len(uniq) < 2:
        raise DataError(f"{path}: need at least 2 classes, found {uniq}")
    label_map = {orig: new for new, orig in enumerate(uniq)}
    labels = np.array([label_map[v] for v in labels_raw], dtype=np.int64)

    stem = name
    if stem is None:
        stem = str(path).rsplit("/", 1)[-1]
        for suffix in (".tsv", ".txt", ".csv"):
            stem = stem.removesuffix(suffix)
        for suffix in ("_TRAIN", "_TEST"):
            stem = stem.removesuffix(suffix)
    meta = DatasetMeta(name=stem, num_classes=len(uniq), series_length=length, label_map=label_map)
    try:
        batch = SeriesBatch(values, valid, labels)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return meta, batch


def load_split(train_path, test_path) -> Split:
    """Load a train/test pair with a shared label mapping fit on train."""
    meta, train = load_tsv(train_path)
    test_meta, test_raw = load_tsv(test_path)
    if test_meta.series_length != meta.series_length:
        raise DataError(
            f"native lengths differ: train {meta.series_length}, test {test_meta.series_length}"
        )
    # re-map test labels through the train mapping
    inverse = {new: orig for orig, new in test_meta.label_map.items()}
    remapped = []
    for lab in test_raw.labels:
        orig = inverse[int(lab)]
        if orig not in meta.label_map:
            raise DataError(f"test label {orig} never appears in train split")
        remapped.append(meta.label_map[orig])
    test = SeriesBatch(test_raw.values, test_raw.valid, np.array(remapped, dtype=np.int64))
    meta.train_size = train.batch_size
    meta.test_size = test.batch_size
    return Split(train=train, test=test, meta=meta)


def align_length(batch: SeriesBatch, target_len: int = 256) -> SeriesBatch:
    """Align native lengths to the model input length.

    Shorter series are right-padded with zeros (valid prefix preserved);
    longer ones are linearly resampled over their valid region to exactly
    ``target_len`` points, endpoints preserved.
    """
    b, length = batch.values.shape
    if length == target_len:
        return batch
    if length < target_len:
        values = np.zeros((b, target_len))
        valid = np.zeros((b, target_len), dtype=bool)
        values[:, :length] = batch.values
        valid[:, :length] = batch.valid
        return SeriesBatch(values, valid, batch.labels)
    values = np.empty((b, target_len))
    grid = np.arange(target_len, dtype=np.float64)
    for i in range(b):
        xs = batch.values[i][batch.valid[i]]
        src = np.linspace(0.0, target_len - 1.0, num=xs.size)
        values[i] = np.interp(grid, src, xs)
    return SeriesBatch(values, np.ones((b, target_len), dtype=bool), batch.labels)


def bakeoff_filter(meta: DatasetMeta) -> bool:
    """Keep datasets with fewer than 8 classes and native length under 400."""
    return meta.num_classes < 8 and meta.series_length < 400


def make_batches(
    batch: SeriesBatch, batch_size: int, rng: RngState | None = None, shuffle: bool = False
) -> Iterator[SeriesBatch]:
    """Deterministic batch iterator; the final partial batch is kept."""
    n = batch.batch_size
    order = rng.permutation(n) if shuffle and rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield batch.take(order[start : start + batch_size])


# -- synthetic corpora -----------------------------------------------------------------

SYNTH_KINDS = ("sine", "ar1", "square", "trend-mix")


def synth_corpus(kind: str, n: int, length: int, rng: RngState) -> SeriesBatch:
    """Generate one family of labeled synthetic series (label = 0 for all).

    sine: random-frequency/phase sinusoids plus light noise. ar1: AR(1) with
    coefficient 0.9. square: random-period square waves. trend-mix: linear
    trend plus a sinusoid. Combine families with :func:`synth_classification`
    for separable-by-construction class problems.
    """
    if kind not in SYNTH_KINDS:
        raise ValueError(f"unknown synthetic kind {kind!r}, choose from {SYNTH_KINDS}")
    t = np.arange(length, dtype=np.float64)
    values = np.empty((n, length))
    if kind == "sine":
        freq = rng.uniform((n,), 4.0, 12.0)
        phase = rng.uniform((n,), 0.0, 2.0 * np.pi)
        amp = rng.uniform((n,), 0.8, 1.2)
        noise = rng.normal((n, length), 0.0, 0.05)
        values = amp[:, None] * np.sin(2.0 * np.pi * freq[:, None] * t / length + phase[:, None]) + noise
    elif kind == "ar1":
        eps = rng.normal((n, length), 0.0, 1.0)
        values[:, 0] = eps[:, 0]
        for j in range(1, length):
            values[:, j] = 0.9 * values[:, j - 1] + eps[:, j]
    elif kind == "square":
        period = rng.integers(8, 33, (n,))
        phase = rng.integers(0, 8, (n,))
        noise = rng.normal((n, length), 0.0, 0.05)
        for i in range(n):
            values[i] = np.where(((t + phase[i]) // (period[i] // 2)) % 2 == 0, 1.0, -1.0)
        values += noise
    else:  # trend-mix
        slope = rng.uniform((n,), -2.0, 2.0)
        freq = rng.uniform((n,), 2.0, 6.0)
        noise = rng.normal((n, length), 0.0, 0.1)
        values = slope[:, None] * (t / length) + 0.5 * np.sin(2.0 * np.pi * freq[:, None] * t / length) + noise
    labels = np.zeros(n, dtype=np.int64)
    return SeriesBatch(values, np.ones((n, length), dtype=bool), labels)


def synth_classification(kinds: list[str], n_per_class: int, length: int, rng: RngState) -> SeriesBatch:
    """Stack one family per class; label = index into ``kinds``."""
    parts = []
    labels = []
    for idx, kind in enumerate(kinds):
        part = synth_corpus(kind, n_per_class, length, rng.spawn(f"class{idx}-{kind}"))
        parts.append(part.values)
        labels.append(np.full(n_per_class, idx, dtype=np.int64))
    values = np.concatenate(parts, axis=0)
    return SeriesBatch(values, np.ones_like(values, dtype=bool), np.concatenate(labels))


def write_tsv(path, batch: SeriesBatch) -> None:
    """Write a batch in the UCR-style format this package reads."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(batch.batch_size):
            label = 0 if batch.labels is None else int(batch.labels[i])
            cells = [str(label)]
            for j in range(batch.length):
                cells.append(repr(batch.values[i, j]) if batch.valid[i, j] else "NaN")
            fh.write("\t".join(cells) + "\n")

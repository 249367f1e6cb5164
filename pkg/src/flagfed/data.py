"""Multi-label dataset containers, a planted-theme synthetic generator, and
JSON-lines persistence.

On disk a dataset is one JSON header line ``{"N", "D", "L", "label_names"}``
followed by ``N`` lines ``{"x": [D floats], "y": [ascending positive label
indices]}``. Floats are written with ``repr`` precision so a save/load round
trip is bit exact.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, IntegrityError, ParseError

log = logging.getLogger(__name__)


def as_label_matrix(labels) -> np.ndarray:
    """Validate and return an ``N x L`` uint8 matrix with entries in {0, 1}."""
    arr = np.asarray(labels)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ConfigurationError(f"label matrix must be 2-D with N>=1 and L>=1, got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ConfigurationError("label matrix entries must be 0 or 1")
    return arr.astype(np.uint8, copy=False)


@dataclass(frozen=True, eq=False)
class MultiLabelDataset:
    features: np.ndarray
    labels: np.ndarray
    label_names: tuple[str, ...]
    # planted theme per row; generator metadata, not persisted
    themes: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = as_label_matrix(self.labels)
        if features.ndim != 2:
            raise ConfigurationError(f"features must be 2-D, got shape {features.shape}")
        if features.shape[0] != labels.shape[0]:
            raise ConfigurationError(
                f"features have {features.shape[0]} rows but labels have {labels.shape[0]}"
            )
        if not np.isfinite(features).all():
            raise ConfigurationError("features contain non-finite values")
        names = tuple(str(n) for n in self.label_names)
        if len(names) != labels.shape[1]:
            raise ConfigurationError(f"{len(names)} label names for {labels.shape[1]} labels")
        features.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "label_names", names)
        if self.themes is not None:
            themes = np.asarray(self.themes, dtype=np.int64)
            themes.flags.writeable = False
            object.__setattr__(self, "themes", themes)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_labels(self) -> int:
        return self.labels.shape[1]

    def __len__(self):
        return self.n_samples

    def __eq__(self, other):
        if not isinstance(other, MultiLabelDataset):
            return NotImplemented
        return (
            self.label_names == other.label_names
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None

    def subset(self, index) -> MultiLabelDataset:
        index = np.asarray(index, dtype=np.int64)
        themes = None if self.themes is None else self.themes[index]
        return MultiLabelDataset(self.features[index], self.labels[index], self.label_names, themes)

    @classmethod
    def concat(cls, parts) -> MultiLabelDataset:
        parts = list(parts)
        if not parts:
            raise ConfigurationError("cannot concatenate zero datasets")
        names = parts[0].label_names
        if any(p.label_names != names for p in parts):
            raise ConfigurationError("datasets disagree on label names")
        themes = None
        if all(p.themes is not None for p in parts):
            themes = np.concatenate([p.themes for p in parts])
        return cls(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            names,
            themes,
        )


@dataclass(frozen=True)
class SynthSpec:
    n_samples: int = 20000
    n_labels: int = 40
    n_features: int = 64
    n_themes: int = 10
    theme_overlap: float = 0.1
    label_density: int = 3
    noise_std: float = 0.3
    seed: int = 0

    def validate(self):
        if self.n_samples < 1:
            raise ConfigurationError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.n_labels < 1:
            raise ConfigurationError(f"n_labels must be >= 1, got {self.n_labels}")
        if self.n_features < 1:
            raise ConfigurationError(f"n_features must be >= 1, got {self.n_features}")
        if self.n_themes < 1:
            raise ConfigurationError(f"n_themes must be >= 1, got {self.n_themes}")
        if self.n_themes > self.n_labels:
            raise ConfigurationError(
                f"n_themes ({self.n_themes}) must not exceed n_labels ({self.n_labels})"
            )
        if self.label_density < 1:
            raise ConfigurationError(f"label_density must be >= 1, got {self.label_density}")
        if not 0.0 <= self.theme_overlap <= 1.0:
            raise ConfigurationError(f"theme_overlap must lie in [0, 1], got {self.theme_overlap}")
        if not self.noise_std >= 0.0:
            raise ConfigurationError(f"noise_std must be >= 0, got {self.noise_std}")


def theme_groups(n_labels: int, n_themes: int) -> list[np.ndarray]:
    """Contiguous label groups whose sizes differ by at most one."""
    return np.array_split(np.arange(n_labels), n_themes)


def label_prototypes(spec: SynthSpec) -> np.ndarray:
    """One unit-norm direction per label, fixed by ``spec.seed``."""
    rng = np.random.default_rng([spec.seed, 0])
    protos = rng.standard_normal((spec.n_labels, spec.n_features))
    return protos / np.linalg.norm(protos, axis=1, keepdims=True)


def generate_synthetic(spec: SynthSpec, stream: int = 0) -> MultiLabelDataset:
    """Draw ``spec.n_samples`` rows with planted label themes.

    Label prototypes depend only on ``spec.seed``; ``stream`` selects an
    independent sample draw so train and validation sets can share prototypes
    and themes while containing different rows.
    """
    spec.validate()
    n, n_labels = spec.n_samples, spec.n_labels
    groups = theme_groups(n_labels, spec.n_themes)
    protos = label_prototypes(spec)
    rng = np.random.default_rng([spec.seed, 1, stream])

    themes = rng.integers(spec.n_themes, size=n)
    labels = np.zeros((n, n_labels), dtype=np.uint8)
    for k, group in enumerate(groups):
        rows = np.flatnonzero(themes == k)
        take = min(spec.label_density, group.size)
        # distinct uniform draw per row: top-`take` of random keys
        keys = rng.random((rows.size, group.size))
        picks = group[np.argsort(keys, axis=1, kind="stable")[:, :take]]
        labels[rows[:, None], picks] = 1

    extra = rng.random(n) < spec.theme_overlap
    foreign = rng.random(n)
    for k, group in enumerate(groups):
        outside = np.setdiff1d(np.arange(n_labels), group)
        rows = np.flatnonzero(extra & (themes == k))
        if outside.size == 0 or rows.size == 0:
            continue
        choice = np.minimum((foreign[rows] * outside.size).astype(np.int64), outside.size - 1)
        labels[rows, outside[choice]] = 1

    features = labels.astype(np.float64) @ protos
    if spec.noise_std > 0:
        features = features + spec.noise_std * rng.standard_normal((n, spec.n_features))

    names = tuple(f"label_{j:0{len(str(n_labels - 1))}d}" for j in range(n_labels))
    return MultiLabelDataset(features, labels, names, themes)


def save_dataset(ds: MultiLabelDataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"N": ds.n_samples, "D": ds.n_features, "L": ds.n_labels, "label_names": list(ds.label_names)}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header) + "\n")
        for x, y in zip(ds.features, ds.labels):
            row = {"x": x.tolist(), "y": np.flatnonzero(y).tolist()}
            fh.write(json.dumps(row, allow_nan=False) + "\n")


def _header_int(header, key, lineno):
    value = header.get(key)
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise ParseError(f"header field {key!r} must be a non-negative integer", lineno)
    return value


def load_dataset(path) -> MultiLabelDataset:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("missing header", 1)

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed header: {exc.msg}", 1) from None
    if not isinstance(header, dict):
        raise ParseError("header must be a JSON object", 1)
    n = _header_int(header, "N", 1)
    d = _header_int(header, "D", 1)
    n_labels = _header_int(header, "L", 1)
    names = header.get("label_names")
    if not isinstance(names, list) or len(names) != n_labels:
        raise ParseError(f"label_names must be a list of {n_labels} strings", 1)

    body = lines[1:]
    if len(body) != n:
        raise IntegrityError(f"{path}: header declares N={n} but file has {len(body)} data lines")
    if n < 1:
        raise IntegrityError(f"{path}: dataset is empty")

    features = np.empty((n, d), dtype=np.float64)
    labels = np.zeros((n, n_labels), dtype=np.uint8)
    for i, line in enumerate(body):
        lineno = i + 2
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON: {exc.msg}", lineno) from None
        if not isinstance(row, dict) or "x" not in row or "y" not in row:
            raise ParseError('expected an object with "x" and "y"', lineno)
        x, y = row["x"], row["y"]
        if not isinstance(x, list) or len(x) != d:
            raise ParseError(f'"x" must be a list of {d} numbers', lineno)
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in x):
            raise ParseError('"x" must contain only numbers', lineno)
        if not all(math.isfinite(v) for v in x):
            raise ParseError('"x" contains a non-finite value', lineno)
        if not isinstance(y, list) or not all(isinstance(j, int) and not isinstance(j, bool) for j in y):
            raise ParseError('"y" must be a list of integer label indices', lineno)
        if any(j < 0 or j >= n_labels for j in y):
            raise ParseError(f'"y" index out of range [0, {n_labels})', lineno)
        if any(a >= b for a, b in zip(y, y[1:])):
            raise ParseError('"y" indices must be strictly ascending', lineno)
        features[i] = x
        labels[i, y] = 1

    empty = int((labels.sum(axis=1) == 0).sum())
    if empty:
        log.warning("%s: %d rows have no positive label", path, empty)
    return MultiLabelDataset(features, labels, tuple(names))

"""Datasets, plain-text file formats, minibatch sampling and synthetic data.

Class indices are 0-based internally with seen classes first:
seen = 0..C_s-1, unseen = C_s..C-1. Files written by this module use
1-based ids in the same order.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

SEMANTIC_MODES = ("attributes", "tfidf")


class DataError(ValueError):
    """Malformed or inconsistent dataset files."""


@dataclass(frozen=True)
class SemanticTable:
    vectors: np.ndarray
    mode: str = "attributes"

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise DataError(f"semantic table must be 2-D, got shape {v.shape}")
        if self.mode not in SEMANTIC_MODES:
            raise DataError(f"unknown semantic mode {self.mode!r}")
        zero = np.flatnonzero(~np.any(v != 0, axis=1))
        if zero.size:
            raise DataError(f"semantic vector for class {int(zero[0])} is all zeros")
        object.__setattr__(self, "vectors", v)

    @property
    def num_classes(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]


@dataclass(frozen=True)
class FeatureDataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_seen_x: np.ndarray
    test_seen_y: np.ndarray
    test_unseen_x: np.ndarray
    test_unseen_y: np.ndarray
    num_seen: int
    num_unseen: int
    class_names: tuple = field(default=())

    def __post_init__(self):
        for name in ("train_x", "test_seen_x", "test_unseen_x"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        for name in ("train_y", "test_seen_y", "test_unseen_y"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        self.validate()

    def validate(self):
        if self.num_seen < 1 or self.num_unseen < 1:
            raise DataError("need at least one seen and one unseen class")
        v = self.train_x.shape[1] if self.train_x.ndim == 2 else None
        for name in ("train", "test_seen", "test_unseen"):
            x, y = getattr(self, f"{name}_x"), getattr(self, f"{name}_y")
            if x.ndim != 2 or x.shape[0] != y.shape[0]:
                raise DataError(f"{name}: features {x.shape} do not match labels {y.shape}")
            if x.shape[0] and x.shape[1] != v:
                raise DataError(f"{name}: feature dim {x.shape[1]} != {v}")
        seen = self.seen_classes
        if self.train_y.size and not np.all(np.isin(self.train_y, seen)):
            raise DataError("training features may only carry seen labels")
        if self.test_seen_y.size and not np.all(np.isin(self.test_seen_y, seen)):
            raise DataError("test_seen contains a non-seen label")
        if self.test_unseen_y.size and not np.all(np.isin(self.test_unseen_y, self.unseen_classes)):
            raise DataError("test_unseen contains a non-unseen label")
        missing = np.setdiff1d(seen, self.train_y)
        if missing.size:
            raise DataError(f"seen class {int(missing[0])} has no training samples")

    @property
    def num_classes(self):
        return self.num_seen + self.num_unseen

    @property
    def visual_dim(self):
        return self.train_x.shape[1]

    @property
    def seen_classes(self):
        return np.arange(self.num_seen)

    @property
    def unseen_classes(self):
        return np.arange(self.num_seen, self.num_classes)

    def summary(self):
        return {
            "C_s": self.num_seen,
            "C_u": self.num_unseen,
            "V": self.visual_dim,
            "n_train": int(self.train_y.size),
            "n_test_seen": int(self.test_seen_y.size),
            "n_test_unseen": int(self.test_unseen_y.size),
        }


@dataclass
class Batch:
    labels: np.ndarray
    semantics: np.ndarray
    # None in the unseen phase: no visual features exist for those classes
    features: np.ndarray | None = None


class MinibatchSampler:
    """Uniform-with-replacement class draws, each paired with a random image."""

    def __init__(self, dataset, semantics):
        self.dataset = dataset
        self.semantics = semantics
        order = np.argsort(dataset.train_y, kind="stable")
        self._order = order
        counts = np.bincount(dataset.train_y, minlength=dataset.num_seen)
        self._counts = counts
        self._starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        self.features_served = 0

    def sample(self, phase, m, rng):
        if m < 1:
            raise ValueError(f"batch size must be >= 1, got {m}")
        ds = self.dataset
        if phase == "seen":
            labels = rng.integers(0, ds.num_seen, size=m)
            offset = np.floor(rng.uniform(size=m) * self._counts[labels]).astype(np.int64)
            rows = self._order[self._starts[labels] + offset]
            self.features_served += m
            return Batch(labels, self.semantics.vectors[labels], ds.train_x[rows])
        if phase == "unseen":
            labels = rng.integers(ds.num_seen, ds.num_classes, size=m)
            return Batch(labels, self.semantics.vectors[labels])
        raise ValueError(f"unknown phase {phase!r}")


def sample_minibatch(dataset, semantics, phase, m, rng):
    return MinibatchSampler(dataset, semantics).sample(phase, m, rng)


# ---------------------------------------------------------------------------
# synthetic shared-latent data


@dataclass
class SynthSpec:
    latent_dim: int = 8
    num_seen: int = 12
    num_unseen: int = 4
    visual_dim: int = 32
    semantic_dim: int = 16
    samples_per_class: int = 100
    sigma_x: float = 0.05
    sigma_t: float = 0.05
    seed: int = 0
    # gaussian: raw N(0, 1/sqrt(d)) entries; orthogonal: same draw, QR'd to
    # a norm-preserving map; identity: requires latent_dim == visual_dim == semantic_dim
    maps: str = "orthogonal"
    # global positive rescale so max |x| equals this (0 disables); cosines unchanged
    max_abs: float = 0.9
    holdout: float = 0.2

    def validate(self):
        for key in ("latent_dim", "num_seen", "num_unseen", "visual_dim", "semantic_dim", "samples_per_class"):
            if getattr(self, key) < 1:
                raise ValueError(f"{key} must be positive")
        if self.sigma_x < 0 or self.sigma_t < 0:
            raise ValueError("noise scales must be nonnegative")
        if self.maps not in ("gaussian", "orthogonal", "identity"):
            raise ValueError(f"unknown map kind {self.maps!r}")
        if self.maps == "identity" and not (self.latent_dim == self.visual_dim == self.semantic_dim):
            raise ValueError("identity maps need latent_dim == visual_dim == semantic_dim")
        if not 0 <= self.holdout < 1:
            raise ValueError("holdout must be in [0, 1)")


def _latent_map(rng, out_dim, latent_dim, kind):
    if kind == "identity":
        return np.eye(out_dim)
    g = rng.normal(0.0, 1.0 / np.sqrt(latent_dim), size=(out_dim, latent_dim))
    if kind == "gaussian":
        return g
    # orthonormal columns scaled to the Gaussian map's expected column norm
    q, r = np.linalg.qr(g) if out_dim >= latent_dim else np.linalg.qr(g.T)
    q = q * np.sign(np.diag(r))
    q = q if out_dim >= latent_dim else q.T
    return q * np.sqrt(out_dim / latent_dim)


def make_synthetic(spec):
    """(FeatureDataset, SemanticTable, latents) tied through one latent per class."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    c = spec.num_seen + spec.num_unseen
    latents = rng.standard_normal((c, spec.latent_dim))
    a = _latent_map(rng, spec.semantic_dim, spec.latent_dim, spec.maps)
    b = _latent_map(rng, spec.visual_dim, spec.latent_dim, spec.maps)
    semantics = latents @ a.T + rng.normal(0.0, 1.0, size=(c, spec.semantic_dim)) * spec.sigma_t
    n = spec.samples_per_class
    labels = np.repeat(np.arange(c), n)
    feats = latents[labels] @ b.T + rng.normal(0.0, 1.0, size=(c * n, spec.visual_dim)) * spec.sigma_x
    if spec.max_abs > 0:
        feats = feats * (spec.max_abs / np.abs(feats).max())
    test_mask = np.zeros(c * n, dtype=bool)
    n_hold = int(round(spec.holdout * n))
    for k in range(spec.num_seen):
        rows = np.flatnonzero(labels == k)
        test_mask[rng.choice(rows, size=n_hold, replace=False)] = True
    seen = labels < spec.num_seen
    dataset = FeatureDataset(
        train_x=feats[seen & ~test_mask],
        train_y=labels[seen & ~test_mask],
        test_seen_x=feats[seen & test_mask],
        test_seen_y=labels[seen & test_mask],
        test_unseen_x=feats[~seen],
        test_unseen_y=labels[~seen],
        num_seen=spec.num_seen,
        num_unseen=spec.num_unseen,
    )
    return dataset, SemanticTable(semantics, "attributes"), latents


# ---------------------------------------------------------------------------
# file formats


def _data_lines(path):
    """Yield (line_number, tokens) for non-empty, non-comment lines."""
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def _parse_floats(path, lineno, tokens):
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise DataError(f"{path}:{lineno}: {exc}") from None


def _parse_int(path, lineno, token):
    try:
        return int(token)
    except ValueError:
        raise DataError(f"{path}:{lineno}: expected an integer, got {token!r}") from None


def read_visual(path):
    lines = _data_lines(path)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise DataError(f"{path}: empty file") from None
    if len(header) != 3:
        raise DataError(f"{path}:{lineno}: header must be 'V n C'")
    v, n, _c = (_parse_int(path, lineno, t) for t in header)
    labels, rows, linenos = [], [], []
    for lineno, tokens in lines:
        if len(tokens) != v + 1:
            raise DataError(f"{path}:{lineno}: expected {v} features after the label, got {len(tokens) - 1}")
        labels.append(_parse_int(path, lineno, tokens[0]))
        rows.append(_parse_floats(path, lineno, tokens[1:]))
        linenos.append(lineno)
    if len(rows) != n:
        raise DataError(f"{path}: header declares {n} samples, found {len(rows)}")
    return np.array(labels, dtype=np.int64), np.array(rows, dtype=np.float64).reshape(n, v), linenos


def read_semantic(path):
    lines = _data_lines(path)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise DataError(f"{path}: empty file") from None
    if len(header) != 2:
        raise DataError(f"{path}:{lineno}: header must be 'L C'")
    dim, c = (_parse_int(path, lineno, t) for t in header)
    table = {}
    for lineno, tokens in lines:
        if len(tokens) != dim + 1:
            raise DataError(f"{path}:{lineno}: expected {dim} values after the class id, got {len(tokens) - 1}")
        cid = _parse_int(path, lineno, tokens[0])
        if cid in table:
            raise DataError(f"{path}:{lineno}: duplicate row for class {cid}")
        table[cid] = (lineno, _parse_floats(path, lineno, tokens[1:]))
    if len(table) != c:
        raise DataError(f"{path}: header declares {c} classes, found {len(table)}")
    return dim, table


def read_split(path):
    split = {}
    for lineno, tokens in _data_lines(path):
        key = tokens[0].rstrip(":")
        if not tokens[0].endswith(":") or key not in ("seen", "unseen", "test_seen"):
            raise DataError(f"{path}:{lineno}: expected 'seen:', 'unseen:' or 'test_seen:'")
        if key in split:
            raise DataError(f"{path}:{lineno}: duplicate '{key}:' line")
        split[key] = [_parse_int(path, lineno, t) for t in tokens[1:]]
    for key in ("seen", "unseen"):
        if key not in split:
            raise DataError(f"{path}: missing '{key}:' line")
    if set(split["seen"]) & set(split["unseen"]):
        raise DataError(f"{path}: seen and unseen class sets overlap")
    return split


def load_dataset(visual_path, semantic_path, split_path, mode="attributes", holdout=0.2, seed=0):
    """Parse the three text files into (FeatureDataset, SemanticTable, id_map).

    ``id_map`` maps external class id -> internal 0-based index.
    """
    labels, feats, linenos = read_visual(visual_path)
    dim, sem = read_semantic(semantic_path)
    split = read_split(split_path)
    ordered = split["seen"] + split["unseen"]
    id_map = {cid: k for k, cid in enumerate(ordered)}
    missing = [cid for cid in ordered if cid not in sem]
    if missing:
        raise DataError(f"{semantic_path}: no semantic vector for class {missing[0]}")
    extra = sorted(set(sem) - set(ordered))
    if extra:
        lineno = sem[extra[0]][0]
        raise DataError(f"{semantic_path}:{lineno}: class {extra[0]} is not in the split")
    for cid, lineno in zip(labels, linenos):
        if cid not in id_map:
            raise DataError(f"{visual_path}:{lineno}: label {cid} references an unknown class")
    y = np.array([id_map[c] for c in labels], dtype=np.int64)
    n_seen = len(split["seen"])
    is_seen = y < n_seen
    test_mask = np.zeros(y.size, dtype=bool)
    if "test_seen" in split:
        idx = np.asarray(split["test_seen"], dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= y.size):
            raise DataError(f"{split_path}: test_seen index outside [0, {y.size})")
        if not np.all(is_seen[idx]):
            raise DataError(f"{split_path}: test_seen lists a sample of an unseen class")
        test_mask[idx] = True
    else:
        rng = np.random.default_rng(seed)
        for k in range(n_seen):
            rows = np.flatnonzero(y == k)
            n_hold = int(round(holdout * rows.size))
            if n_hold >= rows.size:
                n_hold = rows.size - 1
            test_mask[rng.choice(rows, size=n_hold, replace=False)] = True
    seen_rows = np.flatnonzero(is_seen & ~test_mask)
    test_rows = np.flatnonzero(test_mask)
    if "test_seen" in split:
        test_rows = np.asarray(split["test_seen"], dtype=np.int64)
    unseen_rows = np.flatnonzero(~is_seen)
    vectors = np.array([sem[cid][1] for cid in ordered]).reshape(len(ordered), dim)
    try:
        dataset = FeatureDataset(
            train_x=feats[seen_rows],
            train_y=y[seen_rows],
            test_seen_x=feats[test_rows],
            test_seen_y=y[test_rows],
            test_unseen_x=feats[unseen_rows],
            test_unseen_y=y[unseen_rows],
            num_seen=n_seen,
            num_unseen=len(split["unseen"]),
            class_names=tuple(str(c) for c in ordered),
        )
        table = SemanticTable(vectors, mode)
    except DataError as exc:
        raise DataError(f"{visual_path}: {exc}") from None
    log.info("loaded dataset %s (L=%d)", dataset.summary(), dim)
    return dataset, table, id_map


def _fmt(x):
    return repr(float(x))


def write_dataset(out_dir, dataset, semantics, prefix=""):
    """Write visual/semantic/split files; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "visual": os.path.join(out_dir, f"{prefix}visual.txt"),
        "semantic": os.path.join(out_dir, f"{prefix}semantic.txt"),
        "split": os.path.join(out_dir, f"{prefix}split.txt"),
    }
    xs = [dataset.train_x, dataset.test_seen_x, dataset.test_unseen_x]
    ys = [dataset.train_y, dataset.test_seen_y, dataset.test_unseen_y]
    n = sum(y.size for y in ys)
    with open(paths["visual"], "w", encoding="utf-8") as fh:
        fh.write(f"{dataset.visual_dim} {n} {dataset.num_classes}\n")
        for x, y in zip(xs, ys):
            for row, label in zip(x, y):
                fh.write(" ".join([str(int(label) + 1)] + [_fmt(v) for v in row]) + "\n")
    with open(paths["semantic"], "w", encoding="utf-8") as fh:
        fh.write(f"{semantics.dim} {semantics.num_classes}\n")
        for k, row in enumerate(semantics.vectors):
            fh.write(" ".join([str(k + 1)] + [_fmt(v) for v in row]) + "\n")
    n_train = dataset.train_y.size
    test_idx = range(n_train, n_train + dataset.test_seen_y.size)
    with open(paths["split"], "w", encoding="utf-8") as fh:
        fh.write("seen: " + " ".join(str(k + 1) for k in range(dataset.num_seen)) + "\n")
        fh.write("unseen: " + " ".join(str(k + 1) for k in dataset.unseen_classes) + "\n")
        fh.write("test_seen: " + " ".join(str(i) for i in test_idx) + "\n")
    return paths


def write_latents(path, latents):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{latents.shape[1]} {latents.shape[0]}\n")
        for k, row in enumerate(latents):
            fh.write(" ".join([str(k + 1)] + [_fmt(v) for v in row]) + "\n")

"""Cosine similarity, class centroids and top-n semantic neighbour lists."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class ClassCentroids:
    """One mean feature vector per class.

    ``values`` is an (n_classes, dim) ndarray for real data, or a ``Tensor``
    when the centroids come from the generator and must stay differentiable.
    """

    class_ids: tuple
    values: object

    def __post_init__(self):
        object.__setattr__(self, "class_ids", tuple(int(c) for c in self.class_ids))
        if len(self.class_ids) != self.values.shape[0]:
            raise ValueError(
                f"{len(self.class_ids)} class ids for {self.values.shape[0]} centroid rows"
            )

    @property
    def dim(self):
        return self.values.shape[1]

    def row_of(self, class_id):
        return self.class_ids.index(class_id)


@dataclass(frozen=True)
class NeighborIndex:
    """For each query class, its most similar pool classes (descending).

    ``neighbors[i]`` and ``similarities[i]`` belong to ``queries[i]``.
    """

    queries: tuple
    neighbors: tuple
    similarities: tuple

    def __len__(self):
        return len(self.queries)

    def lookup(self, class_id):
        i = self.queries.index(class_id)
        return self.neighbors[i], self.similarities[i]

    def dense(self, query_ids, pool_ids):
        """(mask, target) arrays of shape (len(query_ids), len(pool_ids))."""
        col = {c: k for k, c in enumerate(pool_ids)}
        mask = np.zeros((len(query_ids), len(pool_ids)))
        target = np.zeros_like(mask)
        for r, q in enumerate(query_ids):
            nbrs, sims = self.lookup(q)
            for c, s in zip(nbrs, sims):
                if c not in col:
                    raise KeyError(f"neighbour class {c} of query {q} has no centroid")
                mask[r, col[c]] = 1.0
                target[r, col[c]] = s
        return mask, target


def cosine_sim(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"cosine_sim: dimension mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine_sim: similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cosine_matrix(a, b=None):
    """Pairwise cosine similarities between the rows of ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = a if b is None else np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("cosine_matrix: similarity is undefined for a zero vector")
    return np.clip((a / na) @ (b / nb).T, -1.0, 1.0)


def class_means(features, labels, class_list):
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    class_list = [int(c) for c in class_list]
    remap = {c: i for i, c in enumerate(class_list)}
    keep = np.isin(labels, class_list)
    seg = np.array([remap[c] for c in labels[keep]], dtype=np.int64)
    means, counts = kernels.segment_mean(features[keep], seg, len(class_list))
    empty = [c for c, n in zip(class_list, counts) if n == 0]
    if empty:
        raise ValueError(f"class_means: no samples for class {empty[0]}")
    return ClassCentroids(tuple(class_list), means)


def build_neighbor_index(semantics, queries, pool, n_neighbors):
    """Top-``n_neighbors`` pool classes per query by cosine similarity.

    ``semantics`` is indexable by class id (a (C, L) array). A query that is
    itself in the pool never lists itself. Ties go to the lower class id.
    """
    semantics = np.asarray(semantics, dtype=np.float64)
    queries = [int(q) for q in queries]
    pool = sorted(int(p) for p in pool)
    if n_neighbors < 1:
        raise ValueError(f"n_neighbors must be >= 1, got {n_neighbors}")
    if not pool:
        raise ValueError("build_neighbor_index: empty pool")
    pool_pos = {c: k for k, c in enumerate(pool)}
    exclude = np.array([pool_pos.get(q, -1) for q in queries], dtype=np.int64)
    available = len(pool) - (1 if np.any(exclude >= 0) else 0)
    k = n_neighbors
    if k > available:
        warnings.warn(
            f"n_neighbors={n_neighbors} exceeds the {available} available pool classes; clamping",
            stacklevel=2,
        )
        k = available
    if k < 1:
        raise ValueError("build_neighbor_index: no pool class available besides the query")
    sims = cosine_matrix(semantics[queries], semantics[pool])
    top = kernels.topk_rows(sims, k, exclude)
    neighbors, values = [], []
    for r in range(len(queries)):
        cols = top[r]
        neighbors.append(tuple(pool[c] for c in cols))
        values.append(tuple(float(sims[r, c]) for c in cols))
    return NeighborIndex(tuple(queries), tuple(neighbors), tuple(values))

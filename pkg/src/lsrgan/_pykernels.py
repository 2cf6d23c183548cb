"""Pure-numpy reference kernels.

These are the fallback for ``_ckernels`` and act as the oracle in the
backend-agreement tests, so keep them obviously correct rather than fast.
"""
import heapq

import numpy as np

BACKEND = "python"


def leaky_relu(x, slope):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, x, slope * x)


def leaky_relu_mask(x, slope):
    """Derivative of leaky_relu, 0-slope convention at the kink (x == 0 -> slope)."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, 1.0, slope)


def band_penalty(x_sim, t_sim, epsilon, penalty=1.0):
    """Squared-hinge violation of |x_sim - t_sim| <= epsilon and its derivative."""
    x_sim = np.asarray(x_sim, dtype=np.float64)
    t_sim = np.asarray(t_sim, dtype=np.float64)
    upper = np.maximum(0.0, x_sim - (t_sim + epsilon))
    lower = np.maximum(0.0, (t_sim - epsilon) - x_sim)
    value = penalty * (upper * upper + lower * lower)
    deriv = penalty * 2.0 * (upper - lower)
    return value, deriv


def topk_rows(scores, k, exclude=None):
    """Indices of the k largest entries of each row, descending.

    Ties go to the lower column index. ``exclude[i]`` (>= 0) removes one column
    from row i. Uses a bounded heap per row, O(n log k).
    """
    scores = np.asarray(scores, dtype=np.float64)
    n_rows, n_cols = scores.shape
    out = np.empty((n_rows, k), dtype=np.int64)
    for i in range(n_rows):
        skip = -1 if exclude is None else int(exclude[i])
        row = scores[i]
        # key (score, -col): larger is better, so lower col wins ties
        cols = (j for j in range(n_cols) if j != skip)
        best = heapq.nlargest(k, cols, key=lambda j: (row[j], -j))
        if len(best) < k:
            raise ValueError(f"row {i} has only {len(best)} candidates for k={k}")
        out[i] = best
    return out


def segment_mean(values, labels, n_segments):
    """Row means of ``values`` grouped by integer ``labels`` in [0, n_segments)."""
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    sums = np.zeros((n_segments, values.shape[1]))
    np.add.at(sums, labels, values)
    counts = np.bincount(labels, minlength=n_segments).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / counts[:, None], counts

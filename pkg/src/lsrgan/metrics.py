"""ZSL / GZSL evaluation: top-1, harmonic mean, seen-unseen AUC, confidence."""
from __future__ import annotations

import warnings

import numpy as np

from . import autodiff as ad
from .models import sample_noise
from .similarity import ClassCentroids, cosine_matrix

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def top1(predictions, labels):
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("top-1 accuracy of an empty test set is undefined")
    return float(np.mean(np.asarray(predictions) == labels))


def _restricted_argmax(scores, classes):
    classes = np.asarray(classes)
    return classes[np.argmax(np.asarray(scores)[:, classes], axis=1)]


def nearest_centroid_scores(x, centroids):
    """Cosine similarity of each sample to each centroid, columns = class ids."""
    return cosine_matrix(x, np.asarray(centroids.values))


def zsl_top1(scores, labels, classes):
    """Top-1 with the argmax restricted to ``classes`` (the unseen ids).

    ``scores`` has one column per class id (classifier logits/probabilities
    or nearest-centroid similarities).
    """
    return top1(_restricted_argmax(scores, classes), labels)


def harmonic_mean(u, s):
    return 0.0 if u + s == 0 else 2.0 * u * s / (u + s)


def gzsl_harmonic(seen_scores, seen_labels, unseen_scores, unseen_labels):
    """(U, S, H) with the search space spanning every class."""
    s = top1(np.argmax(seen_scores, axis=1), seen_labels)
    u = top1(np.argmax(unseen_scores, axis=1), unseen_labels)
    return u, s, harmonic_mean(u, s)


def seen_unseen_curve(seen_scores, seen_labels, unseen_scores, unseen_labels, seen_classes, n_points=201):
    """(S, U) pairs from sweeping a bias subtracted off every seen-class score.

    The bias grid covers +-(score range), so the ends force every prediction
    to unseen (S = 0) or to seen (U = 0). Rows are sorted by S, then U.
    """
    seen_scores = np.asarray(seen_scores, dtype=np.float64)
    unseen_scores = np.asarray(unseen_scores, dtype=np.float64)
    both = np.concatenate([seen_scores, unseen_scores], axis=0)
    span = float(both.max() - both.min())
    if span == 0:
        gammas = np.zeros(1)
    else:
        reach = span * (1.0 + 1e-6)
        gammas = np.linspace(-reach, reach, n_points)
    shift = np.zeros(both.shape[1])
    shift[np.asarray(seen_classes)] = 1.0
    pts = []
    for g in gammas:
        s = top1(np.argmax(seen_scores - g * shift, axis=1), seen_labels)
        u = top1(np.argmax(unseen_scores - g * shift, axis=1), unseen_labels)
        pts.append((s, u))
    curve = np.array(sorted(set(pts), key=lambda p: (p[0], -p[1])))
    return curve


def seen_unseen_auc(seen_scores, seen_labels, unseen_scores, unseen_labels, seen_classes, n_points=201):
    """Trapezoidal area under the unseen-vs-seen accuracy curve.

    Returns (auc, curve). A curve that collapses to one point has no width;
    its area is reported as the S*U rectangle, with a warning.
    """
    curve = seen_unseen_curve(
        seen_scores, seen_labels, unseen_scores, unseen_labels, seen_classes, n_points
    )
    if len(curve) == 1:
        warnings.warn("seen-unseen curve degenerated to a single point", stacklevel=2)
        return float(curve[0, 0] * curve[0, 1]), curve
    return float(_trapezoid(curve[:, 1], curve[:, 0])), curve


def avg_confidence(probs, labels, num_seen, top=3):
    """True-class softmax confidence by partition plus per-class top guesses.

    Returns {"seen": mean, "unseen": mean, "per_class": {c: [(class, p), ...]}}.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    true_p = probs[np.arange(labels.size), labels]
    seen = labels < num_seen
    out = {
        "seen": float(true_p[seen].mean()) if seen.any() else float("nan"),
        "unseen": float(true_p[~seen].mean()) if (~seen).any() else float("nan"),
        "per_class": {},
    }
    for c in np.unique(labels):
        mean_p = probs[labels == c].mean(axis=0)
        order = np.argsort(-mean_p, kind="stable")[:top]
        out["per_class"][int(c)] = [(int(k), float(mean_p[k])) for k in order]
    return out


# ---------------------------------------------------------------------------
# model-level helpers


def classifier_probs(model, x):
    with ad.no_grad():
        return ad.softmax(model.discriminator.classify(x), axis=1).data


def generated_centroids(model, semantics, classes, m_eval, rng):
    classes = np.asarray(classes)
    cfg = model.config
    with ad.no_grad():
        t = np.repeat(np.asarray(semantics)[classes], m_eval, axis=0)
        z = sample_noise(rng, t.shape[0], cfg.noise_dim)
        fake = model.generate(z, t).data
    means = fake.reshape(len(classes), m_eval, -1).mean(axis=1)
    return ClassCentroids(tuple(int(c) for c in classes), means)


def evaluate_model(model, dataset, semantics, predictor, m_eval=60, rng=None, with_auc=False):
    """All per-epoch metrics for one model snapshot.

    ``predictor`` is "classifier" (discriminator head) or "nearest_centroid"
    (cosine to generated class means for every class).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    ds = dataset
    if predictor == "classifier":
        seen_scores = classifier_probs(model, ds.test_seen_x)
        unseen_scores = classifier_probs(model, ds.test_unseen_x)
    elif predictor == "nearest_centroid":
        cents = generated_centroids(model, semantics.vectors, np.arange(ds.num_classes), m_eval, rng)
        seen_scores = nearest_centroid_scores(ds.test_seen_x, cents)
        unseen_scores = nearest_centroid_scores(ds.test_unseen_x, cents)
    else:
        raise ValueError(f"unknown predictor {predictor!r}")
    res = {"zsl_top1": zsl_top1(unseen_scores, ds.test_unseen_y, ds.unseen_classes)}
    res["gzsl_u"], res["gzsl_s"], res["gzsl_h"] = gzsl_harmonic(
        seen_scores, ds.test_seen_y, unseen_scores, ds.test_unseen_y
    )
    if with_auc:
        res["auc"], curve = seen_unseen_auc(
            seen_scores, ds.test_seen_y, unseen_scores, ds.test_unseen_y, ds.seen_classes
        )
        res["auc_curve"] = curve
    res["_scores"] = (seen_scores, unseen_scores)
    return res

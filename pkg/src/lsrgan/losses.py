"""Objective terms: WGAN-GP critic, classifier, visual pivot and SR-loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor
from .optim import NonFiniteError


@dataclass
class LossWeights:
    lambda_c: float = 0.01
    lambda_vp: float = 1.0
    lambda_sr: float = 1.0
    lambda_gp: float = 10.0
    epsilon: float = 0.05
    # per-phase soft-margin override; None means "use epsilon"
    epsilon_unseen: float | None = None
    penalty_p: float = 1.0

    def __post_init__(self):
        for key in ("lambda_c", "lambda_vp", "lambda_sr", "lambda_gp", "epsilon"):
            if getattr(self, key) < 0:
                raise ValueError(f"{key} must be nonnegative, got {getattr(self, key)}")
        if self.epsilon_unseen is not None and self.epsilon_unseen < 0:
            raise ValueError("epsilon_unseen must be nonnegative")

    @property
    def margin_unseen(self):
        return self.epsilon if self.epsilon_unseen is None else self.epsilon_unseen


def _check_same_classes(a, b, what):
    if tuple(a.class_ids) != tuple(b.class_ids):
        raise ValueError(f"{what}: class sets differ ({a.class_ids} vs {b.class_ids})")


def visual_pivot_loss(real_centroids, gen_centroids):
    """Mean Euclidean distance between matching real and generated centroids."""
    _check_same_classes(real_centroids, gen_centroids, "visual_pivot_loss")
    diff = ad.constant(gen_centroids.values) - ad.constant(real_centroids.values)
    return ad.l2_norm(diff, axis=1).mean()


def gradient_penalty(disc, samples):
    """Mean of (||d critic / d x|| - 1)^2 over the rows of ``samples``.

    Rows pass through the critic independently, so the gradient of the summed
    critic output gives every row's own input-gradient in one sweep.
    """
    x = Tensor(np.asarray(samples.data if isinstance(samples, Tensor) else samples), requires_grad=True)
    scores = disc.critic(x).sum()
    g = ad.input_gradient(scores, x)
    return ad.square(ad.l2_norm(g, axis=1) - 1.0).mean()


def interpolates(real_x, fake_x, rng):
    real_x = np.asarray(real_x)
    fake_x = np.asarray(fake_x)
    alpha = rng.uniform(0.0, 1.0, size=(real_x.shape[0], 1))
    return alpha * real_x + (1.0 - alpha) * fake_x


def gp_samples(real_x, fake_x, rng):
    """Real, generated and on-segment interpolated points for the penalty."""
    real_x = np.asarray(real_x)
    fake_x = np.asarray(fake_x)
    return np.concatenate([real_x, fake_x, interpolates(real_x, fake_x, rng)], axis=0)


def critic_loss(disc, real_x, fake_x, samples, lambda_gp):
    """Signed critic objective ``E[D(x)] - E[D(x~)] - lambda_gp * GP``.

    The critic ascends this value. Returns (objective, parts) where parts
    holds the Wasserstein estimate and the raw penalty for tracing.
    """
    real_x = np.asarray(real_x)
    if real_x.shape[0] == 0 or np.shape(fake_x)[0] == 0:
        raise ValueError("critic_loss: empty batch")
    wdist = disc.critic(real_x).mean() - disc.critic(fake_x).mean()
    gp = gradient_penalty(disc, samples)
    return wdist - lambda_gp * gp, {"wasserstein": wdist, "gp": gp}


def generator_adversarial_loss(disc, fake_x):
    return -disc.critic(fake_x).mean()


def classifier_loss(disc, x, labels):
    return classifier_loss_from_logits(disc.classify(x), labels)


def classifier_loss_from_logits(logits, labels):
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"classifier_loss: label outside [0, {n_classes})")
    return ad.softmax_cross_entropy(logits, labels)


def sr_pair_penalty(x_sim, t_sim, epsilon, p=1.0):
    """Squared-hinge penalty for leaving the band [t_sim - eps, t_sim + eps]."""
    if np.any(np.asarray(epsilon) < 0):
        raise ValueError("epsilon must be nonnegative")
    value, _ = kernels.band_penalty(x_sim, t_sim, float(epsilon), float(p))
    return float(value) if np.ndim(value) == 0 else value


def band_penalty(x_sim, t_sim, epsilon, p=1.0):
    """Differentiable elementwise version of ``sr_pair_penalty``."""
    x_sim = ad.constant(x_sim)
    upper = ad.hinge(x_sim - (t_sim + epsilon))
    lower = ad.hinge((t_sim - epsilon) - x_sim)
    return (ad.square(upper) + ad.square(lower)) * p


def _row_normalize(x):
    x = ad.constant(x)
    sq = ad.square(x).sum(axis=1, keepdims=True)
    # keeps a dead (all-zero) centroid finite; invisible at unit scale
    return x / ad.sqrt(sq + 1e-16)


def _sr_loss(gen_centroids, real_centroids, index, epsilon, p):
    queries = gen_centroids.class_ids
    pool = real_centroids.class_ids
    if not queries:
        raise ValueError("SR-loss: no query classes")
    mask, target = index.dense(queries, pool)
    real = np.asarray(real_centroids.values, dtype=np.float64)
    norms = np.linalg.norm(real, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("SR-loss: zero real centroid")
    anchors = real / norms
    x_sim = ad.matmul(_row_normalize(gen_centroids.values), anchors.T)
    pen = band_penalty(x_sim, target, epsilon, p) * mask
    return pen.sum() * (1.0 / len(queries))


def sr_loss_seen(gen_centroids, real_centroids, index, epsilon, p=1.0):
    """SR-loss over seen query classes, averaged over the queries present.

    ``index`` must list seen-pool neighbours with the query itself excluded.
    """
    for q in gen_centroids.class_ids:
        if q in index.lookup(q)[0]:
            raise ValueError(f"sr_loss_seen: class {q} lists itself as a neighbour")
    return _sr_loss(gen_centroids, real_centroids, index, epsilon, p)


def sr_loss_unseen(gen_centroids, real_centroids, index, epsilon, p=1.0):
    """SR-loss anchoring generated unseen centroids to real seen centroids."""
    pool = set(real_centroids.class_ids)
    if pool & set(gen_centroids.class_ids):
        raise ValueError("sr_loss_unseen: query classes overlap the seen anchor pool")
    return _sr_loss(gen_centroids, real_centroids, index, epsilon, p)


SEEN_TERMS = ("adversarial", "classifier", "visual_pivot", "sr")
UNSEEN_TERMS = ("classifier", "sr")


def _scalar(value):
    return float(value.data) if isinstance(value, Tensor) else float(value)


def generator_total_loss(components, weights, phase="seen"):
    """Weighted generator objective for one phase.

    ``components`` maps term name -> scalar (Tensor or float). The seen phase
    combines adversarial + lambda_c*classifier + lambda_vp*visual_pivot +
    lambda_sr*sr; the unseen phase has no real features, so only
    lambda_c*classifier + lambda_sr*sr.
    """
    if phase == "seen":
        factors = {
            "adversarial": 1.0,
            "classifier": weights.lambda_c,
            "visual_pivot": weights.lambda_vp,
            "sr": weights.lambda_sr,
        }
    elif phase == "unseen":
        stray = {"adversarial", "visual_pivot"} & set(components)
        if stray:
            raise ValueError(f"unseen phase has no real features; got terms {sorted(stray)}")
        factors = {"classifier": weights.lambda_c, "sr": weights.lambda_sr}
    else:
        raise ValueError(f"unknown phase {phase!r}")
    total = None
    for name, factor in factors.items():
        if name not in components:
            continue
        value = components[name]
        if not np.isfinite(_scalar(value)):
            raise NonFiniteError(f"non-finite {phase}-phase loss component '{name}'")
        if factor == 0:
            continue
        term = ad.constant(value) * factor
        total = term if total is None else total + term
    if total is None:
        total = Tensor(0.0)
    return total

"""Acceptance criteria, one test per criterion.

Each criterion is a plain function returning ``(passed, detail)``; the
pytest wrappers assert on it and a terminal-summary hook prints one
PASS/FAIL line per criterion. Run directly (``python3 tests/test_acceptance.py``)
to get the same lines without pytest.
"""
import os
import sys
import time
from functools import lru_cache

import numpy as np
import pytest
from scipy.stats import spearmanr

sys.path.insert(0, os.path.dirname(__file__))

from gradcheck import check  # noqa: E402

from lsrgan import autodiff as ad  # noqa: E402
from lsrgan import losses as L  # noqa: E402
from lsrgan.config import DESK  # noqa: E402
from lsrgan.data import SynthSpec, make_synthetic  # noqa: E402
from lsrgan.metrics import avg_confidence, classifier_probs, generated_centroids, harmonic_mean, seen_unseen_auc  # noqa: E402
from lsrgan.models import ModelConfig, init_model  # noqa: E402
from lsrgan.similarity import ClassCentroids, build_neighbor_index, class_means, cosine_sim  # noqa: E402
from lsrgan.training import Trainer, TrainConfig  # noqa: E402

RESULTS = {}
SEEDS = (0, 1, 2)


def record(number, title):
    def wrap(fn):
        def run():
            t0 = time.perf_counter()
            ok, detail = fn()
            RESULTS[number] = (ok, title, f"{detail} [{time.perf_counter() - t0:.1f}s]")
            return ok, detail

        run.__name__ = fn.__name__
        return run

    return wrap


def summary_line(number):
    ok, title, detail = RESULTS[number]
    return f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}: {detail}"


def summary_lines():
    return [summary_line(n) for n in sorted(RESULTS)]


# ---------------------------------------------------------------------------


@record(1, "loss gradients vs central finite differences")
def criterion_1():
    t0 = time.perf_counter()
    worst, worst_gp = 0.0, 0.0
    for seed in range(3):
        rng = np.random.default_rng(seed)
        cfg = ModelConfig(visual_dim=16, semantic_dim=6, num_classes=6, noise_dim=4, hidden_g=24, hidden_d=24)
        m = init_model(cfg, seed)
        d = m.discriminator
        real = rng.normal(size=(8, 16))
        fake = rng.normal(size=(8, 16))
        labels = rng.integers(0, 6, size=8)
        samples = L.gp_samples(real, fake, rng)
        z, t = rng.normal(size=(8, 4)), rng.normal(size=(6, 6))
        cents = ClassCentroids(range(4), rng.normal(size=(4, 16)))
        idx_s = build_neighbor_index(t, range(4), range(4), 2)
        idx_u = build_neighbor_index(t, [4, 5], range(4), 3)

        def gen_centroids(ids):
            ids = list(ids)
            x = m.generate(np.tile(z[:3], (len(ids), 1)), np.repeat(t[ids], 3, axis=0))
            return ClassCentroids(ids, ad.reshape(x, (len(ids), 3, 16)).mean(axis=1))

        dparams, gparams = d.parameters(), m.generator_parameters()
        errs = [
            check(lambda: L.critic_loss(d, real, fake, samples, 10.0)[0], dparams),
            check(lambda: L.classifier_loss(d, real, labels), dparams),
            check(lambda: L.sr_loss_seen(gen_centroids(range(4)), cents, idx_s, 0.0), gparams),
            check(lambda: L.sr_loss_unseen(gen_centroids([4, 5]), cents, idx_u, 0.0), gparams),
            check(lambda: L.generator_adversarial_loss(d, m.generate(z, t[labels])), gparams),
        ]
        worst = max(worst, *errs)
        worst_gp = max(worst_gp, check(lambda: L.gradient_penalty(d, samples), dparams))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and worst_gp < 1e-3 and elapsed < 60
    return ok, f"max rel err {worst:.2e} (<1e-4), GP param-grad {worst_gp:.2e} (<1e-3), {elapsed:.1f}s (<60s)"


@record(2, "SR band semantics")
def criterion_2():
    rng = np.random.default_rng(0)
    n = 10_000
    t = rng.uniform(-1, 1, n)
    eps = rng.uniform(0, 0.3, n)
    x = rng.uniform(-1, 1, n)
    vals = np.array([L.sr_pair_penalty(a, b, e) for a, b, e in zip(x, t, eps)])
    inside = (x >= t - eps) & (x <= t + eps)
    iff = bool(np.all((vals == 0) == inside))
    # continuity: approaching either edge from outside drives the penalty to 0
    edge = max(
        max(L.sr_pair_penalty(b + e + 1e-9, b, e), L.sr_pair_penalty(b - e - 1e-9, b, e))
        for b, e in zip(t[:200], eps[:200])
    )
    d1, d2 = np.sort(rng.uniform(1e-4, 0.5, size=(2, n)), axis=0)
    mono = all(
        L.sr_pair_penalty(b + e + s1, b, e) < L.sr_pair_penalty(b + e + s2, b, e)
        and L.sr_pair_penalty(b - e - s1, b, e) < L.sr_pair_penalty(b - e - s2, b, e)
        for b, e, s1, s2 in zip(t, eps, d1, d2)
        if s1 < s2
    )
    h1 = L.sr_pair_penalty(0.95, 0.8, 0.1)
    h2 = L.sr_pair_penalty(0.60, 0.8, 0.1)
    hand = abs(h1 - 0.0025) < 1e-15 and abs(h2 - 0.01) < 1e-15
    ok = iff and edge < 1e-16 and mono and hand
    return ok, (f"zero-iff-inside {iff} over 1e4, edge limit {edge:.1e}, monotone {mono}, "
                f"hand cases {h1!r}, {h2!r}")


def _full_sort(sem, q, pool, k):
    cands = [p for p in sorted(pool) if p != q]
    return tuple(sorted(cands, key=lambda p: (-cosine_sim(sem[q], sem[p]), p))[:k])


def _sr_oracle(gen, real, index, eps):
    total = 0.0
    for q in gen.class_ids:
        g = np.asarray(gen.values)[gen.row_of(q)]
        for j, ts in zip(*index.lookup(q)):
            xs = cosine_sim(g, real.values[real.row_of(j)])
            total += max(0.0, xs - ts - eps) ** 2 + max(0.0, ts - eps - xs) ** 2
    return total / len(gen.class_ids)


@record(3, "oracle equivalence")
def criterion_3():
    rng = np.random.default_rng(0)
    nbr_ok = True
    for _ in range(100):
        n = int(rng.integers(10, 50))
        sem = rng.normal(size=(n, int(rng.integers(3, 20))))
        pool = list(range(n // 2))
        k = int(rng.integers(1, len(pool)))
        idx = build_neighbor_index(sem, range(n), pool, k)
        nbr_ok &= all(idx.lookup(q)[0] == _full_sort(sem, q, pool, k) for q in range(n))
    sr_err = 0.0
    for _ in range(20):
        sem = rng.normal(size=(8, 5))
        real = ClassCentroids(range(5), rng.normal(size=(5, 7)))
        gs = ClassCentroids(range(5), rng.normal(size=(5, 7)))
        gu = ClassCentroids([5, 6, 7], rng.normal(size=(3, 7)))
        i_s = build_neighbor_index(sem, range(5), range(5), 3)
        i_u = build_neighbor_index(sem, [5, 6, 7], range(5), 3)
        for eps in (0.0, 0.05):
            sr_err = max(
                sr_err,
                abs(L.sr_loss_seen(gs, real, i_s, eps).item() - _sr_oracle(gs, real, i_s, eps)),
                abs(L.sr_loss_unseen(gu, real, i_u, eps).item() - _sr_oracle(gu, real, i_u, eps)),
            )
    x = rng.normal(size=(200, 6))
    y = rng.integers(0, 5, size=200)
    cm = class_means(x, y, range(5)).values
    brute = []
    for k in range(5):
        acc, c = np.zeros(6), 0
        for row, lab in zip(x, y):
            if lab == k:
                acc, c = acc + row, c + 1
        brute.append(acc / c)
    means_exact = bool(np.array_equal(cm, np.array(brute)))
    ok = nbr_ok and sr_err < 1e-12 and means_exact
    return ok, f"neighbours==full sort on 100 tables {nbr_ok}, SR max |diff| {sr_err:.1e} (<1e-12), class means exact {means_exact}"


@record(4, "metric arithmetic")
def criterion_4():
    h = harmonic_mean(54.6, 74.6)
    h50 = harmonic_mean(50, 50)
    seen_y, unseen_y = np.array([0, 1, 0, 1]), np.array([2, 3, 2])
    eye = np.eye(4)
    auc, _ = seen_unseen_auc(eye[seen_y], seen_y, eye[unseen_y], unseen_y, [0, 1])
    ok = abs(h - 63.0) <= 0.1 and h50 == 50 and abs(auc - 1.0) < 1e-6
    return ok, f"H(54.6, 74.6)={h:.3f} (63.0+-0.1), H(50,50)={h50!r}, separable AUC={auc:.6f}"


@lru_cache(maxsize=None)
def default_data(seed):
    return make_synthetic(SynthSpec(seed=seed))[:2]


def desk_config(**kw):
    return TrainConfig(**{**DESK, **kw})


@record(5, "two-phase training structure")
def criterion_5():
    ds, sem = default_data(0)
    tr = Trainer(ds, sem, desk_config(seed=0, epochs=1), instrument=True)
    disc = tr.model.discriminator
    critic_before = [p.data.copy() for p in disc.critic_parameters()]
    n_seen_steps = tr.seen_steps_per_epoch
    kinds = []
    for _ in range(n_seen_steps):
        tr.events.clear()
        tr.seen_phase_step()
        kinds.append([k for _, k, _ in tr.events])
    ratio_ok = all(k == ["critic"] * 5 + ["generator"] for k in kinds)
    critic_mid = [p.data.copy() for p in disc.critic_parameters()]
    moved = any(not np.array_equal(a, b) for a, b in zip(critic_before, critic_mid))
    served = tr.sampler.features_served
    tr.events.clear()
    for _ in range(tr.unseen_steps_per_epoch):
        tr.unseen_phase_step()
    frozen = all(np.array_equal(a, p.data) for a, p in zip(critic_mid, disc.critic_parameters()))
    no_visual = tr.sampler.features_served == served and all(i["visual_rows"] == 0 for _, _, i in tr.events)
    s1 = Trainer(ds, sem, desk_config(seed=0, epochs=1, ablation="S1"), instrument=True)
    s1.run_epoch()
    s1_zero = all(n["sr"] == 0 and n.get("visual_pivot", 0) == 0 for _, n in s1.grad_norms)
    ok = ratio_ok and moved and frozen and no_visual and s1_zero
    return ok, (f"5 critic per generator step {ratio_ok}, critic head frozen in unseen phase {frozen}, "
                f"unseen phase reads no visual features {no_visual}, S1 SR/VP grad norms zero {s1_zero}")


@lru_cache(maxsize=None)
def desk_run(seed, ablation):
    ds, sem = default_data(seed)
    tr = Trainer(ds, sem, desk_config(seed=seed, ablation=ablation))
    t0 = time.perf_counter()
    model, trace = tr.fit()
    elapsed = time.perf_counter() - t0
    gc = generated_centroids(model, sem.vectors, ds.unseen_classes, 60, np.random.default_rng(seed + 1))
    rhos = []
    for row, u in enumerate(ds.unseen_classes):
        nbrs, sims = tr.index_unseen.lookup(int(u))
        vis = [cosine_sim(gc.values[row], tr.real_centroids.values[tr.real_centroids.row_of(j)]) for j in nbrs]
        rhos.append(spearmanr(vis, sims)[0])
    x = np.concatenate([ds.test_seen_x, ds.test_unseen_x])
    y = np.concatenate([ds.test_seen_y, ds.test_unseen_y])
    conf = avg_confidence(classifier_probs(model, x), y, ds.num_seen)
    return {
        "rho": float(np.nanmean(rhos)),
        "h": trace.records[-1]["gzsl_h"],
        "conf_unseen": conf["unseen"],
        "trace": trace,
        "seconds": elapsed,
    }


@record(6, "similarity transfer on the default synthetic set")
def criterion_6():
    s3 = [desk_run(s, "S3") for s in SEEDS]
    s1 = [desk_run(s, "S1") for s in SEEDS]
    rho = float(np.mean([r["rho"] for r in s3]))
    h_wins = all(a["h"] > b["h"] for a, b in zip(s3, s1))
    dconf = float(np.mean([r["conf_unseen"] for r in s3]) - np.mean([r["conf_unseen"] for r in s1]))
    slowest = max(r["seconds"] for r in s3 + s1)
    ok = rho >= 0.8 and h_wins and dconf >= 0.05 and slowest < 600
    hs = ", ".join(f"{a['h']:.3f}>{b['h']:.3f}" for a, b in zip(s3, s1))
    return ok, (f"Spearman {rho:.3f} (>=0.8), H S3>S1 per seed [{hs}], unseen confidence gap {dconf:.3f} "
                f"(>=0.05), {DESK['epochs']} epochs, slowest run {slowest:.0f}s (<600s)")


@record(7, "training stability")
def criterion_7():
    details, ok = [], True
    loss_cols = ("loss_d", "wasserstein", "gp", "loss_c_seen", "loss_g_adv", "loss_vp",
                 "loss_sr_seen", "loss_c_unseen", "loss_sr_unseen")
    for s in SEEDS:
        trace = desk_run(s, "S3")["trace"]
        finite = all(np.all(np.isfinite(trace.column(c))) for c in loss_cols)
        h = trace.column("gzsl_h")
        tail = h[int(np.floor(0.8 * len(h))):]
        var, mean = float(tail.var()), float(tail.mean())
        good = finite and mean > 0 and var < 0.25 * mean
        ok &= good
        details.append(f"seed {s}: finite {finite}, var {var:.2e} < 0.25*mean {0.25 * mean:.3f}")
    return ok, "; ".join(details)


@record(8, "per-epoch cost when doubling n_c")
def criterion_8():
    ds, sem = default_data(0)
    per_epoch = {}
    for k in (5, 10):
        tr = Trainer(ds, sem, desk_config(seed=0, epochs=10, n_neighbors=k))
        _, trace = tr.fit()
        per_epoch[k] = float(np.median(trace.column("seconds")))
    ratio = per_epoch[10] / per_epoch[5]
    return ratio <= 2.5, f"n_c=5 {per_epoch[5]:.3f}s/epoch, n_c=10 {per_epoch[10]:.3f}s/epoch, ratio {ratio:.2f} (<=2.5)"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8]


@pytest.mark.parametrize("criterion", CRITERIA, ids=lambda f: f.__name__)
def test_acceptance(criterion):
    ok, detail = criterion()
    assert ok, detail


if __name__ == "__main__":
    for number, crit in enumerate(CRITERIA, start=1):
        crit()
        print(summary_line(number), flush=True)
    sys.exit(0 if all(ok for ok, _, _ in RESULTS.values()) else 1)

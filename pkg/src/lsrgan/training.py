"""Two-phase LsrGAN training loop (seen-class WGAN step, unseen-class step)."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import losses as L
from .data import MinibatchSampler
from .metrics import evaluate_model
from .models import ModelConfig, init_model, sample_noise
from .optim import Adam, NonFiniteError
from .similarity import ClassCentroids, build_neighbor_index, class_means

log = logging.getLogger(__name__)

ABLATIONS = ("S1", "S2", "S3", "S4")
MODES = ("attributes", "tfidf")


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 64
    n_critic: int = 5
    n_cls_unseen: int = 1
    lambda_c: float = 0.01
    lambda_vp: float = 1.0
    lambda_sr: float = 1.0
    lambda_gp: float = 10.0
    epsilon: float = 0.05
    epsilon_unseen: float | None = None
    n_neighbors: int = 5
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    m_gen: int = 32
    m_eval: int = 60
    seed: int = 0
    ablation: str = "S3"
    mode: str = "attributes"
    # None picks relu for attributes, tanh for tfidf
    output_activation: str | None = None
    noise_dim: int = 100
    hidden_g: int = 4096
    hidden_d: int = 4096
    denoiser_dim: int = 1024
    gen_steps_seen: int = 1
    gen_steps_unseen: int = 1
    # 0: every unseen class in each unseen generator step
    unseen_slice: int = 0
    # 0: ceil(C_u * m_gen / batch_size) unseen steps per epoch
    unseen_steps: int = 0
    eval_every: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_critic < 1:
            raise ValueError("n_critic must be >= 1")
        if self.n_cls_unseen not in (1, 2):
            raise ValueError("n_cls_unseen must be 1 or 2")
        for key in ("lambda_c", "lambda_vp", "lambda_sr", "lambda_gp", "epsilon"):
            if getattr(self, key) < 0:
                raise ValueError(f"{key} must be nonnegative")
        if self.epsilon_unseen is not None and self.epsilon_unseen < 0:
            raise ValueError("epsilon_unseen must be nonnegative")
        for key in ("epochs", "batch_size", "n_neighbors", "m_gen", "m_eval", "eval_every"):
            if getattr(self, key) < 1:
                raise ValueError(f"{key} must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.output_activation not in (None, "relu", "tanh"):
            raise ValueError("output_activation must be relu or tanh")

    @property
    def uses_denoiser(self):
        return self.mode == "tfidf" and self.ablation != "S4"

    def loss_weights(self):
        """Weights with the ablation's switched-off terms zeroed."""
        lam_vp = 0.0 if self.ablation == "S1" else self.lambda_vp
        lam_sr = 0.0 if self.ablation in ("S1", "S2") else self.lambda_sr
        return L.LossWeights(
            lambda_c=self.lambda_c,
            lambda_vp=lam_vp,
            lambda_sr=lam_sr,
            lambda_gp=self.lambda_gp,
            epsilon=self.epsilon,
            epsilon_unseen=self.epsilon_unseen,
        )

    @classmethod
    def field_types(cls):
        return {f.name: f.type for f in fields(cls)}


TRACE_COLUMNS = (
    "epoch",
    "loss_d",
    "wasserstein",
    "gp",
    "loss_c_seen",
    "loss_g_adv",
    "loss_vp",
    "loss_sr_seen",
    "loss_c_unseen",
    "loss_sr_unseen",
    "zsl_top1",
    "gzsl_u",
    "gzsl_s",
    "gzsl_h",
    "seconds",
)


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)
    with_auc: bool = False

    @property
    def columns(self):
        return TRACE_COLUMNS + (("auc",) if self.with_auc else ())

    def append(self, record):
        bad = [k for k, v in record.items() if not math.isfinite(v)]
        if bad:
            raise NonFiniteError(f"non-finite trace values at epoch {record.get('epoch')}: {bad}")
        self.records.append(record)

    def column(self, name):
        return np.array([r[name] for r in self.records])

    def to_csv(self, path, header_lines=(), exclude=()):
        cols = [c for c in self.columns if c not in exclude]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.records:
                w.writerow([_cell(r[c]) for c in cols])


def _cell(v):
    return str(int(v)) if float(v).is_integer() and abs(v) < 1e15 else repr(float(v))


def _value(x):
    return float(x.data) if isinstance(x, ad.Tensor) else float(x)


class Trainer:
    """Holds model, optimizers and sampling state for one training run.

    With ``instrument=True`` every update is logged to ``events`` as
    ``(phase, kind, info)`` and per-component generator gradient norms are
    recorded; this costs extra backward sweeps.
    """

    def __init__(self, dataset, semantics, config, instrument=False):
        self.dataset = dataset
        self.semantics = semantics
        self.config = config
        self.weights = config.loss_weights()
        act = config.output_activation or ("relu" if config.mode == "attributes" else "tanh")
        self.model_config = ModelConfig(
            visual_dim=dataset.visual_dim,
            semantic_dim=semantics.dim,
            num_classes=dataset.num_classes,
            noise_dim=config.noise_dim,
            hidden_g=config.hidden_g,
            hidden_d=config.hidden_d,
            output_activation=act,
            denoiser_dim=config.denoiser_dim if config.uses_denoiser else None,
        )
        seeds = np.random.SeedSequence(config.seed).spawn(2)
        self.model = init_model(self.model_config, int(seeds[0].generate_state(1)[0]))
        self.model.seed = config.seed
        self.rng = np.random.default_rng(seeds[1])
        opt = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
        self.opt_g = Adam(self.model.generator_parameters(), **opt)
        self.opt_d = Adam(self.model.discriminator.parameters(), **opt)
        self.sampler = MinibatchSampler(dataset, semantics)
        self.seen = dataset.seen_classes
        self.unseen = dataset.unseen_classes
        self.real_centroids = class_means(dataset.train_x, dataset.train_y, self.seen)
        self._unseen_cursor = 0
        self.instrument = instrument
        self.events = []
        self.grad_norms = []
        self.index_seen = self.index_unseen = None
        self.refresh_neighbors()

    # -- neighbour lists ---------------------------------------------------

    def effective_semantics(self):
        """Semantic vectors the similarities are measured on (denoised if enabled)."""
        if self.model.denoiser is None:
            return self.semantics.vectors
        with ad.no_grad():
            return self.model.denoiser(self.semantics.vectors).data

    def refresh_neighbors(self):
        if self.weights.lambda_sr == 0 and self.index_seen is not None:
            return
        sem = self.effective_semantics()
        self.index_seen = build_neighbor_index(sem, self.seen, self.seen, self.config.n_neighbors)
        self.index_unseen = build_neighbor_index(sem, self.unseen, self.seen, self.config.n_neighbors)

    # -- helpers -----------------------------------------------------------

    def _noise(self, n):
        return sample_noise(self.rng, n, self.model_config.noise_dim)

    def _emit(self, phase, kind, **info):
        if self.instrument:
            self.events.append((phase, kind, info))

    def _generated_centroids(self, classes):
        m_g = self.config.m_gen
        t = np.repeat(self.semantics.vectors[classes], m_g, axis=0)
        fake = self.model.generate(self._noise(t.shape[0]), t)
        means = ad.reshape(fake, (len(classes), m_g, fake.shape[1])).mean(axis=1)
        return ClassCentroids(tuple(int(c) for c in classes), means)

    def _real_subset(self, classes):
        rows = [self.real_centroids.row_of(int(c)) for c in classes]
        return ClassCentroids(tuple(int(c) for c in classes), self.real_centroids.values[rows])

    def _check(self, phase, parts):
        for name, v in parts.items():
            if not math.isfinite(_value(v)):
                raise NonFiniteError(f"non-finite {phase}-phase loss component '{name}'")

    def _record_grad_norms(self, phase, components, factors):
        params = self.model.generator_parameters()
        norms = {}
        for name, factor in factors.items():
            comp = components.get(name)
            if comp is None or factor == 0 or not isinstance(comp, ad.Tensor) or not comp.requires_grad:
                norms[name] = 0.0
                continue
            gs = ad.grad(comp * factor, params, allow_unused=True)
            norms[name] = float(np.sqrt(sum(float(np.sum(g.data**2)) for g in gs)))
        self.grad_norms.append((phase, norms))

    # -- seen phase ----------------------------------------------------------

    def critic_step(self):
        cfg, w, disc = self.config, self.weights, self.model.discriminator
        batch = self.sampler.sample("seen", cfg.batch_size, self.rng)
        with ad.no_grad():
            fake = self.model.generate(self._noise(cfg.batch_size), batch.semantics).data
        samples = L.gp_samples(batch.features, fake, self.rng)
        objective, parts = L.critic_loss(disc, batch.features, fake, samples, w.lambda_gp)
        lc = L.classifier_loss(
            disc, np.concatenate([batch.features, fake]), np.concatenate([batch.labels, batch.labels])
        )
        self._check("seen", {"critic": objective, "classifier": lc})
        loss = -objective + w.lambda_c * lc
        grads = ad.backward(loss)
        self.opt_d.step({p: grads[p] for p in disc.parameters() if p in grads})
        self._emit("seen", "critic", visual_rows=batch.features.shape[0])
        return {
            "loss_d": _value(-objective),
            "wasserstein": _value(parts["wasserstein"]),
            "gp": _value(parts["gp"]),
            "loss_c_seen": _value(lc),
        }

    def generator_seen_loss(self):
        """(total, components) of the seen-phase generator objective on a fresh draw."""
        cfg, w, disc = self.config, self.weights, self.model.discriminator
        labels = self.rng.integers(0, self.dataset.num_seen, size=cfg.batch_size)
        fake = self.model.generate(self._noise(cfg.batch_size), self.semantics.vectors[labels])
        critic, logits = disc(fake)
        comps = {
            "adversarial": -critic.mean(),
            "classifier": L.classifier_loss_from_logits(logits, labels),
        }
        scheduled = np.unique(labels)
        if w.lambda_vp > 0 or w.lambda_sr > 0:
            gen_c = self._generated_centroids(scheduled)
            if w.lambda_vp > 0:
                comps["visual_pivot"] = L.visual_pivot_loss(self._real_subset(scheduled), gen_c)
            if w.lambda_sr > 0:
                comps["sr"] = L.sr_loss_seen(gen_c, self.real_centroids, self.index_seen, w.epsilon, w.penalty_p)
        return L.generator_total_loss(comps, w, "seen"), comps

    def generator_seen_step(self):
        w = self.weights
        total, comps = self.generator_seen_loss()
        if self.instrument:
            self._record_grad_norms(
                "seen", comps,
                {"adversarial": 1.0, "classifier": w.lambda_c, "visual_pivot": w.lambda_vp, "sr": w.lambda_sr},
            )
        grads = ad.backward(total)
        self.opt_g.step(grads)
        self._emit("seen", "generator", visual_rows=0)
        return {
            "loss_g_adv": _value(comps["adversarial"]),
            "loss_vp": _value(comps.get("visual_pivot", 0.0)),
            "loss_sr_seen": _value(comps.get("sr", 0.0)),
        }

    def seen_phase_step(self):
        stats = [self.critic_step() for _ in range(self.config.n_critic)]
        out = {k: float(np.mean([s[k] for s in stats])) for k in stats[0]}
        gstats = [self.generator_seen_step() for _ in range(self.config.gen_steps_seen)]
        out.update({k: float(np.mean([s[k] for s in gstats])) for k in gstats[0]})
        return out

    # -- unseen phase --------------------------------------------------------

    def classifier_unseen_step(self):
        cfg, disc = self.config, self.model.discriminator
        batch = self.sampler.sample("unseen", cfg.batch_size, self.rng)
        with ad.no_grad():
            fake = self.model.generate(self._noise(cfg.batch_size), batch.semantics).data
        lc = L.classifier_loss(disc, fake, batch.labels)
        self._check("unseen", {"classifier": lc})
        grads = ad.backward(lc)
        # only the classifier branch trains here; critic head and shared layer stay frozen
        self.opt_d.step({p: grads[p] for p in disc.classifier_parameters() if p in grads})
        self._emit("unseen", "classifier", visual_rows=0)
        return _value(lc)

    def _unseen_slice(self):
        k = self.config.unseen_slice or len(self.unseen)
        k = min(k, len(self.unseen))
        idx = [(self._unseen_cursor + i) % len(self.unseen) for i in range(k)]
        self._unseen_cursor = (self._unseen_cursor + k) % len(self.unseen)
        return self.unseen[idx]

    def generator_unseen_step(self):
        cfg, w, disc = self.config, self.weights, self.model.discriminator
        labels = self.rng.integers(self.dataset.num_seen, self.dataset.num_classes, size=cfg.batch_size)
        fake = self.model.generate(self._noise(cfg.batch_size), self.semantics.vectors[labels])
        comps = {"classifier": L.classifier_loss_from_logits(disc.classify(fake), labels)}
        if w.lambda_sr > 0:
            gen_c = self._generated_centroids(np.sort(self._unseen_slice()))
            comps["sr"] = L.sr_loss_unseen(
                gen_c, self.real_centroids, self.index_unseen, w.margin_unseen, w.penalty_p
            )
        total = L.generator_total_loss(comps, w, "unseen")
        if self.instrument:
            self._record_grad_norms("unseen", comps, {"classifier": w.lambda_c, "sr": w.lambda_sr})
        grads = ad.backward(total)
        self.opt_g.step(grads)
        self._emit("unseen", "generator", visual_rows=0)
        return {"loss_sr_unseen": _value(comps.get("sr", 0.0))}

    def unseen_phase_step(self):
        lcs = [self.classifier_unseen_step() for _ in range(self.config.n_cls_unseen)]
        gstats = [self.generator_unseen_step() for _ in range(self.config.gen_steps_unseen)]
        return {
            "loss_c_unseen": float(np.mean(lcs)),
            "loss_sr_unseen": float(np.mean([s["loss_sr_unseen"] for s in gstats])),
        }

    # -- epochs --------------------------------------------------------------

    @property
    def seen_steps_per_epoch(self):
        return math.ceil(self.dataset.train_y.size / self.config.batch_size)

    @property
    def unseen_steps_per_epoch(self):
        if self.config.unseen_steps:
            return self.config.unseen_steps
        return math.ceil(self.dataset.num_unseen * self.config.m_gen / self.config.batch_size)

    def run_epoch(self):
        if self.model.denoiser is not None:
            self.refresh_neighbors()
        seen_stats = [self.seen_phase_step() for _ in range(self.seen_steps_per_epoch)]
        unseen_stats = [self.unseen_phase_step() for _ in range(self.unseen_steps_per_epoch)]
        rec = {k: float(np.mean([s[k] for s in seen_stats])) for k in seen_stats[0]}
        rec.update({k: float(np.mean([s[k] for s in unseen_stats])) for k in unseen_stats[0]})
        self.model.step_count += 1
        return rec

    @property
    def predictor(self):
        return "classifier" if self.config.mode == "attributes" else "nearest_centroid"

    def evaluate(self, rng=None):
        rng = np.random.default_rng(self.config.seed + 7919) if rng is None else rng
        return evaluate_model(
            self.model,
            self.dataset,
            self.semantics,
            self.predictor,
            m_eval=self.config.m_eval,
            rng=rng,
            with_auc=self.config.mode == "tfidf",
        )

    def snapshot(self):
        return {name: p.data.copy() for name, p in self.model.named_parameters().items()}

    def restore(self, snap):
        for name, p in self.model.named_parameters().items():
            p.data = snap[name].copy()

    def fit(self, epochs=None, callback=None):
        epochs = self.config.epochs if epochs is None else epochs
        trace = TrainTrace(with_auc=self.config.mode == "tfidf")
        self.best = {"gzsl_h": -1.0, "epoch": 0, "params": None}
        last = None
        for epoch in range(1, epochs + 1):
            t0 = time.perf_counter()
            rec = self.run_epoch()
            seconds = time.perf_counter() - t0
            if epoch % self.config.eval_every == 0 or epoch == epochs or last is None:
                last = self.evaluate()
            rec.update({k: last[k] for k in ("zsl_top1", "gzsl_u", "gzsl_s", "gzsl_h")})
            if trace.with_auc:
                rec["auc"] = last["auc"]
            rec["epoch"] = epoch
            rec["seconds"] = seconds
            trace.append(rec)
            if last["gzsl_h"] > self.best["gzsl_h"]:
                self.best = {"gzsl_h": last["gzsl_h"], "epoch": epoch, "params": self.snapshot()}
            log.debug("epoch %d %s", epoch, {k: round(v, 4) for k, v in rec.items()})
            if callback is not None:
                callback(self, rec)
        return self.model, trace


def fit(dataset, semantics, config, instrument=False, callback=None):
    """Train from scratch; returns (model, trace). ``model`` is the final state."""
    trainer = Trainer(dataset, semantics, config, instrument=instrument)
    model, trace = trainer.fit(callback=callback)
    return model, trace


def config_echo(config):
    return " ".join(f"{k}={v}" for k, v in asdict(config).items())

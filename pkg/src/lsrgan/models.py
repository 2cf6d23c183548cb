"""Generator, two-headed discriminator, TF-IDF denoiser and checkpoints."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

OUTPUT_ACTIVATIONS = ("relu", "tanh")


@dataclass
class ModelConfig:
    visual_dim: int
    semantic_dim: int
    num_classes: int
    noise_dim: int = 100
    hidden_g: int = 4096
    hidden_d: int = 4096
    output_activation: str = "relu"
    # None disables the denoiser (attribute mode and ablation S4)
    denoiser_dim: int | None = None
    leaky_slope: float = 0.2
    init: str = "glorot_uniform"

    def __post_init__(self):
        dims = dict(
            visual_dim=self.visual_dim,
            semantic_dim=self.semantic_dim,
            num_classes=self.num_classes,
            noise_dim=self.noise_dim,
            hidden_g=self.hidden_g,
            hidden_d=self.hidden_d,
        )
        if self.denoiser_dim is not None:
            dims["denoiser_dim"] = self.denoiser_dim
        for key, value in dims.items():
            if int(value) < 1:
                raise ValueError(f"{key} must be positive, got {value}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")

    @property
    def condition_dim(self):
        return self.semantic_dim if self.denoiser_dim is None else self.denoiser_dim


class Linear:
    def __init__(self, weight, bias, name):
        self.weight = Tensor(weight, requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(bias, requires_grad=True, name=f"{name}.bias")

    def __call__(self, x):
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError(
                f"{self.weight.name}: input dim {x.shape[-1]} != expected {self.weight.shape[0]}"
            )
        return ad.matmul(x, self.weight) + self.bias

    def parameters(self):
        return [self.weight, self.bias]


def _glorot(rng, fan_in, fan_out, name):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return Linear(rng.uniform(-s, s, size=(fan_in, fan_out)), np.zeros(fan_out), name)


class Generator:
    """(noise, condition) -> visual feature, one LeakyReLU hidden layer."""

    def __init__(self, fc1, fc2, output_activation, slope):
        self.fc1, self.fc2 = fc1, fc2
        self.output_activation = output_activation
        self.slope = slope

    def __call__(self, z, t):
        z, t = ad.constant(z), ad.constant(t)
        if z.shape[0] != t.shape[0]:
            if t.shape[0] != 1:
                raise ShapeError(f"generator: batch {z.shape[0]} of noise vs {t.shape[0]} conditions")
            t = ad.broadcast_to(t, (z.shape[0], t.shape[1]))
        h = ad.leaky_relu(self.fc1(ad.concat([z, t], axis=1)), self.slope)
        out = self.fc2(h)
        return ad.relu(out) if self.output_activation == "relu" else ad.tanh(out)

    def parameters(self):
        return self.fc1.parameters() + self.fc2.parameters()


class Discriminator:
    """Shared ReLU hidden layer feeding a critic head and a classifier head."""

    def __init__(self, fc, critic_head, classifier_head):
        self.fc = fc
        self.critic_head = critic_head
        self.classifier_head = classifier_head

    def hidden(self, x):
        return ad.relu(self.fc(ad.constant(x)))

    def critic(self, x):
        return ad.reshape(self.critic_head(self.hidden(x)), (-1,))

    def classify(self, x):
        return self.classifier_head(self.hidden(x))

    def __call__(self, x):
        h = self.hidden(x)
        return ad.reshape(self.critic_head(h), (-1,)), self.classifier_head(h)

    def shared_parameters(self):
        return self.fc.parameters()

    def critic_parameters(self):
        return self.critic_head.parameters()

    def classifier_parameters(self):
        return self.classifier_head.parameters()

    def parameters(self):
        return self.shared_parameters() + self.critic_parameters() + self.classifier_parameters()


class Denoiser:
    def __init__(self, fc, slope):
        self.fc = fc
        self.slope = slope

    def __call__(self, t):
        return ad.leaky_relu(self.fc(ad.constant(t)), self.slope)

    def parameters(self):
        return self.fc.parameters()


@dataclass
class LsrGanModel:
    config: ModelConfig
    generator: Generator
    discriminator: Discriminator
    denoiser: Denoiser | None = None
    seed: int = 0
    step_count: int = 0
    extra: dict = field(default_factory=dict)

    def condition(self, t):
        """Semantic vectors as fed to the generator (denoised when enabled)."""
        return self.denoiser(t) if self.denoiser is not None else ad.constant(t)

    def generate(self, z, t):
        return self.generator(z, self.condition(t))

    def discriminate(self, x):
        return self.discriminator(x)

    def generator_parameters(self):
        extra = self.denoiser.parameters() if self.denoiser is not None else []
        return self.generator.parameters() + extra

    def named_parameters(self):
        params = self.generator_parameters() + self.discriminator.parameters()
        return {p.name: p for p in params}


def init_model(config, seed):
    rng = np.random.default_rng(seed)
    c = config
    denoiser = None
    if c.denoiser_dim is not None:
        denoiser = Denoiser(_glorot(rng, c.semantic_dim, c.denoiser_dim, "denoiser.fc"), c.leaky_slope)
    gen = Generator(
        _glorot(rng, c.noise_dim + c.condition_dim, c.hidden_g, "generator.fc1"),
        _glorot(rng, c.hidden_g, c.visual_dim, "generator.fc2"),
        c.output_activation,
        c.leaky_slope,
    )
    disc = Discriminator(
        _glorot(rng, c.visual_dim, c.hidden_d, "discriminator.fc"),
        _glorot(rng, c.hidden_d, 1, "discriminator.critic"),
        _glorot(rng, c.hidden_d, c.num_classes, "discriminator.classifier"),
    )
    return LsrGanModel(config=c, generator=gen, discriminator=disc, denoiser=denoiser, seed=seed)


def parameter_count(config):
    """Closed-form number of scalars in (generator+denoiser, discriminator)."""
    c = config
    g = (c.noise_dim + c.condition_dim + 1) * c.hidden_g + (c.hidden_g + 1) * c.visual_dim
    if c.denoiser_dim is not None:
        g += (c.semantic_dim + 1) * c.denoiser_dim
    d = (c.visual_dim + 1) * c.hidden_d + (c.hidden_d + 1) * (1 + c.num_classes)
    return g, d


def sample_noise(rng, n, dim):
    return rng.standard_normal((n, dim))


# ---------------------------------------------------------------------------
# checkpoint file:
#   b"LSRGANCK" | u32 version | u64 header_len | header JSON (utf-8)
#   u32 n_tensors, then per tensor:
#   u16 name_len | name | u32 ndim | u64 dims... | float64 little-endian data

_MAGIC = b"LSRGANCK"
_VERSION = 1


def save_checkpoint(path, model, extra=None):
    header = {
        "config": asdict(model.config),
        "seed": int(model.seed),
        "step_count": int(model.step_count),
        "extra": {**model.extra, **(extra or {})},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    params = model.named_parameters()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", p.data.ndim))
            fh.write(struct.pack(f"<{p.data.ndim}Q", *p.data.shape))
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not an LsrGAN checkpoint")
        version, hlen = struct.unpack("<IQ", fh.read(12))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
            tensors[name] = data.astype(np.float64)
    config = ModelConfig(**header["config"])
    model = init_model(config, header["seed"])
    params = model.named_parameters()
    if set(params) != set(tensors):
        missing = sorted(set(params) ^ set(tensors))
        raise ValueError(f"{path}: parameter set mismatch: {missing}")
    for name, p in params.items():
        if p.data.shape != tensors[name].shape:
            raise ValueError(f"{path}: shape mismatch for {name}")
        p.data = tensors[name].copy()
    model.step_count = header["step_count"]
    model.extra = header.get("extra", {})
    return model

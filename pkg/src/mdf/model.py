"""Twin encoders with per-domain classifier heads over a shared latent space."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .numcore import Tensor

EO, SAR = "eo", "sar"
DOMAINS = (EO, SAR)


@dataclass
class Dense:
    weight: np.ndarray   # [in x out]
    bias: np.ndarray     # [out]

    @property
    def shape(self):
        return self.weight.shape


@dataclass
class EncoderParams:
    layers: list
    unit_norm: bool = True   # project latents onto the unit sphere

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    def arch(self) -> tuple:
        return tuple(layer.weight.shape for layer in self.layers)

    def arrays(self) -> list:
        return [a for layer in self.layers for a in (layer.weight, layer.bias)]


class ClassifierParams(Dense):
    """Single affine layer from the latent space to class logits."""

    def arrays(self) -> list:
        return [self.weight, self.bias]


@dataclass
class LatentBatch:
    latents: object   # ndarray or Tensor, [n x z]
    domain: str

    def __len__(self):
        return self.latents.shape[0]


@dataclass(frozen=True)
class ArchConfig:
    input_dim: int = 64
    hidden: tuple = (128, 64)
    latent_dim: int = 32
    n_classes: int = 10
    shared_head: bool = False
    unit_norm: bool = True

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden, self.latent_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"layer widths must be positive, got {dims}")
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")

    @property
    def dims(self) -> tuple:
        return (self.input_dim, *self.hidden, self.latent_dim)


# Stand-ins for the two backbone families used in the ensembling experiment.
ARCH_PRESETS = {
    "default": dict(hidden=(128, 64)),
    "wide": dict(hidden=(256,)),
    "deep": dict(hidden=(128, 96, 64)),
}


def arch_preset(name: str, **overrides) -> ArchConfig:
    if name not in ARCH_PRESETS:
        raise ValueError(f"unknown arch preset {name!r}; choose from {sorted(ARCH_PRESETS)}")
    return ArchConfig(**{**ARCH_PRESETS[name], **overrides})


@dataclass
class TwinModel:
    eo_encoder: EncoderParams
    eo_head: ClassifierParams
    sar_encoder: EncoderParams
    sar_head: ClassifierParams
    latent_dim: int
    shared_head: bool = False
    meta: dict = field(default_factory=dict)
    # fixed per-domain (mean, std) applied to raw inputs before the encoder
    input_norm: dict = field(default_factory=lambda: {EO: (0.0, 1.0), SAR: (0.0, 1.0)})

    def encoder(self, domain: str) -> EncoderParams:
        return {EO: self.eo_encoder, SAR: self.sar_encoder}[domain]

    def head(self, domain: str) -> ClassifierParams:
        return {EO: self.eo_head, SAR: self.sar_head}[domain]

    @property
    def n_classes(self) -> int:
        return self.eo_head.weight.shape[1]

    def parameters(self) -> list:
        """Trainable arrays in checkpoint order; a shared head is listed once."""
        out = self.eo_encoder.arrays() + self.eo_head.arrays() + self.sar_encoder.arrays()
        if not self.shared_head:
            out += self.sar_head.arrays()
        return out

    def with_parameters(self, arrays) -> "TwinModel":
        """Rebuild the model from a flat list in :meth:`parameters` order."""
        it = iter(arrays)

        def enc(src):
            return EncoderParams([Dense(next(it), next(it)) for _ in src.layers], src.unit_norm)

        eo_enc = enc(self.eo_encoder)
        eo_head = ClassifierParams(next(it), next(it))
        sar_enc = enc(self.sar_encoder)
        sar_head = eo_head if self.shared_head else ClassifierParams(next(it), next(it))
        return TwinModel(eo_enc, eo_head, sar_enc, sar_head, self.latent_dim,
                         self.shared_head, dict(self.meta), dict(self.input_norm))

    def normalize(self, inputs, domain: str):
        mean, std = self.input_norm[domain]
        if mean == 0.0 and std == 1.0:
            return inputs
        x = np.asarray(inputs)
        return ((x - np.asarray(mean, x.dtype)) / np.asarray(std, x.dtype)).astype(x.dtype)

    def copy(self) -> "TwinModel":
        return self.with_parameters([np.array(a, copy=True) for a in self.parameters()])


NORM_EPS = 1e-6


def _forward_encoder(enc: EncoderParams, x):
    # rectifier on hidden layers only: a rectified latent layer can be driven
    # entirely dead by the alignment terms, which is an absorbing state
    h = x
    last = len(enc.layers) - 1
    for i, layer in enumerate(enc.layers):
        h = nc.matmul(h, layer.weight) + layer.bias
        if i < last:
            h = nc.relu(h)
    if enc.unit_norm:
        # without a fixed scale the cheapest way to shrink a Wasserstein term
        # is to shrink every latent towards the origin
        h = h / nc.sqrt(nc.sum_(h * h, axis=1, keepdims=True) + NORM_EPS)
    return h


def _check_input(inputs, width: int, what: str):
    if isinstance(inputs, Tensor):
        arr = inputs
    else:
        raw = np.asarray(inputs)
        arr = nc.as_array(raw, np.float64 if raw.dtype == np.float64 else nc.DEFAULT_DTYPE)
    if arr.ndim != 2:
        raise ValueError(f"{what} must be 2-D [n x {width}], got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"empty batch passed to {what}")
    if arr.shape[1] != width:
        raise ValueError(f"{what} width {arr.shape[1]} does not match expected {width}")
    return arr


def encode(enc: EncoderParams, inputs, domain: str = EO) -> LatentBatch:
    """Affine layers with rectifiers in between, mapping ``[n x d]`` inputs to ``[n x z]``
    latents (scaled to unit length when ``enc.unit_norm``).

    Works on plain arrays (returns an ndarray) and on tensors/tensor-valued
    parameters (returns a tensor that can be differentiated).
    """
    x = _check_input(inputs, enc.input_dim, "encoder input")
    out = _forward_encoder(enc, x)
    plain = not isinstance(inputs, Tensor) and not any(
        isinstance(a, Tensor) for a in enc.arrays())
    return LatentBatch(out.data if plain else out, domain)


def classify(head: ClassifierParams, latents) -> object:
    """Logits ``latents @ W + b``; no output nonlinearity."""
    z = latents.latents if isinstance(latents, LatentBatch) else latents
    z = _check_input(z, head.weight.shape[0], "classifier input")
    out = nc.matmul(z, head.weight) + head.bias
    plain = not isinstance(z, Tensor) and not any(
        isinstance(a, Tensor) for a in head.arrays())
    return out.data if plain else out


def input_stats(inputs) -> tuple:
    """Scalar (mean, std) of a raw input matrix, as Python floats."""
    x = np.asarray(inputs, dtype=np.float64)
    return float(x.mean()), float(x.std() or 1.0)


def forward(model: TwinModel, inputs, domain: str):
    """Normalize, encode and classify; returns ``(latents, logits)``."""
    lat = encode(model.encoder(domain), model.normalize(inputs, domain), domain).latents
    return lat, classify(model.head(domain), lat)


def predict_proba(model: TwinModel, inputs, domain: str) -> np.ndarray:
    logits = forward(model, inputs, domain)[1]
    logits = np.asarray(logits, dtype=np.float64)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def _dense(rng, fan_in: int, fan_out: int, cls=Dense):
    w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
    return cls(w.astype(nc.DEFAULT_DTYPE), np.zeros(fan_out, dtype=nc.DEFAULT_DTYPE))


def init_encoder(arch: ArchConfig, rng) -> EncoderParams:
    dims = arch.dims
    return EncoderParams([_dense(rng, dims[i], dims[i + 1]) for i in range(len(dims) - 1)],
                         arch.unit_norm)


def init_head(arch: ArchConfig, rng) -> ClassifierParams:
    return _dense(rng, arch.latent_dim, arch.n_classes, ClassifierParams)


def init_twin(arch: ArchConfig, seed: int) -> TwinModel:
    """He-normal weights (variance 2/fan_in), zero biases, fully determined by ``seed``."""
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]
    eo_enc = init_encoder(arch, streams[0])
    eo_head = init_head(arch, streams[1])
    sar_enc = init_encoder(arch, streams[2])
    sar_head = eo_head if arch.shared_head else init_head(arch, streams[3])
    meta = {"arch": {"input_dim": arch.input_dim, "hidden": list(arch.hidden),
                     "latent_dim": arch.latent_dim, "n_classes": arch.n_classes,
                     "shared_head": arch.shared_head, "unit_norm": arch.unit_norm}}
    return TwinModel(eo_enc, eo_head, sar_enc, sar_head, arch.latent_dim, arch.shared_head, meta)


def transfer_encoder(source: EncoderParams, target: TwinModel, which: str) -> TwinModel:
    """Copy ``source`` into ``target``'s encoder for domain ``which``.

    The other encoder and both heads are left exactly as they were.
    """
    if which not in DOMAINS:
        raise ValueError(f"which must be one of {DOMAINS}, got {which!r}")
    current = target.encoder(which)
    if source.arch() != current.arch() or source.unit_norm != current.unit_norm:
        raise ValueError(f"architecture mismatch: source {source.arch()} vs target {current.arch()}")
    out = copy.copy(target)
    out.meta = dict(target.meta)
    new_enc = EncoderParams([Dense(np.array(l.weight, copy=True), np.array(l.bias, copy=True))
                             for l in source.layers], source.unit_norm)
    if which == EO:
        out.eo_encoder = new_enc
    else:
        out.sar_encoder = new_enc
    return out

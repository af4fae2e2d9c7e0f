"""Codec model description, weights, pruning and quantization."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

CATALOG_SIZES = (5, 6, 8, 10, 12, 14, 16, 18, 20)
PRECISIONS = ("float32", "int16", "int8")
_BITS = {"int8": 8, "int16": 16}


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Topology and deployment settings of one encoder-decoder pair.

    Defaults give the catalog topology for 256-point patches; the sampling
    sizes exist so tests can build reduced networks on tiny patches.
    """

    h: int = 5
    w: int = 5
    n_points: int = 256
    sa1_npoint: int = 64
    sa1_k: int = 16
    sa1_widths: tuple[int, int] = (32, 64)
    sa2_npoint: int = 16
    sa2_k: int = 8
    sa2_widths: tuple[int, int] = (64, 128)
    dec_hidden: int = 256
    up_ratio: int = 2
    cond_dim: int = 32
    refine_hidden: int = 64
    precision: str = "float32"
    sparsity: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "sa1_widths", tuple(self.sa1_widths))
        object.__setattr__(self, "sa2_widths", tuple(self.sa2_widths))
        if self.h < 1 or self.w < 1:
            raise ModelError("latent dims must be positive")
        if self.precision not in PRECISIONS:
            raise ModelError(f"unknown precision {self.precision!r}")
        if not 0.0 <= self.sparsity < 1.0:
            raise ModelError(f"sparsity must lie in [0, 1), got {self.sparsity}")
        if not (self.sa2_npoint <= self.sa1_npoint <= self.n_points):
            raise ModelError("sampling sizes must shrink through the encoder")
        if self.sa1_k > self.n_points or self.sa2_k > self.sa1_npoint:
            raise ModelError("group size exceeds available points")

    @classmethod
    def catalog(cls, size: int, **kw) -> "ModelSpec":
        if size not in CATALOG_SIZES:
            raise ModelError(f"({size},{size}) is not an admissible catalog size")
        return cls(h=size, w=size, **kw)

    @property
    def latent(self) -> int:
        return self.h * self.w

    @property
    def n_coarse(self) -> int:
        return self.up_ratio * self.n_points

    def layer_shapes(self) -> dict[str, tuple[int, int]]:
        a1, a2 = self.sa1_widths
        b1, b2 = self.sa2_widths
        L = self.latent
        return {
            "sa1_0": (3, a1),
            "sa1_1": (a1, a2),
            "sa2_0": (a2 + 3, b1),
            "sa2_1": (b1, b2),
            "enc_fc": (b2, L),
            "dec_fc0": (L, self.dec_hidden),
            "dec_fc1": (self.dec_hidden, 3 * self.n_coarse),
            "dec_cond": (L, self.cond_dim),
            "ref_0": (3 + self.cond_dim, self.refine_hidden),
            "ref_1": (self.refine_hidden, 3),
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sa1_widths"] = list(self.sa1_widths)
        d["sa2_widths"] = list(self.sa2_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


ENCODER_LAYERS = ("sa1_0", "sa1_1", "sa2_0", "sa2_1", "enc_fc")
DECODER_LAYERS = ("dec_fc0", "dec_fc1", "dec_cond", "ref_0", "ref_1")


def decoder_weight_macs(spec: ModelSpec) -> int:
    s = spec.layer_shapes()
    per_point = s["ref_0"][0] * s["ref_0"][1] + s["ref_1"][0] * s["ref_1"][1]
    return (
        s["dec_fc0"][0] * s["dec_fc0"][1]
        + s["dec_fc1"][0] * s["dec_fc1"][1]
        + s["dec_cond"][0] * s["dec_cond"][1]
        + spec.n_points * per_point
    )


def flops_decode(spec: ModelSpec) -> int:
    """Multiply-accumulates of one decoder pass.

    Dense layers are scaled by the kept-weight fraction; the farthest-point
    downsampling costs 3 MACs per candidate per selection step.
    """
    dense = decoder_weight_macs(spec)
    kept = int(round(dense * (1.0 - spec.sparsity)))
    fps = 3 * spec.n_coarse * (spec.n_points - 1)
    return kept + fps


def init_params(spec: ModelSpec, seed: int) -> dict[str, np.ndarray]:
    """He-initialized float64 parameters.

    Biases get small noise: stage-one groups contain their own centroid at
    relative position 0, which would otherwise sit exactly on a ReLU kink.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, (fan_in, fan_out) in spec.layer_shapes().items():
        std = np.sqrt(2.0 / fan_in)
        if name in ("enc_fc", "dec_cond"):
            std = np.sqrt(1.0 / fan_in)
        elif name == "dec_fc1":
            std = 0.5 * np.sqrt(1.0 / fan_in)
        elif name == "ref_1":
            std = 0.1 * np.sqrt(1.0 / fan_in)
        params[name + ".W"] = rng.normal(0.0, std, size=(fan_in, fan_out))
        params[name + ".b"] = rng.normal(0.0, 0.01, size=fan_out)
    return params


@dataclass
class CodecModel:
    """Weights plus deployment state of one trained encoder-decoder.

    ``weights`` stores float32 matrices/biases for float models. Quantized
    models keep integer matrices in ``qweights`` with one scale per layer;
    biases stay float32 in ``weights``.
    """

    spec: ModelSpec
    weights: dict[str, np.ndarray]
    masks: dict[str, np.ndarray] = field(default_factory=dict)
    qweights: dict[str, np.ndarray] = field(default_factory=dict)
    scales: dict[str, float] = field(default_factory=dict)

    @property
    def flops_decode(self) -> int:
        return flops_decode(self.spec)

    @property
    def layer_names(self) -> list[str]:
        return list(self.spec.layer_shapes())

    def params64(self) -> dict[str, np.ndarray]:
        """Float64 parameters for inference/training (dequantized when needed)."""
        out = {}
        for name in self.layer_names:
            if name in self.qweights:
                out[name + ".W"] = self.qweights[name].astype(np.float64) * self.scales[name]
            else:
                out[name + ".W"] = self.weights[name + ".W"].astype(np.float64)
            out[name + ".b"] = self.weights[name + ".b"].astype(np.float64)
        return out

    @classmethod
    def from_params(cls, spec: ModelSpec, params: dict, masks: dict | None = None):
        weights = {k: np.asarray(v, dtype=np.float32) for k, v in params.items()}
        masks = dict(masks or {})
        for name, m in masks.items():
            weights[name + ".W"] = weights[name + ".W"] * m
        return cls(spec, weights, masks)


def prune_array(w: np.ndarray, sparsity: float) -> np.ndarray:
    """Boolean keep-mask zeroing the ``sparsity`` fraction of smallest-magnitude entries.

    Ties in magnitude are resolved by flat index so the count is exact.
    """
    n_drop = int(np.floor(sparsity * w.size))
    keep = np.ones(w.size, dtype=bool)
    if n_drop:
        order = np.argsort(np.abs(w).ravel(), kind="stable")
        keep[order[:n_drop]] = False
    return keep.reshape(w.shape)


def prune(model: CodecModel, sparsity: float) -> CodecModel:
    """Magnitude-prune every weight matrix to the given sparsity."""
    if not 0.0 <= sparsity < 1.0:
        raise ModelError(f"sparsity must lie in [0, 1), got {sparsity}")
    if model.spec.precision != "float32":
        raise ModelError("prune a float32 model before quantizing it")
    weights = {k: v.copy() for k, v in model.weights.items()}
    masks = {}
    for name in model.layer_names:
        w = weights[name + ".W"]
        prior = model.masks.get(name)
        if prior is not None:
            w = w * prior
        if sparsity == 0.0 and prior is None:
            continue
        keep = prune_array(w, sparsity)
        if prior is not None:
            keep &= prior
        masks[name] = keep
        weights[name + ".W"] = (w * keep).astype(np.float32)
    spec = replace(model.spec, sparsity=float(sparsity))
    return CodecModel(spec, weights, masks)


def quantize_array(w: np.ndarray, bits: int) -> tuple[np.ndarray, float]:
    """Symmetric per-tensor quantization with round-half-to-even."""
    qmax = 2 ** (bits - 1) - 1
    w = np.asarray(w, dtype=np.float64)
    maxabs = float(np.max(np.abs(w))) if w.size else 0.0
    if maxabs == 0.0:
        return np.zeros(w.shape, dtype=np.int8 if bits == 8 else np.int16), 1.0 / qmax
    q = np.rint(w / maxabs * qmax)
    q = np.clip(q, -qmax, qmax).astype(np.int8 if bits == 8 else np.int16)
    return q, maxabs / qmax


def quantize(model: CodecModel, bits: int) -> CodecModel:
    if bits not in (8, 16):
        raise ModelError(f"unsupported bit width {bits}; choose 8 or 16")
    if model.spec.precision != "float32":
        raise ModelError("model is already quantized")
    weights = {}
    qweights, scales = {}, {}
    for name in model.layer_names:
        q, s = quantize_array(model.weights[name + ".W"], bits)
        qweights[name] = q
        scales[name] = s
        weights[name + ".b"] = model.weights[name + ".b"].copy()
    spec = replace(model.spec, precision=f"int{bits}")
    return CodecModel(spec, weights, {k: v.copy() for k, v in model.masks.items()}, qweights, scales)


def bits_of(precision: str) -> int:
    return _BITS.get(precision, 32)

"""End-to-end training of the patch codec with the EMD loss."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..cloud import NORM_TOL, Patch
from . import network
from .emd import emd
from .model import CodecModel, ModelSpec, init_params

log = logging.getLogger(__name__)

THREADS_ENV = "HOLOPCV_THREADS"


class TrainingDivergence(RuntimeError):
    def __init__(self, epoch: int, detail: str = "loss is not finite"):
        super().__init__(f"training diverged at epoch {epoch}: {detail}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainingConfig:
    lr: float = 1e-3
    lr_final: float | None = None  # cosine decay from lr to lr_final when set
    epochs: int = 200
    batch_size: int = 16
    seed: int = 0
    optimizer: str = "sgd"  # "sgd" (heavy-ball momentum) or "adam"
    momentum: float = 0.9
    beta2: float = 0.999
    grad_clip: float | None = None
    threads: int | None = None
    augment: bool = False  # random signed axis permutations per patch and step

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    model: CodecModel
    loss_curve: list[float]
    best_epoch: int
    best_curve: list[float] = field(default_factory=list)


def _stack(patches) -> np.ndarray:
    arr = np.stack([p.points if isinstance(p, Patch) else np.asarray(p) for p in patches])
    return arr.astype(np.float64)


def _n_threads(cfg: TrainingConfig | None) -> int:
    if cfg is not None and cfg.threads:
        return cfg.threads
    return max(1, int(os.environ.get(THREADS_ENV, "1")))


def batch_emd(y: np.ndarray, x: np.ndarray, pool: ThreadPoolExecutor | None = None):
    """Mean per-patch EMD over a batch and its gradient w.r.t. ``y``.

    Per-patch results are reduced in index order, so threaded and serial
    evaluation produce identical bits.
    """
    b = len(y)
    pairs = (pool.map(emd, y, x) if pool is not None else map(emd, y, x))
    results = list(pairs)
    loss = sum(r[0] for r in results) / b
    dy = np.stack([r[1] for r in results]) / b
    return loss, dy


def loss_and_grads(params: dict, groups, targets: np.ndarray, spec: ModelSpec, pool=None):
    y, cache = network.forward(params, groups, spec)
    if not np.all(np.isfinite(y)):
        return float("nan"), None
    loss, dy = batch_emd(y, targets, pool)
    return loss, network.backward(params, cache, dy, spec)


def _signed_permutations(rng, n: int) -> np.ndarray:
    """``n`` random elements of the 48-element cube symmetry group, as 3x3 matrices."""
    perms = np.array([rng.permutation(3) for _ in range(n)])
    signs = rng.choice([-1.0, 1.0], size=(n, 3))
    out = np.zeros((n, 3, 3))
    out[np.arange(n)[:, None], np.arange(3)[None, :], perms] = signs
    return out


def _augment(groups, targets, rot):
    """Apply per-patch orthogonal maps. FPS and kNN only see distances, so the
    grouping indices of a transformed patch are unchanged."""
    return (network.EncoderGroups(np.einsum("bmkj,bij->bmki", groups.rel1, rot),
                                  np.einsum("bmj,bij->bmi", groups.c1, rot), groups.g2),
            np.einsum("bnj,bij->bni", targets, rot))


class _Optimizer:
    def __init__(self, params, cfg: TrainingConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()} if cfg.optimizer == "adam" else None
        self.t = 0

    def step(self, params, grads, lr):
        cfg = self.cfg
        self.t += 1
        if cfg.grad_clip:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > cfg.grad_clip:
                grads = {k: g * (cfg.grad_clip / norm) for k, g in grads.items()}
        for k, g in grads.items():
            if cfg.optimizer == "sgd":
                self.m[k] = cfg.momentum * self.m[k] + g
                params[k] -= lr * self.m[k]
            else:
                self.m[k] = cfg.momentum * self.m[k] + (1 - cfg.momentum) * g
                self.v[k] = cfg.beta2 * self.v[k] + (1 - cfg.beta2) * g * g
                mhat = self.m[k] / (1 - cfg.momentum**self.t)
                vhat = self.v[k] / (1 - cfg.beta2**self.t)
                params[k] -= lr * mhat / (np.sqrt(vhat) + 1e-8)


def train(spec: ModelSpec, patch_dataset, config: TrainingConfig = TrainingConfig(),
          init: CodecModel | None = None, progress=None) -> TrainResult:
    """Train (or fine-tune ``init``) on normalized patches.

    Masks carried by ``init`` are enforced on gradients and weights, so pruned
    weights stay exactly zero. Returns the best-epoch checkpoint.
    """
    x = _stack(patch_dataset)
    if len(x) == 0:
        raise ValueError("empty patch dataset")
    if x.shape[1:] != (spec.n_points, 3):
        raise ValueError(f"patches must be ({spec.n_points}, 3), got {x.shape[1:]}")
    if np.any(np.linalg.norm(x, axis=2) > 1.0 + NORM_TOL):
        raise ValueError("training patches must be normalized into the unit sphere")

    if init is not None:
        params = init.params64()
        masks = {k: v.copy() for k, v in init.masks.items()}
    else:
        params = init_params(spec, config.seed)
        masks = {}
    for name, m in masks.items():
        params[name + ".W"] *= m

    groups = network.group_patches(spec, x)
    rng = np.random.default_rng(config.seed + 1)
    aug_rng = np.random.default_rng(config.seed + 2)
    opt = _Optimizer(params, config)
    curve: list[float] = []
    best = (np.inf, -1, None)
    threads = _n_threads(config)
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for epoch in range(config.epochs):
            lr = config.lr
            if config.lr_final is not None and config.epochs > 1:
                frac = epoch / (config.epochs - 1)
                lr = config.lr_final + 0.5 * (config.lr - config.lr_final) * (1 + np.cos(np.pi * frac))
            order = rng.permutation(len(x))
            total = 0.0
            for s in range(0, len(x), config.batch_size):
                idx = order[s : s + config.batch_size]
                g, t = groups.take(idx), x[idx]
                if config.augment:
                    g, t = _augment(g, t, _signed_permutations(aug_rng, len(idx)))
                loss, grads = loss_and_grads(params, g, t, spec, pool)
                if not np.isfinite(loss):
                    raise TrainingDivergence(epoch)
                for name, m in masks.items():
                    grads[name + ".W"] = grads[name + ".W"] * m
                opt.step(params, grads, lr)
                for name, m in masks.items():
                    params[name + ".W"] *= m
                total += loss * len(idx)
            epoch_loss = total / len(x)
            if not np.isfinite(epoch_loss):
                raise TrainingDivergence(epoch)
            curve.append(epoch_loss)
            if epoch_loss < best[0]:
                best = (epoch_loss, epoch, {k: v.copy() for k, v in params.items()})
            if progress is not None:
                progress(epoch, epoch_loss)
            log.debug("epoch %d loss %.6f", epoch, epoch_loss)
    finally:
        if pool is not None:
            pool.shutdown()

    model = CodecModel.from_params(spec, best[2], masks)
    running = list(np.minimum.accumulate(curve))
    return TrainResult(model, curve, best[1], running)


def evaluate_emd(model: CodecModel, patches) -> float:
    from .core import reconstruct

    x = _stack(patches)
    y = reconstruct(model, x)
    return float(np.mean([emd(a, b)[0] for a, b in zip(y, x)]))

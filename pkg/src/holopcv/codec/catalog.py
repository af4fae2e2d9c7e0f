"""Catalog of trained models of different latent sizes (the controller's action space)."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..metrics import DEFAULT_TAU, precision_recall_f
from .core import bytes_per_patch, reconstruct
from .emd import emd
from .model import CATALOG_SIZES, CodecModel, ModelSpec
from .serialize import deserialize, serialize
from .train import TrainingConfig, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CatalogEntry:
    h: int
    w: int
    bytes_per_patch: int
    flops_decode: int
    fscore: float
    emd: float = float("nan")
    precision: str = "float32"
    model_file: str | None = None

    @property
    def latent(self) -> int:
        return self.h * self.w


@dataclass
class ModelCatalog:
    entries: list[CatalogEntry]
    models: dict[int, CodecModel] = field(default_factory=dict, repr=False)
    violations: list[tuple[int, int]] = field(default_factory=list)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def write_manifest(self, path) -> None:
        doc = {"entries": [asdict(e) for e in self.entries],
               "monotonicity_violations": [list(v) for v in self.violations]}
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    @classmethod
    def read_manifest(cls, path, load_models: bool = False) -> "ModelCatalog":
        path = Path(path)
        doc = json.loads(path.read_text())
        entries = [CatalogEntry(**e) for e in doc["entries"]]
        models = {}
        if load_models:
            for i, e in enumerate(entries):
                if e.model_file:
                    models[i] = deserialize(path.parent / e.model_file)
        return cls(entries, models, [tuple(v) for v in doc.get("monotonicity_violations", [])])


def heldout_scores(model: CodecModel, patches: np.ndarray, tau: float = DEFAULT_TAU,
                   wire_bits: int = 32) -> tuple[float, float]:
    """Mean F-score and mean EMD of reconstructions of held-out patches."""
    x = np.asarray(patches, dtype=np.float64)
    y = reconstruct(model, x, wire_bits)
    f = float(np.mean([precision_recall_f(a, b, tau).fscore for a, b in zip(y, x)]))
    e = float(np.mean([emd(a, b)[0] for a, b in zip(y, x)]))
    return f, e


def entry_for(model: CodecModel, heldout, tau: float = DEFAULT_TAU, wire_bits: int = 32,
              model_file: str | None = None) -> CatalogEntry:
    f, e = heldout_scores(model, heldout, tau, wire_bits)
    s = model.spec
    return CatalogEntry(s.h, s.w, bytes_per_patch(s, wire_bits), model.flops_decode, f, e,
                        s.precision, model_file)


def monotonicity_violations(entries) -> list[tuple[int, int]]:
    """Pairs of catalog positions (sorted by latent size) where F-score drops."""
    order = sorted(range(len(entries)), key=lambda i: entries[i].latent)
    return [(a, b) for a, b in zip(order, order[1:]) if entries[b].fscore < entries[a].fscore]


def build_catalog(patch_dataset, heldout, sizes=CATALOG_SIZES,
                  config: TrainingConfig = TrainingConfig(), out_dir=None,
                  tau: float = DEFAULT_TAU, wire_bits: int = 32, progress=None) -> ModelCatalog:
    """Train one model per square latent size and measure held-out accuracy."""
    sizes = list(sizes)
    if not sizes:
        raise ValueError("catalog needs at least one size")
    specs = [ModelSpec.catalog(s) for s in sizes]
    entries, models = [], {}
    for i, spec in enumerate(specs):
        log.info("training (%d,%d)", spec.h, spec.w)
        res = train(spec, patch_dataset, config,
                    progress=(lambda e, l, s=spec: progress(s, e, l)) if progress else None)
        fname = None
        if out_dir is not None:
            fname = f"model_{spec.h:02d}x{spec.w:02d}.bin"
            serialize(res.model, Path(out_dir) / fname)
        entries.append(entry_for(res.model, heldout, tau, wire_bits, fname))
        models[i] = res.model
    violations = monotonicity_violations(entries)
    for a, b in violations:
        log.warning("F-score drops from (%d,%d) to (%d,%d)", entries[a].h, entries[a].w,
                    entries[b].h, entries[b].w)
    cat = ModelCatalog(entries, models, violations)
    if out_dir is not None:
        cat.write_manifest(Path(out_dir) / "catalog.json")
    return cat

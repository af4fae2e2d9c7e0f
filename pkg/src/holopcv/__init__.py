"""Adaptive neural point cloud video streaming at desk scale.

Submodules: ``cloud`` (types, sampling, patches), ``codec`` (the learned
patch codec), ``octree`` (baseline codec), ``metrics``, ``netsim``
(trace-driven network/device simulator), ``controller`` (actor-critic model
selection) and ``cli``.
"""

from .cloud import Patch, PatchDecomposition, PointCloud, decompose_into_patches, reassemble
from .metrics import precision_recall_f, qoe

__version__ = "0.1.0"

__all__ = ["PointCloud", "Patch", "PatchDecomposition", "decompose_into_patches",
           "reassemble", "precision_recall_f", "qoe"]

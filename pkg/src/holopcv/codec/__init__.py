"""Learned patch codec: encoder, decoder, training, compaction and catalog."""

from .core import FeatureMatrix, CodecError, compression_ratio, decode, encode, reconstruct
from .emd import emd
from .model import CodecModel, ModelSpec, prune, quantize
from .serialize import deserialize, serialize
from .train import TrainingConfig, TrainResult, TrainingDivergence, train

__all__ = ["FeatureMatrix", "CodecError", "compression_ratio", "encode", "decode",
           "reconstruct", "emd", "CodecModel", "ModelSpec", "prune", "quantize",
           "serialize", "deserialize", "TrainingConfig", "TrainResult",
           "TrainingDivergence", "train"]

"""Sparse LLM inference with a low-rank thresholded sparsity predictor, plus
an event-driven timing/energy model of a heterogeneous SSD-NSP + DRAM-PIM
accelerator executing it."""

from .model import Decoder, KVCache, ModelConfig
from .predictor import Predictor, ThresholdTable
from .storage import NandTiming, SsdGeometry, nand_preset
from .system import BaselineConfig, EnergyLedger, PhaseTimes, evaluate_slim, run_baseline

__version__ = "0.1.0"

__all__ = [
    "BaselineConfig",
    "Decoder",
    "EnergyLedger",
    "KVCache",
    "ModelConfig",
    "NandTiming",
    "PhaseTimes",
    "Predictor",
    "SsdGeometry",
    "ThresholdTable",
    "evaluate_slim",
    "nand_preset",
    "run_baseline",
    "__version__",
]

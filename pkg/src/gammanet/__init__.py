"""Graph-attention plus selective-scan traffic forecasting on a numpy autodiff core."""

from .dataio import GraphTopology, TrafficDataset, load_dataset, save_dataset, synth_dataset
from .model import ABLATIONS, ModelConfig, forward, init_params, load_checkpoint, save_checkpoint
from .train import EvalReport, TrainConfig, evaluate

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS", "EvalReport", "GraphTopology", "ModelConfig", "TrafficDataset", "TrainConfig",
    "evaluate", "forward", "init_params", "load_checkpoint", "load_dataset", "save_checkpoint",
    "save_dataset", "synth_dataset",
]

"""Mesh-free Hamilton-Jacobi solver trained on the implicit solution formula."""
from .network import NetworkConfig, MlpParams, init_network, forward, eval_with_input_grad, save_checkpoint, load_checkpoint
from .problems import ProblemSpec, get_problem, catalog_ids
from .trainer import TrainConfig, TrainReport, EvalSpec, train, evaluate_mse
from .timemarch import MarchConfig, march

__all__ = [
    "NetworkConfig", "MlpParams", "init_network", "forward", "eval_with_input_grad",
    "save_checkpoint", "load_checkpoint", "ProblemSpec", "get_problem", "catalog_ids",
    "TrainConfig", "TrainReport", "EvalSpec", "train", "evaluate_mse", "MarchConfig", "march",
]
__version__ = "0.1.0"

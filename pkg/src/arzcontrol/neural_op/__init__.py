from .datasets import Dataset, gen_kernel_dataset, gen_law_dataset, load_dataset, save_dataset
from .deeponet import DeepONetModel, deeponet_eval, kernel_row, law_values, predict_kernels
from .mlp import Mlp, mlp_forward, mlp_gradients
from .serialization import load_model, save_model
from .training import ApproxErrorReport, TrainConfig, measure_eps, train

__all__ = [
    "ApproxErrorReport", "Dataset", "DeepONetModel", "Mlp", "TrainConfig",
    "deeponet_eval", "gen_kernel_dataset", "gen_law_dataset", "kernel_row", "law_values",
    "load_dataset", "load_model", "measure_eps", "mlp_forward", "mlp_gradients",
    "predict_kernels", "save_dataset", "save_model", "train",
]

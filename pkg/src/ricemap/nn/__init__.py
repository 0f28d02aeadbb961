"""From-scratch numpy networks: layers, the DNN and U-Net models, training, checkpoints."""

from ricemap.nn.checkpoint import load_weights, save_weights
from ricemap.nn.metrics import MetricSet, f1_score, metrics
from ricemap.nn.models import DNN, Model, ModelSpec, UNet, build_dnn, build_model, build_unet
from ricemap.nn.train import ModelWeights, TrainConfig, evaluate_records, train

__all__ = [
    "DNN",
    "MetricSet",
    "Model",
    "ModelSpec",
    "ModelWeights",
    "TrainConfig",
    "UNet",
    "build_dnn",
    "build_model",
    "build_unet",
    "evaluate_records",
    "f1_score",
    "load_weights",
    "metrics",
    "save_weights",
    "train",
]

"""Layers, loss, optimizer and gradient checking."""
from .gradcheck import grad_check, gradient_probes, relative_error, roundoff_floor
from .layers import (
    Conv2d,
    Dropout,
    Flatten,
    GlobalAvgPool,
    InceptionBlock,
    Layer,
    Linear,
    MaxPool2d,
    ReLU,
    ResidualBlock,
    Sequential,
    conv_output_size,
)
from .loss import softmax, softmax_cross_entropy
from .optim import SGD, SgdConfig, sgd_step

__all__ = [
    "Conv2d", "Dropout", "Flatten", "GlobalAvgPool", "InceptionBlock", "Layer",
    "Linear", "MaxPool2d", "ReLU", "ResidualBlock", "SGD", "Sequential",
    "SgdConfig", "conv_output_size", "grad_check", "gradient_probes",
    "relative_error", "roundoff_floor", "sgd_step", "softmax",
    "softmax_cross_entropy",
]

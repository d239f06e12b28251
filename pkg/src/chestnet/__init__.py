"""From-scratch CNN toolkit for 4-class chest X-ray classification."""
from .checkpoint import load_checkpoint, save_checkpoint
from .data import AugmentConfig, Dataset, SplitManifest, scan_dataset, split
from .metrics import ConfusionMatrix, EvalReport, accuracy, class_counts, confusion, emit_report
from .models import (
    Model,
    ModelSpec,
    build_mini_alexnet,
    build_mini_inception,
    build_mini_resnet,
    build_paper_cnn,
    build_spec,
    fine_tune_setup,
)
from .tensor import Tensor, tensor_new
from .train import TrainConfig, evaluate, predict_image, train

__version__ = "0.1.0"

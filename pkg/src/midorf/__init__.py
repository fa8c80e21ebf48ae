"""Multi-instance dynamic ordinal random fields.

Weakly supervised ordinal sequence labelling: each bag (sequence) carries
one ordinal label equal to the maximum of its latent instance levels, and
a chain model with ordinal probit node potentials, a transition table and
a max/cardinality factor is trained from bag labels alone.
"""
from .core import Bag, Dataset, DataValidationError, ModelParams, OrdinalScale, make_dataset
from .inference import (
    label_posterior,
    log_partition_given_label,
    marginals_given_label,
    predict_bag_label,
    predict_instance_labels,
)
from .learning import TrainConfig, fit, select_alpha
from .metrics import evaluate
from .models import Model, Prediction, predict_dataset
from .baselines import train
from .synthgen import SynthConfig, generate_dataset

__all__ = [
    "Bag", "Dataset", "DataValidationError", "ModelParams", "OrdinalScale", "make_dataset",
    "label_posterior", "log_partition_given_label", "marginals_given_label",
    "predict_bag_label", "predict_instance_labels",
    "TrainConfig", "fit", "select_alpha", "evaluate", "Model", "Prediction",
    "predict_dataset", "train", "SynthConfig", "generate_dataset",
]
__version__ = "0.1.0"

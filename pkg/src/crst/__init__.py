"""Confidence regularized self-training on small numpy classifiers."""
from .core import entropy, logsumexp, softmax, softmax_with_temperature
from .datagen import TWO_BLOBS_ROTATED, DomainSpec, generate
from .model import Classifier, LabeledBatch, SgdConfig
from .pseudo import PseudoLabels, Thresholds, determine_lambdas, generate_pseudo_labels
from .regularizers import DEFAULT_ALPHA, RegularizerSpec
from .trainer import History, TrainConfig, objective, pretrain, run

__version__ = "0.1.0"

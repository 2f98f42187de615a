"""Simulate sort-then-sequence screens, train activity predictors with pooled
labels, evaluate them from positives only, and choose sequencing allocations."""

from .design import (
    InformationEstimate,
    SparseFamily,
    asymptotic_precision,
    info_gain_bound,
    information_matrices,
    optimal_q,
    recommend_allocation,
)
from .evalkit import EvalInputs, evaluate
from .objective import TrainConfig, train
from .oracle import ActivityOracle, MotifRule, default_library, default_oracle
from .predictor import Predictor, init_predictor, predict
from .screen import ScreenConfig, ScreenDataset, run_screen
from .seqmodel import SequenceDistribution, sample_sequences

__version__ = "0.1.0"

"""Deterministic MLP training with learning-dynamics instrumentation."""

from .data import BatchPlan, Dataset, batches, load_mnist_idx, synth_blobs
from .decomp import (deflate_directions, direction_strength, estimate_common_direction,
                     gamma_epsilon_split, project_lemma1, project_lemma2, strength_statistics,
                     theorem1_decompose)
from .errors import ConvergenceError, DataError, NumericalError, ShapeError
from .linalg import cosine_similarity, frobenius_norm, matmul, svd
from .mlp import MlpParams, MlpSpec, backward_batch, forward_batch, init_params
from .sgd import SgdConfig, record_weight_changes, sgd_step

__version__ = "0.1.0"

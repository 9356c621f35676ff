"""Few-shot classification with learned per-class references and a
per-episode null-space projection."""

from .autograd import Tensor, no_grad
from .data import DatasetSplit, SyntheticTaskSpec, augment_rotations, generate_synthetic, load_image_folder
from .episodes import Episode, TrainConfig, episode_loss, sample_episode, train
from .evaluation import EvalReport, dimension_sweep, evaluate, nearest_centroid_baseline
from .nn import EmbeddingNetwork, conv4, mlp
from .optim import Adam, lr_schedule
from .projection import (
    ErrorMatrix,
    ProjectionSpace,
    build_error_matrix,
    build_projection,
    error_vector,
    modified_reference,
    project,
    projector_check,
    sq_distance,
)
from .references import ReferenceBank, init_references, min_pairwise_distance, select_and_relabel

__version__ = "0.1.0"

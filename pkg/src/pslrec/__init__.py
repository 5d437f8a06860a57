"""Pairwise-softmax ranking losses for collaborative filtering, with theory checks."""
from .activations import Activation, act_value, act_deriv, check_admissible
from .data import Dataset, SplitBundle, load_interactions, k_core_filter, split_iid, split_ood, make_noise_pool
from .losses import LossSpec, psl_spec, sl_spec, batch_loss_and_grads
from .metrics import evaluate, MetricReport
from .model import EmbeddingModel, init_embeddings, score, score_matrix
from .optim import TrainConfig, train

__version__ = "0.1.0"

"""Adversarial training with noisy-label injection on a small numpy autograd stack."""

from .attacks import AttackConfig, cw_objective, pgd
from .data import LabeledDataset, SplitSpec, load_idx_pair, make_ternary_gaussian, split
from .models import MlpClassifier, load_checkpoint, save_checkpoint
from .noise import NoiseSpec, NoisyView, flip, flip_minibatch
from .scheduler import NoilinState
from .train import EpochRecord, TrainConfig, lr_at, run, sgd_step, train_epoch

__version__ = "0.1.0"

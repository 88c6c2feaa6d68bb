"""Unsupervised projection networks for frozen generators, at desk scale."""

from .generators import GeneratorBackend, generate, make_ood_variant, render_procedural, sample_z
from .models import ParameterStore, init_network
from .numcore import Tape, Tensor, backward, grad_check
from .training import TrainConfig, train_projection

__version__ = "0.1.0"

"""Ensemble few-shot classification with multi-order statistics pooling.

Module map:

* ``autodiff``, ``serialize``, ``rng``  numeric core: reverse-mode
  differentiation over numpy arrays, the tensor wire format, seeded PCG64
  streams
* ``mospool``   first/second/third-order pooling with an independent
  raw-moment oracle and a Gaussian vanishing-statistic harness
* ``model``     deterministic eightfold augmentation, conv backbone,
  softmax heads, unit projectors, checkpoints
* ``losses``    classification and supervised-contrastive losses and their
  weighted ensemble objective
* ``pretrain``  the stage-1 SGD training loop
* ``fewshot``   episodes, feature concatenation, logistic-regression
  evaluation with confidence intervals
* ``theory``    exact verification of the ensemble error bound on finite
  discrete domains
* ``datagen``/``dataio``/``config``/``cli``  synthetic data, the dataset
  container, run configs and the command line
"""

from . import autodiff, dataio, datagen, fewshot, losses, model, mospool, pretrain, theory
from .autodiff import Node, backward, constant, finite_diff_check, leaf
from .errors import (ConfigError, ContractError, DimensionError, MostatsError,
                     NumericError)
from .rng import Rng, episode_rng

__version__ = "0.1.0"

__all__ = [
    "autodiff", "dataio", "datagen", "fewshot", "losses", "model", "mospool",
    "pretrain", "theory", "Node", "backward", "constant", "finite_diff_check",
    "leaf", "Rng", "episode_rng", "MostatsError", "DimensionError",
    "ContractError", "NumericError", "ConfigError", "__version__",
]

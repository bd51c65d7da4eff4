"""kwinnow: a small numpy training engine for sparse-network studies.

The pieces, roughly bottom-up: tensor (reverse-mode autodiff), nn
(layers, k-winner activations, architecture specs), dendrites
(context-gated units), pruning (magnitude masks, rewind, iterative
schedules), optim (SGD and Adam with mask discipline), data (file
loaders, task streams, noise), harness (training loops, experiment
protocols, run records), cli (command-line front end).
"""

from .errors import (ConfigError, DataError, KwinnowError, NumericsError,
                     ShapeError, UsageError)
from .harness import RunRecord, replay, run_experiment
from .presets import default_config
from .tensor import Tensor, set_finite_checks

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "set_finite_checks",
    "KwinnowError",
    "ConfigError",
    "ShapeError",
    "DataError",
    "NumericsError",
    "UsageError",
    "RunRecord",
    "run_experiment",
    "replay",
    "default_config",
    "__version__",
]

"""mmWave SIMO link simulation and symbol detection toolkit.

Provides a statistical multipath channel generator, an uplink modem with
additive complex Gaussian noise, a sliding bidirectional-LSTM symbol
detector trained without channel knowledge, beam-search Viterbi baselines
with perfect or perturbed channel state, and an experiment harness that
writes reproducible CSV results.
"""

from mmwlink.errors import (
    CapacityError,
    CheckpointError,
    ConfigurationError,
    DomainError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "CheckpointError",
    "ConfigurationError",
    "DomainError",
    "TrainingError",
    "__version__",
]

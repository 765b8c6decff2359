"""Complex autoencoders with transformation-invariant magnitude spaces.

The package learns pairs of real matrices ``(w_re, w_im)`` whose complex
projections have magnitudes invariant to an orthogonal transformation, and
uses the resulting features for repeated-section discovery, sequence
alignment and invariant classification.
"""

from invariant_cae.basis import (
    ComplexBasis,
    PolarCode,
    dft_basis,
    magnitude_features,
    phase_difference,
    polar_encode,
    project,
    reconstruct_swapped,
)
from invariant_cae.errors import FormatError, NumericError, ParameterError, ShapeError, ValidationError
from invariant_cae.model import TrainConfig, backward, loss, train

__version__ = "0.1.0"

__all__ = [
    "ComplexBasis",
    "PolarCode",
    "TrainConfig",
    "FormatError",
    "NumericError",
    "ParameterError",
    "ShapeError",
    "ValidationError",
    "backward",
    "dft_basis",
    "loss",
    "magnitude_features",
    "phase_difference",
    "polar_encode",
    "project",
    "reconstruct_swapped",
    "train",
]

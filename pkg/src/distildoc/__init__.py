"""Knowledge-distillation losses, calibration and selective-prediction metrics,
and layout-enriched prompt construction for document understanding."""

__version__ = "0.1.0"

from .errors import ConfigurationError, DistilDocError, DomainError, ParseError
from .tensor import GradTape, Tensor, backward, cross_entropy, finite_difference_grad, kl_divergence, temp_softmax

__all__ = [
    "ConfigurationError",
    "DistilDocError",
    "DomainError",
    "GradTape",
    "ParseError",
    "Tensor",
    "backward",
    "cross_entropy",
    "finite_difference_grad",
    "kl_divergence",
    "temp_softmax",
]

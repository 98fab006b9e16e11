"""Lifelong identity retrieval at desk scale.

A multi-token transformer encoder trained continually over a task stream
with an EMA teacher, exemplar rehearsal, and retrieval evaluation, built on
a small numpy-backed reverse-mode autodiff core.
"""

from .backbone import Backbone, BackboneConfig, Representations
from .config import RunConfig, load_config, parse_config, serialize_config
from .model import ClassifierHead, ReidModel, StudentTeacherPair
from .tensor import Tensor, gradient_of, no_grad, set_default_dtype

__version__ = "0.1.0"

__all__ = [
    "Backbone",
    "BackboneConfig",
    "ClassifierHead",
    "ReidModel",
    "Representations",
    "RunConfig",
    "StudentTeacherPair",
    "Tensor",
    "__version__",
    "gradient_of",
    "load_config",
    "no_grad",
    "parse_config",
    "serialize_config",
    "set_default_dtype",
]

"""Fixed prototype mixture: one identity-covariance Gaussian per class.

Class ``c`` owns the contiguous block ``[p*c, p*(c+1))`` of the embedding,
with ``p = K // C``; its mean is 1 on that block and 0 elsewhere, so the
components never share an active coordinate.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class PrototypeDistribution:
    n_classes: int
    dim: int
    means: np.ndarray = field(repr=False, compare=False)

    @property
    def per_class(self) -> int:
        """Number of active coordinates per class (``p``)."""
        return self.dim // self.n_classes

    def __eq__(self, other):
        if not isinstance(other, PrototypeDistribution):
            return NotImplemented
        return (self.n_classes, self.dim) == (other.n_classes, other.dim)

    def __hash__(self):
        return hash((self.n_classes, self.dim))


def build_prototype(n_classes: int, dim: int) -> PrototypeDistribution:
    if n_classes < 1:
        raise DimensionError(f"need at least one class, got {n_classes}")
    if dim < n_classes or dim % n_classes:
        raise DimensionError(
            f"embedding dim {dim} must be a positive multiple of the class count {n_classes}"
        )
    p = dim // n_classes
    means = np.zeros((n_classes, dim), dtype=np.float64)
    for c in range(n_classes):
        means[c, p * c:p * (c + 1)] = 1.0
    means.setflags(write=False)
    return PrototypeDistribution(n_classes, dim, means)


def class_mean(proto: PrototypeDistribution, c: int) -> np.ndarray:
    """Read-only mean vector of class ``c``."""
    if not 0 <= c < proto.n_classes:
        raise IndexError(f"class {c} out of range for {proto.n_classes} classes")
    return proto.means[c]


def component_distance(proto: PrototypeDistribution, c1: int, c2: int) -> float:
    # identical identity covariances: only the mean term of W2 survives
    diff = class_mean(proto, c1) - class_mean(proto, c2)
    return math.sqrt(float(np.dot(diff, diff)))

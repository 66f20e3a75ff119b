"""Maps from unbounded latent values to bounded physical parameters."""

from dataclasses import dataclass

import numpy as np

from abris.errors import InputError


def tanh_transform(theta, lower, upper):
    """``0.5 (1 + tanh(theta)) (upper - lower) + lower``."""
    if not upper > lower:
        raise InputError("upper bound must exceed lower bound")
    return 0.5 * (1.0 + np.tanh(theta)) * (upper - lower) + lower


def discrete_transform(theta, lower, upper, cardinality):
    """Bin the tanh transform onto ``cardinality`` equidistant levels from ``lower`` to ``upper``.

    The offset from ``lower`` is floored to the bin width
    ``(upper - lower) / cardinality`` and stretched so the highest bin lands
    on ``upper``.
    """
    if int(cardinality) < 2:
        raise InputError("a discrete parameter needs at least two levels")
    k = int(cardinality)
    width = (upper - lower) / k
    offset = tanh_transform(theta, lower, upper) - lower
    # tanh saturates to exactly 1 in floating point; keep that case in the top bin
    level = np.minimum(np.floor(offset / width), k - 1)
    return width * level * k / (k - 1) + lower


@dataclass(frozen=True)
class BoundTransform:
    """Per-parameter bounds; a cardinality marks a discrete parameter.

    Attributes:
        lower (tuple[float]): Lower bounds.
        upper (tuple[float]): Upper bounds.
        cardinality (tuple[int or None]): Level count per parameter, ``None`` if continuous.
    """

    lower: tuple
    upper: tuple
    cardinality: tuple = None

    def __post_init__(self):
        n = len(self.lower)
        card = self.cardinality or (None,) * n
        object.__setattr__(self, "cardinality", tuple(card))
        if len(self.upper) != n or len(card) != n:
            raise InputError("bounds and cardinalities must have equal length")
        for lo, hi, c in zip(self.lower, self.upper, card):
            if not hi > lo:
                raise InputError("upper bound must exceed lower bound")
            if c is not None and c < 2:
                raise InputError("discrete cardinality must be at least 2")

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.empty_like(theta)
        for j, (lo, hi, c) in enumerate(zip(self.lower, self.upper, self.cardinality)):
            if c is None:
                out[..., j] = tanh_transform(theta[..., j], lo, hi)
            else:
                out[..., j] = discrete_transform(theta[..., j], lo, hi, c)
        return out

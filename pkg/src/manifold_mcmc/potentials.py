"""Potential energy functions with gradients.

A potential needs a value (for the acceptance ratio) and a gradient (for the
proposal drift).  When the polynomial form is supplied the compiled chain
kernels can evaluate it directly.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .polys import MonomialPoly


@dataclass(frozen=True, eq=False)
class Potential:
    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    poly: Optional[MonomialPoly] = None
    name: str = "custom"

    @classmethod
    def from_poly(cls, poly, name):
        return cls(value=lambda x: poly(x), grad=poly.grad, poly=poly, name=name)

    @classmethod
    def zero(cls, dim):
        return cls.from_poly(MonomialPoly.zero(dim), name="zero")

    def __repr__(self):
        return f"Potential({self.name})"

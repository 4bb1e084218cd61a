"""Laurent polynomials with real coefficients over integer-indexed arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LaurentPoly:
    """``sum_k coefficients[k] * X**(min_degree + k)``."""

    min_degree: int
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coefficients, dtype=float))
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def one(cls) -> "LaurentPoly":
        return cls(0, np.ones(1))

    @classmethod
    def zero(cls) -> "LaurentPoly":
        return cls(0, np.zeros(1))

    @classmethod
    def from_distribution(cls, dist, scale: float = 1.0) -> "LaurentPoly":
        """Generating polynomial ``sum_j w_j X**j`` of an EdgeDistribution."""
        return cls(dist.offset, scale * dist.weights)

    @property
    def max_degree(self) -> int:
        return self.min_degree + len(self.coefficients) - 1

    def __getitem__(self, i: int) -> float:
        """Coefficient of ``X**i``; zero outside the stored range."""
        k = i - self.min_degree
        if 0 <= k < len(self.coefficients):
            return float(self.coefficients[k])
        return 0.0

    def coeffs(self, degrees) -> np.ndarray:
        """Vectorized coefficient extraction."""
        k = np.asarray(degrees) - self.min_degree
        ok = (k >= 0) & (k < len(self.coefficients))
        out = np.zeros(k.shape)
        out[ok] = self.coefficients[k[ok]]
        return out

    def __add__(self, other: "LaurentPoly") -> "LaurentPoly":
        lo = min(self.min_degree, other.min_degree)
        hi = max(self.max_degree, other.max_degree)
        out = np.zeros(hi - lo + 1)
        out[self.min_degree - lo : self.max_degree - lo + 1] += self.coefficients
        out[other.min_degree - lo : other.max_degree - lo + 1] += other.coefficients
        return LaurentPoly(lo, out)

    def __mul__(self, other):
        if isinstance(other, LaurentPoly):
            return LaurentPoly(self.min_degree + other.min_degree, np.convolve(self.coefficients, other.coefficients))
        return LaurentPoly(self.min_degree, self.coefficients * float(other))

    __rmul__ = __mul__

    def __pow__(self, n: int) -> "LaurentPoly":
        if n < 0:
            raise ValueError("negative powers are not supported")
        out = LaurentPoly.one()
        base = self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    def reflect(self) -> "LaurentPoly":
        """Substitute ``X -> 1/X``."""
        return LaurentPoly(-self.max_degree, self.coefficients[::-1])

    def __call__(self, x: float) -> float:
        k = np.arange(self.min_degree, self.max_degree + 1)
        return float(np.sum(self.coefficients * np.power(float(x), k)))

    def total(self) -> float:
        return float(self.coefficients.sum())

    def __repr__(self):
        return f"LaurentPoly(min_degree={self.min_degree}, coefficients={self.coefficients.tolist()})"


def inner_sum(a: LaurentPoly, b: LaurentPoly) -> float:
    """``sum_i [a]_i [b]_{-i}``, i.e. the constant term of ``a * b``."""
    lo = max(a.min_degree, -b.max_degree)
    hi = min(a.max_degree, -b.min_degree)
    if lo > hi:
        return 0.0
    i = np.arange(lo, hi + 1)
    return float(np.dot(a.coeffs(i), b.coeffs(-i)))

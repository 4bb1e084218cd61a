"""Expected short-cycle counts of a partitioned protograph and their gradients.

Notation: ``f`` is the generating polynomial of the fixed distribution
(components ``0..m_f``), ``g`` that of the new one (``m_f+1..m_f+m_n``),
``F(X) = f(1/X)`` and ``G(X) = g(1/X)``.  An entry of the base matrix is
in component ``w`` with probability ``r_f p_w + r_n q_w`` and unassigned
otherwise, so ``h = r_f f + r_n g`` need not sum to one.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from ..protomatrix import EdgeDistribution
from .poly import LaurentPoly, inner_sum

#: Coefficients of the separated expansion, keyed by half-length.  Row ``k``
#: collects terms with ``k`` new-part factors in ``X`` (row 0 starts at one
#: factor in ``1/X``); entry ``j`` adds ``j`` more new-part factors in ``1/X``.
EXPANSION_COEFFS = {
    2: ((4, 2), (4, 4)),
    3: ((6, 6, 2), (9, 18, 6), (9, 6)),
    4: ((8, 12, 8, 2), (16, 48, 32, 8), (36, 48, 12), (16, 8)),
}


@dataclass(frozen=True)
class CandidateCensus:
    """Number of distinct-entry cycle candidates in an all-one ``gamma x kappa`` matrix."""

    gamma: int
    kappa: int

    @property
    def A4(self) -> int:
        return comb(self.gamma, 2) * comb(self.kappa, 2)

    @property
    def A6(self) -> int:
        return 6 * comb(self.gamma, 3) * comb(self.kappa, 3)

    @property
    def A8(self) -> int:
        g, k = self.gamma, self.kappa
        return (6 * comb(g, 2) * comb(k, 4) + 6 * comb(g, 4) * comb(k, 2) + 36 * comb(g, 3) * comb(k, 4)
                + 36 * comb(g, 4) * comb(k, 3) + 72 * comb(g, 4) * comb(k, 4))

    def __getitem__(self, ell: int) -> int:
        try:
            return {2: self.A4, 3: self.A6, 4: self.A8}[ell]
        except KeyError:
            raise ValueError(f"half-length must be 2, 3 or 4, got {ell}") from None


def _as_poly(x) -> LaurentPoly | None:
    if x is None:
        return None
    if isinstance(x, LaurentPoly):
        return x
    if isinstance(x, EdgeDistribution):
        return LaurentPoly.from_distribution(x)
    return LaurentPoly(0, np.asarray(x, dtype=float))


def _prepare(r_f, r_n, f, g):
    f, g = _as_poly(f), _as_poly(g)
    if f is not None and g is not None and g.min_degree <= f.max_degree:
        raise ValueError(f"new components {g.min_degree}..{g.max_degree} overlap fixed 0..{f.max_degree}")
    zero = LaurentPoly.zero()
    if f is None or r_f == 0:
        f, r_f = zero, 0.0
    if g is None or r_n == 0:
        g, r_n = zero, 0.0
    return float(r_f), float(r_n), f, g


def _census(census, ell):
    if isinstance(census, CandidateCensus):
        return census[ell]
    if isinstance(census, tuple):
        return CandidateCensus(*census)[ell]
    return int(census)


def expected_cycles(ell: int, r_f: float, r_n: float, f, g, census) -> float:
    """Expected number of active cycle-``2 ell`` candidates.

    Evaluates ``A [h(X)**ell h(1/X)**ell]_0`` with ``h = r_f f + r_n g``
    by exact convolution.  ``census`` is a :class:`CandidateCensus`, a
    ``(gamma, kappa)`` pair or the candidate count itself.
    """
    r_f, r_n, f, g = _prepare(r_f, r_n, f, g)
    h = r_f * f + r_n * g
    return _census(census, ell) * inner_sum(h**ell, h.reflect() ** ell)


def expected_cycles_expanded(ell: int, r_f: float, r_n: float, f, g, census) -> float:
    """Same expectation, evaluated term by term with new-part factors separated."""
    if ell not in EXPANSION_COEFFS:
        raise ValueError(f"separated form is tabulated for half-lengths 2..4, got {ell}")
    r_f, r_n, f, g = _prepare(r_f, r_n, f, g)
    F, G = f.reflect(), g.reflect()
    total = r_f ** (2 * ell) * inner_sum(f**ell, F**ell)
    for k, row in enumerate(EXPANSION_COEFFS[ell]):
        for j, coef in enumerate(row):
            x_new = k
            inv_new = k + j if k else j + 1
            fixed_part = f ** (ell - x_new) * F ** (ell - inv_new)
            new_part = g**x_new * G**inv_new
            weight = coef * r_f ** (2 * ell - x_new - inv_new) * r_n ** (x_new + inv_new)
            total += weight * inner_sum(fixed_part, new_part)
    total += r_n ** (2 * ell) * inner_sum(g**ell, G**ell)
    return _census(census, ell) * total


def binomial_expansion_coeffs(ell: int) -> tuple[tuple[int, ...], ...]:
    """Expansion coefficients derived from the binomial theorem.

    Mirror-image terms (swapping ``X`` and ``1/X``) have equal constant
    terms and are merged, which doubles every off-diagonal coefficient.
    """
    rows = []
    for k in range(ell):
        start = 1 if k == 0 else k
        row = []
        for inv in range(start, ell + 1):
            c = comb(ell, k) * comb(ell, inv)
            row.append(c if inv == k else 2 * c)
        rows.append(tuple(row))
    return tuple(rows)


def grad_expected_cycles(ell: int, r_f: float, r_n: float, f, g, census) -> np.ndarray:
    """Gradient of :func:`expected_cycles` with respect to the new distribution.

    Component ``w`` is ``2 ell r_n A [h**ell h(1/X)**(ell-1)]_w`` for every
    degree ``w`` covered by ``g``.  No Lagrangian centering is applied.
    """
    if g is None:
        raise ValueError("gradient needs a new distribution")
    r_f, r_n_, f, g = _prepare(r_f, r_n, f, g)
    if r_n_ == 0:
        raise ValueError("gradient needs r_n > 0")
    h = r_f * f + r_n * g
    core = h**ell * h.reflect() ** (ell - 1)
    w = np.arange(g.min_degree, g.max_degree + 1)
    return _census(census, ell) * 2 * ell * r_n * core.coeffs(w)


def grad_expected_cycles4_expanded(r_f: float, r_n: float, f, g, census) -> np.ndarray:
    """Cycle-4 gradient written out term by term, fixed and new parts separated."""
    r_f, r_n, f, g = _prepare(r_f, r_n, f, g)
    F, G = f.reflect(), g.reflect()
    a, b = EXPANSION_COEFFS[2]
    w = np.arange(g.min_degree, g.max_degree + 1)
    span = 2 * max(f.max_degree, g.max_degree, 0)
    i = np.arange(-span, span + 1)
    one = LaurentPoly.one()
    out = np.zeros(len(w))
    for j in range(2):
        left = (f**2 * F ** (1 - j)).coeffs(i)
        right = (1 + j) * (G**j if j else one)
        out += a[j] * r_f ** (3 - j) * r_n ** (1 + j) * np.array([np.dot(left, right.coeffs(-i + wk)) for wk in w])
    for j in range(2):
        left = (f * F ** (1 - j)).coeffs(i)
        shifted = G ** (1 + j)
        mixed = (1 + j) * (g * G**j)
        vals = [np.dot(left, shifted.coeffs(-i - wk) + mixed.coeffs(-i + wk)) for wk in w]
        out += b[j] * r_f ** (2 - j) * r_n ** (2 + j) * np.array(vals)
    out += r_n**4 * (4 * g**2 * G).coeffs(w)
    return _census(census, 2) * out


@dataclass(frozen=True)
class RowExtensionSpec:
    """Constant-memory extension by ``gamma_n`` new rows under ``gamma_f`` fixed ones."""

    gamma_f: int
    gamma_n: int
    kappa: int
    p: EdgeDistribution
    q: EdgeDistribution

    def __post_init__(self):
        if self.gamma_f < 3 or self.gamma_n < 3:
            raise ValueError(f"row extension needs gamma_f, gamma_n >= 3, got {self.gamma_f}, {self.gamma_n}")
        if self.p.offset != 0 or self.q.offset != 0 or len(self.p) != len(self.q):
            raise ValueError("p and q must both cover components 0..m")

    @property
    def memory(self) -> int:
        return len(self.p) - 1


def expected_cycles_row_extension(spec: RowExtensionSpec) -> float:
    """Expected cycle-6 candidates after stacking new rows under fixed rows.

    Each row of a candidate carries one ``+`` and one ``-`` entry drawn
    from the same distribution, so the terms split by how many of the
    three rows are new.
    """
    f = LaurentPoly.from_distribution(spec.p)
    g = LaurentPoly.from_distribution(spec.q)
    ff = f * f.reflect()
    gg = g * g.reflect()
    kk = 6 * comb(spec.kappa, 3)
    gf, gn = spec.gamma_f, spec.gamma_n
    return kk * (comb(gf, 3) * inner_sum(ff**3, LaurentPoly.one())
                 + comb(gf, 2) * gn * inner_sum(ff**2, gg)
                 + gf * comb(gn, 2) * inner_sum(ff, gg**2)
                 + comb(gn, 3) * inner_sum(gg**3, LaurentPoly.one()))

"""Data model for rate-memory-compatible SC code design.

A design is a sequence of stages.  Stage ``d`` inherits the partitioning
(``K``) and lifting (``T``) decisions of stage ``d - 1`` verbatim and adds
``m_new`` components whose entries are drawn from the part of the base
matrix that was still unused.  The memory grows, the design rate drops and
the earlier code is literally contained in the new one.

Matrices use ``-1`` in ``K`` and ``T`` for base entries that do not belong
to the stage's base matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

RATE_DECIMALS = 4
PROB_TOL = 1e-12


class DesignError(ValueError):
    """Raised when a plan, distribution or matrix violates its contract."""


@dataclass(frozen=True)
class StageSpec:
    """One design stage: new memory units and their probability mass.

    ``m_fixed``/``r_fixed`` are the accumulated memory and mass of all
    earlier stages (zero for stage 0).
    """

    index: int
    m_new: int
    r_new: float | None
    m_fixed: int = 0
    r_fixed: float = 0.0

    @property
    def memory(self) -> int:
        return self.m_fixed + self.m_new

    @property
    def r_total(self) -> float:
        return self.r_fixed + (self.r_new or 0.0)

    @property
    def window(self) -> tuple[int, int]:
        """Inclusive range of component indices owned by this stage."""
        if self.index == 0:
            return 0, self.m_new
        return self.m_fixed + 1, self.m_fixed + self.m_new

    @property
    def n_components(self) -> int:
        lo, hi = self.window
        return hi - lo + 1


@dataclass(frozen=True)
class DesignPlan:
    gamma: int
    kappa: int
    z: int
    L: int
    stages: tuple[StageSpec, ...]

    def __post_init__(self):
        if self.gamma < 4:
            raise DesignError(f"gamma must be >= 4, got {self.gamma}")
        if self.kappa <= self.gamma:
            raise DesignError(f"kappa must exceed gamma, got kappa={self.kappa}, gamma={self.gamma}")
        if self.z < 1:
            raise DesignError(f"lifting size must be positive, got {self.z}")
        if self.L < 1:
            raise DesignError(f"coupling length must be >= 1, got {self.L}")
        if not self.stages:
            raise DesignError("a plan needs at least one stage")
        if self.stages[0].m_new < 0:
            raise DesignError("stage 0 memory must be non-negative")
        for st in self.stages[1:]:
            if st.m_new < 1:
                raise DesignError(f"stage {st.index} must add at least one component")
        masses = [st.r_new for st in self.stages]
        if any(r is not None for r in masses):
            if any(r is None for r in masses):
                raise DesignError("either all or none of the stage masses must be given")
            if any(r <= 0 for r in masses):
                raise DesignError(f"stage masses must be positive, got {masses}")
            if abs(sum(masses) - 1.0) > PROB_TOL:
                raise DesignError(f"stage masses must sum to 1, got {sum(masses)!r}")

    @classmethod
    def from_schedule(cls, gamma, kappa, z, L, m_new: Sequence[int], r_new: Sequence[float] | None = None):
        """Build a plan from per-stage memory increments (and optional masses)."""
        if r_new is not None and len(r_new) != len(m_new):
            raise DesignError("m_new and r_new must have the same length")
        stages = []
        m_f, r_f = 0, 0.0
        for d, m in enumerate(m_new):
            r = None if r_new is None else float(r_new[d])
            stages.append(StageSpec(d, int(m), r, m_f, r_f))
            m_f += int(m)
            r_f += r or 0.0
        return cls(int(gamma), int(kappa), int(z), int(L), tuple(stages))

    def with_masses(self, r_new: Sequence[float]) -> "DesignPlan":
        return DesignPlan.from_schedule(self.gamma, self.kappa, self.z, self.L, self.schedule, r_new)

    @property
    def schedule(self) -> tuple[int, ...]:
        return tuple(st.m_new for st in self.stages)

    @property
    def has_masses(self) -> bool:
        return self.stages[0].r_new is not None

    @property
    def s(self) -> int:
        return len(self.stages) - 1

    @property
    def m_s(self) -> int:
        return sum(self.schedule)

    def stage(self, d: int) -> StageSpec:
        if not 0 <= d < len(self.stages):
            raise DesignError(f"stage {d} outside 0..{self.s}")
        return self.stages[d]

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "kappa": self.kappa,
            "z": self.z,
            "L": self.L,
            "m_new": list(self.schedule),
            "r_new": [st.r_new for st in self.stages] if self.has_masses else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DesignPlan":
        return cls.from_schedule(d["gamma"], d["kappa"], d["z"], d["L"], d["m_new"], d.get("r_new"))


@dataclass(frozen=True)
class EdgeDistribution:
    """Probability vector over component indices ``offset .. offset+len-1``."""

    offset: int
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise DesignError("distribution weights must be a non-empty vector")
        if np.any(w < 0):
            raise DesignError(f"negative probability in {w}")
        if abs(w.sum() - 1.0) > PROB_TOL:
            raise DesignError(f"distribution sums to {w.sum()!r}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def normalized(cls, weights, offset: int = 0) -> "EdgeDistribution":
        w = np.asarray(weights, dtype=float)
        return cls(offset, w / w.sum())

    @classmethod
    def uniform(cls, n: int, offset: int = 0) -> "EdgeDistribution":
        return cls(offset, np.full(n, 1.0 / n))

    @property
    def stop(self) -> int:
        """One past the largest covered component index."""
        return self.offset + len(self.weights)

    def __len__(self):
        return len(self.weights)

    def dense(self, length: int | None = None) -> np.ndarray:
        """Weights placed at absolute component positions ``0..length-1``."""
        n = self.stop if length is None else length
        out = np.zeros(n)
        out[self.offset : self.stop] = self.weights
        return out


def assemble_stage_distribution(p: EdgeDistribution, q: EdgeDistribution, r_f: float, r_n: float) -> EdgeDistribution:
    """Merge the fixed and new distributions into the stage's final one.

    The result is ``[r_f p, r_n q] / (r_f + r_n)`` and becomes the fixed
    distribution of the next stage.
    """
    if r_f <= 0 or r_n <= 0:
        raise DesignError("stage masses must be positive")
    if q.offset != p.stop:
        raise DesignError(f"q must start right after p: p covers {p.offset}..{p.stop - 1}, q starts at {q.offset}")
    total = r_f + r_n
    w = np.concatenate([(r_f / total) * p.weights, (r_n / total) * q.weights])
    return EdgeDistribution(p.offset, w / w.sum())


@dataclass(frozen=True)
class StageMatrices:
    """Partitioning and lifting matrices of one stage.

    ``fixed_mask`` marks entries inherited from the previous stage.
    """

    K: np.ndarray
    T: np.ndarray
    fixed_mask: np.ndarray

    def __post_init__(self):
        K = np.array(self.K, dtype=np.int64)
        T = np.array(self.T, dtype=np.int64)
        F = np.array(self.fixed_mask, dtype=bool)
        if K.shape != T.shape or K.shape != F.shape or K.ndim != 2:
            raise DesignError(f"shape mismatch: K{K.shape} T{T.shape} mask{F.shape}")
        if np.any((K < 0) != (T < 0)):
            raise DesignError("K and T must share the same -1 support")
        if np.any(F & (K < 0)):
            raise DesignError("fixed entries must be assigned")
        for a in (K, T, F):
            a.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "fixed_mask", F)

    @property
    def shape(self):
        return self.K.shape

    @property
    def base(self) -> np.ndarray:
        return (self.K >= 0).astype(np.uint8)

    @property
    def optimizable_mask(self) -> np.ndarray:
        return (self.K >= 0) & ~self.fixed_mask

    def check_ranges(self, m_fixed: int, m_new: int, z: int, stage0: bool = False):
        """Validate entry ranges for a stage with the given memory split."""
        fixed = self.K[self.fixed_mask]
        opt = self.K[self.optimizable_mask]
        top = m_fixed + m_new
        if fixed.size and (fixed.min() < 0 or fixed.max() > m_fixed):
            raise DesignError(f"fixed K entries must lie in 0..{m_fixed}")
        lo = 0 if stage0 else m_fixed + 1
        if opt.size and (opt.min() < lo or opt.max() > top):
            raise DesignError(f"optimizable K entries must lie in {lo}..{top}")
        assigned = self.T[self.K >= 0]
        if assigned.size and (assigned.min() < 0 or assigned.max() >= z):
            raise DesignError(f"T entries must lie in 0..{z - 1}")

    def vn_degrees(self) -> np.ndarray:
        return self.base.sum(axis=0)

    def check_vn_degree(self, minimum: int = 3):
        deg = self.vn_degrees()
        bad = np.flatnonzero(deg < minimum)
        if bad.size:
            raise DesignError(f"columns {bad.tolist()} have degree below {minimum}")

    def components(self, memory: int | None = None) -> list[np.ndarray]:
        """Indicator matrices H_0..H_m recovered from K."""
        m = int(self.K.max()) if memory is None else memory
        return [(self.K == k).astype(np.uint8) for k in range(m + 1)]


@dataclass(frozen=True)
class QcCode:
    """Lifted parity-check matrix of a coupled code.

    ``blocks`` rows are ``(row_block, col_block, power)`` for every
    circulant in the lifted matrix, with blocks indexed in units of ``z``.
    """

    H: sp.csr_matrix
    z: int
    L: int = 1
    kappa: int | None = None
    blocks: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def replica_boundaries(self) -> np.ndarray:
        """First column index of every replica plus the end sentinel."""
        width = (self.kappa or self.n // (self.z * self.L)) * self.z
        return np.arange(0, self.n + 1, width)

    def column_weights(self) -> np.ndarray:
        return np.asarray(self.H.sum(axis=0)).ravel()


def expand_coupled_protograph(components: Sequence[np.ndarray], L: int) -> np.ndarray:
    """Couple ``m + 1`` disjoint components ``L`` times.

    Replica ``r`` (0-indexed) holds ``H_k`` at block row ``r + k``.  The
    output has ``gamma * (L + m)`` rows and ``kappa * L`` columns.
    """
    if L < 1:
        raise DesignError("coupling length must be >= 1")
    comps = [np.asarray(c, dtype=np.int64) for c in components]
    if not comps:
        raise DesignError("need at least one component")
    gamma, kappa = comps[0].shape
    if any(c.shape != (gamma, kappa) for c in comps):
        raise DesignError("components must share one shape")
    total = np.sum(comps, axis=0)
    overlap = np.argwhere(total > 1)
    if overlap.size:
        raise DesignError(f"components overlap at {[tuple(map(int, x)) for x in overlap]}")
    m = len(comps) - 1
    out = np.zeros((gamma * (L + m), kappa * L), dtype=np.uint8)
    for r in range(L):
        for k, comp in enumerate(comps):
            out[(r + k) * gamma : (r + k + 1) * gamma, r * kappa : (r + 1) * kappa] = comp
    return out


def circulant(power: int, z: int) -> np.ndarray:
    """Identity with columns shifted cyclically left, raised to ``power``.

    Row ``r`` has its single 1 in column ``(r - power) mod z``.
    """
    return np.roll(np.eye(z, dtype=np.uint8), -power, axis=1)


def lift(protograph, powers, z: int, *, L: int = 1, kappa: int | None = None) -> QcCode:
    """Replace every 1 of ``protograph`` by a ``z x z`` circulant.

    ``powers`` has the protograph's shape; only positions holding a 1 are read.
    """
    P = np.asarray(protograph)
    W = np.asarray(powers, dtype=np.int64)
    if P.shape != W.shape:
        raise DesignError(f"powers shape {W.shape} does not match protograph {P.shape}")
    if z < 1:
        raise DesignError("lifting size must be positive")
    bi, bj = np.nonzero(P)
    t = W[bi, bj]
    if t.size and (t.min() < 0 or t.max() >= z):
        raise DesignError(f"circulant powers must lie in 0..{z - 1}")
    r = np.arange(z)
    rows = (bi[:, None] * z + r[None, :]).ravel()
    cols = (bj[:, None] * z + (r[None, :] - t[:, None]) % z).ravel()
    data = np.ones(rows.size, dtype=np.uint8)
    H = sp.csr_matrix((data, (rows, cols)), shape=(P.shape[0] * z, P.shape[1] * z))
    blocks = np.column_stack([bi, bj, t]).astype(np.int64)
    return QcCode(H, z, L, kappa, blocks)


def build_code(K, T, z: int, L: int, memory: int | None = None) -> QcCode:
    """Coupled and lifted code for partitioning ``K`` and lifting ``T``.

    The lifting is time-invariant: every replica copy of base entry
    ``(i, j)`` uses power ``T[i, j]``.
    """
    K = np.asarray(K)
    T = np.asarray(T)
    m = int(K.max()) if memory is None else memory
    comps = [(K == k).astype(np.uint8) for k in range(m + 1)]
    proto = expand_coupled_protograph(comps, L)
    gamma, kappa = K.shape
    Tfull = np.tile(np.where(T < 0, 0, T), (len(comps) - 1 + L, L))
    return lift(proto, Tfull, z, L=L, kappa=kappa)


def code_rate_and_length(plan: DesignPlan, d: int) -> tuple[int, Fraction]:
    """Code length ``kappa z L`` and exact design rate of stage ``d``."""
    st = plan.stage(d)
    rate = 1 - Fraction(plan.gamma * (plan.L + st.memory), plan.kappa * plan.L)
    return plan.kappa * plan.z * plan.L, rate


def format_rate(rate: Fraction) -> str:
    return f"{float(rate):.{RATE_DECIMALS}f}"


def hardware_sharing_savings(base_matrices: Sequence[np.ndarray]) -> float:
    """Fraction of protograph edges saved by sharing nested base matrices.

    Compares one copy of the last stage's base matrix against keeping a
    separate code per stage.
    """
    bases = [np.asarray(b) != 0 for b in base_matrices]
    if not bases:
        raise DesignError("need at least one base matrix")
    for d in range(1, len(bases)):
        if np.any(bases[d - 1] & ~bases[d]):
            raise DesignError(f"base matrix of stage {d - 1} is not contained in stage {d}")
    total = sum(int(b.sum()) for b in bases)
    return 1.0 - int(bases[-1].sum()) / total


# -- files -------------------------------------------------------------------


def _dist_json(dist: EdgeDistribution | None):
    if dist is None:
        return None
    return {"offset": dist.offset, "weights": dist.weights.tolist()}


def _dist_from_json(obj) -> EdgeDistribution | None:
    if obj is None:
        return None
    return EdgeDistribution.normalized(obj["weights"], obj["offset"])


def save_stage_artifact(path, plan: DesignPlan, stage: int, matrices: StageMatrices, *,
                        p: EdgeDistribution | None = None, q: EdgeDistribution | None = None,
                        u: EdgeDistribution | None = None, seed: int | None = None, extra: dict | None = None):
    """Write one stage's design as JSON (row-major integer arrays, -1 sentinels)."""
    doc = {
        "plan": plan.to_dict(),
        "stage": stage,
        "K": matrices.K.tolist(),
        "T": matrices.T.tolist(),
        "fixed_mask": matrices.fixed_mask.astype(int).tolist(),
        "p": _dist_json(p),
        "q": _dist_json(q),
        "u": _dist_json(u),
        "provenance": {"seed": seed, "stage": stage},
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_stage_artifact(path) -> dict:
    """Read a stage artifact back into plan, matrices and distributions."""
    doc = json.loads(Path(path).read_text())
    out = dict(doc)
    out["plan"] = DesignPlan.from_dict(doc["plan"])
    out["matrices"] = StageMatrices(np.array(doc["K"]), np.array(doc["T"]), np.array(doc["fixed_mask"], dtype=bool))
    for key in ("p", "q", "u"):
        out[key] = _dist_from_json(doc.get(key))
    return out


def write_alist(H, path=None) -> str:
    """Serialize a binary matrix in alist format; returns the text."""
    H = sp.csc_matrix(H)
    H.eliminate_zeros()
    M, N = H.shape
    Hr = H.tocsr()
    col_lists = [np.sort(H.indices[H.indptr[j] : H.indptr[j + 1]]) + 1 for j in range(N)]
    row_lists = [np.sort(Hr.indices[Hr.indptr[i] : Hr.indptr[i + 1]]) + 1 for i in range(M)]
    cdeg = [len(c) for c in col_lists]
    rdeg = [len(r) for r in row_lists]
    dc, dr = max(cdeg, default=0), max(rdeg, default=0)

    def pad(v, width):
        return " ".join(str(int(x)) for x in list(v) + [0] * (width - len(v)))

    lines = [f"{N} {M}", f"{dc} {dr}", " ".join(map(str, cdeg)), " ".join(map(str, rdeg))]
    lines += [pad(c, dc) for c in col_lists]
    lines += [pad(r, dr) for r in row_lists]
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def read_alist(source) -> sp.csr_matrix:
    """Parse alist text (or a path to it) into a sparse binary matrix."""
    text = str(source)
    if "\n" not in text:
        text = Path(source).read_text()
    tokens = [list(map(int, ln.split())) for ln in text.strip().splitlines()]
    N, M = tokens[0]
    col_lists = tokens[4 : 4 + N]
    rows, cols = [], []
    for j, lst in enumerate(col_lists):
        for i in lst:
            if i > 0:
                rows.append(i - 1)
                cols.append(j)
    data = np.ones(len(rows), dtype=np.uint8)
    return sp.csr_matrix((data, (rows, cols)), shape=(M, N))

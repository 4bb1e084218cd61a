"""Cycle candidates of a base matrix and exact cycle counts of coupled codes.

A cycle-``2 ell`` candidate is a closed walk through ``2 ell`` entries of
the ``gamma x kappa`` base matrix,

    (i1, j1), (i1, j2), (i2, j2), (i2, j3), ..., (i_ell, j1),

alternating horizontal and vertical steps.  Entries at even positions carry
sign ``+`` and entries at odd positions sign ``-``.  A candidate becomes a
cycle of the coupled protograph when the signed sum of partition indices
vanishes, and a cycle of the lifted code when the signed sum of circulant
powers also vanishes modulo ``z``.

Candidates are stored in canonical form: of the ``2 ell`` rotations and
reflections of the walk, the one starting at the smallest entry in
row-major order.  For walks with repeated entries (only possible at
``ell = 4``) the canonical form is the lexicographically smallest entry
sequence and the class keeps its stabilizer size.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Iterator, Sequence

import numpy as np

MAX_HALF_LENGTH = 4


@dataclass(frozen=True)
class CycleCandidate:
    """A single closed walk, as a tuple of ``(row, col)`` entries."""

    entries: tuple

    def __post_init__(self):
        e = tuple((int(i), int(j)) for i, j in self.entries)
        if len(e) < 4 or len(e) % 2:
            raise ValueError(f"a candidate needs an even number >= 4 of entries, got {len(e)}")
        ell = len(e) // 2
        for k in range(ell):
            a, b, c = e[2 * k], e[2 * k + 1], e[(2 * k + 2) % len(e)]
            if a[0] != b[0] or b[1] != c[1]:
                raise ValueError(f"entries do not form an alternating closed walk: {e}")
        object.__setattr__(self, "entries", e)

    @classmethod
    def from_walk(cls, rows: Sequence[int], cols: Sequence[int]) -> "CycleCandidate":
        ell = len(rows)
        e = []
        for k in range(ell):
            e.append((rows[k], cols[k]))
            e.append((rows[k], cols[(k + 1) % ell]))
        return cls(tuple(e))

    @property
    def ell(self) -> int:
        return len(self.entries) // 2

    @property
    def rows(self) -> tuple:
        return tuple(self.entries[2 * k][0] for k in range(self.ell))

    @property
    def cols(self) -> tuple:
        return tuple(self.entries[2 * k][1] for k in range(self.ell))

    @property
    def signs(self) -> np.ndarray:
        return _signs(self.ell)

    def rotated(self, steps: int = 1) -> "CycleCandidate":
        """Start the walk ``steps`` column visits later."""
        s = steps % self.ell
        r, c = self.rows, self.cols
        return CycleCandidate.from_walk(r[s:] + r[:s], c[s:] + c[:s])

    def reflected(self) -> "CycleCandidate":
        """Traverse the walk in the opposite direction."""
        r, c = self.rows, self.cols
        return CycleCandidate.from_walk(r[::-1], (c[0],) + c[:0:-1])

    def canonical(self) -> "CycleCandidate":
        forms = [self.rotated(s) for s in range(self.ell)]
        forms += [f.reflected() for f in forms]
        return min(forms, key=lambda x: x.entries)


def _signs(ell: int) -> np.ndarray:
    s = np.ones(2 * ell, dtype=np.int64)
    s[1::2] = -1
    return s


def _walk_tuples(n: int, ell: int) -> np.ndarray:
    """All length-``ell`` index tuples over ``range(n)`` with cyclically distinct neighbours."""
    t = np.array(list(product(range(n), repeat=ell)), dtype=np.int16).reshape(-1, ell)
    ok = np.all(t != np.roll(t, -1, axis=1), axis=1)
    return t[ok]


def _entries_flat(rows: np.ndarray, cols: np.ndarray, kappa: int) -> np.ndarray:
    """Row-major entry indices, shape ``(n, 2 ell)``."""
    rows = rows.astype(np.int32)
    cols = cols.astype(np.int32)
    out = np.empty((rows.shape[0], 2 * rows.shape[1]), dtype=np.int32)
    out[:, 0::2] = rows * kappa + cols
    out[:, 1::2] = rows * kappa + np.roll(cols, -1, axis=1)
    return out


def _transforms(ell: int):
    """Index maps for the ``2 ell`` rotations/reflections acting on (rows, cols)."""
    out = []
    for s in range(ell):
        rr = [(k + s) % ell for k in range(ell)]
        out.append((rr, rr))
        # reflection of the rotated walk
        out.append((rr[::-1], [rr[0]] + rr[:0:-1]))
    return out


@dataclass
class CandidateSet:
    """Structure-of-arrays collection of candidates of one half-length.

    ``stabilizer`` is one for distinct-entry candidates; walk classes with
    a nontrivial symmetry keep the number of rotations/reflections fixing
    them so that exact counts divide it out.
    """

    gamma: int
    kappa: int
    ell: int
    rows: np.ndarray
    cols: np.ndarray
    stabilizer: np.ndarray | None = None

    def __post_init__(self):
        if self.stabilizer is None:
            self.stabilizer = np.ones(len(self.rows), dtype=np.int8)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def entries(self) -> np.ndarray:
        return _entries_flat(self.rows, self.cols, self.kappa)

    @property
    def signs(self) -> np.ndarray:
        return _signs(self.ell)

    def __getitem__(self, k) -> CycleCandidate:
        return CycleCandidate.from_walk(self.rows[k].tolist(), self.cols[k].tolist())

    def subset(self, mask) -> "CandidateSet":
        return CandidateSet(self.gamma, self.kappa, self.ell, self.rows[mask], self.cols[mask], self.stabilizer[mask])

    @staticmethod
    def concat(sets: Sequence["CandidateSet"]) -> "CandidateSet":
        first = sets[0]
        return CandidateSet(first.gamma, first.kappa, first.ell,
                            np.concatenate([s.rows for s in sets]),
                            np.concatenate([s.cols for s in sets]),
                            np.concatenate([s.stabilizer for s in sets]))


def _has_repeated_entry(entries: np.ndarray) -> np.ndarray:
    srt = np.sort(entries, axis=1)
    return np.any(srt[:, 1:] == srt[:, :-1], axis=1)


def _masked_col_tuples(rt, mask: np.ndarray) -> np.ndarray:
    """Column tuples for row tuple ``rt`` whose walk stays inside ``mask``."""
    ell = len(rt)
    # column c_k carries entries (r_k, c_k) and (r_{k-1}, c_k)
    allowed = [np.flatnonzero(mask[rt[k]] & mask[rt[k - 1]]) for k in range(ell)]
    if any(a.size == 0 for a in allowed):
        return np.zeros((0, ell), dtype=np.int16)
    grids = np.meshgrid(*allowed, indexing="ij")
    t = np.stack([g.ravel() for g in grids], axis=1).astype(np.int16)
    return t[np.all(t != np.roll(t, -1, axis=1), axis=1)]


def iter_candidate_chunks(gamma: int, kappa: int, ell: int, *, repeated: bool = False,
                          mask=None) -> Iterator[CandidateSet]:
    """Yield canonical candidates grouped by row tuple.

    With ``repeated=True`` the walk classes that revisit an entry are
    yielded instead of the distinct-entry candidates.  ``mask`` (boolean
    ``gamma x kappa``) keeps only candidates whose entries all lie in it,
    without generating the others.
    """
    if not 2 <= ell <= MAX_HALF_LENGTH:
        raise ValueError(f"half-length must be in 2..{MAX_HALF_LENGTH}, got {ell}")
    row_t = _walk_tuples(gamma, ell)
    all_cols = _walk_tuples(kappa, ell) if mask is None else None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
    # canonical forms start in the smallest row
    row_t = row_t[row_t[:, 0] == row_t.min(axis=1)]
    transforms = _transforms(ell)
    for rt in row_t:
        col_t = all_cols if mask is None else _masked_col_tuples(rt, mask)
        if not len(col_t):
            continue
        rows = np.broadcast_to(rt, col_t.shape)
        e = _entries_flat(rows, col_t, kappa)
        rep = _has_repeated_entry(e)
        if not repeated:
            keep = ~rep & np.all(e[:, :1] < e[:, 1:], axis=1)
            if keep.any():
                yield CandidateSet(gamma, kappa, ell, rows[keep].copy(), col_t[keep].copy())
            continue
        if not rep.any():
            continue
        rr, cc, e = rows[rep], col_t[rep], e[rep]
        is_min = np.ones(len(e), dtype=bool)
        stab = np.zeros(len(e), dtype=np.int8)
        for ri, ci in transforms:
            et = _entries_flat(rr[:, ri], cc[:, ci], kappa)
            diff = et - e
            nz = diff != 0
            first = np.argmax(nz, axis=1)
            lead = diff[np.arange(len(e)), first]
            same = ~nz.any(axis=1)
            stab += same
            is_min &= same | (lead > 0)
        if is_min.any():
            yield CandidateSet(gamma, kappa, ell, rr[is_min].copy(), cc[is_min].copy(), stab[is_min])


def enumerate_candidates(gamma: int, kappa: int, ell: int, *, repeated: bool = False, mask=None) -> CandidateSet:
    """All canonical candidates of half-length ``ell`` in a ``gamma x kappa`` matrix."""
    chunks = list(iter_candidate_chunks(gamma, kappa, ell, repeated=repeated, mask=mask))
    if not chunks:
        empty = np.zeros((0, ell), dtype=np.int16)
        return CandidateSet(gamma, kappa, ell, empty, empty.copy())
    return CandidateSet.concat(chunks)


def candidate_sums(cands: CandidateSet, M: np.ndarray) -> np.ndarray:
    """Signed sums of ``M`` along every candidate."""
    vals = np.asarray(M, dtype=np.int64).ravel()[cands.entries]
    return vals[:, 0::2].sum(axis=1) - vals[:, 1::2].sum(axis=1)


def is_active_partitioned(candidate: CycleCandidate, K: np.ndarray) -> bool:
    """A fully assigned candidate whose signed partition sum vanishes."""
    vals = np.array([K[i, j] for i, j in candidate.entries])
    return bool(np.all(vals >= 0) and vals @ candidate.signs == 0)


def is_active_lifted(candidate: CycleCandidate, K: np.ndarray, T: np.ndarray, z: int) -> bool:
    """Active under the partition and with vanishing signed power sum mod ``z``."""
    if not is_active_partitioned(candidate, K):
        return False
    t = np.array([T[i, j] for i, j in candidate.entries])
    return bool((t @ candidate.signs) % z == 0)


def active_mask(cands: CandidateSet, K: np.ndarray, T: np.ndarray | None = None, z: int | None = None) -> np.ndarray:
    """Vectorized activity test over a candidate set."""
    e = cands.entries
    k = np.asarray(K, dtype=np.int64).ravel()[e]
    ok = np.all(k >= 0, axis=1) & (k[:, 0::2].sum(axis=1) == k[:, 1::2].sum(axis=1))
    if T is not None:
        t = np.asarray(T, dtype=np.int64).ravel()[e]
        ok &= (t[:, 0::2].sum(axis=1) - t[:, 1::2].sum(axis=1)) % z == 0
    return ok


def count_active_candidates(candidates, K, weights=None, T=None, z=None):
    """Number of active candidates per half-length, and their weighted sum.

    ``candidates`` maps half-length to :class:`CandidateSet` (or an iterable
    of chunks).  ``weights`` maps half-length to a weight.  Returns
    ``(counts, weighted_total)``.
    """
    counts = {}
    for ell, cset in candidates.items():
        chunks = [cset] if isinstance(cset, CandidateSet) else cset
        counts[ell] = int(sum(int(active_mask(c, K, T, z).sum()) for c in chunks))
    total = None
    if weights is not None:
        total = float(sum(weights.get(ell, 0.0) * n for ell, n in counts.items()))
    return counts, total


def _walk_cycle_weights(cands: CandidateSet, K, T, z: int, L: int | None) -> np.ndarray:
    """Lifted-cycle count contributed by each walk class (may be fractional before summing)."""
    ell = cands.ell
    e = cands.entries
    k = np.asarray(K, dtype=np.int64).ravel()[e]
    ok = np.all(k >= 0, axis=1)
    # replica of the column nodes and block of the row nodes along the walk
    c = np.zeros((len(e), ell + 1), dtype=np.int64)
    b = np.zeros((len(e), ell), dtype=np.int64)
    for s in range(ell):
        b[:, s] = c[:, s] + k[:, 2 * s]
        c[:, s + 1] = b[:, s] - k[:, 2 * s + 1]
    ok &= c[:, ell] == 0
    if T is not None:
        t = np.asarray(T, dtype=np.int64).ravel()[e]
        x = np.zeros((len(e), ell + 1), dtype=np.int64)
        y = np.zeros((len(e), ell), dtype=np.int64)
        for s in range(ell):
            y[:, s] = (x[:, s] + t[:, 2 * s]) % z
            x[:, s + 1] = (y[:, s] - t[:, 2 * s + 1]) % z
        ok &= x[:, ell] == 0
    else:
        x = np.zeros((len(e), ell + 1), dtype=np.int64)
        y = np.zeros((len(e), ell), dtype=np.int64)
    if ell >= 4:
        rows = cands.rows.astype(np.int64)
        cols = cands.cols.astype(np.int64)
        for p in range(ell):
            for q in range(p + 1, ell):
                ok &= ~((cols[:, p] == cols[:, q]) & (c[:, p] == c[:, q]) & (x[:, p] == x[:, q]))
                ok &= ~((rows[:, p] == rows[:, q]) & (b[:, p] == b[:, q]) & (y[:, p] == y[:, q]))
    span = c[:, :ell].max(axis=1) - c[:, :ell].min(axis=1)
    mult = np.ones(len(e)) if L is None else np.maximum(0, L - span).astype(float)
    zz = 1 if T is None else z
    return ok * mult * zz / cands.stabilizer


def count_cycles(K, ell: int, *, T=None, z: int = 1, L: int | None = None,
                 candidates: CandidateSet | None = None) -> int:
    """Exact number of ``2 ell`` cycles of a coupled (optionally lifted) code.

    ``K`` holds the partition index of each base entry (``-1`` for none).
    With ``L`` given, the coupled protograph has ``L`` replicas and is
    terminated; with ``L=None`` the count is per replica of the unterminated
    chain.  ``T`` and ``z`` describe the circulant lift.
    """
    K = np.asarray(K)
    gamma, kappa = K.shape
    base = K >= 0
    chunks = [candidates] if candidates is not None else list(iter_candidate_chunks(gamma, kappa, ell, mask=base))
    if candidates is None and ell >= 4:
        chunks += list(iter_candidate_chunks(gamma, kappa, ell, repeated=True, mask=base))
    total = 0.0
    for c in chunks:
        total += _walk_cycle_weights(c, K, T, z, L).sum()
    return int(round(total))


def count_cycles_streaming(K, ell: int, *, T=None, z: int = 1, L: int | None = None) -> int:
    """:func:`count_cycles` without holding every candidate in memory."""
    K = np.asarray(K)
    gamma, kappa = K.shape
    total = 0.0
    base = K >= 0
    gens = [iter_candidate_chunks(gamma, kappa, ell, mask=base)]
    if ell >= 4:
        gens.append(iter_candidate_chunks(gamma, kappa, ell, repeated=True, mask=base))
    for gen in gens:
        for c in gen:
            total += _walk_cycle_weights(c, K, T, z, L).sum()
    return int(round(total))

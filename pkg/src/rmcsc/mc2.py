"""Markov-chain Monte-Carlo search over partitioning and lifting matrices.

Each transition picks a tuple of ``b`` correlated entries and evaluates the
cycle count for every completion of those entries.  The next state is drawn
with probability decaying exponentially in the normalized count, at a
temperature that cools after every sweep over the tuples.

Counting is incremental.  Every candidate keeps its current signed sum, so
a completion only needs the candidates touching the tuple.  Those are
grouped by how the tuple enters them (a coefficient in {-1, 0, 1} per
entry), and within a group a histogram of residual sums answers all
completions at once.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .cyclecalc import CandidateSet, enumerate_candidates, iter_candidate_chunks
from .protomatrix import DesignError, DesignPlan, EdgeDistribution, StageMatrices

log = logging.getLogger(__name__)

PARTITION = "partition"
LIFT = "lift"


@dataclass(frozen=True)
class Mc2Config:
    """Chain controls.

    Parameters
    ----------
    b : int
        Entries updated together in one transition.
    max_transitions : int
        Transition budget (one transition per tuple visit).
    weights : dict
        Weight per half-length ``ell`` for the partitioning objective.
        Half-lengths with weight 0 are not enumerated.
    lift_lengths : tuple
        Half-lengths eliminated in order by the lifting phase.
    norm_l1, norm_inf : float or None
        Budgets on ``|x - x_init|``; ``None`` picks ``entry_count * m_n / 4``
        and ``m_n``.  Use ``inf`` to lift the restriction.
    theta0, theta_decay : float
        Initial temperature and its per-sweep decay factor.
    theta_scale : {"count", "normalized"}
        Units of the temperature.  ``"count"`` weighs completions by
        ``exp(-dC / theta)`` with ``dC`` the weighted count difference, so
        ``theta = 1`` means one cycle costs a factor ``e``.  ``"normalized"``
        uses the normalized count instead, which for large censuses makes
        the early chain close to a uniform random walk.
    """

    b: int = 3
    max_transitions: int = 20_000
    weights: dict = field(default_factory=lambda: {2: 100.0, 3: 10.0, 4: 1.0})
    lift_lengths: tuple = (2, 3, 4)
    norm_l1: float | None = None
    norm_inf: float | None = None
    theta0: float = 1.0
    theta_decay: float = 0.99
    theta_scale: str = "count"
    seed: int = 0
    lift_init_attempts: int = 1_000_000
    vn_min_degree: int = 3

    def __post_init__(self):
        if self.b < 1:
            raise DesignError("b must be >= 1")
        if self.max_transitions < 0:
            raise DesignError("max_transitions must be >= 0")
        if any(w < 0 for w in self.weights.values()):
            raise DesignError("weights must be non-negative")
        if (self.norm_l1 is not None and self.norm_l1 < 0) or (self.norm_inf is not None and self.norm_inf < 0):
            raise DesignError("norm budgets must be non-negative")
        if not 0 < self.theta_decay <= 1 or self.theta0 <= 0:
            raise DesignError("temperature must be positive with decay in (0, 1]")
        if self.theta_scale not in ("count", "normalized"):
            raise DesignError(f"unknown theta_scale {self.theta_scale!r}")

    @property
    def partition_lengths(self) -> tuple:
        return tuple(sorted(ell for ell, w in self.weights.items() if w > 0))


@dataclass
class StageContext:
    """What the chain needs to know about one stage.

    ``base`` marks the stage's base matrix; ``fixed_mask`` the entries
    inherited from earlier stages, with their values in ``K``/``T``.
    Optimizable entries are ``base & ~fixed_mask``.  ``window`` is the
    inclusive range of component indices new entries may take.
    ``vn_thresholds`` (upper component bounds of every cumulative stage)
    switches on the column-degree restriction used for the full-memory
    pre-design.
    """

    gamma: int
    kappa: int
    z: int
    L: int
    base: np.ndarray
    fixed_mask: np.ndarray
    window: tuple
    K: np.ndarray | None = None
    T: np.ndarray | None = None
    vn_thresholds: tuple = ()

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=bool)
        self.fixed_mask = np.asarray(self.fixed_mask, dtype=bool)
        if self.base.shape != (self.gamma, self.kappa) or self.fixed_mask.shape != self.base.shape:
            raise DesignError("context masks must be gamma x kappa")
        if np.any(self.fixed_mask & ~self.base):
            raise DesignError("fixed entries must lie in the base matrix")
        if self.K is None:
            self.K = np.full(self.base.shape, -1, dtype=np.int64)
        if self.T is None:
            self.T = np.full(self.base.shape, -1, dtype=np.int64)
        self.K = np.asarray(self.K, dtype=np.int64)
        self.T = np.asarray(self.T, dtype=np.int64)

    @property
    def optimizable(self) -> np.ndarray:
        return self.base & ~self.fixed_mask

    @property
    def opt_index(self) -> np.ndarray:
        """Flat row-major indices of the optimizable entries (the layout of ``x``)."""
        return np.flatnonzero(self.optimizable.ravel())

    @property
    def m_new(self) -> int:
        """Width of the new window: ``m_n,0`` at stage 0, ``m_n,d`` after."""
        lo, hi = self.window
        return hi - lo + (1 if lo else 0)

    def matrix_from_x(self, x, phase: str) -> np.ndarray:
        M = (self.K if phase == PARTITION else self.T).copy()
        M[~self.base] = -1
        M.ravel()[self.opt_index] = x
        return M


@dataclass
class Mc2Result:
    C_opt: float
    x_opt: np.ndarray
    transitions: int
    matrix: np.ndarray
    counts: dict
    trace: np.ndarray
    phase: str
    lift_stage: int | None = None

    def trace_csv(self) -> str:
        lines = ["transition,C,C_opt"]
        lines += [f"{int(i)},{c:.10g},{o:.10g}" for i, c, o in self.trace]
        return "\n".join(lines) + "\n"


# -- candidate preparation ----------------------------------------------------------


def base_candidates(base: np.ndarray, ell: int) -> CandidateSet:
    """Candidates of half-length ``ell`` lying entirely inside ``base``."""
    base = np.asarray(base, dtype=bool)
    return enumerate_candidates(*base.shape, ell, mask=base)


def _empty(gamma, kappa, ell):
    e = np.zeros((0, ell), dtype=np.int16)
    return CandidateSet(gamma, kappa, ell, e, e.copy())


def k_active_candidates(K: np.ndarray, ell: int, L: int | None = None) -> tuple[CandidateSet, np.ndarray]:
    """Candidates active under ``K`` and their replica multiplicity ``L - span``.

    With ``L=None`` every candidate has multiplicity one.
    """
    K = np.asarray(K, dtype=np.int64)
    gamma, kappa = K.shape
    kept, mult = [], []
    flat = K.ravel()
    for c in iter_candidate_chunks(gamma, kappa, ell, mask=K >= 0):
        v = flat[c.entries]
        ok = np.all(v >= 0, axis=1) & (v[:, 0::2].sum(axis=1) == v[:, 1::2].sum(axis=1))
        if not ok.any():
            continue
        sub = c.subset(ok)
        v = v[ok]
        if L is None:
            mu = np.ones(len(sub))
        else:
            # replica offset of each column visit along the walk
            steps = v[:, 0::2] - v[:, 1::2]
            offs = np.concatenate([np.zeros((len(v), 1), dtype=np.int64), np.cumsum(steps, axis=1)[:, :-1]], axis=1)
            mu = np.maximum(0, L - (offs.max(axis=1) - offs.min(axis=1))).astype(float)
        keep = mu > 0
        if keep.any():
            kept.append(sub.subset(keep))
            mult.append(mu[keep])
    if not kept:
        return _empty(gamma, kappa, ell), np.zeros(0)
    return CandidateSet.concat(kept), np.concatenate(mult)


# -- correlation tuples -----------------------------------------------------------


def build_correlation_tuples(candidates, entry_index, b: int) -> list[tuple]:
    """One ``b``-tuple per optimizable entry: the entry and its most correlated peers.

    Correlation is the number of candidates two entries share.  Ties are
    broken by the lowest flat index.  Returned tuples hold positions in
    ``entry_index`` (the layout of ``x``).
    """
    entry_index = np.asarray(entry_index)
    n = len(entry_index)
    if b > n:
        raise DesignError(f"b = {b} exceeds the {n} optimizable entries")
    if b == 1:
        return [(k,) for k in range(n)]
    sets = list(candidates.values()) if isinstance(candidates, dict) else list(candidates)
    sets = [cs for cs in sets if len(cs)]
    size = max([int(entry_index.max()) + 1] + [int(cs.entries.max()) + 1 for cs in sets])
    pos = np.full(size, -1, dtype=np.int64)
    pos[entry_index] = np.arange(n)
    rows, cols = [], []
    offset = 0
    for cs in sets:
        pe = pos[cs.entries]
        r, c = np.nonzero(pe >= 0)
        rows.append(r + offset)
        cols.append(pe[r, c])
        offset += len(pe)
    if offset == 0:
        C = np.zeros((n, n))
    else:
        r, c = np.concatenate(rows), np.concatenate(cols)
        M = sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(offset, n))
        C = (M.T @ M).toarray()
    np.fill_diagonal(C, -1)
    out = []
    for k in range(n):
        # stable sort on -count keeps lower indices first among ties
        order = np.argsort(-C[k], kind="stable")
        peers = [int(j) for j in order if j != k][: b - 1]
        out.append((k, *peers))
    return out


# -- incremental evaluator ----------------------------------------------------------


class _TupleCache:
    __slots__ = ("cand", "coef", "groups", "segments", "patterns")


class _Evaluator:
    """Signed sums of every candidate, updated in place as ``x`` changes."""

    def __init__(self, ctx: StageContext, phase: str, sets: list, mults: list, b: int):
        self.phase = phase
        self.mod = ctx.z if phase == LIFT else None
        opt = ctx.opt_index
        pos = np.full(ctx.gamma * ctx.kappa, -1, dtype=np.int64)
        pos[opt] = np.arange(len(opt))
        const = (ctx.K if phase == PARTITION else ctx.T).ravel().copy()
        const[opt] = 0
        const[const < 0] = 0
        ent, sign, grp, mult = [], [], [], []
        for g, (cs, mu) in enumerate(zip(sets, mults)):
            e = cs.entries.astype(np.int64)
            s = np.tile(np.array([1, -1]), e.shape[1] // 2)
            ent.append(e)
            sign.append(np.broadcast_to(s, e.shape))
            grp.append(np.full(len(e), g, dtype=np.int64))
            mult.append(np.asarray(mu, dtype=float))
        self.n_groups = len(sets)
        self.group = np.concatenate(grp) if grp else np.zeros(0, dtype=np.int64)
        self.mult = np.concatenate(mult) if mult else np.zeros(0)
        self.census = np.array([m.sum() for m in mult])
        self.fixed_sum = np.zeros(len(self.group), dtype=np.int64)
        # incidence of optimizable positions, grouped by position
        inc_pos, inc_cand, inc_sign = [], [], []
        start = 0
        for e, s in zip(ent, sign):
            n = len(e)
            if n:
                self.fixed_sum[start:start + n] = (const[e] * s).sum(axis=1)
                p = pos[e]
                r, c = np.nonzero(p >= 0)
                inc_pos.append(p[r, c])
                inc_cand.append(r + start)
                inc_sign.append(s[r, c])
            start += n
        if inc_pos:
            ip = np.concatenate(inc_pos)
            order = np.argsort(ip, kind="stable")
            self.inc_cand = np.concatenate(inc_cand)[order]
            self.inc_sign = np.concatenate(inc_sign)[order].astype(np.int64)
            self.inc_ptr = np.searchsorted(ip[order], np.arange(len(opt) + 1))
        else:
            self.inc_cand = np.zeros(0, dtype=np.int64)
            self.inc_sign = np.zeros(0, dtype=np.int64)
            self.inc_ptr = np.zeros(len(opt) + 1, dtype=np.int64)
        self.cache: dict = {}
        self.grids: dict = {}
        self.b = b
        self.sum = None

    def reset(self, x: np.ndarray):
        s = self.fixed_sum.copy()
        for k in range(len(x)):
            a, bnd = self.inc_ptr[k], self.inc_ptr[k + 1]
            np.add.at(s, self.inc_cand[a:bnd], self.inc_sign[a:bnd] * x[k])
        self.sum = s
        self.totals = self._group_totals(self._active(s), np.arange(len(s)))

    def _active(self, s):
        return (s % self.mod == 0) if self.mod else (s == 0)

    def _group_totals(self, act, idx):
        return np.bincount(self.group[idx], weights=self.mult[idx] * act, minlength=self.n_groups)

    def _tuple(self, nu) -> _TupleCache:
        tc = self.cache.get(nu)
        if tc is not None:
            return tc
        cand, col, sgn = [], [], []
        for k, p in enumerate(nu):
            a, bnd = self.inc_ptr[p], self.inc_ptr[p + 1]
            cand.append(self.inc_cand[a:bnd])
            sgn.append(self.inc_sign[a:bnd])
            col.append(np.full(bnd - a, k))
        cand = np.concatenate(cand)
        uniq, inv = np.unique(cand, return_inverse=True)
        coef = np.zeros((len(uniq), len(nu)), dtype=np.int64)
        np.add.at(coef, (inv, np.concatenate(col)), np.concatenate(sgn))
        pattern = ((coef + 1) * (3 ** np.arange(len(nu)))).sum(axis=1)
        key = self.group[uniq] * 3 ** len(nu) + pattern
        order = np.argsort(key, kind="stable")
        key = key[order]
        bounds = np.flatnonzero(np.diff(key)) + 1
        starts = np.concatenate([[0], bounds])
        ends = np.concatenate([bounds, [len(key)]])
        tc = _TupleCache()
        tc.cand = uniq[order]
        tc.coef = coef[order]
        tc.segments = list(zip(starts.tolist(), ends.tolist()))
        tc.groups = [int(self.group[tc.cand[a]]) for a, _ in tc.segments] if len(key) else []
        tc.patterns = [tc.coef[a] for a, _ in tc.segments] if len(key) else []
        if len(self.cache) < 200_000:
            self.cache[nu] = tc
        return tc

    def _pattern_table(self, values, pat):
        """Broadcast shape and the residual each sub-grid completion needs to close."""
        key = pat.tobytes()
        hit = self.grids.get(key)
        if hit is None:
            supp = np.flatnonzero(pat)
            s = _completions(values, len(supp)) @ pat[supp]
            need = (-s) % self.mod if self.mod else -s
            shape = [1] * len(pat)
            for k in supp:
                shape[k] = len(values)
            hit = self.grids[key] = (tuple(shape), need)
        return hit

    def evaluate(self, nu, x, values) -> np.ndarray:
        """Weighted active counts per group for every completion of ``nu``.

        Columns follow ``itertools.product(values, repeat=b)`` order.  Each
        coefficient pattern only depends on the entries it involves, so it is
        evaluated on that sub-grid and broadcast.
        """
        tc = self._tuple(nu)
        b, nv = len(nu), len(values)
        out = np.zeros((self.n_groups,) + (nv,) * b)
        if len(tc.cand):
            resid = self.sum[tc.cand] - tc.coef @ x[list(nu)]
            w = self.mult[tc.cand]
            cur = np.bincount(self.group[tc.cand], weights=w * self._active(self.sum[tc.cand]),
                              minlength=self.n_groups)
            base = self.totals - cur
            for (a, bnd), g, pat in zip(tc.segments, tc.groups, tc.patterns):
                shape, lookup = self._pattern_table(values, pat)
                r = resid[a:bnd]
                if self.mod:
                    hist = np.bincount(r % self.mod, weights=w[a:bnd], minlength=self.mod)
                    hit = hist[lookup]
                else:
                    u, inv = np.unique(r, return_inverse=True)
                    hw = np.bincount(inv, weights=w[a:bnd])
                    idx = np.clip(np.searchsorted(u, lookup), 0, len(u) - 1)
                    hit = np.where(u[idx] == lookup, hw[idx], 0.0)
                out[g] += hit.reshape(shape)
        else:
            base = self.totals
        out += base.reshape((-1,) + (1,) * b)
        return out.reshape(self.n_groups, -1)

    def apply(self, nu, x_old_vals, x_new_vals):
        tc = self._tuple(nu)
        if len(tc.cand):
            delta = np.asarray(x_new_vals, dtype=np.int64) - np.asarray(x_old_vals, dtype=np.int64)
            old_act = self._active(self.sum[tc.cand])
            self.sum[tc.cand] += tc.coef @ delta
            new_act = self._active(self.sum[tc.cand])
            w = self.mult[tc.cand] * (new_act.astype(float) - old_act)
            self.totals = self.totals + np.bincount(self.group[tc.cand], weights=w, minlength=self.n_groups)


# -- state initialization -----------------------------------------------------------


def largest_remainder_counts(weights, n: int) -> np.ndarray:
    """Integer counts summing to ``n`` that round ``weights * n`` by largest remainders."""
    w = np.asarray(weights, dtype=float)
    raw = w / w.sum() * n
    counts = np.floor(raw).astype(int)
    rem = n - counts.sum()
    if rem:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:rem]] += 1
    return counts


def init_partition_state(ctx: StageContext, q: EdgeDistribution, rng=None) -> np.ndarray:
    """Optimizable entries drawn to match ``q``'s proportions, placed at random.

    With column-degree thresholds in ``ctx`` the placement first gives every
    column enough entries from the lowest window.
    """
    rng = np.random.default_rng(rng)
    opt = ctx.opt_index
    n = len(opt)
    lo, hi = ctx.window
    if q.offset != lo or q.stop - 1 != hi:
        raise DesignError(f"distribution covers {q.offset}..{q.stop - 1}, stage window is {lo}..{hi}")
    if len(q) > n and n > 0:
        raise DesignError(f"{len(q)} components cannot be matched with {n} entries")
    counts = largest_remainder_counts(q.weights, n)
    values = np.repeat(np.arange(lo, hi + 1), counts)
    if not ctx.vn_thresholds:
        return rng.permutation(values)
    return _place_with_vn(ctx, values, rng)


def _place_with_vn(ctx: StageContext, values: np.ndarray, rng) -> np.ndarray:
    need = 3
    thr = min(ctx.vn_thresholds)
    opt = ctx.opt_index
    cols = opt % ctx.kappa
    low = rng.permutation(values[values <= thr])
    high = list(rng.permutation(values[values > thr]))
    if len(low) < need * ctx.kappa:
        raise DesignError(f"only {len(low)} entries fall in the first stage window; "
                          f"{need * ctx.kappa} are needed for column degree {need}")
    x = np.full(len(opt), -1, dtype=np.int64)
    li = 0
    for c in range(ctx.kappa):
        slots = np.flatnonzero(cols == c)
        if len(slots) < need:
            raise DesignError(f"column {c} has only {len(slots)} entries")
        pick = rng.choice(slots, need, replace=False)
        x[pick] = low[li:li + need]
        li += need
    rest = list(low[li:]) + high
    free = np.flatnonzero(x < 0)
    x[free] = rng.permutation(np.array(rest, dtype=np.int64))
    return x


def _vn_ok(ctx: StageContext, M: np.ndarray, minimum: int) -> bool:
    for thr in ctx.vn_thresholds:
        if np.any(((M >= 0) & (M <= thr)).sum(axis=0) < minimum):
            return False
    return True


def init_lift_state(ctx: StageContext, candidates4: CandidateSet | None = None, rng=None,
                    attempts: int = 1_000_000) -> tuple[np.ndarray, dict]:
    """Cycle-4-free lifting of the optimizable entries by greedy randomized search.

    Entries are visited in random order and given a random power among those
    that close no lifted cycle-4 with already decided entries.  Restarts
    until a clean assignment is found or ``attempts`` power trials are spent.
    Returns ``(x, report)``; ``report['residual']`` is the cycle-4 count left
    and ``report['inherited']`` the part closed by fixed entries alone.
    """
    rng = np.random.default_rng(rng)
    z = ctx.z
    K = ctx.K.copy()
    K[~ctx.base] = -1
    if candidates4 is None:
        candidates4, _ = k_active_candidates(K, 2)
    opt = ctx.opt_index
    n = len(opt)
    pos = np.full(ctx.gamma * ctx.kappa, -1, dtype=np.int64)
    pos[opt] = np.arange(n)
    e = candidates4.entries.astype(np.int64)
    signs = np.array([1, -1, 1, -1])
    const = np.where(ctx.fixed_mask, ctx.T, 0).ravel()
    p = pos[e]
    # per-entry incidence of candidates (position inside the candidate)
    by_entry = [[] for _ in range(n)]
    for ci, row in enumerate(p):
        for k, pk in enumerate(row):
            if pk >= 0:
                by_entry[pk].append((ci, k))
    # cycles closed by inherited powers alone cannot be removed here
    all_fixed = np.all(p < 0, axis=1)
    floor = int(((const[e[all_fixed]] * signs).sum(axis=1) % z == 0).sum())
    tried = 0
    best_x, best_res = None, None
    restarts = 0
    while True:
        restarts += 1
        x = np.full(n, -1, dtype=np.int64)
        for k in rng.permutation(n):
            bad = np.zeros(z, dtype=bool)
            for ci, slot in by_entry[k]:
                row = p[ci]
                vals = np.where(row >= 0, x[np.maximum(row, 0)], 0)
                known = (row < 0) | (vals >= 0)
                known[slot] = True
                if not known.all():
                    continue
                other = sum(signs[j] * (const[e[ci, j]] if row[j] < 0 else vals[j]) for j in range(4) if j != slot)
                # signs[slot] * t + other == 0 mod z
                bad[(-other * signs[slot]) % z] = True
            ok = np.flatnonzero(~bad)
            tried += 1
            x[k] = rng.choice(ok) if ok.size else rng.integers(z)
        T = ctx.matrix_from_x(x, LIFT)
        v = T.ravel()[e]
        res = int(((v * signs).sum(axis=1) % z == 0).sum())
        if best_res is None or res < best_res:
            best_x, best_res = x, res
        if res <= floor or tried >= attempts:
            break
    return best_x, {"residual": best_res, "attempts": tried, "restarts": restarts, "inherited": floor}


# -- the chain ----------------------------------------------------------------------


def _completions(values: np.ndarray, b: int) -> np.ndarray:
    return np.array(list(itertools.product(values, repeat=b)), dtype=np.int64).reshape(-1, b)


def mc2_optimize(phase: str, ctx: StageContext, candidates: dict, config: Mc2Config,
                 x_init: np.ndarray, *, multiplicities: dict | None = None, tuples=None) -> Mc2Result:
    """Run the chain from ``x_init`` and return the best state seen.

    ``candidates`` maps half-length to :class:`CandidateSet`.  In the
    partitioning phase they should lie in the stage base; in the lifting
    phase they should be the ``K``-active ones, with ``multiplicities``
    giving each candidate's replica count.
    """
    if phase not in (PARTITION, LIFT):
        raise DesignError(f"unknown phase {phase!r}")
    rng = np.random.default_rng(config.seed)
    x = np.array(x_init, dtype=np.int64)
    opt = ctx.opt_index
    if x.shape != (len(opt),):
        raise DesignError(f"x_init has {x.size} entries, stage has {len(opt)} optimizable")
    if phase == PARTITION:
        lo, hi = ctx.window
        values = np.arange(lo, hi + 1)
        lengths = [ell for ell in sorted(candidates) if config.weights.get(ell, 0) > 0]
        wvec = np.array([config.weights[ell] for ell in lengths], dtype=float)
    else:
        values = np.arange(ctx.z)
        lengths = [ell for ell in config.lift_lengths if ell in candidates]
        wvec = np.ones(len(lengths))
    if x.size and (x.min() < values[0] or x.max() > values[-1]):
        raise DesignError("x_init has values outside the phase's value set")
    if phase == PARTITION and ctx.vn_thresholds and not _vn_ok(ctx, ctx.matrix_from_x(x, PARTITION), config.vn_min_degree):
        raise DesignError("x_init violates the column-degree restriction")

    sets = [candidates[ell] for ell in lengths]
    mults = [(multiplicities or {}).get(ell, np.ones(len(candidates[ell]))) for ell in lengths]
    ev = _Evaluator(ctx, phase, sets, mults, config.b)
    ev.reset(x)
    census = np.maximum(ev.census, 1e-300)

    n_opt = len(opt)
    if phase == PARTITION:
        m_n = max(ctx.m_new, 1)
        B1 = config.norm_l1 if config.norm_l1 is not None else n_opt * m_n / 4
        Binf = config.norm_inf if config.norm_inf is not None else m_n
    else:
        B1 = Binf = np.inf
    x0 = x.copy()
    l1 = 0.0

    stage_idx = 0
    if phase == LIFT:
        while stage_idx < len(lengths) - 1 and ev.totals[stage_idx] == 0:
            stage_idx += 1

    def energy(counts):
        # what the kernel weighs: weighted count of the objective being minimized
        if phase == PARTITION:
            return wvec @ counts
        return counts[stage_idx]

    def scale():
        return float(wvec @ census) if phase == PARTITION else float(census[stage_idx])

    cur_counts = ev.totals.copy()
    best_x = x.copy()
    best_counts = cur_counts.copy()
    C_opt = _normalized(phase, cur_counts, wvec, census) if len(lengths) else 0.0
    trace = [(0, C_opt, C_opt)]

    if n_opt == 0 or not len(lengths) or C_opt == 0:
        return _result(ctx, phase, C_opt, best_x, 0, best_counts, lengths, trace, stage_idx)

    b = min(config.b, n_opt)
    S = tuples if tuples is not None else build_correlation_tuples(sets, opt, b)
    V = _completions(values, b)
    place = len(values) ** np.arange(b - 1, -1, -1)
    theta = config.theta0
    i = 0
    while i < config.max_transitions and C_opt > 0:
        for t in rng.permutation(len(S)):
            if i >= config.max_transitions:
                break
            nu = S[t]
            i += 1
            idx = list(nu)
            counts = ev.evaluate(nu, x, values)
            feas = np.ones(len(V), dtype=bool)
            if phase == PARTITION:
                dev = np.abs(V - x0[idx])
                feas &= dev.max(axis=1) <= Binf
                l1_new = l1 - np.abs(x[idx] - x0[idx]).sum() + dev.sum(axis=1)
                feas &= l1_new <= B1 + 1e-9
                if ctx.vn_thresholds:
                    feas &= _vn_feasible(ctx, x, idx, V, config.vn_min_degree)
            else:
                for g in range(stage_idx):
                    feas &= counts[g] == 0
            cur_row = int((x[idx] - values[0]) @ place)
            # infeasible everywhere else: the incumbent keeps the mass
            feas[cur_row] = True
            rows = np.flatnonzero(feas)
            E = energy(counts)[rows]
            # best-so-far over every feasible completion evaluated
            top = rows[E == E.min()]
            if phase == LIFT and len(top) > 1:
                top = top[np.lexsort(counts[::-1][:, top])]
            r = top[0]
            C_r = _normalized(phase, counts[:, r], wvec, census)
            if C_r < C_opt:
                C_opt = C_r
                best_x = x.copy()
                best_x[idx] = V[r]
                best_counts = counts[:, r].copy()
            if config.theta_scale == "normalized":
                E = E / scale()
            pstar = np.exp(-(E - E.min()) / theta)
            choice = rows[rng.choice(len(rows), p=pstar / pstar.sum())]
            if choice != cur_row:
                old = x[idx].copy()
                x[idx] = V[choice]
                ev.apply(nu, old, V[choice])
                if phase == PARTITION:
                    l1 = float(np.abs(x - x0).sum())
                else:
                    while stage_idx < len(lengths) - 1 and ev.totals[stage_idx] == 0:
                        stage_idx += 1
            trace.append((i, _normalized(phase, ev.totals, wvec, census), C_opt))
            if C_opt == 0:
                break
        theta *= config.theta_decay
    return _result(ctx, phase, C_opt, best_x, i, best_counts, lengths, trace, stage_idx)


def _normalized(phase, counts, wvec, census) -> float:
    """Normalized count in [0, 1].

    Partitioning: weighted count over weighted census.  Lifting eliminates
    lengths in turn, so the value is banded: with ``G`` lengths and the first
    nonzero one at position ``g``, it is ``(G - 1 - g + c_g / N_g) / G``.
    Either way it is monotone in the order the chain optimizes.
    """
    counts = np.asarray(counts, dtype=float)
    if phase == PARTITION:
        return float(wvec @ counts / (wvec @ census))
    G = len(counts)
    nz = np.flatnonzero(counts > 0)
    if not nz.size:
        return 0.0
    g = nz[0]
    return float((G - 1 - g + counts[g] / census[g]) / G)


def _vn_feasible(ctx, x, idx, V, minimum):
    opt = ctx.opt_index
    cols = opt % ctx.kappa
    tcols = cols[idx]
    feas = np.ones(len(V), dtype=bool)
    others = np.ones(len(x), dtype=bool)
    others[idx] = False
    fixedK = ctx.K.copy()
    for thr in ctx.vn_thresholds:
        fixed_cnt = ((fixedK >= 0) & (fixedK <= thr) & ctx.fixed_mask).sum(axis=0)
        for c in np.unique(tcols):
            deg = fixed_cnt[c] + np.sum((x <= thr) & others & (cols == c))
            add = (V[:, tcols == c] <= thr).sum(axis=1)
            feas &= deg + add >= minimum
    return feas


def _result(ctx, phase, C_opt, x, transitions, counts, lengths, trace, stage_idx):
    return Mc2Result(C_opt=float(C_opt), x_opt=x, transitions=transitions,
                     matrix=ctx.matrix_from_x(x, phase),
                     counts={ell: float(c) for ell, c in zip(lengths, counts)},
                     trace=np.array(trace, dtype=float), phase=phase,
                     lift_stage=lengths[stage_idx] if phase == LIFT and lengths else None)


# -- stage plumbing -----------------------------------------------------------------


def derive_stage_base(K_star: np.ndarray, plan: DesignPlan, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Indicator of stage ``d``'s new entries and of everything fixed before it."""
    K_star = np.asarray(K_star)
    st = plan.stage(d)
    lo, hi = st.window
    H_n = ((K_star >= lo) & (K_star <= hi)).astype(np.uint8)
    H_f = ((K_star >= 0) & (K_star <= st.m_fixed) & (d > 0)).astype(np.uint8)
    return H_n, H_f


def derive_sf_baseline(K_star: np.ndarray, T_star: np.ndarray, plan: DesignPlan, d: int):
    """Truncate the full-memory design to stage ``d``'s memory."""
    top = plan.stage(d).memory
    K_star = np.asarray(K_star)
    keep = (K_star >= 0) & (K_star <= top)
    return np.where(keep, K_star, -1), np.where(keep, np.asarray(T_star), -1)


def reference_context(plan: DesignPlan) -> StageContext:
    """Full-memory context for the pre-design, with the column-degree restriction."""
    shape = (plan.gamma, plan.kappa)
    thresholds = tuple(st.memory for st in plan.stages)
    return StageContext(plan.gamma, plan.kappa, plan.z, plan.L, np.ones(shape, bool), np.zeros(shape, bool),
                        (0, plan.m_s), vn_thresholds=thresholds)


def design_reference_K_star(plan: DesignPlan, p_star: EdgeDistribution, config: Mc2Config) -> Mc2Result:
    """Full-memory partitioning whose truncations keep every column degree >= 3."""
    ctx = reference_context(plan)
    candidates = {ell: enumerate_candidates(plan.gamma, plan.kappa, ell) for ell in config.partition_lengths}
    x0 = init_partition_state(ctx, p_star, config.seed)
    return mc2_optimize(PARTITION, ctx, candidates, config, x0)


def stage_context(plan: DesignPlan, d: int, K_star: np.ndarray, prev: StageMatrices | None) -> StageContext:
    """Partitioning context of stage ``d``: base from ``K*``, earlier entries frozen."""
    st = plan.stage(d)
    K_star = np.asarray(K_star)
    base = (K_star >= 0) & (K_star <= st.memory)
    if d == 0:
        fixed = np.zeros_like(base)
        K = T = None
    else:
        if prev is None:
            raise DesignError(f"stage {d} needs the stage {d - 1} matrices")
        fixed = prev.K >= 0
        if np.any(fixed & ~base):
            raise DesignError(f"stage {d - 1} entries fall outside the stage {d} base")
        K, T = prev.K.copy(), prev.T.copy()
    return StageContext(plan.gamma, plan.kappa, plan.z, plan.L, base, fixed, st.window, K=K, T=T)


def partition_stage(plan: DesignPlan, d: int, K_star, prev: StageMatrices | None, q: EdgeDistribution,
                    config: Mc2Config) -> Mc2Result:
    """Partitioning of stage ``d``'s new entries."""
    ctx = stage_context(plan, d, K_star, prev)
    cands = {ell: base_candidates(ctx.base, ell) for ell in config.partition_lengths}
    x0 = init_partition_state(ctx, q, config.seed)
    return mc2_optimize(PARTITION, ctx, cands, config, x0)


def lift_matrix(ctx: StageContext, config: Mc2Config) -> tuple[Mc2Result, dict]:
    """Cycle-4-free initialization followed by the staged lifting chain.

    ``ctx.K`` must be the final partitioning of the stage.
    """
    K = np.where(ctx.base, ctx.K, -1)
    cands, mults = {}, {}
    for ell in config.lift_lengths:
        cands[ell], mults[ell] = k_active_candidates(K, ell, ctx.L)
    x0, report = init_lift_state(ctx, cands.get(2), config.seed, config.lift_init_attempts)
    res = mc2_optimize(LIFT, ctx, cands, config, x0, multiplicities=mults)
    return res, report


def lift_stage(plan: DesignPlan, d: int, K_stage: np.ndarray, prev: StageMatrices | None,
               config: Mc2Config) -> tuple[Mc2Result, dict]:
    """Lifting of stage ``d`` given its final partitioning ``K_stage``."""
    K_stage = np.asarray(K_stage)
    base = K_stage >= 0
    if d == 0 or prev is None:
        fixed = np.zeros_like(base)
        T = None
    else:
        fixed = prev.K >= 0
        T = prev.T.copy()
    ctx = StageContext(plan.gamma, plan.kappa, plan.z, plan.L, base, fixed, plan.stage(d).window, K=K_stage, T=T)
    return lift_matrix(ctx, config)


def best_of_chains(run, seeds, max_workers: int = 1):
    """Run ``run(seed)`` for each seed and keep the lowest ``C_opt`` (first seed wins ties).

    ``run`` returns an :class:`Mc2Result` or a tuple starting with one.
    """
    seeds = list(seeds)
    if max_workers > 1 and len(seeds) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers) as pool:
            outs = list(pool.map(run, seeds))
    else:
        outs = [run(s) for s in seeds]

    def key(o):
        return (o[0] if isinstance(o, tuple) else o).C_opt

    return min(outs, key=key)


# -- full design --------------------------------------------------------------------


@dataclass
class DesignOutcome:
    """Everything a staged design produces.

    ``rmc[d]`` and ``sf[d]`` are stage ``d``'s matrices of the
    rate-memory-compatible design and of the truncated full-memory baseline.
    """

    plan: DesignPlan
    grade: list
    reference: object
    K_star: np.ndarray
    T_star: np.ndarray
    rmc: list
    sf: list
    reports: list

    def hardware_savings(self) -> float:
        from .protomatrix import hardware_sharing_savings

        return hardware_sharing_savings([m.base for m in self.rmc])


def design_rmc_codes(plan: DesignPlan, grade_config=None, partition_config: Mc2Config | None = None,
                     lift_config: Mc2Config | None = None, *, chains: int = 1, threads: int = 1,
                     log_progress=None, on_stage=None) -> DesignOutcome:
    """Staged design: distributions, ``K*``, then partition and lift every stage.

    The full-memory lifting ``T*`` is also produced so the truncated baseline
    can be derived.  Each chain gets its own seed derived from the configs'.
    ``on_stage(d, matrices, report)`` is called as soon as stage ``d`` is done;
    a failing stage raises :class:`DesignError` naming its index.
    """
    from .grade import GradeConfig, derive_stage_masses, reference_distribution, run_pipeline

    grade_config = grade_config or GradeConfig()
    pc = partition_config or Mc2Config()
    lc = lift_config or Mc2Config()
    say = log_progress or log.info
    reference = reference_distribution(plan, grade_config)
    if not plan.has_masses:
        plan = plan.with_masses(derive_stage_masses(reference.q, plan.schedule))
    outcomes = run_pipeline(plan, grade_config, reference=reference)

    def seeds(cfg, salt):
        return [cfg.seed + 7919 * salt + c for c in range(chains)]

    kres = best_of_chains(lambda s: design_reference_K_star(plan, reference.q, replace(pc, seed=s)),
                          seeds(pc, 1), threads)
    K_star = kres.matrix
    say(f"K*: weighted count {kres.C_opt:.5f} after {kres.transitions} transitions")
    reports, rmc = [], []
    prev = None
    for st in plan.stages:
        d = st.index
        q = outcomes[d].result.q
        try:
            pres = best_of_chains(lambda s: partition_stage(plan, d, K_star, prev, q, replace(pc, seed=s)),
                                  seeds(pc, 10 + d), threads)
            lres, init = best_of_chains(lambda s: lift_stage(plan, d, pres.matrix, prev, replace(lc, seed=s)),
                                        seeds(lc, 20 + d), threads)
        except DesignError as exc:
            raise DesignError(f"stage {d}: {exc}") from exc
        fixed = np.zeros(pres.matrix.shape, bool) if prev is None else prev.K >= 0
        cur = StageMatrices(pres.matrix, lres.matrix, fixed)
        reports.append({"stage": d, "partition": {"C_opt": pres.C_opt, "counts": pres.counts,
                                                   "transitions": pres.transitions},
                        "lift": {"C_opt": lres.C_opt, "counts": lres.counts, "transitions": lres.transitions,
                                 "init": init}})
        say(f"stage {d}: partition {pres.counts}, lift {lres.counts}")
        if on_stage is not None:
            on_stage(d, cur, reports[-1])
        rmc.append(cur)
        prev = cur
    full = StageContext(plan.gamma, plan.kappa, plan.z, plan.L, K_star >= 0, np.zeros(K_star.shape, bool),
                        (0, plan.m_s), K=K_star)
    tres, tinit = best_of_chains(lambda s: lift_matrix(full, replace(lc, seed=s)), seeds(lc, 2), threads)
    T_star = tres.matrix
    say(f"T*: lift {tres.counts}")
    sf = []
    for st in plan.stages:
        K_sf, T_sf = derive_sf_baseline(K_star, T_star, plan, st.index)
        prev_sf = sf[-1].K >= 0 if sf else np.zeros(K_sf.shape, bool)
        sf.append(StageMatrices(K_sf, T_sf, prev_sf))
    reports.append({"stage": "reference", "K_star": {"C_opt": kres.C_opt, "counts": kres.counts},
                    "T_star": {"C_opt": tres.C_opt, "counts": tres.counts, "init": tinit}})
    return DesignOutcome(plan, outcomes, reference, K_star, T_star, rmc, sf, reports)


def stage_cycle_counts(plan: DesignPlan, matrices: StageMatrices, lengths=(3, 4)) -> dict:
    """Exact cycle counts of one stage's lifted, terminated code, keyed by cycle length."""
    from .cyclecalc import count_cycles_streaming

    return {2 * ell: count_cycles_streaming(matrices.K, ell, T=matrices.T, z=plan.z, L=plan.L) for ell in lengths}


def reduction_percent(sf: int, rmc: int) -> float:
    """Relative reduction ``(SF - RMC) / SF`` in percent, rounded to 2 decimals."""
    if sf == 0:
        return 0.0 if rmc == 0 else float("-inf")
    return round(100.0 * (sf - rmc) / sf, 2)


def format_cycle_table(rows) -> str:
    """Plain-text table with one line per code: name, cycle-6 and cycle-8 counts.

    ``rows`` holds ``(name, {6: n6, 8: n8})`` pairs; missing lengths print blank.
    """
    lines = [f"{'Code':<16}{'Cycle-6 count':>16}{'Cycle-8 count':>16}"]
    for name, counts in rows:
        c6 = f"{counts[6]:,}" if 6 in counts else ""
        c8 = f"{counts[8]:,}" if 8 in counts else ""
        lines.append(f"{name:<16}{c6:>16}{c8:>16}")
    return "\n".join(lines)

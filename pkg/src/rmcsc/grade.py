"""Gradient-descent distributor for the new components of each design stage.

The objective is ``w6 E[cycle-6] + w8 E[cycle-8]`` as a function of the new
distribution ``q``; the fixed distribution ``p`` and the masses ``r_f``,
``r_n`` come from the plan.  Steps follow the centered, normalized gradient
``q <- q - alpha g / |g|``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .cyclecalc import CandidateCensus, LaurentPoly, expected_cycles, expected_cycles_expanded, grad_expected_cycles
from .protomatrix import DesignError, DesignPlan, EdgeDistribution, StageSpec, assemble_stage_distribution

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GradeConfig:
    """Objective weights and descent controls.

    Parameters
    ----------
    w6, w8 : float
        Weights of the expected cycle-6 and cycle-8 counts.
    epsilon : float
        Stop once an accepted step changes the objective by at most this.
    alpha : float
        Initial step length on the simplex.  Halved whenever a step would
        raise the objective, at most ``max_halvings`` times.
    clip_floor : float
        Negative entries after a step are raised to this value before
        renormalizing.
    """

    w6: float = 10.0
    w8: float = 1.0
    epsilon: float = 1e-8
    alpha: float = 0.05
    max_iterations: int = 100_000
    max_halvings: int = 60
    clip_floor: float = 1e-9
    init_mode: str = "uniform"
    seed: int | None = None

    def __post_init__(self):
        if self.w6 < 0 or self.w8 < 0 or self.w6 + self.w8 == 0:
            raise DesignError(f"weights must be non-negative and not both zero, got ({self.w6}, {self.w8})")
        if self.epsilon <= 0 or self.alpha <= 0:
            raise DesignError("epsilon and alpha must be positive")
        if self.init_mode not in ("uniform", "random"):
            raise DesignError(f"unknown init_mode {self.init_mode!r}")


@dataclass
class GradeResult:
    q: EdgeDistribution
    E6: float
    E8: float
    iterations: int
    trace: list = field(default_factory=list)
    kkt_residual: float = 0.0
    kkt_residual_support: float = 0.0
    projections: int = 0
    halvings: int = 0
    converged: bool = True

    @property
    def objective(self) -> float:
        return self.trace[-1] if self.trace else float("nan")

    def to_dict(self) -> dict:
        return {
            "q": {"offset": self.q.offset, "weights": self.q.weights.tolist()},
            "E6": self.E6,
            "E8": self.E8,
            "iterations": self.iterations,
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
            "kkt_residual_support": self.kkt_residual_support,
            "projections": self.projections,
            "halvings": self.halvings,
            "converged": self.converged,
        }


class GradeError(RuntimeError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


def _initial_q(n: int, config: GradeConfig) -> np.ndarray:
    if config.init_mode == "uniform":
        return np.full(n, 1.0 / n)
    w = np.random.default_rng(config.seed).random(n) + 0.05
    return w / w.sum()


def _free_centered(g: np.ndarray, q: np.ndarray, floor: float) -> np.ndarray:
    """Mean-subtracted gradient, ignoring floored entries that want to shrink further.

    Without this the normalized step is spent pushing an entry below the
    floor, clipping undoes it and the objective change looks converged.
    """
    free = np.ones(len(g), dtype=bool)
    at_floor = q <= 2 * floor
    while True:
        c = g - g[free].mean()
        stuck = free & at_floor & (c > 0)
        if not stuck.any() or stuck.sum() == free.sum():
            break
        free &= ~stuck
    out = np.where(free, c, 0.0)
    return out


def _descend(census, r_f, r_n, f, offset, n, config: GradeConfig) -> GradeResult:
    """Run the centered-gradient loop for ``n`` new components starting at ``offset``."""
    weights = {3: config.w6, 4: config.w8}
    active = {ell: w for ell, w in weights.items() if w}

    def objective(q):
        g = LaurentPoly(offset, q)
        return sum(w * expected_cycles(ell, r_f, r_n, f, g, census) for ell, w in active.items())

    def gradient(q):
        g = LaurentPoly(offset, q)
        return sum(w * grad_expected_cycles(ell, r_f, r_n, f, g, census) for ell, w in active.items())

    q = _initial_q(n, config)
    F = objective(q)
    trace = [F]
    alpha = config.alpha
    halvings = projections = iterations = 0
    converged = n == 1
    while not converged and iterations < config.max_iterations:
        g = _free_centered(gradient(q), q, config.clip_floor)
        norm = np.linalg.norm(g)
        if norm == 0:
            converged = True
            break
        while True:
            cand = q - alpha * g / norm
            if cand.min() < 0:
                cand = np.maximum(cand, config.clip_floor)
                projections += 1
            cand = cand / cand.sum()
            F_new = objective(cand)
            if not np.isfinite(F_new):
                raise GradeError(f"non-finite objective at iteration {iterations}", trace)
            if F_new <= F or halvings >= config.max_halvings:
                break
            alpha /= 2
            halvings += 1
        iterations += 1
        if F_new > F:
            # step budget exhausted and still no descent: stay at the incumbent
            converged = True
            break
        change = abs(F - F_new)
        q, F = cand, F_new
        trace.append(F)
        if change <= config.epsilon:
            converged = True
    g = gradient(q)
    centered = g - g.mean()
    support = q > 1e-6
    sup = g[support] - g[support].mean()
    qd = EdgeDistribution(offset, q / q.sum())
    gq = LaurentPoly.from_distribution(qd)
    E6 = expected_cycles_expanded(3, r_f, r_n, f, gq, census)
    E8 = expected_cycles_expanded(4, r_f, r_n, f, gq, census)
    return GradeResult(qd, E6, E8, iterations, trace, float(np.abs(centered).max()), float(np.abs(sup).max()),
                       projections, halvings, converged)


def rmc_grade(plan: DesignPlan, d: int, p: EdgeDistribution | None, config: GradeConfig | None = None) -> GradeResult:
    """Locally optimal distribution of stage ``d``'s new components.

    ``p`` is the final distribution of stage ``d - 1`` (``None`` at stage 0).
    """
    config = config or GradeConfig()
    st = plan.stage(d)
    if not plan.has_masses:
        raise DesignError("plan has no stage masses; derive them first")
    census = CandidateCensus(plan.gamma, plan.kappa)
    if d == 0:
        return _descend(census, 0.0, st.r_new, None, 0, st.m_new + 1, config)
    if p is None or len(p) != st.m_fixed + 1:
        raise DesignError(f"stage {d} needs a fixed distribution over 0..{st.m_fixed}")
    f = LaurentPoly.from_distribution(p)
    return _descend(census, st.r_fixed, st.r_new, f, st.m_fixed + 1, st.m_new, config)


def run_stage0(plan: DesignPlan, config: GradeConfig | None = None) -> GradeResult:
    """Stage 0 has nothing fixed: ``u = q`` over ``0..m_n,0``."""
    if not plan.has_masses:
        plan = plan.with_masses([1.0] + [0.0] * plan.s) if plan.s == 0 else plan
    config = config or GradeConfig()
    census = CandidateCensus(plan.gamma, plan.kappa)
    r = plan.stages[0].r_new or 1.0
    return _descend(census, 0.0, r, None, 0, plan.stages[0].m_new + 1, config)


def reference_distribution(plan: DesignPlan, config: GradeConfig | None = None) -> GradeResult:
    """Locally optimal distribution of a plain SC code with the full memory ``m_s``."""
    full = DesignPlan.from_schedule(plan.gamma, plan.kappa, plan.z, plan.L, [plan.m_s], [1.0])
    return run_stage0(full, config)


def derive_stage_masses(p_star, schedule) -> list[float]:
    """Stage masses ``r_n,d``: mass of ``p*`` over each stage's component window."""
    w = p_star.weights if isinstance(p_star, EdgeDistribution) else np.asarray(p_star, dtype=float)
    schedule = [int(m) for m in schedule]
    if len(w) != sum(schedule) + 1:
        raise DesignError(f"reference distribution has {len(w)} entries, schedule needs {sum(schedule) + 1}")
    bounds = np.cumsum([schedule[0] + 1] + schedule[1:])
    masses = [float(x.sum()) for x in np.split(w, bounds[:-1])]
    total = sum(masses)
    return [m / total for m in masses]


class StageOutcome(NamedTuple):
    stage: StageSpec
    result: GradeResult
    u: EdgeDistribution


def run_pipeline(plan: DesignPlan, config: GradeConfig | None = None, *,
                 reference: GradeResult | None = None) -> list[StageOutcome]:
    """Stage-by-stage distributions, each ``u`` becoming the next ``p``.

    Plans without stage masses get them from a full-memory reference run.
    """
    config = config or GradeConfig()
    if not plan.has_masses:
        reference = reference or reference_distribution(plan, config)
        plan = plan.with_masses(derive_stage_masses(reference.q, plan.schedule))
        log.info("stage masses %s", [round(st.r_new, 4) for st in plan.stages])
    out = []
    u = None
    for st in plan.stages:
        res = rmc_grade(plan, st.index, u, config)
        if st.index == 0:
            u = res.q
        else:
            u = assemble_stage_distribution(u, res.q, st.r_fixed, st.r_new)
        log.info("stage %d: E6=%.1f E8=%.1f after %d iterations", st.index, res.E6, res.E8, res.iterations)
        out.append(StageOutcome(st, res, u))
    return out


def with_weights(config: GradeConfig, w6: float, w8: float) -> GradeConfig:
    return replace(config, w6=w6, w8=w8)


def format_distribution_table(outcomes: list[StageOutcome]) -> str:
    """Plain-text per-stage table: final distribution and expectations."""
    lines = []
    for st, res, u in outcomes:
        vec = " ".join(f"{x:.4f}" for x in u.weights)
        lines.append(f"stage {st.index}: u = [{vec}]")
        lines.append(f"  E[cycle-6] = {res.E6:,.0f}  E[cycle-8] = {res.E8:,.0f}  iterations = {res.iterations}")
    return "\n".join(lines)

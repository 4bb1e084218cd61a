import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from rmcsc.cyclecalc import CandidateCensus, LaurentPoly, expected_cycles, expected_cycles_expanded
from rmcsc.grade import (
    GradeConfig,
    derive_stage_masses,
    reference_distribution,
    rmc_grade,
    run_pipeline,
    run_stage0,
)
from rmcsc.protomatrix import DesignError, DesignPlan, EdgeDistribution

PUBLISHED_U0 = [0.2494, 0.0925, 0.0685, 0.0605, 0.0582, 0.0604, 0.0688, 0.0920, 0.2497]


def _slsqp(objective, n):
    x0 = np.full(n, 1.0 / n)
    res = minimize(objective, x0, method="SLSQP", bounds=[(0, 1)] * n,
                   constraints=[{"type": "eq", "fun": lambda q: q.sum() - 1}],
                   options={"ftol": 1e-15, "maxiter": 2000})
    return res.x


def test_single_new_component_is_a_point():
    plan = DesignPlan.from_schedule(5, 9, 3, 4, [2, 1], [0.7, 0.3])
    p = EdgeDistribution.uniform(3)
    res = rmc_grade(plan, 1, p, GradeConfig())
    assert res.q.weights.tolist() == [1.0]
    assert res.iterations == 0
    assert res.E6 == pytest.approx(expected_cycles(3, 0.7, 0.3, p, res.q, (5, 9)))


def test_memory_zero_stage0():
    plan = DesignPlan.from_schedule(5, 9, 3, 4, [0])
    res = run_stage0(plan)
    assert res.q.weights.tolist() == [1.0]


@pytest.mark.parametrize("m", [3, 6, 8])
def test_stage0_symmetric(m):
    plan = DesignPlan.from_schedule(7, 35, 29, 16, [m])
    q = run_stage0(plan, GradeConfig(w6=1, w8=0)).q.weights
    assert np.allclose(q, q[::-1], atol=1e-6)


@pytest.mark.parametrize("w6,w8", [(1, 0), (10, 1)])
def test_stage0_matches_independent_optimizer(w6, w8):
    census = CandidateCensus(7, 35)
    res = run_stage0(DesignPlan.from_schedule(7, 35, 29, 16, [8]), GradeConfig(w6=w6, w8=w8))

    def obj(q):
        g = LaurentPoly(0, q)
        return (w6 * expected_cycles(3, 0, 1, None, g, census) + w8 * expected_cycles(4, 0, 1, None, g, census)) / 1e4

    ref = _slsqp(obj, 9)
    assert np.allclose(res.q.weights, ref, atol=2e-3)
    assert res.objective <= obj(ref) * 1e4 * (1 + 1e-6)


def test_later_stage_matches_independent_optimizer():
    plan = DesignPlan.from_schedule(7, 35, 29, 16, [8, 3], [0.6, 0.4])
    p = EdgeDistribution.normalized(PUBLISHED_U0)
    cfg = GradeConfig(w6=1, w8=0)
    res = rmc_grade(plan, 1, p, cfg)
    census = CandidateCensus(7, 35)
    f = LaurentPoly.from_distribution(p)

    def obj(q):
        return expected_cycles(3, 0.6, 0.4, f, LaurentPoly(9, q), census) / 1e3

    ref = _slsqp(obj, 3)
    assert np.allclose(res.q.weights, ref, atol=2e-3)
    assert res.kkt_residual_support < 1e-2 * np.abs(res.E6)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_descent_invariants(seed):
    rng = np.random.default_rng(seed)
    m0, m1 = int(rng.integers(1, 5)), int(rng.integers(1, 4))
    r0 = float(rng.uniform(0.2, 0.8))
    plan = DesignPlan.from_schedule(6, 11, 5, 4, [m0, m1], [r0, 1 - r0])
    p = EdgeDistribution.normalized(rng.random(m0 + 1) + 0.05)
    cfg = GradeConfig(w6=float(rng.uniform(1, 10)), w8=float(rng.integers(0, 2)), alpha=float(rng.uniform(0.01, 0.2)))
    res = rmc_grade(plan, 1, p, cfg)
    w = res.q.weights
    assert abs(w.sum() - 1) < 1e-12 and w.min() >= 0
    assert np.all(np.diff(res.trace) <= 1e-9 * abs(res.trace[0]))
    g = LaurentPoly.from_distribution(res.q)
    f = LaurentPoly.from_distribution(p)
    assert res.E6 == pytest.approx(expected_cycles_expanded(3, r0, 1 - r0, f, g, (6, 11)), rel=1e-9)
    assert res.E8 == pytest.approx(expected_cycles_expanded(4, r0, 1 - r0, f, g, (6, 11)), rel=1e-9)


def test_stage_masses():
    assert derive_stage_masses([1.0], [0]) == [1.0]
    masses = derive_stage_masses(np.full(16, 1 / 16), [8, 3, 4])
    assert masses == pytest.approx([0.5625, 0.1875, 0.25])
    with pytest.raises(DesignError):
        derive_stage_masses(np.full(15, 1 / 15), [8, 3, 4])


def test_stage_masses_from_reference_run():
    plan = DesignPlan.from_schedule(7, 35, 29, 16, [8, 3, 4])
    cfg = GradeConfig(w6=1, w8=0)
    ref = reference_distribution(plan, cfg)
    masses = derive_stage_masses(ref.q, plan.schedule)
    out = run_pipeline(plan, cfg, reference=ref)
    assert [o.stage.r_new for o in out] == pytest.approx(masses)
    w = ref.q.weights
    assert masses[0] == pytest.approx(w[:9].sum())


def test_pipeline_single_stage():
    plan = DesignPlan.from_schedule(5, 9, 3, 4, [3])
    out = run_pipeline(plan)
    assert len(out) == 1
    assert out[0].u == out[0].result.q


def test_pipeline_unit_stages():
    plan = DesignPlan.from_schedule(5, 9, 3, 4, [0, 1, 1, 1], [0.25] * 4)
    out = run_pipeline(plan)
    assert [len(o.u) for o in out] == [1, 2, 3, 4]
    assert np.allclose(out[-1].u.weights, 0.25)
    assert np.allclose(out[1].u.weights, 0.5)


def test_pipeline_feeds_u_forward():
    plan = DesignPlan.from_schedule(7, 35, 29, 16, [8, 3, 4])
    out = run_pipeline(plan, GradeConfig(w6=1, w8=0))
    assert [len(o.u) for o in out] == [9, 12, 16]
    for prev, cur in zip(out, out[1:]):
        head = cur.u.weights[: len(prev.u)]
        assert np.allclose(head / head.sum(), prev.u.weights)
    assert np.allclose(out[0].u.weights, PUBLISHED_U0, atol=0.01)


def test_config_validation():
    with pytest.raises(DesignError):
        GradeConfig(w6=-1)
    with pytest.raises(DesignError):
        GradeConfig(alpha=0)
    with pytest.raises(DesignError):
        GradeConfig(init_mode="sorted")

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rmcsc.cyclecalc import tanner_cycle_count
from rmcsc.protomatrix import (
    DesignError,
    DesignPlan,
    EdgeDistribution,
    StageMatrices,
    assemble_stage_distribution,
    build_code,
    circulant,
    code_rate_and_length,
    expand_coupled_protograph,
    format_rate,
    hardware_sharing_savings,
    lift,
    load_stage_artifact,
    read_alist,
    save_stage_artifact,
    write_alist,
)


def test_plan_recursions():
    plan = DesignPlan.from_schedule(7, 35, 29, 16, [8, 3, 4], [0.5, 0.2, 0.3])
    st1, st2 = plan.stage(1), plan.stage(2)
    assert (st1.m_fixed, st2.m_fixed) == (8, 11)
    assert st2.r_fixed == pytest.approx(0.7)
    assert plan.stage(0).window == (0, 8)
    assert st1.window == (9, 11)
    assert st2.window == (12, 15)
    assert plan.m_s == 15 and plan.s == 2
    assert DesignPlan.from_dict(plan.to_dict()) == plan


@pytest.mark.parametrize("kw", [
    dict(gamma=3, kappa=8),
    dict(gamma=5, kappa=5),
    dict(gamma=5, kappa=8, L=0),
])
def test_plan_rejects_bad_shapes(kw):
    args = dict(gamma=5, kappa=8, z=3, L=2) | kw
    with pytest.raises(DesignError):
        DesignPlan.from_schedule(args["gamma"], args["kappa"], args["z"], args["L"], [2])


def test_plan_rejects_bad_masses():
    with pytest.raises(DesignError):
        DesignPlan.from_schedule(5, 8, 3, 2, [2, 1], [0.5, 0.4])
    with pytest.raises(DesignError):
        DesignPlan.from_schedule(5, 8, 3, 2, [2, 0], [0.5, 0.5])


def test_expand_memory_zero_is_block_diagonal():
    out = expand_coupled_protograph([np.ones((2, 3))], 3)
    expected = np.kron(np.eye(3), np.ones((2, 3)))
    assert np.array_equal(out, expected)


def test_expand_hand_placed_band():
    H0 = np.array([[1, 0], [0, 1]])
    H1 = np.array([[0, 1], [1, 0]])
    out = expand_coupled_protograph([H0, H1], 2)
    Z = np.zeros((2, 2))
    expected = np.block([[H0, Z], [H1, H0], [Z, H1]])
    assert np.array_equal(out, expected)


def test_expand_group1_shape():
    rng = np.random.default_rng(0)
    K = rng.integers(0, 12, (7, 23))
    comps = [(K == k).astype(int) for k in range(12)]
    out = expand_coupled_protograph(comps, 12)
    assert out.shape == (161, 276)
    assert out.sum() == 12 * 7 * 23


def test_expand_rejects_overlap():
    with pytest.raises(DesignError, match="overlap"):
        expand_coupled_protograph([np.ones((2, 2)), np.eye(2)], 2)


def test_circulant_left_shift():
    assert np.array_equal(circulant(0, 3), np.eye(3))
    # column cyclically shifted one to the left
    assert np.array_equal(circulant(1, 3), np.array([[0, 0, 1], [1, 0, 0], [0, 1, 0]]))
    assert np.array_equal(circulant(2, 3), circulant(1, 3) @ circulant(1, 3))


def test_lift_small():
    code = lift([[1]], [[1]], 3)
    assert np.array_equal(code.H.toarray(), circulant(1, 3))
    code = lift(np.ones((2, 2)), [[0, 0], [0, 1]], 3)
    assert code.H.shape == (6, 6) and code.H.nnz == 12
    assert tanner_cycle_count(code.H, 4) == 0
    with pytest.raises(DesignError):
        lift([[1]], [[3]], 3)
    with pytest.raises(DesignError):
        lift([[1, 1]], [[0]], 3)


def test_build_code_counts_and_weights():
    rng = np.random.default_rng(3)
    K = rng.integers(-1, 3, (4, 8))
    T = np.where(K < 0, -1, rng.integers(0, 7, K.shape))
    code = build_code(K, T, 7, 5)
    base = (K >= 0).sum()
    assert code.H.shape == (4 * (5 + 2) * 7, 8 * 5 * 7)
    assert code.H.nnz == 7 * 5 * base
    colw = code.column_weights().reshape(5, 8, 7)
    assert np.array_equal(colw, np.broadcast_to((K >= 0).sum(axis=0)[None, :, None], colw.shape))


@pytest.mark.parametrize("plan_args,d,length,rate", [
    ((7, 23, 23, 12, [6, 2, 3]), 0, 6348, "0.5435"),
    ((7, 23, 23, 12, [6, 2, 3]), 1, 6348, "0.4928"),
    ((7, 23, 23, 12, [6, 2, 3]), 2, 6348, "0.4167"),
    ((7, 35, 29, 16, [8, 3, 4]), 0, 16240, "0.7000"),
    ((7, 35, 29, 16, [8, 3, 4]), 1, 16240, "0.6625"),
    ((7, 35, 29, 16, [8, 3, 4]), 2, 16240, "0.6125"),
])
def test_rates_and_lengths(plan_args, d, length, rate):
    plan = DesignPlan.from_schedule(*plan_args)
    n, r = code_rate_and_length(plan, d)
    assert n == length
    assert format_rate(r) == rate


def test_rate_zero_root():
    # kappa L / gamma - L = 8*7/4 - 7 = 7
    plan = DesignPlan.from_schedule(4, 8, 3, 7, [7])
    assert code_rate_and_length(plan, 0)[1] == Fraction(0)


def test_assemble_stage_distribution():
    u = assemble_stage_distribution(EdgeDistribution.uniform(1), EdgeDistribution.uniform(1, 1), 0.5, 0.5)
    assert np.allclose(u.weights, [0.5, 0.5])
    u = assemble_stage_distribution(EdgeDistribution.uniform(3), EdgeDistribution.uniform(2, 3), 0.6, 0.4)
    assert np.allclose(u.weights, 0.2)
    with pytest.raises(DesignError):
        assemble_stage_distribution(EdgeDistribution.uniform(3), EdgeDistribution.uniform(2, 2), 0.6, 0.4)


def test_assemble_published_stage1():
    # stage-0 distribution and stage-1 tail of the published 7 x 35 design
    u0 = np.array([0.2494, 0.0925, 0.0685, 0.0605, 0.0582, 0.0604, 0.0688, 0.0920, 0.2497])
    tail = np.array([0.0018, 0.0472, 0.1148])
    r_f = 0.5308
    r_n = r_f * tail.sum() / (1 - tail.sum())
    u = assemble_stage_distribution(EdgeDistribution.normalized(u0), EdgeDistribution.normalized(tail, 9), r_f, r_n)
    expected = [0.2086, 0.0774, 0.0573, 0.0506, 0.0487, 0.0506, 0.0576, 0.0769, 0.2088, 0.0018, 0.0472, 0.1148]
    assert np.allclose(u.weights, expected, atol=2e-4)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.01, 1), min_size=1, max_size=6), st.lists(st.floats(0.01, 1), min_size=1, max_size=6),
       st.floats(0.05, 0.95))
def test_assembled_distribution_is_a_distribution(pw, qw, r_f):
    p = EdgeDistribution.normalized(pw)
    q = EdgeDistribution.normalized(qw, len(pw))
    u = assemble_stage_distribution(p, q, r_f, 1 - r_f)
    assert abs(u.weights.sum() - 1) <= 1e-12
    assert np.all(u.weights >= 0)
    assert np.allclose(u.weights[: len(pw)] / u.weights[: len(pw)].sum(), p.weights)


def test_stage_matrices_contract():
    K = np.array([[0, 1, -1], [2, 0, 1]])
    T = np.array([[1, 0, -1], [2, 2, 0]])
    fm = np.array([[1, 0, 0], [0, 1, 0]], dtype=bool)
    sm = StageMatrices(K, T, fm)
    sm.check_ranges(m_fixed=0, m_new=2, z=3)
    assert np.array_equal(sm.optimizable_mask, [[0, 1, 0], [1, 0, 1]])
    comps = sm.components(2)
    assert np.array_equal(sum(comps), sm.base)
    with pytest.raises(DesignError):
        StageMatrices(K, np.where(K < 0, 0, T), fm)
    with pytest.raises(DesignError):
        sm.check_ranges(m_fixed=0, m_new=1, z=3)
    with pytest.raises(DesignError):
        sm.check_vn_degree(3)


def test_hardware_savings():
    B = np.ones((3, 4))
    assert hardware_sharing_savings([B, B]) == pytest.approx(0.5)
    small = B.copy()
    small[0] = 0
    assert hardware_sharing_savings([small, B]) == pytest.approx(1 - 12 / 20)
    with pytest.raises(DesignError):
        hardware_sharing_savings([B, small])


def test_alist_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    H = (rng.random((6, 9)) < 0.4).astype(np.uint8)
    text = write_alist(H, tmp_path / "h.alist")
    lines = text.splitlines()
    assert lines[0] == "9 6"
    assert lines[1] == f"{H.sum(0).max()} {H.sum(1).max()}"
    assert np.array_equal(read_alist(tmp_path / "h.alist").toarray(), H)
    assert np.array_equal(read_alist(text).toarray(), H)


def test_alist_2x2():
    text = write_alist(np.ones((2, 2)))
    assert text.splitlines() == ["2 2", "2 2", "2 2", "2 2", "1 2", "1 2", "1 2", "1 2"]


def test_stage_artifact_round_trip(tmp_path):
    plan = DesignPlan.from_schedule(4, 8, 5, 3, [1, 1], [0.6, 0.4])
    K = np.zeros((4, 8), dtype=int)
    T = np.arange(32).reshape(4, 8) % 5
    sm = StageMatrices(K, T, np.zeros((4, 8), bool))
    save_stage_artifact(tmp_path / "s.json", plan, 0, sm, q=EdgeDistribution.uniform(2), seed=7)
    doc = load_stage_artifact(tmp_path / "s.json")
    assert doc["plan"] == plan
    assert np.array_equal(doc["matrices"].T, T)
    assert doc["provenance"]["seed"] == 7
    assert np.allclose(doc["q"].weights, 0.5)

import json

import numpy as np
import pytest

from rmcsc.cli import EXIT_BUDGET, EXIT_INPUT, EXIT_OK, PlanFile, main
from rmcsc.cyclecalc import tanner_cycle_count
from rmcsc.protomatrix import load_stage_artifact, read_alist, write_alist

TOY = """
[plan]
gamma = {gamma}
kappa = {kappa}
z = 7
L = 5
m_new = {m_new}

[grade]
w6 = 10
w8 = 1

[mc2]
transitions = 400
lift_transitions = 600
weights = 2:100, 3:10
lift_lengths = 2, 3
seed = 3

[simulate]
channel = bsc
grid = 0.08, 0.04
min_errors = 10
max_frames = 640

[design]
lengths = 6
"""


def _plan(tmp_path, text, name="plan.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


@pytest.fixture
def toy_plan(tmp_path):
    return _plan(tmp_path, TOY.format(gamma=4, kappa=8, m_new="2"))


@pytest.fixture(scope="module")
def staged_design(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("staged")
    plan = _plan(tmp, TOY.format(gamma=5, kappa=10, m_new="3, 1"))
    out = tmp / "run"
    assert main(["design", "--plan", plan, "--out", str(out)]) == EXIT_OK
    return plan, out


def test_count_all_ones(tmp_path, capsys):
    path = tmp_path / "ones.alist"
    write_alist(np.ones((2, 2), int), path)
    assert main(["count", str(path), "--lengths", "4"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "cycles-4: 1"


def test_expect_example_stage0(tmp_path, capsys):
    plan = _plan(tmp_path, "[plan]\ngamma=7\nkappa=35\nz=29\nL=16\nm_new=8,3,4\n[grade]\nw6=1\nw8=0\n")
    u = "0.2494,0.0925,0.0685,0.0605,0.0582,0.0604,0.0688,0.0920,0.2497"
    js = tmp_path / "e.json"
    assert main(["expect", "--plan", plan, "--u", u, "--json", str(js)]) == EXIT_OK
    assert "E[cycle-6] =" in capsys.readouterr().out
    assert json.loads(js.read_text())["6"] == pytest.approx(1580, rel=0.03)


def test_kappa_not_above_gamma_rejected(tmp_path, capsys):
    plan = _plan(tmp_path, "[plan]\ngamma=5\nkappa=5\nz=3\nL=4\nm_new=1\n")
    assert main(["grade", "--plan", plan, "--out", str(tmp_path / "o")]) == EXIT_INPUT
    assert "kappa" in capsys.readouterr().err


def test_missing_inputs_are_input_errors(tmp_path):
    assert main(["count", str(tmp_path / "nope.alist")]) == EXIT_INPUT
    assert main(["baseline", "--out", str(tmp_path)]) == EXIT_INPUT
    plan = _plan(tmp_path, "[plan]\ngamma=5\nkappa=9\n")
    assert main(["grade", "--plan", plan, "--out", str(tmp_path / "o")]) == EXIT_INPUT


def test_plan_file_sections(toy_plan):
    pf = PlanFile(toy_plan)
    part, lift = pf.mc2_configs()
    assert part.weights == {2: 100.0, 3: 10.0} and part.max_transitions == 400 and part.seed == 3
    assert lift.lift_lengths == (2, 3) and lift.max_transitions == 600
    assert pf.mc2_configs(seed=9)[0].seed == 9
    assert pf.cycle_lengths == (6,)


def test_grade_and_plot_data(toy_plan, tmp_path, capsys):
    out = tmp_path / "g"
    assert main(["grade", "--plan", toy_plan, "--out", str(out)]) == EXIT_OK
    assert "stage 0: u =" in capsys.readouterr().out
    assert main(["plot-data", str(out / "grade.json")]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "iteration,objective" and len(lines) > 2
    assert main(["plot-data", str(out / "grade.json"), "--series", "distribution"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "component,probability" and len(lines) == 4


def test_design_toy_end_to_end(toy_plan, tmp_path, capsys):
    out = tmp_path / "d"
    assert main(["design", "--plan", toy_plan, "--out", str(out)]) == EXIT_OK
    assert "Cycle-6 count" in capsys.readouterr().out
    doc = load_stage_artifact(out / "stage0.json")
    assert doc["plan"].schedule == (2,)
    H = read_alist(out / "stage0.alist")
    assert H.shape == (4 * 7 * (5 + 2), 8 * 7 * 5)
    assert tanner_cycle_count(H, 4) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["stages"][0]["counts"]["6"] == tanner_cycle_count(H, 6)


def test_design_reproducible(toy_plan, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["design", "--plan", toy_plan, "--out", str(out)]) == EXIT_OK
    names = sorted(p.name for p in a.iterdir() if p.name != "run.log")
    assert names == sorted(p.name for p in b.iterdir() if p.name != "run.log")
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_baseline_comparison(staged_design, capsys):
    _, out = staged_design
    assert main(["baseline", "--out", str(out), "--lengths", "6"]) == EXIT_OK
    assert "SF-SC stage 1" in capsys.readouterr().out
    doc = json.loads((out / "comparison.json").read_text())
    assert len(doc["stages"]) == 2
    for s in doc["stages"]:
        sf, rmc = s["sf"]["6"], s["rmc"]["6"]
        expected = round(100 * (sf - rmc) / sf, 2) if sf else 0.0
        assert s["reduction_percent"]["6"] == pytest.approx(expected)
    # the stage-1 SF code is the full-memory design itself
    ref = json.loads((out / "reference.json").read_text())
    sf1 = load_stage_artifact(out / "sf_stage1.json")["matrices"]
    assert np.array_equal(sf1.K, ref["K_star"]) and np.array_equal(sf1.T, ref["T_star"])


def test_stages_nest(staged_design):
    _, out = staged_design
    m0 = load_stage_artifact(out / "stage0.json")["matrices"]
    m1 = load_stage_artifact(out / "stage1.json")["matrices"]
    keep = m0.K >= 0
    assert np.array_equal(m1.K[keep], m0.K[keep]) and np.array_equal(m1.T[keep], m0.T[keep])
    assert np.array_equal(m1.fixed_mask, keep)


def test_step_commands(tmp_path, capsys):
    plan = _plan(tmp_path, TOY.format(gamma=5, kappa=10, m_new="3, 1"))
    out = str(tmp_path / "s")
    for d in (0, 1):
        assert main(["mc2-partition", "--plan", plan, "--out", out, "--stage", str(d)]) == EXIT_OK
        assert main(["mc2-lift", "--plan", plan, "--out", out, "--stage", str(d)]) == EXIT_OK
    trace = (tmp_path / "s" / "lift1_trace.csv").read_text().splitlines()
    assert trace[0] == "transition,C,C_opt"
    assert main(["plot-data", str(tmp_path / "s" / "partition0_trace.csv")]) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[-1].count(",") == 2
    m1 = load_stage_artifact(tmp_path / "s" / "stage1.json")["matrices"]
    assert m1.K.max() == 4 and m1.fixed_mask.any()


def test_stage_without_predecessor_rejected(toy_plan, tmp_path):
    plan = _plan(tmp_path, TOY.format(gamma=5, kappa=10, m_new="3, 1"))
    out = str(tmp_path / "x")
    assert main(["mc2-partition", "--plan", plan, "--out", out, "--stage", "1"]) == EXIT_INPUT


def test_lift_budget_exhausted(tmp_path, capsys):
    # z = 1 cannot break the cycles-4 of a dense base
    text = TOY.format(gamma=4, kappa=8, m_new="1").replace("z = 7", "z = 1")
    plan = _plan(tmp_path, text)
    out = str(tmp_path / "z")
    assert main(["mc2-partition", "--plan", plan, "--out", out]) == EXIT_OK
    assert main(["mc2-lift", "--plan", plan, "--out", out]) == EXIT_BUDGET
    assert "budget exhausted" in capsys.readouterr().err


def test_simulate_and_export(staged_design, tmp_path, monkeypatch, capsys):
    plan, out = staged_design
    alist = tmp_path / "s0.alist"
    assert main(["export-alist", str(out / "stage0.json"), "-o", str(alist)]) == EXIT_OK
    assert (read_alist(alist) != read_alist(out / "stage0.alist")).nnz == 0
    monkeypatch.setenv("RMCSC_THREADS", "2")
    sim = tmp_path / "sim"
    assert main(["simulate", "--plan", plan, "--out", str(sim), str(alist), str(out / "stage0.json")]) == EXIT_OK
    a = (sim / "fer_s0.csv").read_text()
    assert a == (sim / "fer_stage0.csv").read_text()
    rows = a.splitlines()
    assert rows[0].startswith("parameter,frames,frame_errors,fer")
    assert len(rows) == 3
    assert main(["plot-data", str(sim / "fer_s0.csv")]) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[-3] == "parameter,fer,ci_low,ci_high"


def test_bad_thread_env(toy_plan, tmp_path, monkeypatch):
    monkeypatch.setenv("RMCSC_THREADS", "many")
    assert main(["design", "--plan", toy_plan, "--out", str(tmp_path / "t")]) == EXIT_INPUT

"""Command-line front end: ``rmcsc <command> [options]``.

Plans are INI files::

    [plan]
    gamma = 7
    kappa = 23
    z = 23
    L = 12
    m_new = 6, 2, 3
    # r_new = 0.5, 0.2, 0.3     (optional; derived from a full-memory run if absent)

    [grade]
    w6 = 10
    w8 = 1

    [mc2]
    transitions = 3000
    lift_transitions = 5000
    weights = 2:100, 3:10
    lift_lengths = 2, 3
    seed = 0

    [simulate]
    channel = awgn
    grid = -1.0, -0.8, -0.6
    min_errors = 100

A work directory (``--out``) collects every artifact.  Outputs depend only on
inputs and seeds; timestamps go to ``run.log`` alone.

Exit codes: 0 success, 2 invalid input, 3 optimization budget exhausted.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import grade as gr
from . import mc2
from .cyclecalc import count_cycles_streaming, expected_cycles, tanner_cycle_count
from .protomatrix import (
    DesignError,
    DesignPlan,
    EdgeDistribution,
    StageMatrices,
    build_code,
    code_rate_and_length,
    format_rate,
    load_stage_artifact,
    read_alist,
    save_stage_artifact,
    write_alist,
)

log = logging.getLogger("rmcsc")

EXIT_OK, EXIT_INPUT, EXIT_BUDGET = 0, 2, 3
THREADS_ENV = "RMCSC_THREADS"


class BudgetExhausted(RuntimeError):
    """An optimization ran out of budget; ``report`` says what is left."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report or {}


# -- plan files ---------------------------------------------------------------------


def _floats(text):
    return [float(t) for t in str(text).replace(",", " ").split()]


def _ints(text):
    return [int(t) for t in str(text).replace(",", " ").split()]


def _weights(text) -> dict:
    out = {}
    for item in str(text).replace(",", " ").split():
        ell, _, w = item.partition(":")
        out[int(ell)] = float(w)
    return out


class PlanFile:
    """Parsed plan file: the plan plus per-module settings."""

    def __init__(self, path):
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        cp.optionxform = str
        if not cp.read(path):
            raise DesignError(f"cannot read plan file {path}")
        self.path = Path(path)
        try:
            sec = cp["plan"]
            r_new = _floats(sec["r_new"]) if sec.get("r_new", "").strip() else None
            self.plan = DesignPlan.from_schedule(sec.getint("gamma"), sec.getint("kappa"), sec.getint("z"),
                                                 sec.getint("L"), _ints(sec["m_new"]), r_new)
        except KeyError as exc:
            raise DesignError(f"plan file is missing {exc}") from None
        self.grade = self._section(cp, "grade")
        self.mc2 = self._section(cp, "mc2")
        self.simulate = self._section(cp, "simulate")
        self.design = self._section(cp, "design")

    @staticmethod
    def _section(cp, name) -> dict:
        return dict(cp[name]) if cp.has_section(name) else {}

    def grade_config(self) -> gr.GradeConfig:
        g = self.grade
        kw = {k: float(g[k]) for k in ("w6", "w8", "epsilon", "alpha") if k in g}
        if "max_iterations" in g:
            kw["max_iterations"] = int(g["max_iterations"])
        return gr.GradeConfig(**kw)

    def mc2_configs(self, seed=None) -> tuple[mc2.Mc2Config, mc2.Mc2Config]:
        """Partitioning and lifting chain settings."""
        m = self.mc2
        kw = {}
        if "b" in m:
            kw["b"] = int(m["b"])
        for k in ("norm_l1", "norm_inf", "theta0", "theta_decay"):
            if k in m:
                kw[k] = float(m[k])
        if "theta_scale" in m:
            kw["theta_scale"] = m["theta_scale"].strip()
        kw["seed"] = int(m.get("seed", 0)) if seed is None else seed
        part = mc2.Mc2Config(**kw, max_transitions=int(m.get("transitions", 20_000)),
                             weights=_weights(m["weights"]) if "weights" in m else mc2.Mc2Config().weights)
        lift = mc2.Mc2Config(**kw, max_transitions=int(m.get("lift_transitions", m.get("transitions", 20_000))),
                             lift_lengths=tuple(_ints(m["lift_lengths"])) if "lift_lengths" in m else (2, 3, 4))
        return part, lift

    @property
    def chains(self) -> int:
        return int(self.mc2.get("chains", 1))

    @property
    def cycle_lengths(self) -> tuple:
        return tuple(_ints(self.design.get("lengths", "6, 8")))


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        raise DesignError(f"{THREADS_ENV} must be an integer") from None


# -- artifacts ----------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _dump(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True, default=_jsonable) + "\n")


def _load(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise DesignError(f"missing artifact {p}")
    return json.loads(p.read_text())


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    h = logging.FileHandler(out / "run.log")
    h.setFormatter(logging.Formatter("%(asctime)s %(name)s %(message)s"))
    logging.getLogger().addHandler(h)
    return out


def _dist(obj) -> EdgeDistribution:
    return EdgeDistribution.normalized(obj["weights"], obj["offset"])


def _stage_code(doc: dict):
    m = doc["matrices"]
    plan = doc["plan"]
    return build_code(m.K, m.T, plan.z, plan.L)


def _load_matrix(path):
    """Parity-check matrix from an alist file or a stage artifact (JSON)."""
    path = Path(path)
    if path.suffix == ".json":
        return _stage_code(load_stage_artifact(path)).H
    return read_alist(path)


def _count_table(rows) -> str:
    return mc2.format_cycle_table(rows)


def _stage_counts(plan, matrices, lengths) -> dict:
    return mc2.stage_cycle_counts(plan, matrices, tuple(length // 2 for length in lengths))


# -- GRADE and the full-memory pre-design ---------------------------------------------


def _resolve_plan(pf: PlanFile, gcfg, out: Path):
    """Plan with stage masses, the reference distribution and per-stage GRADE outcomes.

    Reuses ``grade.json`` in ``out`` when present.
    """
    cached = out / "grade.json"
    if cached.exists():
        doc = _load(cached)
        plan = DesignPlan.from_dict(doc["plan"])
        return plan, _dist(doc["reference"]), doc
    ref = gr.reference_distribution(pf.plan, gcfg)
    plan = pf.plan
    if not plan.has_masses:
        plan = plan.with_masses(gr.derive_stage_masses(ref.q, plan.schedule))
    outcomes = gr.run_pipeline(plan, gcfg, reference=ref)
    doc = _grade_doc(plan, ref, outcomes)
    _dump(cached, doc)
    (out / "distributions.txt").write_text(gr.format_distribution_table(outcomes) + "\n")
    return plan, ref.q, doc


def _grade_doc(plan, ref, outcomes) -> dict:
    stages = []
    for st, res, u in outcomes:
        d = res.to_dict()
        d.update(stage=st.index, u={"offset": u.offset, "weights": u.weights.tolist()}, trace=list(res.trace))
        stages.append(d)
    return {"plan": plan.to_dict(), "reference": {"offset": ref.q.offset, "weights": ref.q.weights.tolist(),
                                                  "E6": ref.E6, "E8": ref.E8},
            "stages": stages}


def _reference_K(plan, p_star, part, out: Path, chains, threads) -> np.ndarray:
    path = out / "reference.json"
    if path.exists():
        return np.array(_load(path)["K_star"])
    res = mc2.best_of_chains(lambda s: mc2.design_reference_K_star(plan, p_star, replace(part, seed=s)),
                             [part.seed + 7919 + c for c in range(chains)], threads)
    _dump(path, {"plan": plan.to_dict(), "K_star": res.matrix, "T_star": None, "C_opt": res.C_opt,
                 "counts": {str(k): v for k, v in res.counts.items()}})
    return res.matrix


def _prev_stage(out: Path, d: int) -> StageMatrices | None:
    if d == 0:
        return None
    return load_stage_artifact(out / f"stage{d - 1}.json")["matrices"]


# -- commands -------------------------------------------------------------------------


def cmd_grade(args) -> int:
    pf = PlanFile(args.plan)
    out = _out_dir(args)
    cached = out / "grade.json"
    if cached.exists():
        cached.unlink()
    _resolve_plan(pf, pf.grade_config(), out)
    sys.stdout.write((out / "distributions.txt").read_text())
    return EXIT_OK


def cmd_design(args) -> int:
    pf = PlanFile(args.plan)
    out = _out_dir(args)
    threads = _threads(args)
    gcfg = pf.grade_config()
    part, lift = pf.mc2_configs(args.seed)
    plan, _, gdoc = _resolve_plan(pf, gcfg, out)
    lengths = pf.cycle_lengths

    def on_stage(d, matrices, report):
        g = gdoc["stages"][d]
        p = _dist(gdoc["stages"][d - 1]["u"]) if d else None
        save_stage_artifact(out / f"stage{d}.json", plan, d, matrices, p=p, q=_dist(g["q"]), u=_dist(g["u"]),
                            seed=part.seed, extra={"report": json.loads(json.dumps(report, default=_jsonable))})
        write_alist(build_code(matrices.K, matrices.T, plan.z, plan.L).H, out / f"stage{d}.alist")

    outcome = mc2.design_rmc_codes(plan, gcfg, part, lift, chains=pf.chains, threads=threads,
                                   log_progress=log.info, on_stage=on_stage)
    ref = outcome.reports[-1]
    _dump(out / "reference.json", {"plan": plan.to_dict(), "K_star": outcome.K_star, "T_star": outcome.T_star,
                                   "C_opt": ref["K_star"]["C_opt"], "report": ref})
    rows, summary = [], {"stages": []}
    for d, m in enumerate(outcome.rmc):
        counts = _stage_counts(plan, m, lengths)
        n, rate = code_rate_and_length(plan, d)
        rows.append((f"RMC-SC stage {d}", counts))
        summary["stages"].append({"stage": d, "length": n, "rate": format_rate(rate),
                                  "counts": {str(k): v for k, v in counts.items()}})
    summary["hardware_savings"] = outcome.hardware_savings()
    _dump(out / "summary.json", summary)
    table = _count_table(rows) + f"\nhardware savings: {summary['hardware_savings']:.4f}\n"
    (out / "summary.txt").write_text(table)
    sys.stdout.write(table)
    residual = {d: r["lift"]["counts"] for d, r in enumerate(outcome.reports[:-1])
                if r["lift"]["counts"].get(2, 0) > 0}
    if residual:
        raise BudgetExhausted("lifting left cycles-4", {"stages": residual})
    return EXIT_OK


def cmd_baseline(args) -> int:
    out = Path(args.out)
    ref = _load(out / "reference.json")
    if ref.get("T_star") is None:
        raise DesignError("reference.json has no full-memory lifting; run design first")
    plan = DesignPlan.from_dict(ref["plan"])
    K_star, T_star = np.array(ref["K_star"]), np.array(ref["T_star"])
    lengths = tuple(_ints(args.lengths))
    rows, doc = [], {"stages": []}
    prev = None
    for st in plan.stages:
        d = st.index
        K, T = mc2.derive_sf_baseline(K_star, T_star, plan, d)
        sf = StageMatrices(K, T, prev if prev is not None else np.zeros(K.shape, bool))
        prev = K >= 0
        save_stage_artifact(out / f"sf_stage{d}.json", plan, d, sf)
        rmc = load_stage_artifact(out / f"stage{d}.json")["matrices"]
        c_rmc, c_sf = _stage_counts(plan, rmc, lengths), _stage_counts(plan, sf, lengths)
        rows += [(f"RMC-SC stage {d}", c_rmc), (f"SF-SC stage {d}", c_sf)]
        doc["stages"].append({"stage": d, "rmc": {str(k): v for k, v in c_rmc.items()},
                              "sf": {str(k): v for k, v in c_sf.items()},
                              "reduction_percent": {str(k): mc2.reduction_percent(c_sf[k], c_rmc[k])
                                                    for k in c_rmc}})
    table = _count_table(rows) + "\n"
    for s in doc["stages"]:
        red = "  ".join(f"cycle-{k}: {v:.2f}%" for k, v in s["reduction_percent"].items())
        table += f"stage {s['stage']} reduction  {red}\n"
    _dump(out / "comparison.json", doc)
    (out / "comparison.txt").write_text(table)
    sys.stdout.write(table)
    return EXIT_OK


def cmd_mc2_partition(args) -> int:
    pf = PlanFile(args.plan)
    out = _out_dir(args)
    d = args.stage
    part, _ = pf.mc2_configs(args.seed)
    plan, p_star, gdoc = _resolve_plan(pf, pf.grade_config(), out)
    plan.stage(d)
    K_star = _reference_K(plan, p_star, part, out, pf.chains, _threads(args))
    prev = _prev_stage(out, d)
    res = mc2.partition_stage(plan, d, K_star, prev, _dist(gdoc["stages"][d]["q"]), part)
    K = res.matrix
    T = np.where(K >= 0, 0, -1) if prev is None else np.where(prev.K >= 0, prev.T, np.where(K >= 0, 0, -1))
    fixed = np.zeros(K.shape, bool) if prev is None else prev.K >= 0
    save_stage_artifact(out / f"partition{d}.json", plan, d, StageMatrices(K, T, fixed), seed=part.seed,
                        extra={"lifted": False, "C_opt": res.C_opt,
                               "counts": {str(k): v for k, v in res.counts.items()}})
    (out / f"partition{d}_trace.csv").write_text(res.trace_csv())
    print(f"stage {d} partition: C_opt = {res.C_opt:.6g} after {res.transitions} transitions")
    return EXIT_OK


def cmd_mc2_lift(args) -> int:
    pf = PlanFile(args.plan)
    out = _out_dir(args)
    d = args.stage
    _, lift = pf.mc2_configs(args.seed)
    doc = load_stage_artifact(out / f"partition{d}.json")
    plan = doc["plan"]
    prev = _prev_stage(out, d)
    res, init = mc2.lift_stage(plan, d, doc["matrices"].K, prev, lift)
    K = doc["matrices"].K
    m = StageMatrices(K, res.matrix, doc["matrices"].fixed_mask)
    counts = {str(k): v for k, v in res.counts.items()}
    save_stage_artifact(out / f"stage{d}.json", plan, d, m, seed=lift.seed,
                        extra={"C_opt": res.C_opt, "counts": counts, "init": init})
    write_alist(build_code(m.K, m.T, plan.z, plan.L).H, out / f"stage{d}.alist")
    (out / f"lift{d}_trace.csv").write_text(res.trace_csv())
    print(f"stage {d} lift: counts {counts} after {res.transitions} transitions")
    if res.counts.get(2, 0) > 0:
        raise BudgetExhausted(f"stage {d} lifting left cycles-4", {"counts": counts, "init": init})
    return EXIT_OK


def cmd_count(args) -> int:
    lengths = _ints(args.lengths)
    path = Path(args.matrix)
    report = {}
    if path.suffix == ".json":
        doc = load_stage_artifact(path)
        plan, m = doc["plan"], doc["matrices"]
        for length in lengths:
            report[length] = count_cycles_streaming(m.K, length // 2, T=m.T, z=plan.z, L=plan.L)
    else:
        H = read_alist(path)
        for length in lengths:
            report[length] = tanner_cycle_count(H, length, force=args.force)
    for length, n in report.items():
        print(f"cycles-{length}: {n}")
    if args.json:
        _dump(args.json, {str(k): v for k, v in report.items()})
    return EXIT_OK


def cmd_expect(args) -> int:
    pf = PlanFile(args.plan)
    plan = pf.plan
    if args.u:
        u = EdgeDistribution.normalized(_floats(args.u))
    else:
        gdoc = _load(args.dist)
        if "plan" in gdoc:
            plan = DesignPlan.from_dict(gdoc["plan"])
        u = _dist(gdoc["stages"][args.stage]["u"]) if "stages" in gdoc else _dist(gdoc["u"])
    if not plan.has_masses:
        ref = gr.reference_distribution(plan, pf.grade_config())
        plan = plan.with_masses(gr.derive_stage_masses(ref.q, plan.schedule))
    R = plan.stage(args.stage).r_total
    report = {}
    for ell in (2, 3, 4):
        report[2 * ell] = expected_cycles(ell, 0.0, R, None, u, (plan.gamma, plan.kappa))
        print(f"E[cycle-{2 * ell}] = {report[2 * ell]:,.1f}")
    if args.json:
        _dump(args.json, {str(k): v for k, v in report.items()})
    return EXIT_OK


def _channel_grid(pf: PlanFile):
    from .simlab import ChannelSpec

    s = pf.simulate
    kind = s.get("channel", "awgn").strip()
    if "grid" not in s:
        raise DesignError("[simulate] needs a grid")
    return [ChannelSpec(kind, v) for v in _floats(s["grid"])]


def cmd_simulate(args) -> int:
    from .simlab import fer_csv, simulate_fer

    pf = PlanFile(args.plan)
    out = _out_dir(args)
    s = pf.simulate
    grid = _channel_grid(pf)
    seed = int(s.get("seed", 0)) if args.seed is None else args.seed
    for path in args.codes:
        H = _load_matrix(path)
        pts = simulate_fer(H, grid, min_errors=int(s.get("min_errors", 100)),
                           max_frames=int(float(s.get("max_frames", 1e7))), seed=seed,
                           max_iters=int(s.get("max_iters", 50)), block=int(s.get("block", 32)),
                           workers=_threads(args))
        name = Path(path).stem
        text = fer_csv(pts)
        (out / f"fer_{name}.csv").write_text(text)
        print(f"# {name}")
        sys.stdout.write(text)
    return EXIT_OK


def cmd_plot_data(args) -> int:
    path = Path(args.input)
    lines = []
    if path.suffix == ".json":
        doc = _load(path)
        st = doc["stages"][args.stage] if "stages" in doc else doc
        if args.series == "distribution":
            u = st["u"]
            lines.append("component,probability")
            lines += [f"{u['offset'] + i},{w:.10g}" for i, w in enumerate(u["weights"])]
        else:
            lines.append("iteration,objective")
            lines += [f"{i},{v:.10g}" for i, v in enumerate(st["trace"])]
    elif path.suffix == ".csv":
        rows = [r.split(",") for r in path.read_text().strip().splitlines()]
        head = rows[0]
        if "fer" in head:
            keep = [head.index(k) for k in ("parameter", "fer", "ci_low", "ci_high")]
        else:
            keep = list(range(len(head)))
        lines = [",".join(r[k] for k in keep) for r in rows]
    else:
        raise DesignError(f"cannot plot {path}")
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_export_alist(args) -> int:
    H = _load_matrix(args.artifact)
    text = write_alist(H, args.output)
    if not args.output:
        sys.stdout.write(text)
    return EXIT_OK


# -- entry point -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rmcsc", description="Rate-memory-compatible SC LDPC code design.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help, plan=True, out=True, stage=False):
        p = sub.add_parser(name, help=help)
        if plan:
            p.add_argument("--plan", required=True, help="INI plan file")
        if out:
            p.add_argument("--out", required=True, help="work directory")
        if stage:
            p.add_argument("--stage", type=int, default=0)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None, help=f"default: ${THREADS_ENV} or 1")
        p.set_defaults(func=func)
        return p

    add("design", cmd_design, "full staged design")
    p = add("baseline", cmd_baseline, "truncated full-memory baseline and comparison", plan=False)
    p.add_argument("--lengths", default="6,8")
    add("grade", cmd_grade, "per-stage edge distributions")
    add("mc2-partition", cmd_mc2_partition, "partition one stage", stage=True)
    add("mc2-lift", cmd_mc2_lift, "lift one partitioned stage", stage=True)
    p = add("count", cmd_count, "cycle counts of a matrix", plan=False, out=False)
    p.add_argument("matrix", help="alist file or stage artifact")
    p.add_argument("--lengths", default="4,6,8")
    p.add_argument("--force", action="store_true", help="skip the size guard for brute-force counting")
    p.add_argument("--json")
    p = add("expect", cmd_expect, "expected cycle counts of a distribution", out=False, stage=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--u", help="comma-separated distribution over components 0..")
    g.add_argument("--dist", help="grade.json from the grade command")
    p.add_argument("--json")
    p = add("simulate", cmd_simulate, "FER simulation")
    p.add_argument("codes", nargs="+", help="alist files or stage artifacts")
    p = add("plot-data", cmd_plot_data, "CSV series for plotting", plan=False, out=False, stage=True)
    p.add_argument("input")
    p.add_argument("--series", choices=("objective", "distribution"), default="objective")
    p.add_argument("-o", "--output")
    p = add("export-alist", cmd_export_alist, "write a stage artifact as alist", plan=False, out=False)
    p.add_argument("artifact")
    p.add_argument("-o", "--output")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    root = logging.getLogger()
    console = logging.StreamHandler()
    console.setLevel(logging.INFO if args.verbose else logging.WARNING)
    root.addHandler(console)
    root.setLevel(logging.INFO)
    try:
        return args.func(args)
    except BudgetExhausted as exc:
        print(f"budget exhausted: {exc}", file=sys.stderr)
        print(json.dumps(exc.report, default=_jsonable, sort_keys=True), file=sys.stderr)
        return EXIT_BUDGET
    except gr.GradeError as exc:
        print(f"budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (DesignError, ValueError, KeyError, OSError, configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        for h in list(root.handlers):
            if h is console or isinstance(h, logging.FileHandler):
                root.removeHandler(h)
                h.close()


if __name__ == "__main__":
    sys.exit(main())

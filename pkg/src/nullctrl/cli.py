"""Command line entry point: ``nullctrl <command> <scenario> [options]``.

Exit status is 0 on success, 1 when the scenario fails to load or validate
and 2 when a solver reports an error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import carleman, plotting, reporting
from .coupling import kalman_matrix, kalman_rank, random_class_coefficients, unobservable_directions
from .errors import FixedPointFailure, NullCtrlError, ParseError, PowerIterationStalled, SchemaError, ValidationFailed
from .hum import class_spread, eps_sweep, solve_penalized
from .nonlinear import fixed_point_control
from .pde import ControlField
from .scenario import Scenario, load_scenario, preset_names
from .weights import check_weight_order, sigma_sequence

log = logging.getLogger("nullctrl")

COMMANDS = (
    "validate",
    "weights",
    "solve-forward",
    "control-linear",
    "sweep-eps",
    "carleman-check",
    "observability",
    "linf-check",
    "kalman",
    "control-nonlinear",
)


class Run:
    """Per-invocation context: scenario, output directory and options."""

    def __init__(self, scenario: Scenario, out: Path, args: argparse.Namespace):
        self.sc = scenario
        self.out = out
        self.args = args
        self.written: list[Path] = []

    @property
    def figures(self) -> bool:
        return not self.args.no_figures

    def meta(self) -> dict:
        return reporting.metadata(self.sc, self.args.command)

    def json(self, name: str, payload: dict) -> Path:
        p = reporting.write_json(self.out / name, payload, self.meta())
        self.written.append(p)
        return p

    def csv(self, name: str, header, rows) -> Path:
        p = reporting.write_csv(self.out / name, header, rows)
        self.written.append(p)
        return p

    def figure(self, fn, *a, name: str, **kw) -> None:
        if self.figures:
            self.written.append(fn(*a, path=self.out / name, **kw))


# ---------------------------------------------------------------------------
# commands


def cmd_validate(run: Run) -> int:
    rep = run.sc.report
    run.json("validation.json", {"ok": rep.ok, "counterexample": run.sc.counterexample, "report": rep.to_dict()})
    print(rep.summary())
    return 0 if rep.ok else 1


def _m0(run: Run) -> int:
    v = run.sc.section("linf").get("m0", "auto")
    return sigma_sequence(1).m0 if v == "auto" else int(v)


def cmd_weights(run: Run) -> int:
    fam = run.sc.weights
    order = check_weight_order(fam)
    sig = {str(N): sigma_sequence(N).__dict__ for N in (1, 2, 3)}
    run.json("weights.json", {"family": fam.to_dict(), "order": order.to_dict(), "sigma": sig})
    g = run.sc.grid
    t = g.t[1:-1]
    run.figure(plotting.plot_weights, t, fam.log_weight_bar(t, 2.0), fam.log_weight_under(t, 2.0), name="weights.png")
    run.figure(plotting.plot_profiles, g.x, {p.name: p.values for p in fam.psis}, name="psi.png", ylabel=r"$\psi$")
    worst = fam.invariants().worst
    print(f"weights: lambda={fam.lam:.6g} s={fam.s:.6g} worst margin {worst[0]}={worst[1]:.3g}")
    return 0 if fam.invariants().ok else 1


def cmd_solve_forward(run: Run) -> int:
    sc = run.sc
    traj = sc.problem().forward(sc.z0)
    traj.write_csv(run.out / "trajectory.csv", stride=run.args.stride)
    run.written.append(run.out / "trajectory.csv")
    g = sc.grid
    run.json(
        "forward.json",
        {"final_norms": [g.norm(traj.final[j]) for j in range(traj.ncomp)], "sup_norm": traj.sup_norm()},
    )
    for j in range(traj.ncomp):
        run.figure(plotting.plot_field, g.t, g.x, traj.component(j), name=f"state_{j}.png", title=f"z_{j}")
    print(f"forward: ‖z(T)‖ = {g.norm(traj.final):.6e}")
    return 0


def cmd_control_linear(run: Run) -> int:
    sc = run.sc
    ctl = sc.section("control")
    res = solve_penalized(sc.problem(), sc.z0, float(ctl["eps"]), tol=float(ctl["tol"]))
    g = sc.grid
    u: ControlField = res.u
    xs = g.x[u.lo : u.lo + u.width]
    run.csv("control.csv", ["t", "x", "u"], ((g.t[m], xs[j], u.values[m, j]) for m in range(g.Nt + 1) for j in range(u.width)))
    run.csv(
        "terminal.csv",
        ["x", "component", "value"],
        ((g.x[i], c, res.state.final[c, i]) for c in range(res.state.ncomp) for i in range(g.Nx)),
    )
    payload = {**res.row(), "gramian_residual": res.gramian_residual, "energy_history": res.energy_history}
    n_sets = int(ctl.get("class_samples", 0))
    if n_sets > 0 and not sc.counterexample:
        spread = class_spread(sc.problem(), sc.z0, sc.family, sc.coeffs.M, sc.coeffs.delta, n_sets, res.eps, sc.seed, float(ctl["tol"]))
        payload["class_spread"] = spread.to_dict()
    run.json("control.json", payload)
    run.figure(plotting.plot_field, g.t, xs, u.values, name="control.png", title="u", label="u")
    run.figure(plotting.plot_history, [-e for e in res.energy_history[1:]], name="cg_energy.png", ylabel="-J")
    print(f"control: eps={res.eps:.1e} ‖z(T)‖={res.terminal_norm:.6e} cg={res.cg_iters}")
    return 0


def cmd_sweep_eps(run: Run) -> int:
    sc = run.sc
    ctl = sc.section("control")
    sw = eps_sweep(sc.problem(), sc.z0, ctl["eps_list"], threads=run.args.threads, tol=float(ctl["tol"]))
    header = ["eps", "terminal_norm", "weighted_l2", "linf", "cg_iters"]
    rows = [[r[k] for k in header] for r in sw.rows]
    rows.append(["slope_estimate", sw.slope, "", "", ""])
    run.csv("sweep.csv", header, rows)
    run.json("sweep.json", {"slope": sw.slope, "fit_range": list(sw.fit_range), "cauchy": sw.cauchy, "rows": sw.rows})
    run.figure(
        plotting.plot_sweep,
        sw.column("eps"),
        sw.column("terminal_norm"),
        sw.column("weighted_l2"),
        sw.fit_range,
        sw.slope,
        name="sweep.png",
    )
    print(f"sweep: slope {sw.slope:.4f} over points {sw.fit_range[0]}..{sw.fit_range[1]}")
    return 0


def cmd_carleman(run: Run) -> int:
    sc = run.sc
    cfg = sc.section("carleman")
    problem = sc.problem()
    sampler = None
    if cfg.get("random_coefficients"):
        sampler = random_class_coefficients(sc.grid, sc.tree, sc.family, sc.coeffs.M, sc.coeffs.delta)
    spec = carleman.SampleSpec(modes=int(cfg["modes"]), coeffs_sampler=sampler)
    rep = carleman.empirical_constant(problem, int(cfg["n_samples"]), seed=sc.seed, spec=spec, threads=run.args.threads)
    run.csv(
        "carleman.csv",
        ["sample_id", "lhs", "rhs_obs", "rhs_src", "ratio"],
        ([s.sample_id, s.lhs, s.rhs_obs, s.rhs_src, s.ratio] for s in rep.samples),
    )
    run.json("carleman.json", rep.to_dict())
    run.figure(plotting.plot_ratios, [s.ratio for s in rep.samples if not s.skipped], name="carleman.png", ylabel="lhs / rhs")
    print(f"carleman: C_est = {rep.C_est!r} (worst sample {rep.to_dict()['worst_sample']})")
    return 0


def cmd_observability(run: Run) -> int:
    sc = run.sc
    cfg = sc.section("observability")
    try:
        res = carleman.observability_constant(sc.problem(), tol=float(cfg["tol"]), max_iter=int(cfg["max_iter"]), seed=sc.seed)
    except PowerIterationStalled as exc:
        run.json("observability.json", {"status": "stalled", "reason": str(exc), "quotients": exc.quotients})
        run.figure(plotting.plot_history, exc.quotients, name="observability.png", ylabel="quotient")
        print(f"observability: stalled: {exc}")
        return 2
    run.json(
        "observability.json",
        {"status": "converged", "constant": res.constant, "iterations": res.iterations, "quotients": res.quotients, "inner_iterations": res.inner_iterations},
    )
    run.figure(plotting.plot_history, res.quotients, name="observability.png", ylabel="quotient")
    print(f"observability: constant {res.constant:.6e} after {res.iterations} iterations")
    return 0


def cmd_linf(run: Run) -> int:
    sc = run.sc
    cfg = sc.section("linf")
    d1 = cfg.get("delta1", "auto")
    rep = carleman.linf_l2_check(
        sc.problem(),
        None if d1 == "auto" else float(d1),
        _m0(run),
        int(cfg["n_samples"]),
        seed=sc.seed,
    )
    run.csv("linf.csv", ["sample_id", "lhs", "rhs", "ratio"], ([i, a, b, r] for i, (a, b, r) in enumerate(zip(rep.lhs, rep.rhs, rep.ratios))))
    run.json("linf.json", rep.to_dict())
    print(f"linf: max ratio {rep.max_ratio!r} (m0={rep.m0}, delta1={rep.delta1:.3g})")
    return 0


def cmd_kalman(run: Run) -> int:
    A0, B = run.sc.kalman_pair()
    K = kalman_matrix(A0, B)
    rank = kalman_rank(K)
    dirs = unobservable_directions(A0, B)
    run.json(
        "kalman.json",
        {"A0": A0, "B": B, "matrix": K, "rank": rank, "size": K.shape[0], "full_rank": rank == K.shape[0], "unobservable_directions": dirs},
    )
    print(f"kalman: rank {rank} of {K.shape[0]}")
    return 0


def cmd_control_nonlinear(run: Run) -> int:
    sc = run.sc
    if sc.nonlinear is None:
        raise SchemaError(f"scenario '{sc.name}' has no 'nonlinear' section")
    nl = sc.section("nonlinear")
    y0 = sc.nonlinear_y0()
    status = 0
    try:
        res = fixed_point_control(
            sc.nonlinear,
            sc.family,
            sc.problem(),
            y0,
            float(nl["beta0"]),
            float(nl["eps"]),
            float(nl["tol"]),
            int(nl["max_iters"]),
            ybar=sc.ybar,
        )
        trace = res.trace
        extra = {"terminal_deviation": res.terminal_deviation, "u_linf": res.control.linf}
    except FixedPointFailure as exc:
        trace = exc.trace
        extra = {"error": str(exc)}
        status = 2
    trace.write_csv(run.out / "fixed_point.csv")
    run.written.append(run.out / "fixed_point.csv")
    run.json("nonlinear.json", {**trace.to_dict(), "amplitude": nl["amplitude"], **extra})
    diffs = [r.diff_norm for r in trace.rows if np.isfinite(r.diff_norm) and r.diff_norm > 0]
    if diffs:
        run.figure(plotting.plot_history, diffs, name="fixed_point.png", ylabel=r"$\|z^{(k+1)} - z^{(k)}\|_\infty$")
    print(f"control-nonlinear: {trace.status} after {trace.iterations} linear solves")
    return status


HANDLERS = {
    "validate": cmd_validate,
    "weights": cmd_weights,
    "solve-forward": cmd_solve_forward,
    "control-linear": cmd_control_linear,
    "sweep-eps": cmd_sweep_eps,
    "carleman-check": cmd_carleman,
    "observability": cmd_observability,
    "linf-check": cmd_linf,
    "kalman": cmd_kalman,
    "control-nonlinear": cmd_control_nonlinear,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nullctrl", description="Null controllability experiments for coupled parabolic systems.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("preset", nargs="?", help=f"preset name ({', '.join(preset_names())}) or scenario path")
    ap.add_argument("--scenario", help="scenario JSON path (alternative to the positional argument)")
    ap.add_argument("--out", default="nullctrl-out", help="output directory (default: %(default)s)")
    ap.add_argument("--seed", type=int, default=None, help="base seed overriding the scenario's")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for sweeps and sampling")
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE", help="dotted-path scenario override, repeatable")
    ap.add_argument("--stride", type=int, default=1, help="time-level stride for trajectory.csv")
    ap.add_argument("--no-figures", action="store_true", help="skip the PNG figures")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    source = args.scenario or args.preset
    if source is None:
        print("error: give a preset name or --scenario PATH", file=sys.stderr)
        return 1
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # validate reports failures instead of refusing to build
    enforce = args.command not in ("validate", "kalman")
    try:
        sc = load_scenario(source, args.override, seed=args.seed, enforce=enforce)
    except ValidationFailed as exc:
        if exc.report is not None:
            reporting.write_json(out / "validation.json", {"ok": False, "error": str(exc), "report": exc.report.to_dict()})
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    run = Run(sc, out, args)
    try:
        return HANDLERS[args.command](run)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NullCtrlError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

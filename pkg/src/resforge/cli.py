"""``resforge`` command-line entry point."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import forcespace as fs
from . import geometry as geo
from . import svg
from . import transcription as tr
from .model import ModelError, Rectangle, RobotModel, link_points, load_model_file

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _fmt(x) -> str:
    return f"{float(x):.10g}"


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _load_model(path) -> RobotModel:
    try:
        return load_model_file(path)
    except ModelError as exc:
        raise InputError(str(exc)) from None


# --------------------------------------------------------------------------
# optimize


def _surface_outline(rect: Rectangle, m: int) -> np.ndarray:
    c, u, v = rect.corner, rect.edge_u, rect.edge_v
    pts = np.array([c, c + u, c + u + v, c + v, c])
    return pts[:, :m]


def _trajectory_svg(problem: tr.NlpProblem, Q) -> str:
    model = problem.model
    frames = [link_points(model, q)[:, : model.m] for q in Q]
    return svg.stick_figures(frames, f"objective {problem.objective}",
                             surface=_surface_outline(problem.scenario.surface, model.m))


def _dump_polytopes(problem: tr.NlpProblem, Q, T, out: Path) -> None:
    folder = out / "polytopes"
    folder.mkdir(exist_ok=True)
    mode = problem.scenario.residual_mode
    for k, q in enumerate(Q):
        tau = T[min(k, len(T) - 1)]
        path = folder / f"mesh_{k + 1:03d}.txt"
        try:
            P = fs.residual_force_polytope(problem.model, q, tau, mode)
        except fs.InfeasibleNominal as exc:
            path.write_text(f"# {exc}\n")
            continue
        path.write_text(f"# residual force polytope, mesh point {k + 1}\n" + geo.dump_polytope(P))


def cmd_optimize(args) -> int:
    try:
        scenario = tr.load_scenario(args.scenario)
        model = scenario.load_model()
        problem, sol = tr.solve_scenario(scenario, model, rng_seed=args.seed)
    except ModelError as exc:
        raise InputError(str(exc)) from None
    except (tr.ScenarioError, tr.IKFailure) as exc:
        raise InputError(str(exc)) from None
    out = _out_dir(args.output)
    doc = tr.solution_to_dict(problem, sol)
    (out / "solution.json").write_text(json.dumps(doc, indent=1) + "\n")
    _write_csv(out / "trace.csv", ["iteration", "objective", "feasibility"],
               [[i, _fmt(o), _fmt(f)] for i, (o, f) in
                enumerate(zip(sol.objective_trace, sol.feasibility_trace))])
    Q, _, T = problem.layout.unpack(sol.xi)
    (out / "trajectory.svg").write_text(_trajectory_svg(problem, Q))
    if args.dump_polytopes:
        _dump_polytopes(problem, Q, T, out)
    status = "converged" if sol.converged else "did not converge"
    print(f"objective {problem.objective}: {status} after {len(sol.objective_trace) - 1} iterations, "
          f"objective {sol.objective_trace[-1]:.6g}, feasibility {sol.feasibility_trace[-1]:.3g}")
    return EXIT_OK if sol.converged else EXIT_NOT_CONVERGED


# --------------------------------------------------------------------------
# evaluate


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise InputError(f"cannot parse vector {text!r}") from None


def _labels(paths) -> list[str]:
    stems = [Path(p).stem for p in paths]
    if len(set(stems)) == len(stems):
        return stems
    return [str(p) for p in paths]


def cmd_evaluate(args) -> int:
    model = _load_model(args.model)
    if not args.trajectories:
        raise InputError("no trajectory files given")
    try:
        trajs = [ev.load_trajectory(p) for p in args.trajectories]
    except OSError as exc:
        raise InputError(f"cannot read trajectory {exc.filename}: {exc.strerror}") from None
    except ev.TrajectoryError as exc:
        raise InputError(str(exc)) from None
    for t in trajs:
        if t.q.shape[1] != model.n:
            raise InputError(f"trajectory has {t.q.shape[1]} joints, model has {model.n}")
    labels = _labels(args.trajectories)
    mode = fs.ResidualMode(args.mode)
    direction = None
    if args.impulse:
        direction = _parse_vector(args.direction)
        if direction.shape != (model.m,):
            raise InputError(f"direction needs {model.m} components")
        norm = np.linalg.norm(direction)
        if norm == 0:
            raise InputError("direction must be nonzero")
        direction = direction / norm
    try:
        comp = ev.compare_report(model, list(zip(labels, trajs)), mode)
    except ev.TrajectoryError as exc:
        raise InputError(str(exc)) from None
    out = _out_dir(args.output)
    ev.write_comparison_csv(out / "robustness.csv", comp)
    (out / "robustness.svg").write_text(svg.line_chart(
        comp.mesh_times, {s: comp.radii[s] for s in comp.labels},
        "maximum admissible force magnitude", "t [s]", "radius [N]"))
    for s in comp.ranking:
        print(f"{s}: mean radius {comp.mean(s):.6g}, min radius {comp.minimum(s):.6g}")
    if not args.impulse:
        return EXIT_OK

    reports = [ev.impulse_torque_test(model, t, direction, args.f_peak, mode) for t in trajs]
    n = model.n
    header = (["label", "k", "t", "radius"] + [f"tau_norm_{i + 1}" for i in range(n)]
              + [f"nominal_{i + 1}" for i in range(n)] + ["saturated_any"])
    rows = []
    for label, rep in zip(labels, reports):
        for k, t in enumerate(rep.mesh_times):
            rows.append([label, k + 1, _fmt(t), _fmt(rep.radii[k])]
                        + [_fmt(x) for x in rep.normalized[k]] + [_fmt(x) for x in rep.nominal[k]]
                        + [int(rep.saturated[k].any())])
    _write_csv(out / "impulse.csv", header, rows)
    panel_rows = [{s: r.normalized[:, i] for s, r in zip(labels, reports)} for i in range(n)]
    dashed = [{s: r.nominal[:, i] for s, r in zip(labels, reports)} for i in range(n)]
    (out / "impulse.svg").write_text(svg.panels(
        reports[0].mesh_times, panel_rows, [f"joint {i + 1} normalized torque" for i in range(n)],
        "t [s]", hlines=(-1.0, 1.0), dashed=dashed))
    for label, rep in zip(labels, reports):
        sat = "saturates" if rep.any_saturated else "stays within limits"
        print(f"{label}: impulse f_peak {args.f_peak:g} peak |tau|/tau_lim {rep.peak_normalized:.4g}, {sat}")
    return EXIT_OK


# --------------------------------------------------------------------------
# bench


def _bench_problem(model: RobotModel, objective: str, segments: int = 10) -> tr.NlpProblem:
    """A problem shell for timing objective evaluations; constraints are unused."""
    m = model.m
    axis = np.zeros(m)
    axis[1] = 1.0
    corner = np.zeros(3)
    rect = Rectangle(corner, np.array([1.0, 0, 0]), np.array([0, 0, 1.0]) if m == 2 else np.array([0, 1.0, 0]))
    sc = tr.Scenario(model_path="", p_I=np.zeros(m), p_F=np.ones(m), surface=rect, segments=segments,
                     objective=objective, cone_axes=axis, cone_half_aperture=np.deg2rad(30))
    layout = tr.Layout(model.n, segments)
    lb = np.zeros(layout.size)
    ub = np.zeros(layout.size)
    for k in range(layout.M):
        lb[layout.q(k)], ub[layout.q(k)] = model.q_lb, model.q_ub
        lb[layout.v(k)], ub[layout.v(k)] = model.v_lb, model.v_ub
        if k < segments:
            lb[layout.tau(k)], ub[layout.tau(k)] = -model.tau_lim, model.tau_lim
    return tr.NlpProblem(sc, model, layout, 1.0 / segments, [], objective, lb, ub, sc.cones(m))


def _random_state(model: RobotModel, rng):
    lo = np.maximum(model.q_lb, -np.pi)
    hi = np.minimum(model.q_ub, np.pi)
    return rng.uniform(lo, hi), rng.uniform(-0.5, 0.5, model.n) * model.tau_lim


def _random_xi(model: RobotModel, lay: tr.Layout, rng) -> np.ndarray:
    xi = np.zeros(lay.size)
    for k in range(lay.M):
        q, tau = _random_state(model, rng)
        xi[lay.q(k)] = q
        if k < lay.N:
            xi[lay.tau(k)] = tau
    return xi


def _timed(fn) -> float:
    t = time.perf_counter_ns()
    fn()
    return (time.perf_counter_ns() - t) / 1e3


def _warm(fn):
    """Run once untimed so first-call costs (imports, caches) stay out of the table."""
    fn()


def bench_rows(model: RobotModel, samples: int, seed: int = 0) -> list[tuple[str, float, float, int]]:
    """Per-call timings. All random states are drawn before any timing starts,
    so each operation runs back to back as it would inside a solver loop."""
    rng = np.random.default_rng(seed)
    cone = geo.Cone(np.zeros(model.m), np.eye(model.m)[1], np.deg2rad(30))
    C = geo.make_cone(cone)
    origin = np.zeros(model.m)
    states = [_random_state(model, rng) for _ in range(samples)]
    residual = [fs.residual_force_polytope(model, q, tau) for q, tau in states]
    clipped = [geo.intersect(P, C) for P in residual]
    kernel = {
        "force_polytope": [lambda q=q: fs.force_polytope(model, q) for q, _ in states],
        "residual_force_polytope": [lambda q=q, t=t: fs.residual_force_polytope(model, q, t) for q, t in states],
        "inscribed_ball": [lambda P=P: geo.inscribed_radius_at(P, origin) for P in residual],
        "intersection": [lambda P=P: geo.intersect(P, C) for P in residual],
        "volume": [lambda I=I: geo.volume(I) for I in clipped],
    }
    for obj in tr.OBJECTIVES:
        problem = _bench_problem(model, obj)
        xis = [_random_xi(model, problem.layout, rng) for _ in range(samples)]
        kernel[f"g_{obj}"] = [lambda p=problem, x=x: tr.objective_value(p, x) for x in xis]
    rows = []
    for name, calls in kernel.items():
        _warm(calls[0])
        times = [_timed(fn) for fn in calls]
        rows.append((name, float(np.mean(times)), float(np.std(times)), len(times)))
    return rows


def cmd_bench(args) -> int:
    if args.samples < 1:
        raise InputError("--samples must be at least 1")
    model = _load_model(args.model)
    out = _out_dir(args.output)
    rows = bench_rows(model, args.samples, args.seed)
    _write_csv(out / "bench.csv", ["operation", "mean_us", "std_us", "samples"],
               [[name, f"{mu:.3f}", f"{sd:.3f}", n] for name, mu, sd, n in rows])
    width = max(len(r[0]) for r in rows)
    for name, mu, sd, _ in rows:
        print(f"{name:<{width}}  {mu:12.1f} us  +- {sd:10.1f}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="resforge", description="Residual force polytope trajectory tools.")
    sub = p.add_subparsers(dest="command", required=True)

    o = sub.add_parser("optimize", help="solve a trajectory scenario")
    o.add_argument("scenario")
    o.add_argument("-o", "--output", required=True)
    o.add_argument("--dump-polytopes", action="store_true", help="write residual polytopes per mesh point")
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=cmd_optimize)

    e = sub.add_parser("evaluate", help="robustness analysis of solved trajectories")
    e.add_argument("model")
    e.add_argument("trajectories", nargs="*")
    e.add_argument("-o", "--output", required=True)
    e.add_argument("--impulse", action="store_true")
    e.add_argument("--direction", default="0,1")
    e.add_argument("--f-peak", type=float, default=350.0)
    e.add_argument("--mode", choices=[m.value for m in fs.ResidualMode],
                   default=fs.ResidualMode.SYMMETRIC_SHRINK.value)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("bench", help="time the geometry kernel and objectives")
    b.add_argument("model")
    b.add_argument("--samples", type=int, default=10)
    b.add_argument("-o", "--output", required=True)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except InputError as exc:
        print(f"resforge: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

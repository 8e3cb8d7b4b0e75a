"""Direct-transcription trajectory optimization with polytope-based objectives.

The decision vector stacks ``[q_k, v_k, tau_k]`` for k = 1..N followed by
``[q_M, v_M]``; dynamics are enforced by explicit-Euler defect constraints.
"""

from __future__ import annotations

import json
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from . import forcespace as fs
from . import geometry as geo
from .model import (
    Rectangle,
    RobotModel,
    attach_payload,
    distance_to_rectangle,
    forward_dynamics,
    forward_kinematics,
    inverse_dynamics,
    jacobian,
    load_model_file,
    mass_matrix,
)

OBJECTIVES = "ABCDEF"
MAXIMIZE = set("BCDEF")
PENALTY = 1e9
RESTARTS = 3


class ScenarioError(ValueError):
    pass


class IKFailure(RuntimeError):
    pass


@dataclass
class Scenario:
    model_path: str
    p_I: np.ndarray
    p_F: np.ndarray
    surface: Rectangle
    duration: float = 1.0
    segments: int = 10
    objective: str = "A"
    cone_axes: np.ndarray | None = None  # (M, m) or (m,)
    cone_half_aperture: float | None = None  # radians
    cone_facets: int = 8
    payload_mass: float = 0.0
    residual_mode: fs.ResidualMode = fs.ResidualMode.SYMMETRIC_SHRINK
    max_iterations: int = 1000
    feasibility_tol: float = 1e-3
    warm_start: str = "auto"  # "auto", "none", or an objective letter
    base_dir: Path | None = None

    @property
    def mesh_points(self) -> int:
        return self.segments + 1

    def load_model(self) -> RobotModel:
        path = Path(self.model_path)
        if self.base_dir is not None and not path.is_absolute() and (self.base_dir / path).exists():
            path = self.base_dir / path
        return attach_payload(load_model_file(path), self.payload_mass)

    def cones(self, m: int) -> list[geo.Cone] | None:
        if self.cone_axes is None:
            return None
        axes = np.atleast_2d(np.asarray(self.cone_axes, dtype=float))
        if len(axes) == 1:
            axes = np.repeat(axes, self.mesh_points, axis=0)
        if axes.shape != (self.mesh_points, m):
            raise ScenarioError(f"cone axes must be one {m}-vector or one per mesh point")
        axes = axes / np.linalg.norm(axes, axis=1)[:, None]
        return [geo.Cone(np.zeros(m), a, self.cone_half_aperture, self.cone_facets) for a in axes]


def scenario_from_dict(doc: dict, base_dir=None) -> Scenario:
    try:
        surface = doc["surface"]
        rect = Rectangle(surface["corner"], surface["edge_u"], surface["edge_v"])
        cone = doc.get("cone")
        solver = doc.get("solver", {})
        return Scenario(
            model_path=doc["model"],
            p_I=np.asarray(doc["p_I"], dtype=float),
            p_F=np.asarray(doc["p_F"], dtype=float),
            surface=rect,
            duration=float(doc.get("duration", 1.0)),
            segments=int(doc.get("segments", 10)),
            objective=str(doc.get("objective", "A")).upper(),
            cone_axes=None if cone is None else np.asarray(cone["axis"], dtype=float),
            cone_half_aperture=None if cone is None else np.deg2rad(float(cone["half_aperture_deg"])),
            cone_facets=8 if cone is None else int(cone.get("facets", 8)),
            payload_mass=float(doc.get("payload_mass", 0.0)),
            residual_mode=fs.ResidualMode(doc.get("residual_mode", "symmetric_shrink")),
            max_iterations=int(solver.get("max_iterations", 1000)),
            feasibility_tol=float(solver.get("feasibility_tol", 1e-3)),
            warm_start=str(solver.get("warm_start", "auto")),
            base_dir=None if base_dir is None else Path(base_dir),
        )
    except KeyError as exc:
        raise ScenarioError(f"scenario is missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid scenario: {exc}") from None


def builtin_scenarios() -> list[str]:
    data = resources.files("resforge") / "data"
    return sorted(p.name[:-5] for p in data.iterdir() if p.name.startswith("scenario") and p.name.endswith(".json"))


def load_scenario(path) -> Scenario:
    """Load a scenario file, or a shipped one by name such as ``scenario_planar3_E``."""
    path = Path(path)
    if not path.exists() and path.parent == Path(".") and path.stem in builtin_scenarios():
        return scenario_from_dict(json.loads((resources.files("resforge") / "data" / f"{path.stem}.json").read_text()))
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario parse error at line {exc.lineno}: {exc.msg}") from None
    return scenario_from_dict(doc, base_dir=path.parent)


# --------------------------------------------------------------------------
# decision vector


@dataclass(frozen=True)
class Layout:
    n: int
    N: int

    @property
    def M(self) -> int:
        return self.N + 1

    @property
    def size(self) -> int:
        return self.M * 2 * self.n + self.N * self.n

    def _base(self, k):
        if not 0 <= k < self.M:
            raise IndexError(f"mesh index {k} out of range")
        return k * 3 * self.n

    def q(self, k) -> slice:
        b = self._base(k)
        return slice(b, b + self.n)

    def v(self, k) -> slice:
        b = self._base(k) + self.n
        return slice(b, b + self.n)

    def tau(self, k) -> slice:
        if k >= self.N:
            raise IndexError("no torque at the final mesh point")
        b = self._base(k) + 2 * self.n
        return slice(b, b + self.n)

    @cached_property
    def q_index(self) -> np.ndarray:
        """(M, n) positions of every q_k in the decision vector."""
        idx = 3 * self.n * np.arange(self.M)[:, None] + np.arange(self.n)
        idx.flags.writeable = False
        return idx

    @cached_property
    def tau_index(self) -> np.ndarray:
        idx = 3 * self.n * np.arange(self.N)[:, None] + 2 * self.n + np.arange(self.n)
        idx.flags.writeable = False
        return idx

    def unpack(self, xi):
        xi = np.asarray(xi)
        Q = np.array([xi[self.q(k)] for k in range(self.M)])
        V = np.array([xi[self.v(k)] for k in range(self.M)])
        T = np.array([xi[self.tau(k)] for k in range(self.N)])
        return Q, V, T

    def pack(self, Q, V, T) -> np.ndarray:
        xi = np.zeros(self.size)
        for k in range(self.M):
            xi[self.q(k)] = Q[k]
            xi[self.v(k)] = V[k]
            if k < self.N:
                xi[self.tau(k)] = T[k]
        return xi


@dataclass(frozen=True)
class ConstraintBlock:
    kind: str  # defect | fk_start | fk_end | surface | v_start | v_end
    k: int
    dim: int


@dataclass
class NlpProblem:
    scenario: Scenario
    model: RobotModel
    layout: Layout
    h: float
    blocks: list[ConstraintBlock]
    objective: str
    lb: np.ndarray
    ub: np.ndarray
    cones: list[geo.Cone] | None = None
    feasibility_tol: float = 1e-3

    @property
    def n_constraints(self) -> int:
        return sum(b.dim for b in self.blocks)


def build_problem(scenario: Scenario, model: RobotModel | None = None) -> NlpProblem:
    """Validate a scenario and register every constraint block of the NLP."""
    if scenario.objective not in OBJECTIVES:
        raise ScenarioError(f"objective must be one of {', '.join(OBJECTIVES)}")
    if scenario.segments < 2:
        raise ScenarioError("need at least 2 segments")
    if scenario.duration <= 0:
        raise ScenarioError("duration must be positive")
    warm_start_objective(scenario)
    if scenario.objective == "F" and (scenario.cone_axes is None or scenario.cone_half_aperture is None):
        raise ScenarioError("objective F needs a cone")
    model = model or scenario.load_model()
    m = model.m
    for name in ("p_I", "p_F"):
        p = getattr(scenario, name)
        if p.shape != (m,):
            raise ScenarioError(f"{name} must have {m} components")
        if distance_to_rectangle(scenario.surface, p) > 1e-6:
            raise ScenarioError(f"{name} does not lie on the surface")
    if np.allclose(scenario.p_I, scenario.p_F):
        raise ScenarioError("p_I and p_F must differ")

    n, N = model.n, scenario.segments
    layout = Layout(n, N)
    blocks = [ConstraintBlock("defect", k, 2 * n) for k in range(N)]
    blocks += [ConstraintBlock("fk_start", 0, m), ConstraintBlock("fk_end", N, m)]
    blocks += [ConstraintBlock("surface", k, 1) for k in range(N + 1)]
    blocks += [ConstraintBlock("v_start", 0, n), ConstraintBlock("v_end", N, n)]

    lb = np.zeros(layout.size)
    ub = np.zeros(layout.size)
    for k in range(layout.M):
        lb[layout.q(k)], ub[layout.q(k)] = model.q_lb, model.q_ub
        lb[layout.v(k)], ub[layout.v(k)] = model.v_lb, model.v_ub
        if k < N:
            lb[layout.tau(k)], ub[layout.tau(k)] = -model.tau_lim, model.tau_lim

    return NlpProblem(
        scenario=scenario, model=model, layout=layout, h=scenario.duration / N,
        blocks=blocks, objective=scenario.objective, lb=lb, ub=ub,
        cones=scenario.cones(m), feasibility_tol=scenario.feasibility_tol,
    )


# --------------------------------------------------------------------------
# constraints


def _point3(p):
    return np.pad(np.asarray(p, dtype=float), (0, 3 - len(p)))


def constraint_residuals(problem: NlpProblem, xi) -> np.ndarray:
    """All equality residuals: defects, endpoint FK, surface distance, endpoint velocities."""
    model, lay, h = problem.model, problem.layout, problem.h
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (lay.size,):
        raise ValueError(f"decision vector must have length {lay.size}")
    Q, V, T = lay.unpack(xi)
    sc = problem.scenario
    out = []
    for k in range(lay.N):
        acc = forward_dynamics(model, Q[k], V[k], T[k])
        out.append(Q[k + 1] - (Q[k] + h * V[k]))
        out.append(V[k + 1] - (V[k] + h * acc))
    out.append(forward_kinematics(model, Q[0]) - sc.p_I)
    out.append(forward_kinematics(model, Q[-1]) - sc.p_F)
    out.append([distance_to_rectangle(sc.surface, forward_kinematics(model, q)) for q in Q])
    out.append(V[0])
    out.append(V[-1])
    return np.concatenate([np.atleast_1d(o) for o in out])


def feasibility_error(problem: NlpProblem, xi) -> float:
    """Max absolute equality residual plus any bound violation."""
    xi = np.asarray(xi, dtype=float)
    bound = max(0.0, np.max(problem.lb - xi), np.max(xi - problem.ub))
    return float(max(np.abs(constraint_residuals(problem, xi)).max(), bound))


def dynamics_derivatives(model: RobotModel, q, v, tau):
    """Forward-dynamics acceleration and its partials with respect to q, v and tau.

    Differentiates inverse dynamics by complex step: with a* = FD(q, v, tau),
    d a*/dx = -M^-1 d ID(q, v, a*)/dx, and d a*/d tau = M^-1.
    """
    n = model.n
    Minv = np.linalg.inv(mass_matrix(model, q))
    acc = forward_dynamics(model, q, v, tau)
    step = 1e-30
    dq = np.empty((n, n))
    dv = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n, dtype=complex)
        e[j] = 1j * step
        dq[:, j] = inverse_dynamics(model, q + e, v, acc).imag / step
        dv[:, j] = inverse_dynamics(model, q, v + e, acc).imag / step
    return acc, -Minv @ dq, -Minv @ dv, Minv


def constraint_jacobian(problem: NlpProblem, xi) -> np.ndarray:
    """Analytic Jacobian of :func:`constraint_residuals`.

    The surface rows differentiate the unsigned distance; where it is zero
    (on the rectangle) the zero subgradient is returned.
    """
    model, lay, h = problem.model, problem.layout, problem.h
    xi = np.asarray(xi, dtype=float)
    Q, V, T = lay.unpack(xi)
    n, m = model.n, model.m
    rect = problem.scenario.surface
    J = np.zeros((problem.n_constraints, lay.size))
    eye = np.eye(n)
    row = 0
    for k in range(lay.N):
        _, aq, av, at = dynamics_derivatives(model, Q[k], V[k], T[k])
        J[row:row + n, lay.q(k + 1)] = eye
        J[row:row + n, lay.q(k)] = -eye
        J[row:row + n, lay.v(k)] = -h * eye
        r2 = row + n
        J[r2:r2 + n, lay.v(k + 1)] = eye
        J[r2:r2 + n, lay.q(k)] = -h * aq
        J[r2:r2 + n, lay.v(k)] = -eye - h * av
        J[r2:r2 + n, lay.tau(k)] = -h * at
        row += 2 * n
    J[row:row + m, lay.q(0)] = jacobian(model, Q[0])
    row += m
    J[row:row + m, lay.q(lay.N)] = jacobian(model, Q[-1])
    row += m
    for k, q in enumerate(Q):
        p = _point3(forward_kinematics(model, q))
        d = p - rect.corner
        s = np.clip(d @ rect.edge_u / (rect.edge_u @ rect.edge_u), 0.0, 1.0)
        t = np.clip(d @ rect.edge_v / (rect.edge_v @ rect.edge_v), 0.0, 1.0)
        gap = p - (rect.corner + s * rect.edge_u + t * rect.edge_v)
        dist = np.linalg.norm(gap)
        if dist > 0:
            J[row, lay.q(k)] = (gap[:m] / dist) @ jacobian(model, q)
        row += 1
    J[row:row + n, lay.v(0)] = eye
    row += n
    J[row:row + n, lay.v(lay.N)] = eye
    return J


class _SmoothConstraints:
    """Constraint functions in the form handed to the solver.

    The surface condition dist(R, p) = 0 is not differentiable where it holds,
    so the solver sees the equivalent pair: signed distance to the plane = 0
    and the in-rectangle box as inequalities. The plane rows at the two end
    points duplicate the endpoint FK rows (p_I, p_F lie on the surface) and are
    left out to keep the equality Jacobian full rank. So is the row at mesh
    point 1: the zero start velocity and the Euler position update force
    q_1 = q_0. Defect rows are divided
    by h (finite-difference form) so their scale does not shrink with the step.
    """

    def __init__(self, problem: NlpProblem):
        self.p = problem
        rect = problem.scenario.surface
        self.normal = rect.normal
        m = problem.model.m
        edges = []
        for e in (rect.edge_u, rect.edge_v):
            if np.linalg.norm(e[:m]) > 1e-12:
                edges.append(e)
        self.edges = edges
        self.n_eq = problem.n_constraints - 2 - min(1, problem.layout.N - 1)
        self.n_ineq = 2 * len(edges) * problem.layout.M

    def _parts(self, xi):
        p = self.p
        lay, model = p.layout, p.model
        Q, V, T = lay.unpack(xi)
        return lay, model, Q, V, T

    def eq(self, xi):
        p = self.p
        lay, model, Q, V, T = self._parts(xi)
        sc = p.scenario
        out = []
        for k in range(lay.N):
            acc = forward_dynamics(model, Q[k], V[k], T[k])
            out.append((Q[k + 1] - Q[k]) / p.h - V[k])
            out.append((V[k + 1] - V[k]) / p.h - acc)
        out.append(forward_kinematics(model, Q[0]) - sc.p_I)
        out.append(forward_kinematics(model, Q[-1]) - sc.p_F)
        corner = sc.surface.corner
        out.append([self.normal @ (_point3(forward_kinematics(model, q)) - corner) for q in Q[2:-1]])
        out.append(V[0])
        out.append(V[-1])
        return np.concatenate([np.atleast_1d(o) for o in out])

    def eq_jac(self, xi):
        p = self.p
        lay, model, Q, V, T = self._parts(xi)
        n, m, h = model.n, model.m, p.h
        J = np.zeros((self.n_eq, lay.size))
        row = 0
        eye = np.eye(n)
        for k in range(lay.N):
            _, aq, av, at = dynamics_derivatives(model, Q[k], V[k], T[k])
            J[row:row + n, lay.q(k + 1)] = eye / h
            J[row:row + n, lay.q(k)] = -eye / h
            J[row:row + n, lay.v(k)] = -eye
            r2 = row + n
            J[r2:r2 + n, lay.v(k + 1)] = eye / h
            J[r2:r2 + n, lay.q(k)] = -aq
            J[r2:r2 + n, lay.v(k)] = -eye / h - av
            J[r2:r2 + n, lay.tau(k)] = -at
            row += 2 * n
        J[row:row + m, lay.q(0)] = jacobian(model, Q[0])
        row += m
        J[row:row + m, lay.q(lay.N)] = jacobian(model, Q[-1])
        row += m
        for k in range(2, lay.N):
            J[row, lay.q(k)] = self.normal[:m] @ jacobian(model, Q[k])
            row += 1
        J[row:row + n, lay.v(0)] = eye
        row += n
        J[row:row + n, lay.v(lay.N)] = eye
        return J

    def ineq(self, xi):
        lay, model, Q, _, _ = self._parts(xi)
        corner = self.p.scenario.surface.corner
        out = []
        for q in Q:
            d = _point3(forward_kinematics(model, q)) - corner
            for e in self.edges:
                s = d @ e / (e @ e)
                out += [s, 1.0 - s]
        return np.array(out)

    def ineq_jac(self, xi):
        lay, model, Q, _, _ = self._parts(xi)
        m = model.m
        J = np.zeros((self.n_ineq, lay.size))
        row = 0
        for k, q in enumerate(Q):
            Jk = jacobian(model, q)
            for e in self.edges:
                g = (e[:m] / (e @ e)) @ Jk
                J[row, lay.q(k)] = g
                J[row + 1, lay.q(k)] = -g
                row += 2
        return J


# --------------------------------------------------------------------------
# objectives


def _terms(problem: NlpProblem):
    """Per-mesh-point objective terms as (mesh index for q, mesh index for tau)."""
    lay = problem.layout
    obj = problem.objective
    if obj in "AB":
        return [(None, k) for k in range(lay.N)]
    if obj in "CD":
        return [(k, None) for k in range(lay.M)]
    # the final state has no torque of its own; reuse tau_N
    return [(k, min(k, lay.N - 1)) for k in range(lay.M)]


def _term_value(problem: NlpProblem, k_q, q, tau) -> float:
    """Minimization-sense value of one objective term."""
    model, obj = problem.model, problem.objective
    mode = problem.scenario.residual_mode
    if obj == "A":
        return float(tau @ tau)
    if obj == "B":
        d = model.tau_lim - tau
        return -float(d @ d)
    if obj == "C":
        return -fs.scaled_manipulability(model, q)
    try:
        if obj == "D":
            return -fs.metric_ball(model, q)
        if obj == "E":
            return -fs.metric_ball(model, q, tau, mode)
        return -fs.metric_cone_volume(model, q, tau, problem.cones[k_q], mode)
    except fs.InfeasibleNominal:
        return PENALTY


def thread_count() -> int:
    """Worker cap for per-mesh-point terms from RESFORGE_THREADS (0 = auto, unset = 1)."""
    raw = os.environ.get("RESFORGE_THREADS", "1").strip() or "1"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"RESFORGE_THREADS must be an integer, got {raw!r}") from None
    return (os.cpu_count() or 1) if n <= 0 else n


def _map_terms(fn, terms) -> list:
    """Evaluate ``fn`` per term, possibly concurrently; results stay in mesh order."""
    workers = min(thread_count(), len(terms))
    if workers <= 1:
        return [fn(t) for t in terms]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, terms))


def _term_args(problem, xi, term):
    lay = problem.layout
    k_q, k_t = term
    q = xi[lay.q(k_q)] if k_q is not None else None
    tau = xi[lay.tau(k_t)] if k_t is not None else None
    return q, tau


def objective_value(problem: NlpProblem, xi) -> float:
    """Objective in minimization sense (maximization objectives are negated)."""
    xi = np.asarray(xi, dtype=float)
    obj, lay = problem.objective, problem.layout
    # the smooth objectives are evaluated over all mesh points at once
    if obj in "AB":
        T = xi[lay.tau_index]
        if obj == "A":
            return float(np.sum(T * T))
        d = problem.model.tau_lim - T
        return -float(np.sum(d * d))
    if obj == "C":
        return -float(np.sum(fs.scaled_manipulability_batch(problem.model, xi[lay.q_index])))
    def one(term):
        q, tau = _term_args(problem, xi, term)
        return _term_value(problem, term[0], q, tau)

    return float(sum(_map_terms(one, _terms(problem))))


def reported_objective(problem: NlpProblem, value: float) -> float:
    """Un-negate maximization objectives for display."""
    return -value if problem.objective in MAXIMIZE else value


def _fd_axis(problem, idx, x0, step, evaluate):
    lo, hi = problem.lb[idx], problem.ub[idx]
    up = min(x0 + step, hi)
    dn = max(x0 - step, lo)
    if up == dn:
        return 0.0
    return (evaluate(up) - evaluate(dn)) / (up - dn)


def objective_gradient(problem: NlpProblem, xi, step: float = 1e-6) -> np.ndarray:
    """Finite-difference gradient of the objective.

    Every term depends only on its own mesh point's variables, so each term is
    differenced over those alone. Steps are clipped to the variable bounds.
    """
    xi = np.asarray(xi, dtype=float)
    lay = problem.layout

    def one(term):
        k_q, k_t = term
        q, tau = _term_args(problem, xi, term)
        parts = []
        if k_q is not None:
            base = lay.q(k_q).start
            for i in range(lay.n):
                def f(val, i=i):
                    qq = q.copy()
                    qq[i] = val
                    return _term_value(problem, k_q, qq, tau)
                parts.append((base + i, _fd_axis(problem, base + i, q[i], step, f)))
        if k_t is not None:
            base = lay.tau(k_t).start
            for i in range(lay.n):
                def f(val, i=i):
                    tt = tau.copy()
                    tt[i] = val
                    return _term_value(problem, k_q, q, tt)
                parts.append((base + i, _fd_axis(problem, base + i, tau[i], step, f)))
        return parts

    grad = np.zeros(lay.size)
    for parts in _map_terms(one, _terms(problem)):
        for idx, val in parts:
            grad[idx] += val
    return grad


# --------------------------------------------------------------------------
# initial guess


def inverse_kinematics(model: RobotModel, target, seed, damping: float = 0.05,
                       max_iterations: int = 500, tol: float = 1e-10) -> np.ndarray:
    """Damped least-squares IK onto a task-space point, clipped to joint limits."""
    q = np.array(seed, dtype=float)
    target = np.asarray(target, dtype=float)
    for _ in range(max_iterations):
        err = target - forward_kinematics(model, q)
        if err @ err < tol ** 2:
            return q
        J = jacobian(model, q)
        dq = J.T @ np.linalg.solve(J @ J.T + damping ** 2 * np.eye(model.m), err)
        q = np.clip(q + dq, model.q_lb, model.q_ub)
    raise IKFailure(f"IK did not reach {target.tolist()} in {max_iterations} iterations; "
                    "provide a manual seed")


def _seeded_ik(model, target, seed_q, rng, attempts: int = 20):
    """IK from ``seed_q``, retrying from random perturbations of it on failure.

    Zero postures of serial arms are often singular (a straight chain), where
    damped least squares cannot leave the singular manifold.
    """
    try:
        return inverse_kinematics(model, target, seed_q)
    except IKFailure:
        pass
    for _ in range(attempts):
        start = np.clip(seed_q + rng.normal(scale=0.3, size=model.n), model.q_lb, model.q_ub)
        try:
            return inverse_kinematics(model, target, start)
        except IKFailure:
            continue
    raise IKFailure(f"IK did not reach {np.asarray(target).tolist()}; provide a manual seed")


def initial_guess(scenario: Scenario, model: RobotModel | None = None, seed=None,
                  rng_seed: int = 0) -> np.ndarray:
    """Joint-space straight line between IK solutions at the two endpoints.

    ``p_I`` is solved from the zero posture (or ``seed``), ``p_F`` from the
    ``p_I`` solution so both ends share an elbow branch. Velocities come from
    finite differences of the joint path (zero at both ends) and torques from
    inverse dynamics along it, clipped to the limits. The result is close to,
    but generally not exactly, dynamically consistent.
    """
    model = model or scenario.load_model()
    N, M, n = scenario.segments, scenario.mesh_points, model.n
    h = scenario.duration / N
    rng = np.random.default_rng(rng_seed)
    q0 = np.zeros(n) if seed is None else np.asarray(seed, dtype=float)
    qI = _seeded_ik(model, scenario.p_I, q0, rng)
    qF = _seeded_ik(model, scenario.p_F, qI, rng)
    s = np.linspace(0.0, 1.0, M)[:, None]
    Q = (1 - s) * qI + s * qF
    V = np.gradient(Q, h, axis=0)
    V[0] = V[-1] = 0.0
    A = np.gradient(V, h, axis=0)
    T = np.array([inverse_dynamics(model, Q[k], V[k], A[k]) for k in range(N)])
    T = np.clip(T, -model.tau_lim, model.tau_lim)
    V = np.clip(V, model.v_lb, model.v_ub)
    return Layout(n, N).pack(Q, V, T)


# --------------------------------------------------------------------------
# solving


@dataclass
class Solution:
    xi: np.ndarray
    objective_trace: list[float] = field(default_factory=list)
    feasibility_trace: list[float] = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0
    n_feval: int = 0
    n_geval: int = 0
    message: str = ""

    def best_feasible_trace(self, tol: float, maximize: bool) -> list[float]:
        """Running best of the reported objective over feasible iterates."""
        best, out = None, []
        for obj, feas in zip(self.objective_trace, self.feasibility_trace):
            if feas <= tol:
                better = best is None or (obj > best if maximize else obj < best)
                best = obj if better else best
            if best is not None:
                out.append(best)
        return out


def solve(problem: NlpProblem, xi0=None, max_iterations: int | None = None,
          feasibility_tol: float | None = None, gradient_step: float = 1e-6) -> Solution:
    """Minimize the objective subject to the transcription constraints (SLSQP).

    Deterministic for identical inputs. Returns the final iterate when it is
    feasible, otherwise the best feasible iterate seen, flagged not converged.
    """
    sc = problem.scenario
    max_iterations = sc.max_iterations if max_iterations is None else max_iterations
    tol = problem.feasibility_tol if feasibility_tol is None else feasibility_tol
    xi0 = initial_guess(sc, problem.model) if xi0 is None else np.asarray(xi0, dtype=float)
    xi0 = np.clip(xi0, problem.lb, problem.ub)
    start = time.perf_counter()
    sol = Solution(xi=xi0)

    last = {"x": None}

    def record(x):
        last["x"] = np.array(x)
        sol.objective_trace.append(reported_objective(problem, objective_value(problem, x)))
        sol.feasibility_trace.append(feasibility_error(problem, x))

    record(xi0)
    if max_iterations <= 0:
        sol.message = "no iterations requested"
        sol.wall_time = time.perf_counter() - start
        return sol

    cons = _SmoothConstraints(problem)
    counts = {"f": 0, "g": 0}
    # keeps the objective O(1) next to the constraints in SLSQP's merit function
    scale = 1.0 / max(1.0, abs(objective_value(problem, xi0)))

    def fun(x):
        counts["f"] += 1
        return scale * objective_value(problem, x)

    def grad(x):
        counts["g"] += 1
        return scale * objective_gradient(problem, x, gradient_step)

    best = {"x": None, "obj": np.inf}

    def callback(x):
        record(x)
        if sol.feasibility_trace[-1] <= tol:
            val = objective_value(problem, x)
            if val < best["obj"]:
                best.update(x=np.array(x), obj=val)

    constraints = [{"type": "eq", "fun": cons.eq, "jac": cons.eq_jac}]
    if cons.n_ineq:
        constraints.append({"type": "ineq", "fun": cons.ineq, "jac": cons.ineq_jac})
    bounds = list(zip(problem.lb, problem.ub))
    x, used = xi0, 0
    # SLSQP can stall on a singular or incompatible QP subproblem when its
    # quasi-Newton matrix degrades; restarting from the iterate resets it
    for _ in range(RESTARTS + 1):
        before = len(sol.objective_trace)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = minimize(fun, x, jac=grad, method="SLSQP", bounds=bounds,
                           constraints=constraints, callback=callback,
                           options={"maxiter": max_iterations - used, "ftol": 1e-9})
        used += max(int(res.nit), len(sol.objective_trace) - before)
        x = np.clip(res.x, problem.lb, problem.ub)
        if res.status in (0, 8, 9) or used >= max_iterations:
            break
    feas = feasibility_error(problem, x)
    if feas > tol and best["x"] is not None:
        x = np.clip(best["x"], problem.lb, problem.ub)
        feas = feasibility_error(problem, x)
    # SLSQP status 8 is a stalled line search, which nonsmooth polytope
    # objectives hit at their kinks; accept it when the point is feasible
    # SLSQP may return a point other than the last one it reported
    if not np.array_equal(x, last["x"]):
        record(x)
    sol.xi = x
    sol.converged = bool(res.status in (0, 8) and feas <= tol)
    sol.message = str(res.message)
    sol.n_feval = counts["f"]
    sol.n_geval = counts["g"]
    sol.wall_time = time.perf_counter() - start
    return sol


def warm_start_objective(scenario: Scenario) -> str | None:
    """Objective whose solution seeds ``scenario``'s solve, if any.

    ``auto`` seeds the torque-dependent polytope objectives (E, F) with the
    minimum-effort (A) trajectory: their terms are nonsmooth in the torques
    and a low-torque start puts the solver in a large residual polytope.
    """
    ws = scenario.warm_start.strip().upper()
    if ws == "AUTO":
        return "A" if scenario.objective in "EF" else None
    if ws in ("", "NONE"):
        return None
    if ws not in OBJECTIVES:
        raise ScenarioError(f"warm_start must be auto, none or one of {', '.join(OBJECTIVES)}")
    return None if ws == scenario.objective else ws


def solve_scenario(scenario: Scenario, model: RobotModel | None = None, rng_seed: int = 0,
                   max_iterations: int | None = None) -> tuple[NlpProblem, Solution]:
    """Build, initialize and solve a scenario, including any warm-start stage.

    The returned traces cover the main stage; evaluation counts and wall time
    include the warm start.
    """
    model = model or scenario.load_model()
    problem = build_problem(scenario, model)
    seed_obj = warm_start_objective(scenario)
    xi0 = initial_guess(scenario, model, rng_seed=rng_seed)
    pre = None
    if seed_obj is not None:
        pre_problem = build_problem(replace(scenario, objective=seed_obj), model)
        pre = solve(pre_problem, xi0, max_iterations)
        if pre.feasibility_trace[-1] <= problem.feasibility_tol:
            xi0 = pre.xi
    sol = solve(problem, xi0, max_iterations)
    if pre is not None:
        sol.n_feval += pre.n_feval
        sol.n_geval += pre.n_geval
        sol.wall_time += pre.wall_time
        sol.message = f"{sol.message} (warm start from {seed_obj}: {pre.message})"
    return problem, sol


def solution_to_dict(problem: NlpProblem, sol: Solution) -> dict:
    Q, V, T = problem.layout.unpack(sol.xi)
    return {
        "model": problem.scenario.model_path,
        "objective": problem.objective,
        "mesh_times": np.linspace(0.0, problem.scenario.duration, problem.layout.M).tolist(),
        "q": Q.tolist(),
        "v": V.tolist(),
        "tau": T.tolist(),
        "objective_trace": sol.objective_trace,
        "feasibility_trace": sol.feasibility_trace,
        "converged": sol.converged,
        "wall_time_s": sol.wall_time,
        "n_feval": sol.n_feval,
        "n_geval": sol.n_geval,
    }

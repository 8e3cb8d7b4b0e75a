"""Post-hoc robustness analysis of planned trajectories."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import forcespace as fs
from .model import RobotModel, jacobian

IMPULSE_WIDTH = 0.02


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    """Mesh samples of a trajectory; ``tau`` has one row fewer than ``q``."""

    mesh_times: np.ndarray
    q: np.ndarray
    v: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.mesh_times, dtype=float)
        q = np.atleast_2d(np.asarray(self.q, dtype=float))
        v = np.atleast_2d(np.asarray(self.v, dtype=float))
        tau = np.atleast_2d(np.asarray(self.tau, dtype=float))
        M = len(t)
        if M < 2:
            raise TrajectoryError("a trajectory needs at least two mesh points")
        if q.shape[0] != M or v.shape != q.shape:
            raise TrajectoryError(f"q and v need {M} rows matching mesh_times")
        if tau.shape != (M - 1, q.shape[1]):
            raise TrajectoryError(f"tau needs {M - 1} rows of {q.shape[1]} torques")
        dt = np.diff(t)
        if np.any(dt <= 0) or np.ptp(dt) > 1e-9:
            raise TrajectoryError("mesh times must be strictly increasing and uniformly spaced")
        for name, val in (("mesh_times", t), ("q", q), ("v", v), ("tau", tau)):
            object.__setattr__(self, name, val)

    @property
    def M(self) -> int:
        return len(self.mesh_times)

    @property
    def N(self) -> int:
        return self.M - 1

    @property
    def duration(self) -> float:
        return float(self.mesh_times[-1] - self.mesh_times[0])

    def nominal_torque(self, k: int) -> np.ndarray:
        # the last mesh point carries no torque of its own; it reuses tau_N
        return self.tau[min(k, self.N - 1)]

    def nominal_torques(self) -> np.ndarray:
        return np.vstack([self.tau, self.tau[-1:]])

    @classmethod
    def from_dict(cls, doc: dict) -> Trajectory:
        try:
            q = np.asarray(doc["q"], dtype=float)
            tau = np.asarray(doc["tau"], dtype=float)
            # solution files may store a final torque row; drop it
            if len(tau) == len(q):
                tau = tau[:-1]
            return cls(doc["mesh_times"], q, doc["v"], tau)
        except KeyError as exc:
            raise TrajectoryError(f"trajectory is missing key {exc.args[0]!r}") from None


def load_trajectory(path) -> Trajectory:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise TrajectoryError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return Trajectory.from_dict(doc)


def force_profile(t, f_peak: float, center: float = 0.5):
    """Gaussian disturbance magnitude ``f_peak * exp(-(t - center)^2 / 0.02)``."""
    t = np.asarray(t, dtype=float)
    out = f_peak * np.exp(-((t - center) ** 2) / IMPULSE_WIDTH)
    return float(out) if out.ndim == 0 else out


def analytic_impulse(f_peak: float) -> float:
    return f_peak * math.sqrt(IMPULSE_WIDTH * math.pi)


def impulse_center(traj: Trajectory) -> float:
    return float(traj.mesh_times[0] + traj.duration / 2)


def robustness_timeseries(model: RobotModel, traj: Trajectory,
                          mode: fs.ResidualMode = fs.ResidualMode.SYMMETRIC_SHRINK):
    """Residual-ball radius at each mesh point and a per-point infeasibility flag.

    A nominal torque beyond its limit gives radius 0 and sets the flag.
    """
    radii = np.zeros(traj.M)
    flags = np.zeros(traj.M, dtype=bool)
    for k in range(traj.M):
        try:
            radii[k] = fs.metric_ball(model, traj.q[k], traj.nominal_torque(k), mode)
        except fs.InfeasibleNominal:
            flags[k] = True
    return radii, flags


@dataclass(frozen=True)
class RobustnessReport:
    mesh_times: np.ndarray
    radii: np.ndarray
    nominal: np.ndarray       # (M, n) nominal torque / tau_lim
    normalized: np.ndarray    # (M, n) (nominal + extra) / tau_lim
    tau_extra: np.ndarray     # (M, n)
    saturated: np.ndarray     # (M, n) bool
    infeasible: np.ndarray    # (M,) bool

    @property
    def mean_radius(self) -> float:
        return float(np.mean(self.radii))

    @property
    def min_radius(self) -> float:
        return float(np.min(self.radii))

    @property
    def peak_normalized(self) -> float:
        return float(np.max(np.abs(self.normalized)))

    @property
    def any_saturated(self) -> bool:
        return bool(self.saturated.any())


def _unit(direction, m: int) -> np.ndarray:
    d = np.asarray(direction, dtype=float)
    if d.shape != (m,):
        raise ValueError(f"direction must have {m} components")
    norm = np.linalg.norm(d)
    if abs(norm - 1.0) > 1e-9:
        raise ValueError(f"direction must be a unit vector, got norm {norm:.6g}")
    return d


def _tip_torques(model: RobotModel, traj: Trajectory, d: np.ndarray) -> np.ndarray:
    """Rows J(q_k)^T d: torques that realize a unit tip force along ``d``."""
    return np.array([jacobian(model, q).T @ d for q in traj.q])


def impulse_torque_test(model: RobotModel, traj: Trajectory, direction, f_peak: float,
                        mode: fs.ResidualMode = fs.ResidualMode.SYMMETRIC_SHRINK) -> RobustnessReport:
    """Feedforward torque accounting for a Gaussian tip impulse along ``direction``."""
    d = _unit(direction, model.m)
    f = force_profile(traj.mesh_times, f_peak, impulse_center(traj))
    extra = f[:, None] * _tip_torques(model, traj, d)
    nominal = traj.nominal_torques()
    nominal_n = nominal / model.tau_lim
    normalized = (nominal + extra) / model.tau_lim
    radii, flags = robustness_timeseries(model, traj, mode)
    return RobustnessReport(traj.mesh_times, radii, nominal_n, normalized, extra,
                            np.abs(normalized) > 1.0, flags)


def critical_peak(model: RobotModel, traj: Trajectory, direction) -> float:
    """Largest f_peak for which the impulse along ``direction`` saturates no joint.

    Normalized torque is affine in f_peak, so each (joint, point) pair gives a
    linear bound; the answer is the tightest. 0 if already saturated.
    """
    d = _unit(direction, model.m)
    f = force_profile(traj.mesh_times, 1.0, impulse_center(traj))
    a = f[:, None] * _tip_torques(model, traj, d) / model.tau_lim
    b = traj.nominal_torques() / model.tau_lim
    if np.any(np.abs(b) > 1.0):
        return 0.0
    with np.errstate(divide="ignore"):
        limit = np.where(a > 0, (1.0 - b) / a, np.where(a < 0, (1.0 + b) / -a, np.inf))
    return float(np.min(limit))


@dataclass(frozen=True)
class Comparison:
    mesh_times: np.ndarray
    labels: list[str]
    radii: dict[str, np.ndarray]

    def mean(self, label: str) -> float:
        return float(np.mean(self.radii[label]))

    def minimum(self, label: str) -> float:
        return float(np.min(self.radii[label]))

    @property
    def ranking(self) -> list[str]:
        """Labels by decreasing mean radius; ties keep input order."""
        return sorted(self.labels, key=lambda s: -self.mean(s))


def compare_report(model: RobotModel, trajs, mode: fs.ResidualMode = fs.ResidualMode.SYMMETRIC_SHRINK) -> Comparison:
    """Radius series per labelled trajectory. ``trajs`` is a sequence of (label, trajectory)."""
    trajs = list(trajs.items()) if isinstance(trajs, dict) else list(trajs)
    if not trajs:
        raise ValueError("nothing to compare")
    labels = [label for label, _ in trajs]
    if len(set(labels)) != len(labels):
        dup = next(s for s in labels if labels.count(s) > 1)
        raise ValueError(f"duplicate label {dup!r}")
    t0 = trajs[0][1].mesh_times
    radii = {}
    for label, traj in trajs:
        if traj.M != len(t0) or np.max(np.abs(traj.mesh_times - t0)) > 1e-9:
            raise TrajectoryError(f"mesh of {label!r} differs from {labels[0]!r}")
        radii[label] = robustness_timeseries(model, traj, mode)[0]
    return Comparison(t0, labels, radii)


def _fmt(x) -> str:
    return f"{float(x):.10g}"


def write_report_csv(path, report: RobustnessReport) -> None:
    n = report.normalized.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "t", "radius"] + [f"tau_norm_{i + 1}" for i in range(n)] + ["saturated_any"])
        for k, t in enumerate(report.mesh_times):
            w.writerow([k + 1, _fmt(t), _fmt(report.radii[k])]
                       + [_fmt(x) for x in report.normalized[k]]
                       + [int(report.saturated[k].any())])


def write_comparison_csv(path, comp: Comparison) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "t"] + comp.labels)
        for k, t in enumerate(comp.mesh_times):
            w.writerow([k + 1, _fmt(t)] + [_fmt(comp.radii[s][k]) for s in comp.labels])


def write_trajectory(path, traj: Trajectory) -> None:
    Path(path).write_text(json.dumps({
        "mesh_times": traj.mesh_times.tolist(),
        "q": traj.q.tolist(), "v": traj.v.tolist(), "tau": traj.tau.tolist()}, indent=1))

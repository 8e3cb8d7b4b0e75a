"""Force polytopes, residual force polytopes and the scalar metrics built on them."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import geometry as geo
from .model import RobotModel, forward_kinematics, jacobian, jacobians, planar_lever_arms

PINV_RCOND = 1e-8


class ResidualMode(str, Enum):
    SYMMETRIC_SHRINK = "symmetric_shrink"
    EXACT_TRANSLATE = "exact_translate"


class InfeasibleNominal(ValueError):
    """A nominal torque exceeds its actuation limit."""

    def __init__(self, joint: int, tau: float, limit: float):
        super().__init__(f"nominal torque {tau:.6g} on joint {joint + 1} exceeds limit {limit:.6g}")
        self.joint = joint


@dataclass(frozen=True)
class ForceContext:
    J: np.ndarray
    Jpinv_T: np.ndarray
    rank: int
    ee_position: np.ndarray


def context_from_jacobian(J, ee_position=None) -> ForceContext:
    J = np.atleast_2d(np.asarray(J, dtype=float))
    s = np.linalg.svd(J, compute_uv=False)
    rank = int(np.sum(s > s[0] * PINV_RCOND)) if s[0] > 0 else 0
    pinv = np.linalg.pinv(J.T, rcond=PINV_RCOND)
    ee = np.zeros(J.shape[0]) if ee_position is None else np.asarray(ee_position, dtype=float)
    return ForceContext(J, pinv, rank, ee)


def force_context(model: RobotModel, q) -> ForceContext:
    """Jacobian, truncated-SVD pseudoinverse of its transpose, and rank at ``q``."""
    return context_from_jacobian(jacobian(model, q), forward_kinematics(model, q))


def task_force_from_torques(ctx: ForceContext, tau) -> np.ndarray:
    return ctx.Jpinv_T @ np.asarray(tau, dtype=float)


def torques_for_task_force(ctx: ForceContext, f) -> np.ndarray:
    return ctx.J.T @ np.asarray(f, dtype=float)


def joint_force_box(model: RobotModel) -> geo.Box:
    return geo.Box(-model.tau_lim, model.tau_lim)


def residual_box(tau_lim, tau_nom, mode: ResidualMode = ResidualMode.SYMMETRIC_SHRINK) -> geo.Box:
    """Torque capacity left over once ``tau_nom`` is spent.

    ``symmetric_shrink`` keeps the box centred and shrinks each side by
    ``|tau_nom|``; ``exact_translate`` is the exact set of admissible increments.
    """
    tau_lim = np.asarray(tau_lim, dtype=float)
    tau_nom = np.asarray(tau_nom, dtype=float)
    over = np.abs(tau_nom) > tau_lim
    if over.any():
        j = int(np.argmax(over))
        raise InfeasibleNominal(j, tau_nom[j], tau_lim[j])
    mode = ResidualMode(mode)
    if mode is ResidualMode.SYMMETRIC_SHRINK:
        slack = tau_lim - np.abs(tau_nom)
        return geo.Box(-slack, slack)
    return geo.Box(-tau_lim - tau_nom, tau_lim - tau_nom)


def force_polytope(model: RobotModel, q, ctx: ForceContext | None = None) -> geo.Polytope:
    ctx = ctx or force_context(model, q)
    return geo.map_box(ctx.Jpinv_T, joint_force_box(model))


def residual_force_polytope(model: RobotModel, q, tau_nom,
                            mode: ResidualMode = ResidualMode.SYMMETRIC_SHRINK,
                            ctx: ForceContext | None = None) -> geo.Polytope:
    box = residual_box(model.tau_lim, tau_nom, mode)
    ctx = ctx or force_context(model, q)
    return geo.map_box(ctx.Jpinv_T, box)


def scaled_manipulability(model: RobotModel, q, J=None) -> float:
    """sqrt(det(J W^2 J^T)) with W = diag(1 / tau_lim)."""
    J = jacobian(model, q) if J is None else J
    Js = J / model.tau_lim
    return float(np.sqrt(max(np.linalg.det(Js @ Js.T), 0.0)))


def scaled_manipulability_batch(model: RobotModel, Q) -> np.ndarray:
    """Vectorized scaled manipulability over rows of ``Q``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if model.planar_chain is not None:
        # columns of J' are i z_k for z_k = lever arm / limit; with S1 = sum |z|^2
        # and S2 = sum z^2, det(J'J'^T) = (S1^2 - |S2|^2) / 4
        z = planar_lever_arms(model.planar_chain, Q) / model.tau_lim
        s1 = np.add.reduce(z.real * z.real + z.imag * z.imag, axis=1)
        s2 = np.add.reduce(z * z, axis=1)
        det = 0.25 * (s1 * s1 - (s2.real * s2.real + s2.imag * s2.imag))
    else:
        Js = jacobians(model, Q) / model.tau_lim
        det = np.linalg.det(Js @ Js.transpose(0, 2, 1))
    return np.sqrt(np.maximum(det, 0.0))


def metric_ball(model: RobotModel, q, tau_nom=None,
                mode: ResidualMode = ResidualMode.SYMMETRIC_SHRINK) -> float:
    """Largest admissible disturbance magnitude from any direction at ``q``.

    Without ``tau_nom`` this is the inscribed radius of the force polytope;
    with it, of the residual force polytope. The ball is centred at zero force.
    """
    ctx = force_context(model, q)
    if tau_nom is None:
        P = force_polytope(model, q, ctx)
    else:
        P = residual_force_polytope(model, q, tau_nom, mode, ctx)
    return geo.inscribed_radius_at(P, np.zeros(model.m))


def metric_cone_volume(model: RobotModel, q, tau_nom, cone: geo.Cone,
                       mode: ResidualMode = ResidualMode.SYMMETRIC_SHRINK) -> float:
    """Volume of the residual force polytope clipped to a disturbance cone."""
    if np.any(np.abs(cone.apex) > 0):
        raise ValueError("cone apex must sit at the force-space origin")
    P = residual_force_polytope(model, q, tau_nom, mode)
    if P.degenerate:
        return 0.0
    return geo.volume(geo.intersect(P, geo.make_cone(cone)))

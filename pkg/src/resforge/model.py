"""Serial-chain robot models: loading, kinematics and rigid-body dynamics.

Every chain is all-revolute with a fixed base. Planar models (``task_dim == 2``)
are ordinary spatial chains whose joint axes are parallel to z; only the x and y
rows of task-space quantities are exposed for them.

Kinematics and dynamics are written against plain numpy arrays and promote to
the dtype of their inputs, so complex-step differentiation works through every
routine here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

GRAVITY = 9.81


class ModelError(ValueError):
    """Raised for malformed or invalid model description documents."""


@dataclass(frozen=True)
class Joint:
    parent: int
    origin_xyz: np.ndarray
    origin_rot: np.ndarray
    axis: np.ndarray
    q_limits: tuple[float, float]
    v_limits: tuple[float, float]
    tau_limit: float

    @cached_property
    def rodrigues_basis(self) -> np.ndarray:
        """[K | K^2] for the axis skew matrix K, shape (3, 6)."""
        x, y, z = self.axis
        K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
        return np.hstack([K, K @ K])

    @cached_property
    def rotated_origin(self) -> bool:
        return not np.array_equal(self.origin_rot, np.eye(3))


@dataclass(frozen=True)
class Link:
    mass: float
    com: np.ndarray
    inertia: np.ndarray  # 3x3 about the CoM, link frame


@dataclass(frozen=True)
class RobotModel:
    name: str
    task_dim: int
    joints: tuple[Joint, ...]
    links: tuple[Link, ...]
    ee_xyz: np.ndarray
    ee_rot: np.ndarray
    payload: float = 0.0

    @property
    def n(self) -> int:
        return len(self.joints)

    @property
    def m(self) -> int:
        return self.task_dim

    @property
    def tau_lim(self) -> np.ndarray:
        return np.array([j.tau_limit for j in self.joints])

    @property
    def q_lb(self) -> np.ndarray:
        return np.array([j.q_limits[0] for j in self.joints])

    @property
    def q_ub(self) -> np.ndarray:
        return np.array([j.q_limits[1] for j in self.joints])

    @property
    def v_lb(self) -> np.ndarray:
        return np.array([j.v_limits[0] for j in self.joints])

    @property
    def v_ub(self) -> np.ndarray:
        return np.array([j.v_limits[1] for j in self.joints])

    @cached_property
    def planar_chain(self) -> tuple[np.ndarray, np.ndarray, np.ndarray] | None:
        """(yaw offsets, joint origins, end-effector point) in the task plane when
        every joint of the serial chain turns about z, else None."""
        if self.task_dim != 2:
            return None
        yaw, xy = [], []
        for i, j in enumerate(self.joints):
            R = j.origin_rot
            if j.parent != i - 1 or not np.array_equal(j.axis, [0.0, 0.0, 1.0]) or R[2, 2] != 1.0:
                return None
            yaw.append(np.arctan2(R[1, 0], R[0, 0]))
            xy.append(complex(*j.origin_xyz[:2]))
        return np.array(yaw), np.array(xy), complex(*self.ee_xyz[:2])

    @property
    def gravity(self) -> np.ndarray:
        if self.task_dim == 2:
            return np.array([0.0, -GRAVITY, 0.0])
        return np.array([0.0, 0.0, -GRAVITY])


@dataclass(frozen=True)
class State:
    q: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class Rectangle:
    corner: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray

    def __post_init__(self):
        for name in ("corner", "edge_u", "edge_v"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.linalg.norm(self.edge_u) == 0 or np.linalg.norm(self.edge_v) == 0:
            raise ValueError("rectangle edges must be nonzero")
        if abs(self.edge_u @ self.edge_v) > 1e-9:
            raise ValueError("rectangle edges must be orthogonal")

    @property
    def normal(self) -> np.ndarray:
        nrm = np.cross(self.edge_u, self.edge_v)
        return nrm / np.linalg.norm(nrm)


# --------------------------------------------------------------------------
# loading


def rpy_matrix(rpy) -> np.ndarray:
    """Rotation matrix for fixed-axis roll/pitch/yaw (Rz @ Ry @ Rx)."""
    r, p, y = rpy
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def axis_angle(axis, angle) -> np.ndarray:
    """Rodrigues rotation about a unit axis; ``angle`` may be complex."""
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    t = 1 - c
    return np.array([
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ])


def _vec(doc, key, size, where):
    try:
        val = np.asarray(doc[key], dtype=float)
    except KeyError:
        raise ModelError(f"{where}: missing field '{key}'") from None
    except (TypeError, ValueError):
        raise ModelError(f"{where}: field '{key}' is not numeric") from None
    if val.shape != (size,):
        raise ModelError(f"{where}: field '{key}' must have {size} values, got {val.size}")
    return val


def _inertia(vals) -> np.ndarray:
    ixx, iyy, izz, ixy, ixz, iyz = vals
    return np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])


def _parse(doc: dict) -> RobotModel:
    for key in ("name", "task_dim", "joints", "links", "end_effector"):
        if key not in doc:
            raise ModelError(f"missing top-level field '{key}'")
    task_dim = doc["task_dim"]
    if task_dim not in (2, 3):
        raise ModelError(f"task_dim must be 2 or 3, got {task_dim!r}")
    jdocs, ldocs = doc["joints"], doc["links"]
    if not jdocs:
        raise ModelError("model needs at least one joint")
    if len(jdocs) != len(ldocs):
        raise ModelError(f"{len(jdocs)} joints but {len(ldocs)} links")

    joints = []
    for i, jd in enumerate(jdocs, start=1):
        where = f"joint {i}"
        if jd.get("parent") != i - 2:
            raise ModelError(f"{where}: parent must be {i - 2} for a serial chain")
        origin = jd.get("origin", {})
        xyz = _vec(origin, "xyz", 3, where + " origin")
        rpy = _vec(origin, "rpy", 3, where + " origin")
        axis = _vec(jd, "axis", 3, where)
        if np.linalg.norm(axis) < 1e-12:
            raise ModelError(f"{where}: zero rotation axis")
        ql = _vec(jd, "q_limits", 2, where)
        vl = _vec(jd, "v_limits", 2, where)
        if not ql[0] < ql[1]:
            raise ModelError(f"{where}: q_lb must be < q_ub")
        if not vl[0] < vl[1]:
            raise ModelError(f"{where}: v_lb must be < v_ub")
        tau = jd.get("tau_limit")
        if not isinstance(tau, (int, float)) or not tau > 0:
            raise ModelError(f"{where}: tau_limit must be a positive number")
        axis = axis / np.linalg.norm(axis)
        if task_dim == 2 and (abs(axis[0]) > 1e-12 or abs(axis[1]) > 1e-12):
            raise ModelError(f"{where}: planar models need axes parallel to z")
        joints.append(Joint(i - 2, xyz, rpy_matrix(rpy), axis,
                            (float(ql[0]), float(ql[1])), (float(vl[0]), float(vl[1])),
                            float(tau)))

    links = []
    for i, ld in enumerate(ldocs, start=1):
        where = f"link {i}"
        mass = ld.get("mass")
        if not isinstance(mass, (int, float)) or mass < 0:
            raise ModelError(f"{where}: mass must be >= 0")
        com = _vec(ld, "com", 3, where)
        inertia = _inertia(_vec(ld, "inertia", 6, where))
        if np.linalg.eigvalsh(inertia).min() < -1e-12:
            raise ModelError(f"{where}: inertia is not positive-semidefinite")
        links.append(Link(float(mass), com, inertia))

    ee = doc["end_effector"]
    return RobotModel(
        name=str(doc["name"]),
        task_dim=task_dim,
        joints=tuple(joints),
        links=tuple(links),
        ee_xyz=_vec(ee, "xyz", 3, "end_effector"),
        ee_rot=rpy_matrix(_vec(ee, "rpy", 3, "end_effector")),
    )


def load_model(text: str) -> RobotModel:
    """Parse a JSON chain description into a validated :class:`RobotModel`."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ModelError("model document must be a JSON object")
    return _parse(doc)


def builtin_names() -> list[str]:
    data = resources.files("resforge") / "data"
    return sorted(p.name[:-5] for p in data.iterdir() if p.name.endswith(".json")
                  and not p.name.startswith("scenario"))


def load_model_file(path) -> RobotModel:
    """Load a model from a path, or from a shipped fixture name such as ``planar3``."""
    p = Path(path)
    if not p.exists() and p.suffix in ("", ".json") and p.parent == Path("."):
        res = resources.files("resforge") / "data" / (p.stem + ".json")
        if res.is_file():
            return load_model(res.read_text())
    try:
        text = p.read_text()
    except OSError as exc:
        raise ModelError(f"cannot read model file {path}: {exc.strerror}") from None
    return load_model(text)


def attach_payload(model: RobotModel, mass: float) -> RobotModel:
    """Return ``model`` with a point mass rigidly attached at the end-effector frame.

    The payload is merged into the last link's inertial parameters (parallel-axis
    theorem), so kinematics are untouched.
    """
    if mass < 0:
        raise ValueError("payload mass must be >= 0")
    if mass == 0:
        return model
    last = model.links[-1]
    total = last.mass + mass
    com = (last.mass * last.com + mass * model.ee_xyz) / total
    d1 = last.com - com
    d2 = model.ee_xyz - com
    inertia = (last.inertia
               + last.mass * (d1 @ d1 * np.eye(3) - np.outer(d1, d1))
               + mass * (d2 @ d2 * np.eye(3) - np.outer(d2, d2)))
    links = model.links[:-1] + (Link(total, com, inertia),)
    return replace(model, links=links, payload=model.payload + mass)


# --------------------------------------------------------------------------
# kinematics


def cross(a, b):
    """3-vector cross product; np.cross is slow for single vectors."""
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


@dataclass
class _Frames:
    rot: list = field(default_factory=list)     # link frame orientation (world)
    origin: list = field(default_factory=list)  # joint origin (world)
    axis: list = field(default_factory=list)    # joint axis (world)
    ee: np.ndarray | None = None


def _check_q(model, q):
    q = np.asarray(q)
    if q.shape != (model.n,):
        raise ValueError(f"expected {model.n} joint values, got shape {q.shape}")
    return q


def _frames(model: RobotModel, q) -> _Frames:
    fr = _Frames()
    rot = np.eye(3)
    pos = np.zeros(3)
    for joint, qi in zip(model.joints, q):
        pos = pos + rot @ joint.origin_xyz
        rot = rot @ joint.origin_rot
        fr.axis.append(rot @ joint.axis)
        fr.origin.append(pos)
        rot = rot @ axis_angle(joint.axis, qi)
        fr.rot.append(rot)
    fr.ee = pos + rot @ model.ee_xyz
    return fr


def forward_kinematics(model: RobotModel, q) -> np.ndarray:
    """End-effector position in the base frame (xy only for planar models)."""
    q = _check_q(model, q)
    return _frames(model, q).ee[: model.m]


def jacobian(model: RobotModel, q) -> np.ndarray:
    """Linear-velocity Jacobian of the end-effector, shape (m, n)."""
    q = _check_q(model, q)
    fr = _frames(model, q)
    cols = [cross(z, fr.ee - p) for z, p in zip(fr.axis, fr.origin)]
    return np.array(cols).T[: model.m]


def planar_lever_arms(chain, Q) -> np.ndarray:
    """p_ee - p_i for every joint of a z-axis chain as complex numbers x + iy, (K, n).

    ``chain`` is ``RobotModel.planar_chain``. Rotation by theta is
    multiplication by exp(i theta), so the forward pass is two cumulative sums.
    """
    yaw, offsets, ee = chain
    turn = Q + yaw
    theta = np.add.accumulate(turn, axis=1)  # frame angle after each joint
    # each joint origin is given in the frame before that joint turns
    p = np.add.accumulate(np.exp(1j * (theta - turn)) * offsets, axis=1)
    tip = p[:, -1:] + np.exp(1j * theta[:, -1:]) * ee
    return tip - p


def jacobians(model: RobotModel, Q) -> np.ndarray:
    """Jacobians for a batch of configurations ``Q`` (K, n), shape (K, m, n)."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape[1] != model.n:
        raise ValueError(f"expected {model.n} joint values per row, got {Q.shape[1]}")
    if model.planar_chain is not None:
        r = planar_lever_arms(model.planar_chain, Q)
        return np.stack([-r.imag, r.real], axis=1)  # z x r
    count, n = Q.shape
    # Rodrigues per joint, R = I + sin(q) K + (1 - cos(q)) K^2, applied as
    # rot @ R = rot + sin(q) rot K + (1 - cos(q)) rot K^2
    sin = np.sin(Q).T[:, :, None, None]
    vers = (1.0 - np.cos(Q)).T[:, :, None, None]
    rot = np.tile(np.eye(3), (count, 1, 1))
    pos = np.zeros((count, 3))
    axes = np.empty((3, count, n))
    origins = np.empty((3, count, n))
    for i, joint in enumerate(model.joints):
        pos = pos + rot @ joint.origin_xyz
        if joint.rotated_origin:
            rot = rot @ joint.origin_rot
        axes[:, :, i] = (rot @ joint.axis).T
        origins[:, :, i] = pos.T
        rk = rot @ joint.rodrigues_basis
        rot = rot + sin[i] * rk[..., :3] + vers[i] * rk[..., 3:]
    ee = (pos + rot @ model.ee_xyz).T
    r = ee[:, :, None] - origins
    z = axes
    cols = np.stack([z[1] * r[2] - z[2] * r[1], z[2] * r[0] - z[0] * r[2], z[0] * r[1] - z[1] * r[0]], axis=1)
    return cols[:, : model.m, :]


def link_points(model: RobotModel, q) -> np.ndarray:
    """Joint origins followed by the end-effector, shape (n + 1, 3). Used for plotting."""
    fr = _frames(model, _check_q(model, q))
    return np.array(fr.origin + [fr.ee]).real


# --------------------------------------------------------------------------
# dynamics


def inverse_dynamics(model: RobotModel, q, v, a) -> np.ndarray:
    """Recursive Newton-Euler: joint torques for accelerations ``a`` (no tip force).

    Gravity enters as an upward acceleration of the base.
    """
    q = _check_q(model, q)
    fr = _frames(model, q)
    n = model.n
    omega = np.zeros(3)
    alpha = np.zeros(3)
    acc = -model.gravity  # linear acceleration of the current joint origin
    prev = np.zeros(3)
    forces, moments, coms = [], [], []
    for i in range(n):
        z = fr.axis[i]
        r = fr.origin[i] - prev
        acc = acc + cross(alpha, r) + cross(omega, cross(omega, r))
        alpha = alpha + z * a[i] + cross(omega, z * v[i])
        omega = omega + z * v[i]
        link = model.links[i]
        c = fr.rot[i] @ link.com
        acc_c = acc + cross(alpha, c) + cross(omega, cross(omega, c))
        inertia = fr.rot[i] @ link.inertia @ fr.rot[i].T
        forces.append(link.mass * acc_c)
        moments.append(inertia @ alpha + cross(omega, inertia @ omega))
        coms.append(c)
        prev = fr.origin[i]

    tau = np.zeros(n, dtype=np.result_type(q, v, a, float))
    f_next = np.zeros(3)
    n_next = np.zeros(3)
    for i in reversed(range(n)):
        lever = fr.origin[i + 1] - fr.origin[i] if i + 1 < n else np.zeros(3)
        n_i = moments[i] + cross(coms[i], forces[i]) + n_next + cross(lever, f_next)
        f_next = forces[i] + f_next
        n_next = n_i
        tau[i] = fr.axis[i] @ n_i
    return tau


def bias_forces(model: RobotModel, q, v) -> np.ndarray:
    """Coriolis, centrifugal and gravity torques h(q, v)."""
    v = np.asarray(v)
    if v.shape != (model.n,):
        raise ValueError(f"expected {model.n} joint velocities, got shape {v.shape}")
    return inverse_dynamics(model, q, v, np.zeros(model.n))


def _skew(p):
    return np.array([[0, -p[2], p[1]], [p[2], 0, -p[0]], [-p[1], p[0], 0]])


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    """Joint-space inertia by the composite-rigid-body algorithm.

    Spatial quantities are expressed in world coordinates about the world origin.
    """
    q = _check_q(model, q)
    fr = _frames(model, q)
    n = model.n
    dtype = np.result_type(q, float)
    composite = np.zeros((6, 6), dtype=dtype)
    subtree = [None] * n
    for i in reversed(range(n)):
        link = model.links[i]
        c = fr.origin[i] + fr.rot[i] @ link.com
        ic = fr.rot[i] @ link.inertia @ fr.rot[i].T
        cx = _skew(c)
        body = np.block([
            [ic + link.mass * cx @ cx.T, link.mass * cx],
            [link.mass * cx.T, link.mass * np.eye(3)],
        ])
        composite = composite + body
        subtree[i] = composite
    motion = [np.concatenate([z, cross(p, z)]) for z, p in zip(fr.axis, fr.origin)]
    M = np.zeros((n, n), dtype=dtype)
    for i in range(n):
        force = subtree[i] @ motion[i]
        for j in range(i + 1):
            M[i, j] = M[j, i] = motion[j] @ force
    return M


class SingularMassMatrix(np.linalg.LinAlgError):
    pass


def forward_dynamics(model: RobotModel, q, v, tau, f_tip=None) -> np.ndarray:
    """Solve M(q) v' = tau + J^T f_tip - h(q, v) for the joint accelerations."""
    q = np.asarray(q, dtype=float)
    rhs = np.asarray(tau, dtype=float) - bias_forces(model, q, v)
    if f_tip is not None:
        rhs = rhs + jacobian(model, q).T @ np.asarray(f_tip, dtype=float)
    M = mass_matrix(model, q)
    try:
        return cho_solve(cho_factor(M), rhs)
    except np.linalg.LinAlgError:
        raise SingularMassMatrix("mass matrix is singular (zero-mass links?)") from None


def euler_step(model: RobotModel, x: State, u, h: float) -> State:
    """One explicit Euler step of the unforced dynamics."""
    acc = forward_dynamics(model, x.q, x.v, u)
    return State(x.q + h * x.v, x.v + h * acc)


def total_energy(model: RobotModel, x: State) -> float:
    """Kinetic plus gravitational potential energy."""
    fr = _frames(model, x.q)
    pe = -sum(link.mass * model.gravity @ (p + R @ link.com)
              for link, p, R in zip(model.links, fr.origin, fr.rot))
    return 0.5 * x.v @ mass_matrix(model, x.q) @ x.v + pe


def distance_to_rectangle(rect: Rectangle, p) -> float:
    """Euclidean distance from ``p`` to the bounded rectangle."""
    p = np.pad(np.asarray(p, dtype=float), (0, 3 - len(p)))
    d = p - rect.corner
    s = np.clip(d @ rect.edge_u / (rect.edge_u @ rect.edge_u), 0.0, 1.0)
    t = np.clip(d @ rect.edge_v / (rect.edge_v @ rect.edge_v), 0.0, 1.0)
    closest = rect.corner + s * rect.edge_u + t * rect.edge_v
    return float(np.linalg.norm(p - closest))

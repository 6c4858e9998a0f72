"""Serial-chain forward/inverse kinematics and plate motion.

The chain is a list of revolute joints, each with a fixed transform (xyz
offset + rpy rotation) from the previous joint frame followed by a rotation
about a fixed axis by the joint variable.  A fixed plate transform is
appended after the last joint; the resulting frame is the plate frame used
by the ball environment (z is the plate normal).

Rotation conventions: rpy is applied as Rz(yaw) @ Ry(pitch) @ Rx(roll);
quaternions are (x, y, z, w).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ConfigurationError, IKConvergenceError
from .limits import JointLimits


def rpy_matrix(rpy) -> np.ndarray:
    roll, pitch, yaw = np.asarray(rpy, dtype=float)
    return Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(axis, dtype=float) * float(angle)).as_matrix()


@dataclass(frozen=True)
class JointRow:
    """One revolute joint: fixed mount transform, then rotation about ``axis``."""

    axis: np.ndarray
    origin_xyz: np.ndarray
    origin_rpy: np.ndarray

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        norm = np.linalg.norm(axis)
        if not np.isfinite(norm) or norm < 1e-12:
            raise ConfigurationError("joint axis must be a nonzero finite vector")
        object.__setattr__(self, "axis", axis / norm)
        object.__setattr__(self, "origin_xyz", np.asarray(self.origin_xyz, dtype=float))
        object.__setattr__(self, "origin_rpy", np.asarray(self.origin_rpy, dtype=float))
        if not (np.all(np.isfinite(self.origin_xyz)) and np.all(np.isfinite(self.origin_rpy))):
            raise ConfigurationError("joint origin parameters must be finite")


@dataclass(frozen=True)
class ChainModel:
    joints: tuple
    plate_xyz: np.ndarray = field(default_factory=lambda: np.zeros(3))
    plate_rpy: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q_home: np.ndarray | None = None
    name: str = "chain"

    def __post_init__(self):
        if len(self.joints) < 1:
            raise ConfigurationError("chain needs at least one joint")
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "plate_xyz", np.asarray(self.plate_xyz, dtype=float))
        object.__setattr__(self, "plate_rpy", np.asarray(self.plate_rpy, dtype=float))
        if self.q_home is None:
            object.__setattr__(self, "q_home", np.zeros(len(self.joints)))
        else:
            object.__setattr__(self, "q_home", np.asarray(self.q_home, dtype=float))

    @property
    def n_joints(self) -> int:
        return len(self.joints)


@dataclass
class PlatePose:
    """Plate frame pose plus the motion quantities the ball model consumes."""

    position: np.ndarray
    quat: np.ndarray                      # (x, y, z, w), unit
    lin_acc: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ang_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.quat = np.asarray(self.quat, dtype=float)
        n = np.linalg.norm(self.quat)
        if abs(n - 1.0) > 1e-9:
            raise ConfigurationError("plate orientation quaternion must be unit length")
        self.lin_acc = np.asarray(self.lin_acc, dtype=float)
        self.ang_vel = np.asarray(self.ang_vel, dtype=float)

    def rotation(self) -> np.ndarray:
        return Rotation.from_quat(self.quat).as_matrix()


def _frames(model: ChainModel, q):
    """World origin and axis of every joint, plus the plate frame."""
    q = np.asarray(q, dtype=float)
    if q.shape[0] != model.n_joints:
        raise ConfigurationError(
            f"expected {model.n_joints} joint values, got {q.shape[0]}")
    pos = np.zeros(3)
    rot = np.eye(3)
    origins = []
    axes = []
    for row, qi in zip(model.joints, q):
        pos = pos + rot @ row.origin_xyz
        rot = rot @ rpy_matrix(row.origin_rpy)
        origins.append(pos)
        axes.append(rot @ row.axis)
        rot = rot @ axis_angle_matrix(row.axis, qi)
    plate_pos = pos + rot @ model.plate_xyz
    plate_rot = rot @ rpy_matrix(model.plate_rpy)
    return np.array(origins), np.array(axes), plate_pos, plate_rot


def fk_transform(model: ChainModel, q):
    """Plate position (3,) and rotation matrix (3, 3) for joint vector q."""
    _, _, pos, rot = _frames(model, q)
    return pos, rot


def forward_kinematics(model: ChainModel, q) -> PlatePose:
    pos, rot = fk_transform(model, q)
    return PlatePose(position=pos, quat=Rotation.from_matrix(rot).as_quat())


def jacobian(model: ChainModel, q) -> np.ndarray:
    """Geometric Jacobian (6 x n): rows 0-2 linear, 3-5 angular."""
    origins, axes, plate_pos, _ = _frames(model, q)
    jv = np.cross(axes, plate_pos[None, :] - origins)
    return np.concatenate([jv.T, axes.T], axis=0)


def orientation_error(rot_current: np.ndarray, rot_target: np.ndarray) -> np.ndarray:
    """World-frame rotation vector taking the current frame onto the target."""
    return Rotation.from_matrix(rot_target @ rot_current.T).as_rotvec()


def inverse_kinematics(model: ChainModel, target_pos, q_seed, target_rot=None,
                       pos_tol=1e-6, rot_tol=1e-6, max_iters=200,
                       damping=1e-3, step_clamp=0.2, limits: JointLimits | None = None):
    """Damped-least-squares IK, continuous in the seed.

    With ``target_rot`` (3x3) the full pose is solved, otherwise position
    only.  With ``limits`` the iterate is clamped into the joint position
    range each step.  Raises IKConvergenceError when the residual does not
    fall below tolerance within ``max_iters``.
    """
    target_pos = np.asarray(target_pos, dtype=float)
    q = np.asarray(q_seed, dtype=float).copy()
    rows = 3 if target_rot is None else 6
    for _ in range(max_iters):
        pos, rot = fk_transform(model, q)
        err_p = target_pos - pos
        if target_rot is None:
            err = err_p
            converged = np.linalg.norm(err_p) < pos_tol
        else:
            err_r = orientation_error(rot, target_rot)
            err = np.concatenate([err_p, err_r])
            converged = (np.linalg.norm(err_p) < pos_tol
                         and np.linalg.norm(err_r) < rot_tol)
        if converged:
            return q
        jac = jacobian(model, q)[:rows]
        jjt = jac @ jac.T + damping**2 * np.eye(rows)
        dq = jac.T @ np.linalg.solve(jjt, err)
        biggest = np.max(np.abs(dq))
        if biggest > step_clamp:
            dq *= step_clamp / biggest
        q = q + dq
        if limits is not None:
            q = np.clip(q, limits.p_min, limits.p_max)
    raise IKConvergenceError(
        f"IK did not converge on target {np.array2string(target_pos, precision=4)} "
        f"(residual {np.linalg.norm(err):.3e})")


def plate_motion(model: ChainModel, q_series, dt: float):
    """Plate poses with finite-difference linear acceleration / angular velocity.

    ``q_series`` are joint vectors at consecutive control ticks spaced ``dt``
    apart.  Interior samples use central differences, the two endpoints reuse
    their neighbours' one-sided stencils.
    """
    q_series = np.asarray(q_series, dtype=float)
    k = q_series.shape[0]
    if k < 3:
        raise ConfigurationError("plate_motion needs at least 3 substep samples")
    positions = np.empty((k, 3))
    rots = np.empty((k, 3, 3))
    for i in range(k):
        positions[i], rots[i] = fk_transform(model, q_series[i])

    acc = np.empty_like(positions)
    acc[1:-1] = (positions[2:] - 2.0 * positions[1:-1] + positions[:-2]) / dt**2
    acc[0] = (positions[2] - 2.0 * positions[1] + positions[0]) / dt**2
    acc[-1] = (positions[-1] - 2.0 * positions[-2] + positions[-3]) / dt**2

    omega = np.empty_like(positions)
    for i in range(k):
        if 0 < i < k - 1:
            rel = rots[i + 1] @ rots[i - 1].T
            omega[i] = Rotation.from_matrix(rel).as_rotvec() / (2.0 * dt)
        else:
            a, b = (0, 1) if i == 0 else (k - 2, k - 1)
            rel = rots[b] @ rots[a].T
            omega[i] = Rotation.from_matrix(rel).as_rotvec() / dt

    poses = []
    for i in range(k):
        poses.append(PlatePose(position=positions[i],
                               quat=Rotation.from_matrix(rots[i]).as_quat(),
                               lin_acc=acc[i], ang_vel=omega[i]))
    return poses


# ---------------------------------------------------------------------------
# chain description files

def load_chain(path) -> tuple[ChainModel, JointLimits]:
    """Read a chain description file (JSON, schema in the README)."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return chain_from_dict(raw)


def chain_from_dict(raw: dict) -> tuple[ChainModel, JointLimits]:
    try:
        joint_rows = raw["joints"]
        joints = tuple(
            JointRow(axis=j["axis"], origin_xyz=j["origin_xyz_m"],
                     origin_rpy=j.get("origin_rpy_rad", [0.0, 0.0, 0.0]))
            for j in joint_rows
        )
        model = ChainModel(
            joints=joints,
            plate_xyz=raw.get("plate_offset_xyz_m", [0.0, 0.0, 0.0]),
            plate_rpy=raw.get("plate_offset_rpy_rad", [0.0, 0.0, 0.0]),
            q_home=raw.get("q_home_rad"),
            name=raw.get("name", "chain"),
        )
        limits = JointLimits(
            p_min=[j["p_min_rad"] for j in joint_rows],
            p_max=[j["p_max_rad"] for j in joint_rows],
            v_max=[j["v_max_rad_per_s"] for j in joint_rows],
            a_max=[j["a_max_rad_per_s2"] for j in joint_rows],
            j_max=[j["j_max_rad_per_s3"] for j in joint_rows],
        )
    except KeyError as exc:
        raise ConfigurationError(f"chain description is missing field {exc}") from exc
    return model, limits


def chain_to_dict(model: ChainModel, limits: JointLimits) -> dict:
    joints = []
    for i, row in enumerate(model.joints):
        joints.append({
            "axis": list(row.axis),
            "origin_xyz_m": list(row.origin_xyz),
            "origin_rpy_rad": list(row.origin_rpy),
            "p_min_rad": float(limits.p_min[i]),
            "p_max_rad": float(limits.p_max[i]),
            "v_max_rad_per_s": float(limits.v_max[i]),
            "a_max_rad_per_s2": float(limits.a_max[i]),
            "j_max_rad_per_s3": float(limits.j_max[i]),
        })
    return {
        "name": model.name,
        "joints": joints,
        "plate_offset_xyz_m": list(model.plate_xyz),
        "plate_offset_rpy_rad": list(model.plate_rpy),
        "q_home_rad": list(model.q_home),
    }


def save_chain(path, model: ChainModel, limits: JointLimits) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(chain_to_dict(model, limits), fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# stock chains

def planar_chain(lengths, v_max=2.0, a_max=10.0, j_max=100.0) -> tuple[ChainModel, JointLimits]:
    """n-link planar arm in the x-y plane (all joints about z); for tests."""
    joints = []
    offset = [0.0, 0.0, 0.0]
    for length in lengths:
        joints.append(JointRow(axis=[0, 0, 1], origin_xyz=offset, origin_rpy=[0, 0, 0]))
        offset = [float(length), 0.0, 0.0]
    model = ChainModel(joints=tuple(joints), plate_xyz=offset, name="planar")
    n = len(lengths)
    limits = JointLimits(p_min=[-np.pi] * n, p_max=[np.pi] * n,
                         v_max=[v_max] * n, a_max=[a_max] * n, j_max=[j_max] * n)
    return model, limits


def gimbal_chain(height=0.5) -> tuple[ChainModel, JointLimits]:
    """Two-joint tilt unit (x then y axis) under the plate centre.

    Joint angles map directly onto plate tilt, which makes the balancing
    behaviour easy to reason about and to verify.
    """
    joints = (
        JointRow(axis=[1, 0, 0], origin_xyz=[0, 0, height], origin_rpy=[0, 0, 0]),
        JointRow(axis=[0, 1, 0], origin_xyz=[0, 0, 0], origin_rpy=[0, 0, 0]),
    )
    model = ChainModel(joints=joints, plate_xyz=[0, 0, 0.02], name="gimbal")
    limits = JointLimits(p_min=[-0.6, -0.6], p_max=[0.6, 0.6],
                         v_max=[2.0, 2.0], a_max=[20.0, 20.0], j_max=[200.0, 200.0])
    return model, limits


def seven_dof_chain() -> tuple[ChainModel, JointLimits]:
    """7-joint arm with alternating z/y axes and link offsets in the 0.1-0.4 m
    range, in the style of common collaborative arms."""
    rows = [
        ([0, 0, 1], [0.0, 0.0, 0.340]),
        ([0, 1, 0], [0.0, 0.0, 0.0]),
        ([0, 0, 1], [0.0, 0.0, 0.400]),
        ([0, -1, 0], [0.0, 0.0, 0.0]),
        ([0, 0, 1], [0.0, 0.0, 0.400]),
        ([0, 1, 0], [0.0, 0.0, 0.0]),
        ([0, 0, 1], [0.0, 0.0, 0.126]),
    ]
    joints = tuple(JointRow(axis=a, origin_xyz=o, origin_rpy=[0, 0, 0]) for a, o in rows)
    q_home = [0.0, 1.1, 0.0, 1.6, 0.0, 0.5, 0.0]
    model = ChainModel(joints=joints, plate_xyz=[0, 0, 0.05], q_home=q_home,
                       name="arm7")
    deg = np.pi / 180.0
    limits = JointLimits(
        p_min=-np.array([170, 120, 170, 120, 170, 120, 175]) * deg,
        p_max=np.array([170, 120, 170, 120, 170, 120, 175]) * deg,
        v_max=[1.71, 1.71, 1.75, 2.27, 2.44, 3.14, 3.14],
        a_max=[10.0, 10.0, 10.0, 10.0, 12.0, 15.0, 15.0],
        j_max=[100.0, 100.0, 100.0, 100.0, 120.0, 150.0, 150.0],
    )
    return model, limits

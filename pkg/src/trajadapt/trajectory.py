"""Reference-trajectory generation: waypoints -> spline -> joint space ->
time parameterization -> uniform resampling, plus mirroring and dataset IO.

References are produced with a configurable limit headroom (default 5 %) so
the online adaptation layer retains some authority; set it to 0 for
references that ride the limits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigurationError, IKConvergenceError, PathRejectedError
from .kinematics import ChainModel, fk_transform, inverse_kinematics
from .limits import JointLimits

MIRROR_PLANES = {
    "xz": np.array([1.0, -1.0, 1.0]),   # flips y
    "yz": np.array([-1.0, 1.0, 1.0]),   # flips x
}


@dataclass(frozen=True)
class SamplingAreas:
    """Ordered axis-aligned boxes (start, vias, end) with an optional shared
    height band that overrides the boxes' z per trajectory."""

    boxes: tuple
    height_band: tuple | None = None

    def __post_init__(self):
        boxes = tuple((np.asarray(lo, float), np.asarray(hi, float))
                      for lo, hi in self.boxes)
        if len(boxes) < 2:
            raise ConfigurationError("need at least a start and an end box")
        for lo, hi in boxes:
            if lo.shape != (3,) or hi.shape != (3,) or np.any(lo > hi):
                raise ConfigurationError("sampling box must satisfy lo <= hi in R^3")
        object.__setattr__(self, "boxes", boxes)
        if self.height_band is not None:
            z0, z1 = self.height_band
            if z0 > z1:
                raise ConfigurationError("height band must satisfy z0 <= z1")
            object.__setattr__(self, "height_band", (float(z0), float(z1)))


@dataclass
class ReferenceTrajectory:
    """Joint positions uniformly sampled at the decision period."""

    dt: float
    positions: np.ndarray           # (T, n_joints)
    traj_id: str = "traj"
    split: str = "train"
    waypoints: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if self.split not in ("train", "test"):
            raise ConfigurationError("split must be 'train' or 'test'")

    @property
    def n_steps(self) -> int:
        return self.positions.shape[0]

    @property
    def n_joints(self) -> int:
        return self.positions.shape[1]

    @property
    def duration(self) -> float:
        return (self.n_steps - 1) * self.dt


@dataclass
class TimedTrajectory:
    t: np.ndarray
    q: np.ndarray

    @property
    def duration(self) -> float:
        return float(self.t[-1]) if self.t.size else 0.0


def sample_waypoints(areas: SamplingAreas, rng) -> np.ndarray:
    """One uniform draw per box, ordered; deterministic for a seeded rng."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    pts = np.array([rng.uniform(lo, hi) for lo, hi in areas.boxes])
    if areas.height_band is not None:
        z0, z1 = areas.height_band
        pts[:, 2] = rng.uniform(z0, z1)
    return pts


class CartesianPath:
    """C2 cubic spline through waypoints, natural end conditions, chord-length
    parameter normalized to [0, 1]."""

    def __init__(self, waypoints):
        waypoints = np.atleast_2d(np.asarray(waypoints, dtype=float))
        if waypoints.shape[0] < 2:
            raise ConfigurationError("path needs at least 2 waypoints")
        seglen = np.linalg.norm(np.diff(waypoints, axis=0), axis=1)
        if np.any(seglen < 1e-12):
            raise ConfigurationError("duplicate consecutive waypoints make a degenerate segment")
        u = np.concatenate([[0.0], np.cumsum(seglen)])
        u /= u[-1]
        self.waypoints = waypoints
        self.u_knots = u
        self._spline = CubicSpline(u, waypoints, axis=0, bc_type="natural")

    def __call__(self, u):
        return self._spline(np.clip(u, 0.0, 1.0))


def spline_path(waypoints) -> CartesianPath:
    return CartesianPath(waypoints)


def path_to_joint_space(path: CartesianPath, model: ChainModel, samples: int,
                        q_seed=None, target_rot=None, limits: JointLimits | None = None,
                        max_jump=0.2) -> np.ndarray:
    """Dense IK along the path with seed continuation.

    The plate is held at ``target_rot`` (identity by default, i.e. horizontal).
    Rejects the path on IK failure or on an inter-sample joint jump above
    ``max_jump`` (a branch flip).
    """
    if samples < 2:
        raise ConfigurationError("need at least 2 path samples")
    if target_rot is None:
        target_rot = np.eye(3)
    q = np.asarray(model.q_home if q_seed is None else q_seed, dtype=float)

    # walk the seed to the path start in a few straight-line substeps so a
    # distant home posture cannot derail the first solve
    start = path(0.0)
    from_pos, _ = fk_transform(model, q)
    for alpha in np.linspace(0.2, 1.0, 5):
        try:
            q = inverse_kinematics(model, from_pos + alpha * (start - from_pos), q,
                                   target_rot=target_rot, limits=limits)
        except IKConvergenceError as exc:
            raise PathRejectedError(f"cannot reach path start: {exc}") from exc

    us = np.linspace(0.0, 1.0, samples)
    out = np.empty((samples, model.n_joints))
    for k, u in enumerate(us):
        try:
            qk = inverse_kinematics(model, path(u), q, target_rot=target_rot,
                                    limits=limits)
        except IKConvergenceError as exc:
            raise PathRejectedError(f"IK failed at sample {k}: {exc}") from exc
        if k > 0 and np.max(np.abs(qk - out[k - 1])) > max_jump:
            raise PathRejectedError(f"joint-space discontinuity at sample {k}")
        out[k] = qk
        q = qk
    return out


def time_parameterize(q_path, limits: JointLimits, headroom: float = 0.05,
                      grid: int = 600) -> TimedTrajectory:
    """Forward-backward pass assigning a monotone time to a joint path.

    The path speed is capped so per-joint velocity and acceleration stay
    within (1 - headroom) of their limits along the (spline-smoothed) path.
    """
    q_path = np.atleast_2d(np.asarray(q_path, dtype=float))
    m = q_path.shape[0]
    if m < 2 or np.max(np.abs(q_path - q_path[0])) < 1e-12:
        return TimedTrajectory(t=np.zeros(1), q=q_path[:1].copy())

    v_lim = limits.v_max * (1.0 - headroom)
    a_lim = limits.a_max * (1.0 - headroom)

    s_in = np.linspace(0.0, 1.0, m)
    spl = CubicSpline(s_in, q_path, axis=0, bc_type="natural")
    s = np.linspace(0.0, 1.0, grid)
    ds = s[1] - s[0]
    q = spl(s)
    qp = spl(s, 1)     # dq/ds
    qpp = spl(s, 2)

    tiny = 1e-10
    # squared-speed cap from the velocity limit
    cap = np.min((v_lim / np.maximum(np.abs(qp), tiny)) ** 2, axis=1)

    # Acceleration feasibility. Per joint the admissible path acceleration u
    # at squared speed x is the interval A_j*x -+ B_j (A = -q''/q',
    # B = a_lim/|q'|); a nonempty intersection over joints bounds x by the
    # pairwise conditions (A_j - A_i) * x <= B_i + B_j.  Joints with a
    # vanishing tangent constrain x directly via |q''| * x <= a_lim.
    moving = np.abs(qp) > tiny
    a_coef = np.where(moving, -qpp / np.where(moving, qp, 1.0), 0.0)
    b_coef = np.where(moving, a_lim / np.maximum(np.abs(qp), tiny), np.inf)

    diff = a_coef[:, :, None] - a_coef[:, None, :]
    bsum = b_coef[:, :, None] + b_coef[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        pair_cap = np.where(diff > tiny, bsum / diff, np.inf)
        stall_cap = np.where(~moving & (np.abs(qpp) > tiny),
                             a_lim / np.maximum(np.abs(qpp), tiny), np.inf)
    cap = np.minimum(cap, np.nanmin(pair_cap, axis=(1, 2)))
    cap = np.minimum(cap, np.min(stall_cap, axis=1))
    cap = np.maximum(cap, 0.0)

    def u_max(k, x):
        vals = a_coef[k] * x + b_coef[k]
        return float(np.min(vals[moving[k]])) if np.any(moving[k]) else 0.0

    def u_min(k, x):
        vals = a_coef[k] * x - b_coef[k]
        return float(np.max(vals[moving[k]])) if np.any(moving[k]) else 0.0

    x = np.minimum(np.full(grid, np.inf), cap)
    x[0] = 0.0
    for k in range(grid - 1):
        x[k] = min(x[k], cap[k])
        reach = x[k] + 2.0 * u_max(k, x[k]) * ds
        x[k + 1] = min(x[k + 1], max(reach, 0.0))
    x[-1] = 0.0
    for k in range(grid - 1, 0, -1):
        x[k] = min(x[k], cap[k])
        reach = x[k] - 2.0 * u_min(k, x[k]) * ds
        x[k - 1] = min(x[k - 1], max(reach, 0.0))
    x = np.maximum(np.minimum(x, cap), 0.0)

    sdot = np.sqrt(x)
    dt_seg = 2.0 * ds / np.maximum(sdot[:-1] + sdot[1:], 1e-9)
    t = np.concatenate([[0.0], np.cumsum(dt_seg)])
    return TimedTrajectory(t=t, q=q)


def resample_uniform(timed: TimedTrajectory, dt: float, traj_id="traj",
                     split="train", waypoints=None) -> ReferenceTrajectory:
    """Rows at t = 0, dt, ..., floor(T/dt)*dt (final instant clamped into range)."""
    if dt <= 0:
        raise ConfigurationError("dt must be > 0")
    duration = timed.duration
    count = int(np.floor(duration / dt + 1e-9)) + 1
    ts = np.minimum(np.arange(count) * dt, duration)
    if timed.t.size == 1:
        rows = np.repeat(timed.q[:1], count, axis=0)
    else:
        rows = np.column_stack([
            np.interp(ts, timed.t, timed.q[:, j]) for j in range(timed.q.shape[1])
        ])
    return ReferenceTrajectory(dt=dt, positions=rows, traj_id=traj_id,
                               split=split, waypoints=waypoints)


def check_reference_limits(traj: ReferenceTrajectory, limits: JointLimits) -> dict:
    """Finite-difference velocity/acceleration ratios of a sampled reference.

    Returns max |v|/v_max (consecutive differences) and max |a|/a_max
    (central differences); both must be <= 1 for a usable reference.
    """
    p = traj.positions
    if p.shape[0] < 3:
        return {"vel_ratio": 0.0, "acc_ratio": 0.0}
    v = np.diff(p, axis=0) / traj.dt
    a = (p[2:] - 2.0 * p[1:-1] + p[:-2]) / traj.dt**2
    return {
        "vel_ratio": float(np.max(np.abs(v) / limits.v_max)),
        "acc_ratio": float(np.max(np.abs(a) / limits.a_max)),
    }


def _mirror_start_seed(model: ChainModel, limits, source_row, target_pos) -> np.ndarray:
    """Seed candidate closest (in plate position) to the mirrored start."""
    candidates = [np.asarray(model.q_home, dtype=float),
                  -np.asarray(model.q_home, dtype=float),
                  -np.asarray(source_row, dtype=float)]
    if limits is not None:
        candidates = [np.clip(c, limits.p_min, limits.p_max) for c in candidates]
    dists = [np.linalg.norm(fk_transform(model, c)[0] - target_pos) for c in candidates]
    return candidates[int(np.argmin(dists))]


def mirror_trajectory(traj: ReferenceTrajectory, plane: str, model: ChainModel,
                      limits: JointLimits | None = None) -> ReferenceTrajectory:
    """Mirror a reference across a workspace symmetry plane, re-solved via IK.

    The Cartesian plate path of the reference is reflected and converted back
    to joint space sample by sample (same timing), so the result is a real
    joint trajectory rather than a sign-flipped copy.
    """
    if plane not in MIRROR_PLANES:
        raise ConfigurationError(f"unknown mirror plane {plane!r}; use one of {sorted(MIRROR_PLANES)}")
    mirror = MIRROR_PLANES[plane]
    m_mat = np.diag(mirror)

    rows = traj.positions
    out = np.empty_like(rows)
    q = None
    for k in range(rows.shape[0]):
        pos, rot = fk_transform(model, rows[k])
        target_pos = mirror * pos
        target_rot = m_mat @ rot @ m_mat
        if q is None:
            q = _mirror_start_seed(model, limits, rows[0], target_pos)
            from_pos, _ = fk_transform(model, q)
            for alpha in np.linspace(0.2, 1.0, 5):
                try:
                    q = inverse_kinematics(model, from_pos + alpha * (target_pos - from_pos),
                                           q, target_rot=target_rot, limits=limits)
                except IKConvergenceError as exc:
                    raise PathRejectedError(f"mirror start unreachable: {exc}") from exc
        try:
            q = inverse_kinematics(model, target_pos, q, target_rot=target_rot,
                                   limits=limits)
        except IKConvergenceError as exc:
            raise PathRejectedError(f"mirror IK failed at row {k}: {exc}") from exc
        out[k] = q
    wps = None if traj.waypoints is None else traj.waypoints * mirror
    return ReferenceTrajectory(dt=traj.dt, positions=out,
                               traj_id=f"{traj.traj_id}-m{plane}",
                               split=traj.split, waypoints=wps)


# ---------------------------------------------------------------------------
# pipeline driver

@dataclass
class PipelineConfig:
    dt: float = 0.05
    headroom: float = 0.05
    ik_samples: int = 100
    grid: int = 600
    test_fraction: float = 0.2
    max_attempts: int = 5


def generate_reference(model: ChainModel, limits: JointLimits, areas: SamplingAreas,
                       cfg: PipelineConfig, seed, traj_id="traj",
                       split="train") -> ReferenceTrajectory:
    """Run the full pipeline once; raises PathRejectedError on a bad draw."""
    rng = np.random.default_rng(seed)
    wps = sample_waypoints(areas, rng)
    path = spline_path(wps)
    q_path = path_to_joint_space(path, model, cfg.ik_samples, limits=limits)
    timed = time_parameterize(q_path, limits, headroom=cfg.headroom, grid=cfg.grid)
    traj = resample_uniform(timed, cfg.dt, traj_id=traj_id, split=split, waypoints=wps)
    ratios = check_reference_limits(traj, limits)
    if ratios["vel_ratio"] > 1.0 or ratios["acc_ratio"] > 1.0:
        raise PathRejectedError(
            f"reference exceeds limits after parameterization: {ratios}")
    return traj


def generate_dataset(model: ChainModel, limits: JointLimits, areas: SamplingAreas,
                     cfg: PipelineConfig, count: int, seed: int):
    """Deterministic dataset of ``count`` references plus rejection stats.

    Each trajectory gets its own derived seed, so generation order and worker
    layout cannot change the output.
    """
    trajs = []
    rejections = []
    for idx in range(count):
        split_rng = np.random.default_rng([int(seed), idx, 0xA5])
        split = "test" if split_rng.uniform() < cfg.test_fraction else "train"
        produced = None
        for attempt in range(cfg.max_attempts):
            try:
                produced = generate_reference(
                    model, limits, areas, cfg, seed=[int(seed), idx, attempt],
                    traj_id=f"traj-{idx:05d}", split=split)
                break
            except PathRejectedError as exc:
                rejections.append((idx, attempt, str(exc)))
        if produced is not None:
            trajs.append(produced)
    return trajs, rejections


# ---------------------------------------------------------------------------
# dataset files

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_dataset(path, trajs) -> None:
    """Plain-text dataset: per record an H line (id, split, dt, n_joints,
    n_rows) then P lines with one joint position row each."""
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajs:
            fh.write(f"H,{traj.traj_id},{traj.split},{_fmt(traj.dt)},"
                     f"{traj.n_joints},{traj.n_steps}\n")
            for row in traj.positions:
                fh.write("P," + ",".join(_fmt(v) for v in row) + "\n")


def load_dataset(path):
    trajs = []
    header = None
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts[0] not in ("H", "P"):
                continue
            if parts[0] == "H":
                if header is not None:
                    trajs.append(_finish_record(header, rows))
                header = parts
                rows = []
            else:
                rows.append([float(v) for v in parts[1:]])
    if header is not None:
        trajs.append(_finish_record(header, rows))
    return trajs


def _finish_record(header, rows) -> ReferenceTrajectory:
    _, traj_id, split, dt, n_joints, n_rows = header
    positions = np.asarray(rows, dtype=float)
    if positions.shape != (int(n_rows), int(n_joints)):
        raise ConfigurationError(
            f"dataset record {traj_id} has shape {positions.shape}, "
            f"header says ({n_rows}, {n_joints})")
    return ReferenceTrajectory(dt=float(dt), positions=positions,
                               traj_id=traj_id, split=split)

"""Policies for the decision loop: random/greedy probes, reference tracking,
a scripted ball balancer and a small cross-entropy-method trainer.

A policy maps a normalized observation to a normalized acceleration command
in [-1, 1] per joint via ``act(obs, rng)``; ``reset(seed)`` restarts any
internal state.  Policies are deterministic given (observation, rng state).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .environment import PlateGeometry, TaskSpec
from .errors import ConfigurationError
from .kinematics import ChainModel, jacobian
from .limits import JointLimits

GRAVITY = 9.81
BALL_DRIVE = 5.0 / 7.0 * GRAVITY   # ball acceleration per radian of tilt


@dataclass(frozen=True)
class ObservationLayout:
    """Slicing helper for the flat observation vector."""

    n_joints: int
    feedback_size: int
    n_future: int

    @property
    def size(self) -> int:
        return 3 * self.n_joints + self.feedback_size + self.n_future * self.n_joints

    def joint_pos(self, obs):
        return obs[:self.n_joints]

    def joint_vel(self, obs):
        return obs[self.n_joints:2 * self.n_joints]

    def joint_acc(self, obs):
        return obs[2 * self.n_joints:3 * self.n_joints]

    def feedback(self, obs):
        base = 3 * self.n_joints
        return obs[base:base + self.feedback_size]

    def ref_row(self, obs, k: int = 0):
        base = 3 * self.n_joints + self.feedback_size + k * self.n_joints
        return obs[base:base + self.n_joints]


class RandomPolicy:
    """Uniform commands in [-1, 1] per joint; uses the caller's rng stream."""

    def __init__(self, n_joints: int):
        self.n_joints = n_joints

    def reset(self, seed=None):
        pass

    def act(self, obs, rng) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, self.n_joints)


class GreedyMaxPolicy:
    """Always asks for +1; the engine clips it to the valid upper bound."""

    def __init__(self, n_joints: int):
        self.n_joints = n_joints

    def reset(self, seed=None):
        pass

    def act(self, obs, rng) -> np.ndarray:
        return np.ones(self.n_joints)


class TrackingPolicy:
    """PD-on-deviation tracker with estimated reference feedforward.

    Commands kp * (reference - position) + kd * (reference velocity -
    velocity) plus the reference acceleration, where reference velocity and
    acceleration are finite differences of the observed reference rows across
    steps (held internally; ``reset`` clears them).  The gains keep the
    discrete loop comfortably inside the unit circle, so step disturbances do
    not ring against the jerk bound.
    """

    def __init__(self, layout: ObservationLayout, limits: JointLimits,
                 dt: float, kp: float = 60.0, kd: float = 14.0,
                 feedforward: bool = True):
        if kp <= 0 or kd <= 0:
            raise ConfigurationError("tracking gains must be positive")
        self.layout = layout
        self.limits = limits
        self.dt = dt
        self.kp = kp
        self.kd = kd
        self.feedforward = feedforward
        self._prev_ref = None
        self._prev_vref = None

    def reset(self, seed=None):
        self._prev_ref = None
        self._prev_vref = None

    def tracking_accel(self, obs, shift=None) -> np.ndarray:
        lay, lim = self.layout, self.limits
        p = lay.joint_pos(obs) * lim.p_half_range + lim.p_mid
        v = lay.joint_vel(obs) * lim.v_max
        p_ref = lay.ref_row(obs, 0) * lim.p_half_range + lim.p_mid

        v_ref = np.zeros_like(p_ref)
        a_ff = np.zeros_like(p_ref)
        if self._prev_ref is not None:
            v_ref = (p_ref - self._prev_ref) / self.dt
            if self.feedforward and self._prev_vref is not None:
                a_ff = (v_ref - self._prev_vref) / self.dt
        self._prev_ref = p_ref
        self._prev_vref = v_ref

        target = p_ref if shift is None else p_ref + shift
        return a_ff + self.kp * (target - p) + self.kd * (v_ref - v)

    def act(self, obs, rng) -> np.ndarray:
        return np.clip(self.tracking_accel(obs) / self.limits.a_max, -1.0, 1.0)


class PDBalancePolicy(TrackingPolicy):
    """Scripted ball balancer: a PD law on the ball error turns into a plate
    tilt, realized by the masked joints as an offset on their reference rows;
    every joint then runs the tracking law toward the (shifted) reference.

    With zero ball gains the offset vanishes and the policy is exactly the
    plain tracker.  The masked joints' tilt authority is taken from the
    angular part of the chain Jacobian at an anchor posture and checked at
    setup.  Ball position and velocity come from the task feedback (current
    and previous measured positions).
    """

    def __init__(self, layout: ObservationLayout, limits: JointLimits, dt: float,
                 model: ChainModel, geometry: PlateGeometry, task: TaskSpec,
                 anchor_q, mask=(-2, -1), ball_kp: float = 6.0,
                 ball_kd: float = 4.5, tilt_limit: float = 0.25, **gains):
        super().__init__(layout, limits, dt, **gains)
        if ball_kp < 0 or ball_kd < 0:
            raise ConfigurationError("ball gains must be >= 0")
        n = limits.n_joints
        mask = tuple(int(i) % n for i in mask)
        if len(set(mask)) < 2:
            raise ConfigurationError("balance mask must select at least 2 joints")
        self.mask = list(mask)
        self.model = model
        self.geometry = geometry
        self.task = task
        self.anchor_q = np.asarray(anchor_q, dtype=float)
        self.ball_kp = ball_kp
        self.ball_kd = ball_kd
        self.tilt_limit = tilt_limit

        jac = jacobian(model, self.anchor_q)
        tilt_jac = jac[3:5][:, self.mask]           # world x/y tilt rates
        svals = np.linalg.svd(tilt_jac, compute_uv=False)
        if svals.size < 2 or svals[1] < 1e-6:
            raise ConfigurationError(
                "masked joints have no independent plate-tilt authority")
        self.tilt_to_joints = np.linalg.pinv(tilt_jac)

    def act(self, obs, rng) -> np.ndarray:
        lay, lim = self.layout, self.limits
        half = self.geometry.half_extents
        f = lay.feedback(obs)
        cur = f[0:2] * half
        prev = f[2:4] * half
        err = (f[4:6] * half) if self.task.kind == "in_place" else cur
        vel = (cur - prev) / self.dt

        # desired ball acceleration -> plate tilt about world x/y
        u = -(self.ball_kp * err + self.ball_kd * vel)
        tilt = np.array([-u[1], u[0]]) / BALL_DRIVE
        norm = np.linalg.norm(tilt)
        if norm > self.tilt_limit:
            tilt *= self.tilt_limit / norm

        shift = np.zeros(lim.n_joints)
        shift[self.mask] = self.tilt_to_joints @ tilt
        return np.clip(self.tracking_accel(obs, shift) / lim.a_max, -1.0, 1.0)


class LinearPolicy:
    """Affine map from observation to action, clipped into [-1, 1]."""

    def __init__(self, weights: np.ndarray):
        self.weights = np.atleast_2d(np.asarray(weights, dtype=float))

    @classmethod
    def zeros(cls, n_out: int, n_in: int) -> "LinearPolicy":
        return cls(np.zeros((n_out, n_in + 1)))

    @property
    def n_params(self) -> int:
        return self.weights.size

    def with_params(self, flat) -> "LinearPolicy":
        return LinearPolicy(np.asarray(flat, dtype=float).reshape(self.weights.shape))

    def reset(self, seed=None):
        pass

    def act(self, obs, rng) -> np.ndarray:
        x = np.concatenate([np.asarray(obs, dtype=float), [1.0]])
        return np.clip(self.weights @ x, -1.0, 1.0)

    def save(self, path) -> None:
        np.savetxt(path, self.weights,
                   header=f"linear policy {self.weights.shape[0]} x {self.weights.shape[1]}")

    @classmethod
    def load(cls, path) -> "LinearPolicy":
        return cls(np.loadtxt(path))


def cem_optimize(objective, dim: int, generations: int, population: int = 32,
                 elite_frac: float = 0.25, seed: int = 0, init_mean=None,
                 init_std: float = 0.5, min_std: float = 1e-3):
    """Cross-entropy method over a flat parameter vector.

    ``objective(params) -> float`` is maximized.  Returns (best_params,
    history); history holds per-generation mean/best/elite-mean returns.
    An elite fraction of 1.0 selects everything, which leaves the sampling
    distribution unchanged (degenerate but well defined).
    """
    if generations < 1:
        raise ConfigurationError("need at least one generation")
    rng = np.random.default_rng(seed)
    mean = np.zeros(dim) if init_mean is None else np.asarray(init_mean, float).copy()
    std = np.full(dim, init_std)
    n_elite = max(1, int(round(population * elite_frac)))

    best_params = mean.copy()
    best_return = -np.inf
    history = []
    for gen in range(generations):
        samples = mean[None, :] + std[None, :] * rng.standard_normal((population, dim))
        returns = np.array([objective(s) for s in samples])
        order = np.argsort(returns)[::-1]
        elite = samples[order[:n_elite]]
        elite_returns = returns[order[:n_elite]]
        if returns[order[0]] > best_return:
            best_return = float(returns[order[0]])
            best_params = samples[order[0]].copy()
        if n_elite < population:
            mean = elite.mean(axis=0)
            std = np.maximum(elite.std(axis=0), min_std)
        history.append({
            "generation": gen,
            "mean_return": float(returns.mean()),
            "elite_mean_return": float(elite_returns.mean()),
            "best_return": best_return,
            "dist_mean": mean.copy(),
            "dist_std": std.copy(),
        })
    return best_params, history


def cem_train(episode_return, template: LinearPolicy, generations: int,
              seed: int = 0, population: int = 32, elite_frac: float = 0.25,
              init_std: float = 0.5):
    """Train a linear policy with CEM against ``episode_return(policy) -> float``.

    Returns (trained policy, history).  Deterministic under the seed as long
    as the return evaluation is.
    """
    def objective(flat):
        return episode_return(template.with_params(flat))

    best, history = cem_optimize(objective, template.n_params, generations,
                                 population=population, elite_frac=elite_frac,
                                 seed=seed, init_std=init_std)
    return template.with_params(best), history

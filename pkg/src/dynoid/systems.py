"""Ground-truth discrete-time plants and the controllers that excite them.

Two benchmark plants are provided:

* a cascade of two water tanks driven by an inflow ``u`` and observed
  through the lower tank level;
* a planar two-propeller drone with state ``(p_x, p_z, theta, v_x, v_z, omega)``
  and inputs ``(Omega_1, Omega_2)`` (propeller speeds, rad/s).

Step functions are vectorized over leading axes so the diagnostics module
can push large batches of states through them at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigurationError, ControllerError, NumericError, UsageError


# ---------------------------------------------------------------------------
# parameters

@dataclass(frozen=True)
class TankParams:
    k1: float = 0.5
    k2: float = 0.4
    k3: float = 0.2
    k4: float = 0.3

    def __post_init__(self):
        if min(self.k1, self.k2, self.k3, self.k4) <= 0:
            raise ConfigurationError("tank gains must be strictly positive")

    def equilibrium(self, level: float) -> tuple[np.ndarray, float]:
        """Steady state ``(x1, x2)`` and input holding the lower tank at ``level``."""
        x2 = float(level)
        x1 = (self.k4 / self.k3) ** 2 * x2
        u = self.k1 * np.sqrt(x1) / self.k2
        return np.array([x1, x2]), float(u)


@dataclass(frozen=True)
class DroneParams:
    k_T: float = 4e-4
    gamma: float = 1e-9
    L: float = 0.15
    m: float = 1.0
    J: float = 2.7e-3
    g: float = 9.81
    dt: float = 1.0 / 30.0
    omega_max: float = 300.0

    def __post_init__(self):
        if min(self.k_T, self.gamma, self.L, self.m, self.J, self.g, self.dt, self.omega_max) <= 0:
            raise ConfigurationError("drone parameters must be strictly positive")

    @property
    def hover_speed(self) -> float:
        """Propeller speed at which thrust balances gravity."""
        return float(np.sqrt(self.m * self.g / (2.0 * self.k_T)))


# ---------------------------------------------------------------------------
# tank

def tank_step(x: np.ndarray, u, p: TankParams = TankParams()) -> np.ndarray:
    """One update of the cascaded tanks.

    ``x`` has shape ``(..., 2)``; ``u`` broadcasts against ``x[..., 0]``.
    Square-root arguments and the resulting levels are clamped at zero.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if u.ndim and u.shape[-1:] == (1,) and u.ndim == x.ndim:
        u = u[..., 0]
    x1, x2 = x[..., 0], x[..., 1]
    s1 = np.sqrt(np.maximum(x1, 0.0))
    s2 = np.sqrt(np.maximum(x2, 0.0))
    n1 = x1 - p.k1 * s1 + p.k2 * u
    n2 = x2 + p.k3 * s1 - p.k4 * s2
    return np.stack([np.maximum(n1, 0.0), np.maximum(n2, 0.0)], axis=-1)


def tank_observe(x: np.ndarray, w=0.0) -> np.ndarray:
    """Measured lower-tank level ``x2 + w``, shape ``(..., 1)``."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if w.ndim and w.shape[-1] != 1:
        w = w[..., None]
    return x[..., 1:2] + w


# ---------------------------------------------------------------------------
# drone

def drone_accelerations(s: np.ndarray, u: np.ndarray, p: DroneParams = DroneParams()) -> np.ndarray:
    """Continuous-time accelerations ``(ddot p_x, ddot p_z, ddot theta)``."""
    s = np.asarray(s, dtype=float)
    u = np.asarray(u, dtype=float)
    o1, o2 = u[..., 0], u[..., 1]
    theta, vx, vz = s[..., 2], s[..., 3], s[..., 4]
    thrust = p.k_T / p.m * (o1 * o1 + o2 * o2)
    drag = p.gamma / p.m * (o1 + o2)
    ax = -thrust * np.sin(theta) - drag * vx
    az = thrust * np.cos(theta) - drag * vz - p.g
    aw = p.k_T * p.L / p.J * (o2 * o2 - o1 * o1)
    return np.stack(np.broadcast_arrays(ax, az, aw), axis=-1)


def drone_step(s: np.ndarray, u: np.ndarray, p: DroneParams = DroneParams()) -> np.ndarray:
    """Explicit Euler step of the planar drone.

    Velocities advance with the current accelerations, positions with the
    current velocities.
    """
    s = np.asarray(s, dtype=float)
    acc = drone_accelerations(s, u, p)
    pos, vel = s[..., :3], s[..., 3:]
    out = np.concatenate([pos + p.dt * vel, vel + p.dt * acc], axis=-1)
    if not np.all(np.isfinite(out)):
        raise NumericError("drone state became non-finite")
    return out


def drone_observe(s: np.ndarray, w=0.0) -> np.ndarray:
    """Measured ``(p_x, p_z, theta)`` plus noise."""
    return np.asarray(s, dtype=float)[..., :3] + w


def drone_hover_state(px: float = 0.0, pz: float = 0.0) -> np.ndarray:
    return np.array([px, pz, 0.0, 0.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# generic system wrapper used by the diagnostics

@dataclass(frozen=True)
class DiscreteSystem:
    """``x+ = f(x, u)``, ``y = h(x, u)`` with vectorized callables."""

    name: str
    n_x: int
    n_u: int
    n_y: int
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    h: Callable[[np.ndarray, np.ndarray], np.ndarray]


def tank_system(p: TankParams = TankParams()) -> DiscreteSystem:
    return DiscreteSystem("tank", 2, 1, 1, lambda x, u: tank_step(x, u, p), lambda x, u: tank_observe(x))


def drone_system(p: DroneParams = DroneParams()) -> DiscreteSystem:
    return DiscreteSystem("drone2d", 6, 2, 3, lambda x, u: drone_step(x, u, p), lambda x, u: drone_observe(x))


# ---------------------------------------------------------------------------
# references and controllers

def waypoint_steps(n_points: int, horizon: int) -> np.ndarray:
    """Integer steps at which evenly spread waypoints are pinned."""
    return np.round(np.linspace(0.0, horizon - 1.0, n_points)).astype(int)


def spline_reference(waypoints, horizon: int, derivative: bool = False):
    """Natural cubic spline through waypoints spread evenly over ``horizon`` steps.

    Parameters
    ----------
    waypoints : array_like, shape (n_points,) or (n_points, n_channels)
    horizon : int
        Number of samples; waypoint ``k`` sits at step
        ``round(k*(horizon-1)/(n_points-1))``.
    derivative : bool
        Also return the first derivative with respect to the step index.

    Returns
    -------
    ndarray of shape (horizon, n_channels), plus its derivative if requested.
    """
    wp = np.asarray(waypoints, dtype=float)
    if wp.ndim == 1:
        wp = wp[:, None]
    if wp.shape[0] < 2:
        raise UsageError("a spline reference needs at least 2 waypoints")
    if horizon < 2:
        raise UsageError("horizon must be >= 2")
    if horizon < wp.shape[0]:
        raise UsageError("horizon must be at least the number of waypoints")
    knots = waypoint_steps(wp.shape[0], horizon)
    spline = CubicSpline(knots.astype(float), wp, axis=0, bc_type="natural")
    steps = np.arange(horizon, dtype=float)
    ref = spline(steps)
    ref[knots] = wp
    if derivative:
        return ref, spline(steps, 1)
    return ref


@dataclass(frozen=True)
class PidGains:
    kp: float = 2.0
    ki: float = 0.3
    kd: float = 0.1
    u_min: float = 0.0
    u_max: float = 5.0


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0
    prev_error: float | None = None


def pid_control(reference: float, measurement: float, state: PidState, gains: PidGains) -> tuple[float, PidState]:
    """Discrete PID with output saturation and integrator freezing.

    ``u = kp*e + ki*sum(e) + kd*(e - e_prev)``; the derivative term is zero
    on the very first call.  When the unsaturated command falls outside
    ``[u_min, u_max]`` the integrator keeps its previous value.
    """
    e = float(reference) - float(measurement)
    de = 0.0 if state.prev_error is None else e - state.prev_error
    integral = state.integral + e
    raw = gains.kp * e + gains.ki * integral + gains.kd * de
    if raw > gains.u_max or raw < gains.u_min:
        integral = state.integral
        raw = gains.kp * e + gains.ki * integral + gains.kd * de
    u = min(max(raw, gains.u_min), gains.u_max)
    return u, PidState(integral, e)


@dataclass(frozen=True)
class LqWeights:
    position: float = 10.0
    angle: float = 1.0
    velocity: float = 1.0
    angular_rate: float = 0.05
    input: float = 1e-5


def drone_hover_linearization(p: DroneParams) -> tuple[np.ndarray, np.ndarray]:
    """Discrete ``(A, B)`` of the Euler-stepped drone about hover."""
    oh = p.hover_speed
    ac = np.zeros((6, 6))
    ac[0, 3] = ac[1, 4] = ac[2, 5] = 1.0
    ac[3, 2] = -p.k_T / p.m * 2.0 * oh * oh
    ac[3, 3] = ac[4, 4] = -p.gamma / p.m * 2.0 * oh
    bc = np.zeros((6, 2))
    bc[4, :] = 2.0 * p.k_T / p.m * oh
    bc[5, 0] = -2.0 * p.k_T * p.L / p.J * oh
    bc[5, 1] = 2.0 * p.k_T * p.L / p.J * oh
    return np.eye(6) + p.dt * ac, p.dt * bc


@dataclass(frozen=True)
class LqTracker:
    """Receding-horizon LQ tracker about hover, precomputed for one horizon.

    The first input of the finite-horizon solution is affine in the current
    state and the upcoming reference states::

        u = u_hover - K x + sum_j G[j] r_{j+1}
    """

    params: DroneParams
    horizon: int
    K: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)

    def command(self, reference: np.ndarray, state: np.ndarray) -> np.ndarray:
        ref = _reference_states(reference, self.horizon)
        oh = self.params.hover_speed
        u = oh - self.K @ np.asarray(state, dtype=float) + np.einsum("jab,jb->a", self.G, ref)
        return np.clip(u, 0.0, self.params.omega_max)


def _reference_states(reference, horizon: int) -> np.ndarray:
    ref = np.asarray(reference, dtype=float)
    if ref.ndim == 1:
        ref = ref[None, :]
    if ref.shape[1] == 2:
        full = np.zeros((ref.shape[0], 6))
        full[:, :2] = ref
        ref = full
    elif ref.shape[1] != 6:
        raise UsageError("reference rows must be positions (2) or full states (6)")
    if ref.shape[0] >= horizon:
        return ref[:horizon]
    pad = np.repeat(ref[-1:], horizon - ref.shape[0], axis=0)
    return np.concatenate([ref, pad], axis=0)


@lru_cache(maxsize=32)
def build_lq_tracker(p: DroneParams = DroneParams(), horizon: int = 30, weights: LqWeights = LqWeights()) -> LqTracker:
    """Solve the backward Riccati recursion once for a given horizon."""
    if horizon < 1:
        raise ConfigurationError("horizon must be >= 1")
    a, b = drone_hover_linearization(p)
    q = np.diag([weights.position] * 2 + [weights.angle] + [weights.velocity] * 2 + [weights.angular_rate])
    r = weights.input * np.eye(2)
    P = q.copy()
    gains, closed = [], []
    for _ in range(horizon):
        s = r + b.T @ P @ b
        try:
            k = np.linalg.solve(s, b.T @ P @ a)
        except np.linalg.LinAlgError as exc:
            raise ControllerError("singular Riccati step") from exc
        acl = a - b @ k
        gains.append((k, np.linalg.inv(s)))
        closed.append(acl)
        P = q + a.T @ P @ acl
        P = 0.5 * (P + P.T)
        if not np.all(np.isfinite(P)):
            raise ControllerError("Riccati recursion diverged")
    # gains[-1] belongs to the first stage (k = 0), gains[0] to the last
    gains.reverse()
    closed.reverse()
    k0, s0_inv = gains[0]
    G = np.empty((horizon, 2, 6))
    m = np.eye(6)
    for j in range(horizon):
        G[j] = s0_inv @ b.T @ m @ q
        if j + 1 < horizon:
            m = m @ closed[j + 1].T
    if not (np.all(np.isfinite(k0)) and np.all(np.isfinite(G))):
        raise ControllerError("non-finite tracker gains")
    return LqTracker(p, horizon, k0, G)


def lq_tracker(reference, state, p: DroneParams = DroneParams(), horizon: int = 30,
               weights: LqWeights = LqWeights()) -> np.ndarray:
    """Propeller speeds from the finite-horizon LQ tracker.

    ``reference`` lists the desired states for the next ``horizon`` steps
    (positions only or full 6-vectors); short references are held at their
    last row.
    """
    return build_lq_tracker(p, horizon, weights).command(reference, state)


# ---------------------------------------------------------------------------
# measurement noise

def add_noise(outputs, sigma, seed: int | np.random.Generator) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise with per-channel standard deviation."""
    y = np.asarray(outputs, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ConfigurationError("noise sigma must be >= 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return y + rng.standard_normal(y.shape) * sigma

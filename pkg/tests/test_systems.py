import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynoid.errors import ConfigurationError, NumericError, UsageError
from dynoid.systems import (
    DroneParams, LqWeights, PidGains, PidState, TankParams, add_noise, build_lq_tracker,
    drone_accelerations, drone_hover_state, drone_observe, drone_step, lq_tracker, pid_control,
    spline_reference, tank_observe, tank_step, waypoint_steps,
)

HOVER = np.sqrt(1.0 * 9.81 / (2 * 4e-4))


# -- tank -------------------------------------------------------------------

def test_tank_origin_fixed_point():
    assert np.array_equal(tank_step(np.zeros(2), 0.0), [0.0, 0.0])


def test_tank_hand_step():
    assert np.allclose(tank_step(np.array([1.0, 1.0]), 1.0), [0.9, 0.9], rtol=0, atol=1e-15)


def test_tank_equilibrium_example():
    x = np.array([0.64, 0.64 * 4 / 9])
    assert x[1] == pytest.approx(0.2844444444444444)
    y = x.copy()
    for _ in range(100):
        y = tank_step(y, 1.0)
    assert np.max(np.abs(y - x)) < 1e-12


@pytest.mark.parametrize("level", [0.5, 2.0, 4.5])
def test_tank_equilibrium_helper(level):
    x, u = TankParams().equilibrium(level)
    assert np.max(np.abs(tank_step(x, u) - x)) < 1e-12


def test_tank_clamps_at_zero():
    x = tank_step(np.array([0.01, 0.0]), 0.0)
    assert np.all(x >= 0)
    assert np.all(tank_step(np.array([-1.0, -1.0]), 0.0) >= 0)


def test_tank_params_positive():
    with pytest.raises(ConfigurationError):
        TankParams(k4=0.0)


def test_tank_observe():
    assert tank_observe(np.array([3.0, 0.5]))[0] == 0.5
    assert tank_observe(np.array([3.0, 0.5]), -0.1)[0] == pytest.approx(0.4)


def test_tank_invariance_random_rollouts():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 5, size=(10_000, 2))
    for _ in range(200):
        x = tank_step(x, rng.uniform(0, 5, size=10_000))
        assert np.all(np.isfinite(x)) and np.all(x >= 0)


def test_tank_batch_matches_scalar():
    rng = np.random.default_rng(1)
    x, u = rng.uniform(0, 5, (20, 2)), rng.uniform(0, 5, 20)
    batch = tank_step(x, u)
    for i in range(20):
        assert np.array_equal(batch[i], tank_step(x[i], u[i]))


# -- drone ------------------------------------------------------------------

def test_hover_speed_value():
    assert DroneParams().hover_speed == pytest.approx(110.736, abs=1e-3)
    assert DroneParams().hover_speed == pytest.approx(HOVER, rel=1e-15)


def test_hover_fixed_point():
    s = drone_hover_state(0.3, 1.0)
    u = np.array([HOVER, HOVER])
    assert np.max(np.abs(drone_accelerations(s, u))) < 1e-10
    assert np.max(np.abs(drone_step(s, u) - s)) < 1e-10


def test_free_fall():
    acc = drone_accelerations(np.zeros(6), np.zeros(2))
    assert acc[1] == -9.81 and acc[0] == 0.0 and acc[2] == 0.0
    s = np.zeros(6)
    for _ in range(30):
        assert drone_accelerations(s, np.zeros(2))[1] == -9.81
        s = drone_step(s, np.zeros(2))


def test_torque_sign():
    assert drone_accelerations(np.zeros(6), np.array([100.0, 120.0]))[2] > 0
    assert drone_accelerations(np.zeros(6), np.array([120.0, 100.0]))[2] < 0


def test_euler_uses_old_velocity():
    s = np.array([0.0, 0.0, 0.0, 1.0, 2.0, 0.5])
    nxt = drone_step(s, np.zeros(2))
    dt = 1 / 30
    assert np.allclose(nxt[:3], s[:3] + dt * s[3:], rtol=0, atol=1e-15)
    assert nxt[4] == pytest.approx(2.0 - dt * 9.81)


def test_drone_non_finite():
    with pytest.raises(NumericError):
        drone_step(np.array([0, 0, 0, np.nan, 0, 0.0]), np.zeros(2))


def test_drone_observe():
    s = np.arange(6.0)
    assert np.array_equal(drone_observe(s), [0.0, 1.0, 2.0])


# -- spline -----------------------------------------------------------------

def test_spline_constant():
    ref = spline_reference([2.5] * 5, 200)
    assert np.allclose(ref, 2.5, rtol=0, atol=1e-12)


def test_spline_two_points_linear():
    ref = spline_reference([1.0, 3.0], 11)[:, 0]
    assert np.allclose(ref, np.linspace(1, 3, 11), rtol=0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.integers(20, 600), st.integers(0, 2**31))
def test_spline_hits_waypoints(n, horizon, seed):
    wp = np.random.default_rng(seed).uniform(-2, 2, size=(n, 2))
    ref = spline_reference(wp, horizon)
    assert ref.shape == (horizon, 2)
    assert np.max(np.abs(ref[waypoint_steps(n, horizon)] - wp)) < 1e-12


def test_spline_errors():
    with pytest.raises(UsageError):
        spline_reference([1.0], 10)
    with pytest.raises(UsageError):
        spline_reference([1.0, 2.0, 3.0], 2)


def test_waypoint_steps_even():
    assert list(waypoint_steps(5, 200)) == [0, 50, 100, 149, 199]


# -- pid --------------------------------------------------------------------

def test_pid_zero_error():
    s = PidState()
    for _ in range(10):
        u, s = pid_control(1.0, 1.0, s, PidGains())
        assert u == 0.0
    assert s.integral == 0.0


def test_pid_proportional_only():
    u, _ = pid_control(1.0, 0.5, PidState(), PidGains(kp=2.0, ki=0.0, kd=0.0))
    assert u == 1.0


def test_pid_saturates_and_freezes_integrator():
    g = PidGains()
    u, s = pid_control(10.0, 0.0, PidState(), g)
    assert u == g.u_max
    assert s.integral == 0.0


def test_pid_tracks_tank_step():
    p, g = TankParams(), PidGains()
    x, s = np.zeros(2), PidState()
    for _ in range(150):
        u, s = pid_control(2.0, tank_observe(x)[0], s, g)
        x = tank_step(x, u, p)
    assert abs(x[1] - 2.0) / 2.0 < 0.02


# -- lq tracker -----------------------------------------------------------

def test_lq_hover_command():
    s = drone_hover_state(0.5, 1.0)
    u = lq_tracker(np.tile(s, (30, 1)), s)
    assert np.max(np.abs(u - HOVER)) < 1e-6


def test_lq_climb_command():
    s = drone_hover_state(0.0, 0.0)
    u = lq_tracker(np.tile([0.0, 1.0], (30, 1)), s)
    p = DroneParams()
    assert p.k_T * np.sum(u ** 2) > p.m * p.g


def test_lq_tracks_spline():
    rng = np.random.default_rng(3)
    wp = rng.uniform(-2, 2, size=(6, 2))
    ref, rate = spline_reference(wp, 600, derivative=True)
    p = DroneParams()
    full = np.zeros((600, 6))
    full[:, :2], full[:, 3:5] = ref, rate / p.dt
    ctrl = build_lq_tracker(p, 30, LqWeights())
    s = np.concatenate([ref[0], [0.0], full[0, 3:]])
    errs = []
    for t in range(599):
        u = ctrl.command(full[t + 1:t + 31], s)
        assert np.all((u >= 0) & (u <= p.omega_max))
        s = drone_step(s, u, p)
        errs.append(np.linalg.norm(s[:2] - ref[t + 1]))
    assert max(errs[60:]) < 0.3


def test_lq_tracker_cached():
    assert build_lq_tracker(DroneParams(), 30) is build_lq_tracker(DroneParams(), 30)


# -- noise ------------------------------------------------------------------

def test_noise_zero_sigma_identity():
    y = np.linspace(0, 1, 50)
    assert np.array_equal(add_noise(y, 0.0, 0), y)


def test_noise_statistics():
    w = add_noise(np.zeros(100_000), 0.05, 1)
    assert abs(np.std(w) - 0.05) / 0.05 < 0.02


def test_noise_seeded():
    assert np.array_equal(add_noise(np.zeros(10), 0.1, 5), add_noise(np.zeros(10), 0.1, 5))
    y = add_noise(np.zeros((1000, 3)), [0.0, 0.1, 1.0], 2)
    assert np.all(y[:, 0] == 0) and np.std(y[:, 2]) > 5 * np.std(y[:, 1])


def test_noise_negative_sigma():
    with pytest.raises(ConfigurationError):
        add_noise(np.zeros(3), -0.1, 0)

"""Closed-loop data collection, dataset containers and serialization.

A dataset lives in a directory holding two files:

``header.json``
    ``{format_version, system, n_u, n_y, dt, splits: {train, valid, test},
    normalization: {u_mean, u_std, y_mean, y_std}}``
``dataset.jsonl``
    one trajectory per line, ``{id, u, y, x}`` with ``x`` null when the
    hidden states are unknown.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ControllerError, FormatError, NumericError, UsageError, VersionError
from .systems import (
    DroneParams, LqWeights, PidGains, PidState, TankParams, add_noise, build_lq_tracker,
    drone_hover_state, drone_step, pid_control, spline_reference, tank_step,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
HEADER_NAME = "header.json"
RECORDS_NAME = "dataset.jsonl"
SPLITS = ("train", "valid", "test")


@dataclass
class Trajectory:
    id: str
    dt: float
    inputs: np.ndarray
    outputs: np.ndarray
    true_states: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float).T).T
        self.outputs = np.atleast_2d(np.asarray(self.outputs, dtype=float).T).T
        if self.true_states is not None:
            self.true_states = np.asarray(self.true_states, dtype=float)
        if len(self.inputs) != len(self.outputs) or len(self.inputs) < 1:
            raise UsageError(f"trajectory {self.id}: inputs and outputs must have equal length >= 1")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.outputs))):
            raise NumericError(f"trajectory {self.id}: non-finite samples")

    def __len__(self) -> int:
        return len(self.inputs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        same_x = (self.true_states is None and other.true_states is None) or (
            self.true_states is not None and other.true_states is not None
            and np.array_equal(self.true_states, other.true_states)
        )
        return (self.id == other.id and self.dt == other.dt and same_x
                and np.array_equal(self.inputs, other.inputs) and np.array_equal(self.outputs, other.outputs))


@dataclass
class Normalization:
    """Per-channel affine scaling computed on the training split."""

    u_mean: np.ndarray
    u_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    def __post_init__(self):
        for name in ("u_mean", "u_std", "y_mean", "y_std"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if np.any(self.u_std <= 0) or np.any(self.y_std <= 0):
            raise ConfigurationError("normalization standard deviations must be > 0")

    @classmethod
    def identity(cls, n_u: int, n_y: int) -> "Normalization":
        return cls(np.zeros(n_u), np.ones(n_u), np.zeros(n_y), np.ones(n_y))

    @classmethod
    def fit(cls, trajectories) -> "Normalization":
        u = np.concatenate([t.inputs for t in trajectories])
        y = np.concatenate([t.outputs for t in trajectories])
        u_std, y_std = u.std(axis=0), y.std(axis=0)
        # constant channels are left unscaled
        u_std[u_std == 0] = 1.0
        y_std[y_std == 0] = 1.0
        return cls(u.mean(axis=0), u_std, y.mean(axis=0), y_std)

    def normalize_u(self, u):
        return (np.asarray(u, dtype=float) - self.u_mean) / self.u_std

    def normalize_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def denormalize_u(self, u):
        return np.asarray(u, dtype=float) * self.u_std + self.u_mean

    def denormalize_y(self, y):
        return np.asarray(y, dtype=float) * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("u_mean", "u_std", "y_mean", "y_std")}

    @classmethod
    def from_dict(cls, data: dict) -> "Normalization":
        return cls(data["u_mean"], data["u_std"], data["y_mean"], data["y_std"])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Normalization):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("u_mean", "u_std", "y_mean", "y_std"))


@dataclass
class Dataset:
    system: str
    n_u: int
    n_y: int
    dt: float
    train: list[Trajectory]
    valid: list[Trajectory]
    test: list[Trajectory]
    normalization: Normalization | None = None

    def __post_init__(self):
        ids = [t.id for t in self.trajectories()]
        if len(ids) != len(set(ids)):
            raise UsageError("trajectory ids must be unique across splits")
        if self.normalization is None and self.train:
            self.normalization = Normalization.fit(self.train)

    def split(self, name: str) -> list[Trajectory]:
        if name not in SPLITS:
            raise UsageError(f"unknown split {name!r}; expected one of {SPLITS}")
        return getattr(self, name)

    def trajectories(self) -> list[Trajectory]:
        return [*self.train, *self.valid, *self.test]


# ---------------------------------------------------------------------------
# generation

@dataclass(frozen=True)
class TankDataConfig:
    n_train: int = 60
    n_valid: int = 20
    n_test: int = 20
    length: int = 200
    n_waypoints: int = 5
    level_range: tuple[float, float] = (0.0, 5.0)
    noise_sigma: float = 0.05
    params: TankParams = TankParams()
    pid: PidGains = PidGains()


@dataclass(frozen=True)
class DroneDataConfig:
    n_train: int = 500
    n_valid: int = 20
    n_test: int = 20
    length: int = 600
    waypoint_count: tuple[int, int] = (5, 10)
    position_range: tuple[float, float] = (-2.0, 2.0)
    noise_sigma: tuple[float, float, float] = (0.01, 0.01, 0.01)
    params: DroneParams = DroneParams()
    horizon: int = 30
    weights: LqWeights = LqWeights()
    max_attempts: int = 20
    # closed loop is declared diverged beyond these limits
    max_position: float = 20.0
    max_angle: float = 1.2


def _rngs(seed: int, index: int, attempt: int = 0) -> list[np.random.Generator]:
    ss = np.random.SeedSequence([int(seed), int(index), int(attempt)])
    return [np.random.default_rng(s) for s in ss.spawn(2)]


def _split(trajs: list[Trajectory], n_train: int, n_valid: int):
    return trajs[:n_train], trajs[n_train:n_train + n_valid], trajs[n_train + n_valid:]


def simulate_tank(reference: np.ndarray, noise: np.ndarray, p: TankParams, gains: PidGains):
    """PID-tracked tank run; returns ``(u, y, x)`` arrays.

    The run starts in the steady state holding the first reference level,
    with the integrator preloaded to the matching input.
    """
    T = len(reference)
    x, u0 = p.equilibrium(max(float(reference[0]), 0.0))
    state = PidState(integral=u0 / gains.ki if gains.ki else 0.0)
    us, ys, xs = np.empty((T, 1)), np.empty((T, 1)), np.empty((T, 2))
    for t in range(T):
        y = x[1] + noise[t, 0]
        u, state = pid_control(reference[t], y, state, gains)
        us[t, 0], ys[t, 0], xs[t] = u, y, x
        x = tank_step(x, u, p)
    return us, ys, xs


def generate_tank_dataset(config: TankDataConfig = TankDataConfig(), seed: int = 0) -> Dataset:
    """Waypoint/spline/PID closed-loop tank dataset."""
    lo, hi = config.level_range
    n = config.n_train + config.n_valid + config.n_test
    trajs = []
    for i in range(n):
        rng_wp, rng_noise = _rngs(seed, i)
        waypoints = rng_wp.uniform(lo, hi, size=config.n_waypoints)
        ref = np.clip(spline_reference(waypoints, config.length)[:, 0], lo, hi)
        noise = add_noise(np.zeros((config.length, 1)), config.noise_sigma, rng_noise)
        u, y, x = simulate_tank(ref, noise, config.params, config.pid)
        trajs.append(Trajectory(f"tank-{i:04d}", 1.0, u, y, x))
    return Dataset("tank", 1, 1, 1.0, *_split(trajs, config.n_train, config.n_valid))


def simulate_drone(reference: np.ndarray, reference_rate: np.ndarray, noise: np.ndarray, config: DroneDataConfig):
    """LQ-tracked drone run over a position reference; returns ``(u, y, x)``."""
    p = config.params
    tracker = build_lq_tracker(p, config.horizon, config.weights)
    T = len(reference)
    full = np.zeros((T, 6))
    full[:, :2] = reference
    full[:, 3:5] = reference_rate / p.dt
    s = drone_hover_state(*reference[0])
    us, ys, xs = np.empty((T, 2)), np.empty((T, 3)), np.empty((T, 6))
    for t in range(T):
        ahead = full[t + 1:t + 1 + config.horizon] if t + 1 < T else full[-1:]
        u = tracker.command(ahead, s)
        us[t], ys[t], xs[t] = u, s[:3] + noise[t], s
        s = drone_step(s, u, p)
        if np.max(np.abs(s[:2])) > config.max_position or abs(s[2]) > config.max_angle:
            raise ControllerError(f"closed loop left the safe envelope at step {t}")
    return us, ys, xs


def generate_drone_dataset(config: DroneDataConfig = DroneDataConfig(), seed: int = 0) -> Dataset:
    """Waypoint/spline/LQ-tracker closed-loop planar drone dataset.

    A trajectory whose closed loop diverges is redrawn from a fresh seed.
    """
    lo, hi = config.position_range
    kmin, kmax = config.waypoint_count
    n = config.n_train + config.n_valid + config.n_test
    trajs = []
    for i in range(n):
        for attempt in range(config.max_attempts):
            rng_wp, rng_noise = _rngs(seed, i, attempt)
            n_wp = int(rng_wp.integers(kmin, kmax + 1))
            waypoints = rng_wp.uniform(lo, hi, size=(n_wp, 2))
            ref, rate = spline_reference(waypoints, config.length, derivative=True)
            noise = add_noise(np.zeros((config.length, 3)), config.noise_sigma, rng_noise)
            try:
                u, y, x = simulate_drone(ref, rate, noise, config)
                break
            except (ControllerError, NumericError) as exc:
                log.warning("drone trajectory %d attempt %d rejected: %s", i, attempt, exc)
        else:
            raise ControllerError(f"trajectory {i}: no stable closed loop after {config.max_attempts} attempts")
        trajs.append(Trajectory(f"drone2d-{i:04d}", config.params.dt, u, y, x))
    return Dataset("drone2d", 2, 3, config.params.dt, *_split(trajs, config.n_train, config.n_valid))


# ---------------------------------------------------------------------------
# serialization

def _header(ds: Dataset) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "system": ds.system,
        "n_u": ds.n_u,
        "n_y": ds.n_y,
        "dt": ds.dt,
        "splits": {name: [t.id for t in ds.split(name)] for name in SPLITS},
        "normalization": ds.normalization.to_dict(),
    }


def _record(t: Trajectory) -> dict:
    return {
        "id": t.id,
        "u": t.inputs.tolist(),
        "y": t.outputs.tolist(),
        "x": None if t.true_states is None else t.true_states.tolist(),
    }


def save_dataset(ds: Dataset, path) -> Path:
    """Write ``header.json`` and ``dataset.jsonl`` into directory ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / HEADER_NAME, "w") as fh:
        json.dump(_header(ds), fh, indent=1)
        fh.write("\n")
    with open(out / RECORDS_NAME, "w") as fh:
        for t in ds.trajectories():
            fh.write(json.dumps(_record(t), separators=(",", ":")))
            fh.write("\n")
    return out


def load_dataset(path) -> Dataset:
    """Read a dataset directory written by :func:`save_dataset`.

    Raises
    ------
    FileNotFoundError
        If either file is missing.
    VersionError
        If the header carries an unknown ``format_version``.
    FormatError
        On malformed JSON (with the offending line number) or inconsistent
        split membership.
    """
    root = Path(path)
    header_path, records_path = root / HEADER_NAME, root / RECORDS_NAME
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, header_path, exc.lineno) from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionError(header.get("format_version"), FORMAT_VERSION, header_path)
    try:
        dt = float(header["dt"])
        splits = {name: list(header["splits"][name]) for name in SPLITS}
        norm = Normalization.from_dict(header["normalization"])
        n_u, n_y = int(header["n_u"]), int(header["n_y"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad header field: {exc}", header_path) from exc

    records: dict[str, Trajectory] = {}
    with open(records_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                x = rec["x"]
                traj = Trajectory(rec["id"], dt, np.asarray(rec["u"], dtype=float).reshape(-1, n_u),
                                  np.asarray(rec["y"], dtype=float).reshape(-1, n_y),
                                  None if x is None else np.asarray(x, dtype=float))
            except json.JSONDecodeError as exc:
                raise FormatError(exc.msg, records_path, lineno) from exc
            except (KeyError, TypeError, ValueError, NumericError) as exc:
                raise FormatError(f"bad trajectory record: {exc}", records_path, lineno) from exc
            records[traj.id] = traj
    missing = [i for name in SPLITS for i in splits[name] if i not in records]
    if missing:
        raise FormatError(f"{len(missing)} trajectories listed in the header are missing (first: {missing[0]})",
                          records_path)
    parts = {name: [records[i] for i in splits[name]] for name in SPLITS}
    return Dataset(header.get("system", "unknown"), n_u, n_y, dt,
                   parts["train"], parts["valid"], parts["test"], norm)

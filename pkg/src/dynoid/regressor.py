"""Regressor-window state-space model and its output-error training.

The state of the identified model is the window of the last ``ell``
input/output pairs, oldest first::

    z_t = (u_{t-ell}, y_{t-ell}, ..., u_{t-1}, y_{t-1})

and the model reads

    y_t     = H(z_t, u_t)
    z_{t+1} = Abar z_t + Bbar u_t + Sbar y_t

where ``(Abar, Bbar, Sbar)`` drop the oldest pair and append the newest one.
``H`` is an MLP trained by backpropagation through its own free-run
predictions: after the ``ell`` burn-in samples, measured outputs never
re-enter the state.

All network arithmetic happens on normalized signals; the model carries
the training-split statistics and returns predictions in physical units.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .datagen import Dataset, Normalization, Trajectory
from .errors import ConfigurationError, ShapeError, TrainingError, UsageError, VersionError, FormatError
from .nn import (
    MlpParams, adam_init, adam_step, backward_arrays, mlp_forward, mlp_forward_cache, mlp_init,
)

log = logging.getLogger(__name__)

MODEL_VERSION = 1
FIRST_STEP_WEIGHT = 10.0


@dataclass(frozen=True)
class StateMapSpec:
    ell: int
    n_u: int
    n_y: int

    def __post_init__(self):
        if self.ell < 1 or self.n_u < 1 or self.n_y < 1:
            raise ConfigurationError(f"invalid state map (ell={self.ell}, n_u={self.n_u}, n_y={self.n_y})")

    @property
    def block(self) -> int:
        return self.n_u + self.n_y

    @property
    def L(self) -> int:
        return self.ell * self.block


@dataclass(frozen=True)
class CanonicalMatrices:
    Abar: np.ndarray
    Bbar: np.ndarray
    Sbar: np.ndarray

    def apply(self, z, u, y) -> np.ndarray:
        return self.Abar @ z + self.Bbar @ u + self.Sbar @ y


def _window_arrays(window, spec: StateMapSpec) -> tuple[np.ndarray, np.ndarray]:
    pairs = list(window)
    if len(pairs) != spec.ell:
        raise UsageError(f"window must hold exactly ell={spec.ell} (u, y) pairs, got {len(pairs)}")
    u = np.array([np.atleast_1d(np.asarray(p[0], dtype=float)) for p in pairs])
    y = np.array([np.atleast_1d(np.asarray(p[1], dtype=float)) for p in pairs])
    if u.shape != (spec.ell, spec.n_u) or y.shape != (spec.ell, spec.n_y):
        raise ShapeError(f"window pairs must have dims (n_u={spec.n_u}, n_y={spec.n_y})")
    return u, y


def window_from_arrays(u, y) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairs ``(u_k, y_k)`` from row-aligned input and output arrays."""
    u = np.asarray(u, dtype=float).reshape(len(u), -1)
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    return list(zip(u, y))


def build_state(window, spec: StateMapSpec) -> np.ndarray:
    """Concatenate ``ell`` pairs ``(u, y)``, oldest first, into ``z``."""
    u, y = _window_arrays(window, spec)
    return np.concatenate([u, y], axis=1).ravel()


def sliding_states(u: np.ndarray, y: np.ndarray, spec: StateMapSpec) -> np.ndarray:
    """All windows of a sequence: row ``s`` is built from samples ``s .. s+ell-1``.

    Returns an array of shape ``(T - ell + 1, L)``.
    """
    uy = np.concatenate([np.asarray(u, dtype=float).reshape(len(u), spec.n_u),
                         np.asarray(y, dtype=float).reshape(len(y), spec.n_y)], axis=1)
    T = len(uy)
    if T < spec.ell:
        raise UsageError(f"sequence of length {T} shorter than window {spec.ell}")
    idx = np.arange(T - spec.ell + 1)[:, None] + np.arange(spec.ell)[None, :]
    return uy[idx].reshape(len(idx), spec.L)


def canonical_matrices(spec: StateMapSpec) -> CanonicalMatrices:
    """Shift matrices realizing drop-oldest / append-newest on ``z``."""
    L, b = spec.L, spec.block
    A = np.zeros((L, L))
    A[np.arange(L - b), np.arange(b, L)] = 1.0
    B = np.zeros((L, spec.n_u))
    B[L - b + np.arange(spec.n_u), np.arange(spec.n_u)] = 1.0
    S = np.zeros((L, spec.n_y))
    S[L - spec.n_y + np.arange(spec.n_y), np.arange(spec.n_y)] = 1.0
    return CanonicalMatrices(A, B, S)


def shift_update(z, u, y, spec: StateMapSpec) -> np.ndarray:
    """Drop the oldest pair of ``z`` and append ``(u, y)``; batched over leading axes."""
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    # scalars stand for single-channel signals
    u = u[None] if u.ndim == 0 else u
    y = y[None] if y.ndim == 0 else y
    if z.shape[-1] != spec.L or u.shape[-1:] != (spec.n_u,) or y.shape[-1:] != (spec.n_y,):
        raise ShapeError(f"shift_update expects z[{spec.L}], u[{spec.n_u}], y[{spec.n_y}]")
    return np.concatenate([z[..., spec.block:], u, y], axis=-1)


# ---------------------------------------------------------------------------
# model

@dataclass
class RegressorModel:
    spec: StateMapSpec
    H: MlpParams
    normalization: Normalization
    history: list[dict] = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        if self.H.in_dim != self.spec.L + self.spec.n_u or self.H.out_dim != self.spec.n_y:
            raise ShapeError(
                f"network dims {self.H.in_dim}->{self.H.out_dim} do not fit L+n_u={self.spec.L + self.spec.n_u}"
                f" -> n_y={self.spec.n_y}"
            )

    def predict(self, z: np.ndarray, u: np.ndarray) -> np.ndarray:
        """``H(z, u)`` on normalized signals."""
        return mlp_forward(self.H, np.concatenate([z, u], axis=-1))

    def initial_state(self, u_init, y_init) -> np.ndarray:
        """Normalized ``z`` from ``ell`` physical-unit samples."""
        norm = self.normalization
        return sliding_states(norm.normalize_u(u_init), norm.normalize_y(y_init), self.spec)[-1]

    def to_dict(self) -> dict:
        out = self.H.to_dict()
        out.update(
            format_version=MODEL_VERSION,
            ell=self.spec.ell,
            n_u=self.spec.n_u,
            n_y=self.spec.n_y,
            normalization=self.normalization.to_dict(),
        )
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RegressorModel":
        if data.get("format_version") != MODEL_VERSION:
            raise VersionError(data.get("format_version"), MODEL_VERSION)
        try:
            spec = StateMapSpec(int(data["ell"]), int(data["n_u"]), int(data["n_y"]))
            net = MlpParams.from_dict(data)
            return cls(spec, net, Normalization.from_dict(data["normalization"]))
        except KeyError as exc:
            raise FormatError(f"model checkpoint lacks field {exc}") from exc


def save_model(model: RegressorModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.to_dict()) + "\n")
    return path


def load_model(path) -> RegressorModel:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, path, exc.lineno) from exc
    try:
        return RegressorModel.from_dict(data)
    except VersionError as exc:
        raise VersionError(exc.found, exc.expected, path) from None


# ---------------------------------------------------------------------------
# free-run simulation

def free_run(predict: Callable[[np.ndarray, np.ndarray], np.ndarray], z0: np.ndarray, inputs: np.ndarray,
             spec: StateMapSpec, return_states: bool = False):
    """Simulate the shift model from ``z0`` driven by ``inputs`` only.

    ``z0`` has shape ``(..., L)`` and ``inputs`` shape ``(T, ..., n_u)``;
    predictions come back as ``(T, ..., n_y)``.  With ``return_states`` the
    states ``z`` seen before each prediction are returned as well.
    """
    inputs = np.asarray(inputs, dtype=float)
    z = np.asarray(z0, dtype=float)
    T = len(inputs)
    outs = np.empty(inputs.shape[:-1] + (spec.n_y,))
    states = np.empty(inputs.shape[:-1] + (spec.L,)) if return_states else None
    for t in range(T):
        if return_states:
            states[t] = z
        y = predict(z, inputs[t])
        outs[t] = y
        z = shift_update(z, inputs[t], y, spec)
    return (outs, states) if return_states else outs


def rollout(model: RegressorModel, init_window, inputs, return_states: bool = False):
    """Free-run prediction in physical units.

    Parameters
    ----------
    init_window : sequence of ``ell`` pairs ``(u, y)``, oldest first
    inputs : array_like, shape (T, n_u)
        Inputs ``u_t`` applied at each predicted step.
    """
    spec = model.spec
    u0, y0 = _window_arrays(init_window, spec)
    inputs = np.asarray(inputs, dtype=float).reshape(-1, spec.n_u)
    if len(inputs) < 1:
        raise UsageError("rollout needs at least one input")
    norm = model.normalization
    z0 = model.initial_state(u0, y0)
    result = free_run(model.predict, z0, norm.normalize_u(inputs), spec, return_states)
    if return_states:
        return norm.denormalize_y(result[0]), result[1]
    return norm.denormalize_y(result)


# ---------------------------------------------------------------------------
# loss

def step_weights(n_steps: int, first_weight: float = FIRST_STEP_WEIGHT) -> np.ndarray:
    w = np.ones(n_steps)
    if n_steps:
        w[0] = first_weight
    return w


def regression_loss(model: RegressorModel, trajectory: Trajectory, weights=None) -> float:
    """Output-error loss of one trajectory on normalized signals.

    ``J = (1/T) sum_t alpha_t ||y_t - H(zhat_t, u_t)||^2`` over the ``T``
    samples following the burn-in window, where ``zhat`` starts from the
    measured window and then evolves on the model's own predictions.
    ``weights`` defaults to ``alpha = (10, 1, 1, ...)``.
    """
    spec = model.spec
    n = len(trajectory)
    if n < spec.ell + 1:
        raise UsageError(f"trajectory {trajectory.id} has {n} samples; needs at least ell+1={spec.ell + 1}")
    norm = model.normalization
    u = norm.normalize_u(trajectory.inputs)
    y = norm.normalize_y(trajectory.outputs)
    T = n - spec.ell
    alpha = step_weights(T) if weights is None else np.broadcast_to(np.asarray(weights, dtype=float), (T,))
    z = sliding_states(u[:spec.ell], y[:spec.ell], spec)[0]
    total = 0.0
    for k in range(T):
        t = spec.ell + k
        y_hat = model.predict(z, u[t])
        r = y[t] - y_hat
        total += alpha[k] * float(r @ r)
        z = shift_update(z, u[t], y_hat, spec)
    return total / T


def rollout_loss_grad(H: MlpParams, z0: np.ndarray, u_seq: np.ndarray, y_seq: np.ndarray, w_seq: np.ndarray,
                      spec: StateMapSpec):
    """Weighted free-run loss of a batch and its exact gradient.

    Parameters
    ----------
    z0 : (B, L) initial states (treated as constants)
    u_seq, y_seq : (K, B, n_u), (K, B, n_y) normalized inputs and targets
    w_seq : (K, B) per-step weights; the loss is ``sum w * ||y - yhat||^2``

    Returns
    -------
    loss : float
    grads : list of arrays ``[W0, b0, W1, b1, ...]``
    z_end : (B, L) state after the last step
    """
    K = len(u_seq)
    L, b, n_y = spec.L, spec.block, spec.n_y
    z = z0
    caches, resid = [], []
    loss = 0.0
    for k in range(K):
        out, cache = mlp_forward_cache(H, np.concatenate([z, u_seq[k]], axis=1))
        r = out - y_seq[k]
        loss += float(np.sum(w_seq[k] * np.sum(r * r, axis=1)))
        caches.append(cache)
        resid.append(r)
        z = np.concatenate([z[:, b:], u_seq[k], out], axis=1)
    z_end = z
    gw = [np.zeros_like(w) for w in H.weights]
    gb = [np.zeros_like(c) for c in H.biases]
    dz = np.zeros_like(z0)
    for k in range(K - 1, -1, -1):
        g_out = 2.0 * w_seq[k][:, None] * resid[k] + dz[:, L - n_y:]
        dw, db, g_in = backward_arrays(H.weights, H.activation, caches[k], g_out)
        for i in range(len(gw)):
            gw[i] += dw[i]
            gb[i] += db[i]
        shifted = np.zeros_like(dz)
        shifted[:, b:] = dz[:, :L - b]
        dz = shifted + g_in[:, :L]
    grads = []
    for w_, b_ in zip(gw, gb):
        grads.extend((w_, b_))
    return loss, grads, z_end


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple[int, ...] = (256, 256, 256)
    activation: str = "tanh"
    epochs: int = 2000
    lr: float = 1e-4
    chunk_length: int = 100
    batch_size: int | None = None
    first_weight: float = FIRST_STEP_WEIGHT
    clip_norm: float | None = 10.0
    eval_every: int = 10

    def __post_init__(self):
        if self.epochs < 1 or self.chunk_length < 1 or self.lr <= 0 or self.eval_every < 1:
            raise ConfigurationError("invalid training configuration")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")


@dataclass
class _Packed:
    u: np.ndarray      # (Tmax, N, n_u)
    y: np.ndarray      # (Tmax, N, n_y)
    w: np.ndarray      # (Tmax, N) per-step loss weight, zero during burn-in and padding
    z0: np.ndarray     # (N, L)
    ids: list[str]


def _pack(trajectories: Sequence[Trajectory], spec: StateMapSpec, norm: Normalization, first_weight: float) -> _Packed:
    trajs = sorted(trajectories, key=lambda t: t.id)
    for t in trajs:
        if len(t) < spec.ell + 1:
            raise UsageError(f"trajectory {t.id} is shorter than ell+1={spec.ell + 1}")
    n, tmax = len(trajs), max(len(t) for t in trajs)
    u = np.zeros((tmax, n, spec.n_u))
    y = np.zeros((tmax, n, spec.n_y))
    w = np.zeros((tmax, n))
    z0 = np.empty((n, spec.L))
    for j, t in enumerate(trajs):
        un, yn = norm.normalize_u(t.inputs), norm.normalize_y(t.outputs)
        T = len(t)
        u[:T, j], y[:T, j] = un, yn
        u[T:, j] = un[-1]
        w[spec.ell:T, j] = step_weights(T - spec.ell, first_weight) / (T - spec.ell)
        z0[j] = sliding_states(un[:spec.ell], yn[:spec.ell], spec)[0]
    return _Packed(u, y, w, z0, [t.id for t in trajs])


def mean_loss(H: MlpParams, packed: _Packed, spec: StateMapSpec) -> float:
    """Mean of ``J`` over packed trajectories (forward only)."""
    z = packed.z0
    total = 0.0
    for t in range(spec.ell, len(packed.u)):
        out = mlp_forward(H, np.concatenate([z, packed.u[t]], axis=1), check_finite=False)
        r = out - packed.y[t]
        total += float(np.sum(packed.w[t] * np.sum(r * r, axis=1)))
        z = np.concatenate([z[:, spec.block:], packed.u[t], out], axis=1)
    return total / packed.u.shape[1]


def train_regressor(dataset: Dataset, spec: StateMapSpec, config: TrainConfig = TrainConfig(),
                    seed: int = 0, callback: Callable[[dict], None] | None = None) -> RegressorModel:
    """Fit ``H`` by truncated backpropagation through its own free-run predictions.

    Each epoch visits the training trajectories in minibatches (a random
    order drawn from ``seed``); each minibatch is processed chunk by chunk,
    one Adam step per chunk, with the predicted state carried across chunk
    boundaries but not differentiated through them.  The returned model
    holds the parameters with the lowest validation loss seen.
    """
    if not dataset.train:
        raise UsageError("dataset has no training trajectories")
    if (dataset.n_u, dataset.n_y) != (spec.n_u, spec.n_y):
        raise ShapeError("state map dims do not match the dataset")
    norm = dataset.normalization
    rng = np.random.default_rng(seed)
    H = mlp_init([spec.L + spec.n_u, *config.hidden, spec.n_y], config.activation, rng)
    opt = adam_init(H, lr=config.lr, clip_norm=config.clip_norm)
    train = _pack(dataset.train, spec, norm, config.first_weight)
    valid = _pack(dataset.valid, spec, norm, config.first_weight) if dataset.valid else None
    n = len(train.ids)
    bs = n if config.batch_size is None else min(config.batch_size, n)
    tmax = len(train.u)
    history: list[dict] = []
    best_H, best_val = H, np.inf
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, bs):
            idx = np.sort(order[start:start + bs])
            z = train.z0[idx]
            batch_loss = 0.0
            for c in range(spec.ell, tmax, config.chunk_length):
                sl = slice(c, min(c + config.chunk_length, tmax))
                w = train.w[sl][:, idx] / len(idx)
                if not np.any(w):
                    break
                loss, grads, z = rollout_loss_grad(H, z, train.u[sl][:, idx], train.y[sl][:, idx], w, spec)
                if not np.isfinite(loss):
                    raise TrainingError("non-finite training loss", epoch)
                H, opt = adam_step(H, H.with_arrays(grads), opt)
                batch_loss += loss
            epoch_loss += batch_loss * len(idx) / n
        record = {"epoch": epoch, "train_loss": epoch_loss}
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            val = mean_loss(H, valid, spec) if valid is not None else epoch_loss
            if not np.isfinite(val):
                raise TrainingError("non-finite validation loss", epoch)
            record["valid_loss"] = val
            if val < best_val:
                best_val, best_H = val, H
        history.append(record)
        if callback is not None:
            callback(record)
    return RegressorModel(spec, best_H, norm, history)


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class EvalResult:
    window_size: int
    horizon: int
    per_trajectory: list[tuple[str, float]]

    @property
    def mean(self) -> float:
        vals = [m for _, m in self.per_trajectory]
        return float(np.mean(vals)) if vals else float("nan")

    def rows(self) -> list[dict]:
        return [{"trajectory_id": tid, "window_size": self.window_size, "horizon": self.horizon, "mse": mse}
                for tid, mse in self.per_trajectory]


EVAL_COLUMNS = ("trajectory_id", "window_size", "horizon", "mse")


def evaluate_rollout(model: RegressorModel, trajectories: Sequence[Trajectory], horizon: int = 100,
                     predictor: Callable[[RegressorModel, list, np.ndarray], np.ndarray] | None = None) -> EvalResult:
    """Free-run MSE over ``horizon`` steps following the first ``ell`` samples.

    The MSE is taken in physical units, averaged over steps and output
    channels.  Trajectories shorter than ``ell + horizon`` are skipped with
    a warning.  ``predictor(model, init_window, inputs)`` replaces
    :func:`rollout` when given (used for reduced models).
    """
    spec = model.spec
    predictor = predictor or rollout
    rows = []
    for t in sorted(trajectories, key=lambda tr: tr.id):
        if len(t) < spec.ell + horizon:
            log.warning("skipping %s: %d samples < ell + horizon = %d", t.id, len(t), spec.ell + horizon)
            continue
        window = window_from_arrays(t.inputs[:spec.ell], t.outputs[:spec.ell])
        pred = predictor(model, window, t.inputs[spec.ell:spec.ell + horizon])
        err = pred - t.outputs[spec.ell:spec.ell + horizon]
        rows.append((t.id, float(np.mean(err * err))))
    return EvalResult(spec.ell, horizon, rows)


def write_eval_csv(results: Sequence[EvalResult], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=EVAL_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for res in results:
            for row in res.rows():
                writer.writerow({**row, "mse": repr(row["mse"])})
    return path


EVAL_SUMMARY_COLUMNS = ("window_size", "horizon", "n_trajectories", "mse")


def write_eval_summary_csv(results: Sequence[EvalResult], path) -> Path:
    """One row per window size: mean rollout MSE over the evaluated trajectories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EVAL_SUMMARY_COLUMNS)
        for res in results:
            writer.writerow((res.window_size, res.horizon, len(res.per_trajectory), repr(res.mean)))
    return path

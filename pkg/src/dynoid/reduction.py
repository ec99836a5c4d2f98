"""Autoencoder compression of the regressor window and the reduced model.

With an encoder ``E: R^L -> R^n`` and decoder ``D: R^n -> R^L`` the reduced
model propagates a latent state ``xbar``::

    y_t       = H(D(xbar_t), u_t)
    xbar_{t+1} = E(Abar D(xbar_t) + Bbar u_t + Sbar y_t)

The autoencoder is fitted after, and independently of, ``H`` on the
normalized windows of the training split.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .datagen import Dataset, Normalization, Trajectory
from .errors import ConfigurationError, DynoidError, FormatError, ShapeError, TrainingError, UsageError, VersionError
from .nn import MlpParams, adam_init, adam_step, backward_arrays, mlp_forward, mlp_forward_cache, mlp_init
from .regressor import (
    RegressorModel, StateMapSpec, _window_arrays, evaluate_rollout, rollout, shift_update, sliding_states,
)

log = logging.getLogger(__name__)

AE_VERSION = 1
SWEEP_COLUMNS = ("window_size", "rate", "latent_dim", "recon_mse", "rollout_mse")


@dataclass
class Autoencoder:
    encoder: MlpParams
    decoder: MlpParams
    spec: StateMapSpec

    def __post_init__(self):
        if self.encoder.in_dim != self.spec.L or self.decoder.out_dim != self.spec.L:
            raise ShapeError("autoencoder must map R^L to itself")
        if self.encoder.out_dim != self.decoder.in_dim:
            raise ShapeError("encoder output and decoder input dims differ")
        if self.latent_dim > self.spec.L:
            raise ConfigurationError(f"latent_dim {self.latent_dim} exceeds L={self.spec.L}")

    @property
    def latent_dim(self) -> int:
        return self.encoder.out_dim

    def encode(self, z):
        return mlp_forward(self.encoder, z)

    def decode(self, x):
        return mlp_forward(self.decoder, x)

    def reconstruct(self, z):
        return self.decode(self.encode(z))

    def to_dict(self) -> dict:
        return {
            "format_version": AE_VERSION,
            "latent_dim": self.latent_dim,
            "encoder": self.encoder.to_dict(),
            "decoder": self.decoder.to_dict(),
            "source_spec": {"ell": self.spec.ell, "n_u": self.spec.n_u, "n_y": self.spec.n_y},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Autoencoder":
        if data.get("format_version") != AE_VERSION:
            raise VersionError(data.get("format_version"), AE_VERSION)
        try:
            spec = StateMapSpec(**{k: int(v) for k, v in data["source_spec"].items()})
            ae = cls(MlpParams.from_dict(data["encoder"]), MlpParams.from_dict(data["decoder"]), spec)
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed autoencoder checkpoint: {exc}") from exc
        if ae.latent_dim != int(data["latent_dim"]):
            raise FormatError("latent_dim does not match the encoder output size")
        return ae


def identity_autoencoder(spec: StateMapSpec) -> Autoencoder:
    """Exact identity maps (no compression)."""
    eye = MlpParams((spec.L, spec.L), (np.eye(spec.L),), (np.zeros(spec.L),), "identity")
    return Autoencoder(eye, eye, spec)


def save_autoencoder(ae: Autoencoder, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(ae.to_dict()) + "\n")
    return path


def load_autoencoder(path) -> Autoencoder:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, path, exc.lineno) from exc
    try:
        return Autoencoder.from_dict(data)
    except VersionError as exc:
        raise VersionError(exc.found, exc.expected, path) from None


# ---------------------------------------------------------------------------
# data

def collect_states(trajectories: Sequence[Trajectory], spec: StateMapSpec,
                   normalization: Normalization | None = None) -> np.ndarray:
    """Every sliding window of every trajectory, ``sum(T_i - ell + 1)`` rows."""
    rows = []
    for t in sorted(trajectories, key=lambda tr: tr.id):
        u, y = t.inputs, t.outputs
        if normalization is not None:
            u, y = normalization.normalize_u(u), normalization.normalize_y(y)
        rows.append(sliding_states(u, y, spec))
    if not rows:
        return np.empty((0, spec.L))
    return np.concatenate(rows)


def collect_prediction_pairs(trajectories: Sequence[Trajectory], spec: StateMapSpec,
                             normalization: Normalization) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Windows ``z_t`` with the following ``(u_t, y_t)``, normalized."""
    zs, us, ys = [], [], []
    for t in sorted(trajectories, key=lambda tr: tr.id):
        u, y = normalization.normalize_u(t.inputs), normalization.normalize_y(t.outputs)
        z = sliding_states(u, y, spec)[:-1]
        zs.append(z)
        us.append(u[spec.ell:])
        ys.append(y[spec.ell:])
    return np.concatenate(zs), np.concatenate(us), np.concatenate(ys)


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class AutoencoderConfig:
    hidden: tuple[int, ...] = (512, 512)
    activation: str = "tanh"
    epochs: int = 500
    lr: float = 1e-4
    batch_size: int = 256
    clip_norm: float | None = 10.0
    eval_every: int = 10
    joint: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.lr <= 0 or self.batch_size < 1 or self.eval_every < 1:
            raise ConfigurationError("invalid autoencoder configuration")


def latent_dim_for_rate(rate: float, L: int) -> int:
    """``round((1 - rate) * L)``, at least 1; ``rate`` is the removed fraction."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"compression rate must lie in [0, 1), got {rate}")
    return max(1, int(np.floor((1.0 - rate) * L + 0.5)))


def reconstruction_mse(ae: Autoencoder, states: np.ndarray) -> float:
    r = ae.reconstruct(states) - states
    return float(np.mean(r * r))


def autoencoder_loss_grad(encoder: MlpParams, decoder: MlpParams, z: np.ndarray, prediction=None):
    """Reconstruction MSE (plus optional one-step prediction MSE) and gradients.

    ``prediction`` is ``(H, u, y)``: a frozen output network and the input /
    target aligned with the rows of ``z``.

    Returns ``(loss, encoder_grads, decoder_grads)`` with gradients as flat
    ``[W0, b0, ...]`` lists.
    """
    lat, cache_e = mlp_forward_cache(encoder, z)
    rec, cache_d = mlp_forward_cache(decoder, lat)
    r = rec - z
    loss = float(np.mean(r * r))
    g_rec = 2.0 * r / r.size
    if prediction is not None:
        H, u, y = prediction
        out, cache_h = mlp_forward_cache(H, np.concatenate([rec, u], axis=1))
        rp = out - y
        loss += float(np.mean(rp * rp))
        _, _, g_in = backward_arrays(H.weights, H.activation, cache_h, 2.0 * rp / rp.size)
        g_rec = g_rec + g_in[:, :z.shape[1]]
    dw_d, db_d, g_lat = backward_arrays(decoder.weights, decoder.activation, cache_d, g_rec)
    dw_e, db_e, _ = backward_arrays(encoder.weights, encoder.activation, cache_e, g_lat)

    def flat(ws, bs):
        out = []
        for w, b in zip(ws, bs):
            out.extend((w, b))
        return out

    return loss, flat(dw_e, db_e), flat(dw_d, db_d)


def train_autoencoder(states: np.ndarray, latent_dim: int, spec: StateMapSpec,
                      config: AutoencoderConfig = AutoencoderConfig(), seed: int = 0,
                      valid_states: np.ndarray | None = None, prediction=None,
                      valid_prediction=None) -> Autoencoder:
    """Fit ``(E, D)`` by minibatch Adam on ``mean ||z - D(E(z))||^2``.

    Parameters
    ----------
    states : (N, L) array of (normalized) windows
    latent_dim : size of the compressed state, ``1 <= latent_dim <= L``
    valid_states : optional held-out windows used to pick the returned
        parameters; the training loss is used when absent.
    prediction, valid_prediction : optional ``(H, u, y)`` triples enabling
        the joint reconstruction + prediction objective.
    """
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[1] != spec.L:
        raise ShapeError(f"states must have shape (N, {spec.L})")
    if len(states) == 0:
        raise UsageError("no states to train on")
    if not 1 <= latent_dim <= spec.L:
        raise ConfigurationError(f"latent_dim must be in [1, {spec.L}], got {latent_dim}")
    if config.joint and prediction is None:
        raise UsageError("joint training needs (H, u, y) prediction data")
    rng = np.random.default_rng(seed)
    enc = mlp_init([spec.L, *config.hidden, latent_dim], config.activation, rng)
    dec = mlp_init([latent_dim, *config.hidden, spec.L], config.activation, rng)
    opt_e = adam_init(enc, lr=config.lr, clip_norm=config.clip_norm)
    opt_d = adam_init(dec, lr=config.lr, clip_norm=config.clip_norm)
    use_pred = config.joint

    def objective(e, d, z, pred):
        lat = mlp_forward(e, z, check_finite=False)
        rec = mlp_forward(d, lat, check_finite=False)
        val = float(np.mean((rec - z) ** 2))
        if use_pred and pred is not None:
            H, u, y = pred
            out = mlp_forward(H, np.concatenate([rec, u], axis=1), check_finite=False)
            val += float(np.mean((out - y) ** 2))
        return val

    n = len(states)
    bs = min(config.batch_size, n)
    best, best_val = (enc, dec), np.inf
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            pred = None
            if use_pred:
                H, u, y = prediction
                pred = (H, u[idx], y[idx])
            loss, ge, gd = autoencoder_loss_grad(enc, dec, states[idx], pred)
            if not np.isfinite(loss):
                raise TrainingError("non-finite autoencoder loss", epoch)
            enc, opt_e = adam_step(enc, enc.with_arrays(ge), opt_e)
            dec, opt_d = adam_step(dec, dec.with_arrays(gd), opt_d)
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            if valid_states is not None:
                val = objective(enc, dec, valid_states, valid_prediction)
            else:
                val = objective(enc, dec, states, prediction)
            if not np.isfinite(val):
                raise TrainingError("non-finite autoencoder validation loss", epoch)
            if val < best_val:
                best_val, best = val, (enc, dec)
    return Autoencoder(best[0], best[1], spec)


# ---------------------------------------------------------------------------
# reduced model

def reduced_rollout(model: RegressorModel, ae: Autoencoder, init_window, inputs) -> np.ndarray:
    """Free-run prediction of the reduced model, in physical units."""
    if ae.spec != model.spec:
        raise UsageError(f"autoencoder built for {ae.spec}, model uses {model.spec}")
    spec = model.spec
    u0, y0 = _window_arrays(init_window, spec)
    inputs = np.asarray(inputs, dtype=float).reshape(-1, spec.n_u)
    norm = model.normalization
    un = norm.normalize_u(inputs)
    x = ae.encode(model.initial_state(u0, y0))
    outs = np.empty((len(un), spec.n_y))
    for t in range(len(un)):
        z = ae.decode(x)
        y = model.predict(z, un[t])
        outs[t] = y
        x = ae.encode(shift_update(z, un[t], y, spec))
    return norm.denormalize_y(outs)


@dataclass
class SweepRow:
    window_size: int
    rate: float
    latent_dim: int
    recon_mse: float
    rollout_mse: float
    error: str | None = None


def _cell_seed(seed: int, ell: int, rate: float) -> int:
    return int(np.random.SeedSequence([int(seed), int(ell), int(round(rate * 1e6))]).generate_state(1)[0])


def compression_sweep(model: RegressorModel, dataset: Dataset, rates: Sequence[float],
                      config: AutoencoderConfig = AutoencoderConfig(), seed: int = 0,
                      horizon: int = 100, eval_split: str = "test", save_dir=None) -> list[SweepRow]:
    """One autoencoder per compression rate, scored on reconstruction and rollout.

    With ``save_dir`` each trained autoencoder is written to
    ``save_dir/rate_<rate>/autoencoder.json``.

    A failing cell is logged and reported with NaN scores; the sweep goes on.
    """
    spec, norm = model.spec, model.normalization
    train_z = collect_states(dataset.train, spec, norm)
    valid_z = collect_states(dataset.valid, spec, norm) if dataset.valid else None
    eval_trajs = dataset.split(eval_split)
    eval_z = collect_states(eval_trajs, spec, norm)
    prediction = valid_prediction = None
    if config.joint:
        z, u, y = collect_prediction_pairs(dataset.train, spec, norm)
        train_z, prediction = z, (model.H, u, y)
        if dataset.valid:
            vz, vu, vy = collect_prediction_pairs(dataset.valid, spec, norm)
            valid_z, valid_prediction = vz, (model.H, vu, vy)
    rows = []
    for rate in rates:
        n_lat = latent_dim_for_rate(rate, spec.L)
        try:
            ae = train_autoencoder(train_z, n_lat, spec, config, _cell_seed(seed, spec.ell, rate),
                                   valid_z, prediction, valid_prediction)
            recon = reconstruction_mse(ae, eval_z)
            if save_dir is not None:
                save_autoencoder(ae, Path(save_dir) / f"rate_{rate:.2f}" / "autoencoder.json")
            res = evaluate_rollout(model, eval_trajs, horizon,
                                   predictor=lambda m, w, u, ae=ae: reduced_rollout(m, ae, w, u))
            rows.append(SweepRow(spec.ell, float(rate), n_lat, recon, res.mean))
        except (DynoidError, ArithmeticError, ValueError) as exc:  # a failed cell must not stop the sweep
            log.warning("sweep cell ell=%d rate=%.2f failed: %s", spec.ell, rate, exc)
            rows.append(SweepRow(spec.ell, float(rate), n_lat, float("nan"), float("nan"), str(exc)))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for r in rows:
            writer.writerow([r.window_size, repr(r.rate), r.latent_dim, repr(r.recon_mse), repr(r.rollout_mse)])
    return path

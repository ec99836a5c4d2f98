"""Dense feed-forward networks with analytic gradients and the Adam optimizer.

Everything is plain numpy in double precision.  A network is an immutable
:class:`MlpParams` value; training code produces new values rather than
mutating old ones, so one set of parameters can be evaluated from many
threads at once.

Conventions
-----------
* ``weights[k]`` has shape ``(out_dim, in_dim)`` and ``biases[k]`` shape
  ``(out_dim,)``.
* Inputs are batched along the leading axis: ``x`` of shape ``(..., in_dim)``.
* The activation applies to every hidden layer; the last layer is affine.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, FormatError, NumericError, ShapeError, UsageError, VersionError

ACTIVATIONS = ("tanh", "relu", "identity")
CHECKPOINT_VERSION = 1


def _act(name: str, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(a)
    if name == "relu":
        return np.maximum(a, 0.0)
    return a


def _act_grad(name: str, a: np.ndarray, h: np.ndarray) -> np.ndarray:
    # derivative expressed through pre-activation a and activation h
    if name == "tanh":
        return 1.0 - h * h
    if name == "relu":
        return (a > 0.0).astype(a.dtype)
    return np.ones_like(a)


@dataclass(frozen=True)
class MlpParams:
    """Parameters of a multi-layer perceptron.

    The same container is reused for gradients and Adam moments, which have
    exactly the same shapes as the parameters they refer to.
    """

    layer_dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str = "tanh"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "weights", tuple(np.asarray(w, dtype=float) for w in self.weights))
        object.__setattr__(self, "biases", tuple(np.asarray(b, dtype=float) for b in self.biases))
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ConfigurationError(f"invalid layer_dims {list(dims)}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ShapeError("number of weight/bias arrays does not match layer_dims")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[k + 1], dims[k]) or b.shape != (dims[k + 1],):
                raise ShapeError(
                    f"layer {k}: expected weight {(dims[k + 1], dims[k])} and bias {(dims[k + 1],)}, "
                    f"got {w.shape} and {b.shape}"
                )

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays, interleaved ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        return MlpParams(self.layer_dims, tuple(arrays[0::2]), tuple(arrays[1::2]), self.activation)

    def zeros_like(self) -> "MlpParams":
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_vector(self, vec: np.ndarray) -> "MlpParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_params,):
            raise ShapeError(f"expected flat vector of length {self.n_params}, got {vec.shape}")
        out, i = [], 0
        for a in self.arrays():
            out.append(vec[i:i + a.size].reshape(a.shape).copy())
            i += a.size
        return self.with_arrays(out)

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for a in self.arrays())))

    def scale(self, factor: float) -> "MlpParams":
        return self.with_arrays([a * factor for a in self.arrays()])

    def to_dict(self) -> dict:
        """Checkpoint representation (row-major flat arrays)."""
        return {
            "format_version": CHECKPOINT_VERSION,
            "layer_dims": list(self.layer_dims),
            "activation": self.activation,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MlpParams":
        version = data.get("format_version")
        if version != CHECKPOINT_VERSION:
            raise VersionError(version, CHECKPOINT_VERSION)
        try:
            dims = [int(d) for d in data["layer_dims"]]
            weights = [
                np.asarray(w, dtype=float).reshape(dims[k + 1], dims[k]) for k, w in enumerate(data["weights"])
            ]
            biases = [np.asarray(b, dtype=float) for b in data["biases"]]
            return cls(tuple(dims), tuple(weights), tuple(biases), data.get("activation", "tanh"))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, (ShapeError, ConfigurationError)):
                raise
            raise FormatError(f"malformed network block: {exc}") from exc


def mlp_init(layer_dims: Sequence[int], activation: str = "tanh", seed: int | np.random.Generator = 0) -> MlpParams:
    """Initialize a network with uniform fan-in scaled weights and zero biases.

    Weights of layer ``k`` are drawn from ``U(-sqrt(6/fan_in), +sqrt(6/fan_in))``.

    Parameters
    ----------
    layer_dims : sequence of int
        ``[in_dim, hidden..., out_dim]``; at least two entries, all >= 1.
    activation : {"tanh", "relu", "identity"}
        Hidden-layer nonlinearity.
    seed : int or numpy Generator
        Source of randomness; the same seed yields bit-identical parameters.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ConfigurationError(f"layer_dims must have >= 2 positive entries, got {list(layer_dims)}")
    if activation not in ACTIVATIONS:
        raise ConfigurationError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(tuple(dims), tuple(weights), tuple(biases), activation)


def mlp_identity(dim: int) -> MlpParams:
    """Single affine layer computing exactly ``x -> x``."""
    return MlpParams((dim, dim), (np.eye(dim),), (np.zeros(dim),), "identity")


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != params.in_dim:
        raise ShapeError(f"network expects input dimension {params.in_dim}, got shape {x.shape}")
    return x


def mlp_forward(params: MlpParams, x: np.ndarray, check_finite: bool = True) -> np.ndarray:
    """Evaluate the network on ``x`` of shape ``(..., in_dim)``."""
    h = _check_input(params, x)
    last = params.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if k < last:
            h = _act(params.activation, h)
    if check_finite and not np.all(np.isfinite(h)):
        raise NumericError("network output is not finite")
    return h


def mlp_forward_cache(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Forward pass that also returns what :func:`mlp_backward` needs.

    ``x`` must be 2-D ``(batch, in_dim)``.
    """
    h = _check_input(params, x)
    cache = []
    last = params.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = h @ w.T + b
        out = _act(params.activation, a) if k < last else a
        cache.append((h, a, out))
        h = out
    return h, cache


def backward_arrays(weights, activation: str, cache: list, grad_out: np.ndarray):
    """Allocation-light backward pass returning plain lists ``(gw, gb, grad_in)``."""
    g = grad_out
    n = len(weights)
    gw = [None] * n
    gb = [None] * n
    for k in range(n - 1, -1, -1):
        h_in, a, out = cache[k]
        if k < n - 1:
            g = g * _act_grad(activation, a, out)
        gw[k] = g.T @ h_in
        gb[k] = g.sum(axis=0)
        g = g @ weights[k]
    return gw, gb, g


def mlp_backward(params: MlpParams, cache: list, grad_out: np.ndarray) -> tuple[MlpParams, np.ndarray]:
    """Backpropagate ``dLoss/dOutput`` through a cached forward pass.

    Returns
    -------
    grads : MlpParams
        Gradient with respect to every weight and bias (summed over batch).
    grad_in : ndarray
        Gradient with respect to the network input, shape ``(batch, in_dim)``.
    """
    gw, gb, g = backward_arrays(params.weights, params.activation, cache, np.asarray(grad_out, dtype=float))
    return MlpParams(params.layer_dims, tuple(gw), tuple(gb), params.activation), g


def mlp_gradient(
    params: MlpParams, inputs: np.ndarray, targets: np.ndarray, loss: str = "mse"
) -> tuple[float, MlpParams]:
    """Mean-squared error over a batch and its exact gradient.

    The loss is averaged over batch elements and output components.
    """
    if loss != "mse":
        raise ConfigurationError(f"unsupported loss {loss!r}")
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if inputs.shape[0] == 0:
        raise UsageError("empty batch")
    if targets.shape != (inputs.shape[0], params.out_dim):
        raise ShapeError(f"targets shape {targets.shape} does not match ({inputs.shape[0]}, {params.out_dim})")
    out, cache = mlp_forward_cache(params, inputs)
    resid = out - targets
    value = float(np.mean(resid * resid))
    grads, _ = mlp_backward(params, cache, 2.0 * resid / resid.size)
    return value, grads


@dataclass(frozen=True)
class AdamState:
    """Optimizer state; moments share the parameter shapes."""

    first_moment: MlpParams
    second_moment: MlpParams
    step_count: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    clip_norm: float | None = 10.0


def adam_init(params: MlpParams, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-8, clip_norm: float | None = 10.0) -> AdamState:
    if lr <= 0 or not (0 <= beta1 < 1) or not (0 <= beta2 < 1) or epsilon <= 0:
        raise ConfigurationError("invalid Adam hyperparameters")
    zero = params.zeros_like()
    return AdamState(zero, zero, 0, lr, beta1, beta2, epsilon, clip_norm)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update.

    If ``state.clip_norm`` is set, the gradient is first rescaled so its
    global Euclidean norm does not exceed it.
    """
    p_arr, g_arr = params.arrays(), grads.arrays()
    m_arr, v_arr = state.first_moment.arrays(), state.second_moment.arrays()
    if len(p_arr) != len(g_arr) or any(p.shape != g.shape for p, g in zip(p_arr, g_arr)) \
            or any(p.shape != m.shape for p, m in zip(p_arr, m_arr)):
        raise UsageError("gradient / optimizer state shapes do not match the parameters")
    if state.clip_norm is not None:
        norm = grads.global_norm()
        if norm > state.clip_norm:
            g_arr = [g * (state.clip_norm / norm) for g in g_arr]
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arr, g_arr, m_arr, v_arr):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(
        params.with_arrays(new_m), params.with_arrays(new_v), t,
        state.lr, state.beta1, state.beta2, state.epsilon, state.clip_norm,
    )
    return params.with_arrays(new_p), new_state

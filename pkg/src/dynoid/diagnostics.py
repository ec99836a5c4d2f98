"""Observability diagnostics on plants with known equations.

Numerical counterparts of the quantities behind the state-map construction:

* ``F_i`` - the state after ``i`` steps, :func:`iterate_dynamics`;
* ``O_i`` - the stacked outputs over ``i`` steps, :func:`observability_map`;
* sampled Lipschitz constant of ``f`` (a lower bound on the true constant);
* sampled observability constant ``alpha_ell`` (an upper bound on the true
  infimum);
* least-squares state inversion from a window of noisy outputs and the
  check that its error stays below ``2 * gamma^ell / alpha_ell * ||w||``.

Norms are Euclidean throughout.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import CapabilityError, UsageError
from .systems import DiscreteSystem


def _box(box, n: int) -> tuple[np.ndarray, np.ndarray]:
    b = np.asarray(box, dtype=float)
    if b.shape == (2,):
        b = np.tile(b, (n, 1))
    if b.shape != (n, 2) or np.any(b[:, 1] <= b[:, 0]):
        raise UsageError(f"box must be {n} nondegenerate (low, high) pairs, got {np.asarray(box).tolist()}")
    return b[:, 0], b[:, 1]


def _inputs(system: DiscreteSystem, inputs) -> np.ndarray:
    u = np.asarray(inputs, dtype=float)
    if u.ndim == 1 and system.n_u == 1:
        u = u[:, None]
    if u.ndim < 2 or u.shape[-1] != system.n_u or len(u) < 1:
        raise UsageError(f"inputs must have shape (i >= 1, ..., {system.n_u})")
    return u


def iterate_dynamics(system: DiscreteSystem, x, inputs) -> np.ndarray:
    """``F_i(x, u_1..u_i)``; ``inputs`` has shape ``(i, ..., n_u)``."""
    x = np.asarray(x, dtype=float)
    for u in _inputs(system, inputs):
        x = system.f(x, u)
    return x


def state_sequence(system: DiscreteSystem, x, inputs) -> np.ndarray:
    """``(x, F_1, ..., F_i)`` stacked on a new leading axis."""
    x = np.asarray(x, dtype=float)
    out = [x]
    for u in _inputs(system, inputs):
        x = system.f(x, u)
        out.append(x)
    return np.stack(out)


def observability_map(system: DiscreteSystem, x, inputs) -> np.ndarray:
    """``O_i(x, u_1..u_i) = (h(x, u_1), h(F_1, u_2), ..., h(F_{i-1}, u_i))``, shape ``(..., i*n_y)``."""
    x = np.asarray(x, dtype=float)
    blocks = []
    for u in _inputs(system, inputs):
        blocks.append(system.h(x, u))
        x = system.f(x, u)
    return np.concatenate(blocks, axis=-1)


def _sample_pairs(rng: np.random.Generator, lo: np.ndarray, hi: np.ndarray, n: int):
    """Half independent uniform pairs, half close pairs at log-uniform distances."""
    width = hi - lo
    x = rng.uniform(lo, hi, size=(n, len(lo)))
    n_far = n // 2
    xp = np.empty_like(x)
    xp[:n_far] = rng.uniform(lo, hi, size=(n_far, len(lo)))
    d = rng.standard_normal((n - n_far, len(lo)))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = 10.0 ** rng.uniform(-6.0, 0.0, size=(n - n_far, 1))
    xp[n_far:] = np.clip(x[n_far:] + r * d * width, lo, hi)
    keep = np.any(x != xp, axis=1)
    return x[keep], xp[keep]


def estimate_lipschitz(system: DiscreteSystem, X, U, n_samples: int = 100_000, seed: int = 0) -> float:
    """Largest sampled ratio ``||f(x,u) - f(x',u)|| / ||x - x'||`` over ``X x X x U``.

    This is a lower bound on the uniform Lipschitz constant.
    """
    rng = np.random.default_rng(seed)
    xlo, xhi = _box(X, system.n_x)
    ulo, uhi = _box(U, system.n_u)
    x, xp = _sample_pairs(rng, xlo, xhi, n_samples)
    u = rng.uniform(ulo, uhi, size=(len(x), system.n_u))
    num = np.linalg.norm(system.f(x, u) - system.f(xp, u), axis=1)
    return float(np.max(num / np.linalg.norm(x - xp, axis=1)))


def estimate_alpha(system: DiscreteSystem, ell: int, X, U, n_samples: int = 100_000, seed: int = 0) -> float:
    """Smallest sampled ratio ``||O_ell(x,u) - O_ell(x',u)|| / ||x - x'||``.

    This is an upper bound on the observability constant ``alpha_ell``.
    """
    if ell < 1:
        raise UsageError("ell must be >= 1")
    rng = np.random.default_rng(seed)
    xlo, xhi = _box(X, system.n_x)
    ulo, uhi = _box(U, system.n_u)
    x, xp = _sample_pairs(rng, xlo, xhi, n_samples)
    u = rng.uniform(ulo, uhi, size=(ell, len(x), system.n_u))
    num = np.linalg.norm(observability_map(system, x, u) - observability_map(system, xp, u), axis=1)
    return float(np.min(num / np.linalg.norm(x - xp, axis=1)))


def invert_state(system: DiscreteSystem, ell: int, y_bar, u_bar, X, grid_points: int = 201,
                 sweeps: int = 50, x0=None,
                 polish: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares state estimate from ``ell`` measured outputs.

    ``xhat_past`` minimizes ``||y_bar - O_ell(x, u_bar)||`` over the box ``X``:
    an exhaustive grid (lowest flat index wins ties) followed by coordinate
    descent whose step halves after every sweep without improvement, and
    (with ``polish``) a bounded least-squares pass.  ``xhat_now = F_ell(xhat_past, u_bar)``.

    Systems with more than three states need an explicit starting point
    ``x0``; the grid stage is then skipped.
    """
    u_bar = _inputs(system, u_bar)
    if len(u_bar) != ell:
        raise UsageError(f"u_bar must hold ell={ell} inputs")
    y_bar = np.asarray(y_bar, dtype=float).ravel()
    if y_bar.shape != (ell * system.n_y,):
        raise UsageError(f"y_bar must hold ell={ell} outputs of dim {system.n_y}")
    lo, hi = _box(X, system.n_x)

    def cost(xs):
        return np.linalg.norm(observability_map(system, xs, u_bar[:, None, :]) - y_bar, axis=-1)

    spacing = (hi - lo) / (grid_points - 1)
    if x0 is None:
        if system.n_x > 3:
            raise CapabilityError(f"grid search supports n_x <= 3 (got {system.n_x}); pass a starting point x0")
        axes = [np.linspace(lo[d], hi[d], grid_points) for d in range(system.n_x)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, system.n_x)
        costs = cost(grid)
        k = int(np.argmin(costs))
        best, best_cost = grid[k].copy(), float(costs[k])
    else:
        best = np.clip(np.asarray(x0, dtype=float), lo, hi)
        best_cost = float(cost(best[None])[0])
    step = spacing.copy()
    for _ in range(sweeps):
        moved = False
        for d in range(system.n_x):
            cand = np.repeat(best[None], 2, axis=0)
            cand[0, d] = min(best[d] + step[d], hi[d])
            cand[1, d] = max(best[d] - step[d], lo[d])
            c = cost(cand)
            j = int(np.argmin(c))
            if c[j] < best_cost:
                best, best_cost, moved = cand[j], float(c[j]), True
        if not moved:
            step = step * 0.5
    if polish and best_cost > 0.0:
        # Coordinate moves crawl along narrow diagonal valleys; a bounded
        # trust-region least-squares pass finishes the job.
        res = least_squares(lambda v: observability_map(system, v, u_bar) - y_bar, best,
                            bounds=(lo, hi), xtol=1e-15, ftol=1e-15, gtol=1e-15)
        c = float(cost(res.x[None])[0])
        if c < best_cost:
            best, best_cost = res.x, c
    return best, iterate_dynamics(system, best, u_bar)


# ---------------------------------------------------------------------------
# error bound verification

@dataclass
class BoundSample:
    trial: int
    state_error: float
    noise_norm: float
    bound: float | None
    satisfied: bool | None


@dataclass
class DiagnosticsReport:
    system: str
    ell: int
    noise_level: float
    gamma_f_hat: float
    alpha_ell_hat: float
    observable: bool
    tolerance: float
    samples: list[BoundSample] = field(default_factory=list)

    @property
    def satisfaction_fraction(self) -> float | None:
        flags = [s.satisfied for s in self.samples if s.satisfied is not None]
        return float(np.mean(flags)) if flags else None

    @property
    def max_state_error(self) -> float:
        return max((s.state_error for s in self.samples), default=float("nan"))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["satisfaction_fraction"] = self.satisfaction_fraction
        return out

    def write_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        return path

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("trial", "state_error", "noise_norm", "bound", "satisfied"))
            for s in self.samples:
                w.writerow((s.trial, repr(s.state_error), repr(s.noise_norm),
                            "" if s.bound is None else repr(s.bound), "" if s.satisfied is None else int(s.satisfied)))
        return path


def error_bound(gamma: float, alpha: float, ell: int, noise_norm: float) -> float:
    """``2 * gamma^ell / alpha * ||w||``."""
    return 2.0 * gamma ** ell / alpha * noise_norm


def check_error_bound(system: DiscreteSystem, ell: int, noise_level: float, n_trials: int, seed: int,
                      X, U, n_samples: int = 100_000, grid_points: int = 201,
                      tolerance: float = 1e-6, max_resample: int = 1000) -> DiagnosticsReport:
    """Monte-Carlo check of the noisy state-inversion error bound.

    Each trial draws ``x_{t-ell}`` in ``X`` and ``ell`` inputs in ``U``,
    keeping only draws whose trajectory stays in ``X``; measures the
    outputs with Gaussian noise of standard deviation ``noise_level``;
    inverts the window and compares ``||xhat_t - x_t||`` against the bound
    built from sampled ``gamma_f`` and ``alpha_ell``.  ``tolerance`` absorbs
    the finite resolution of the inversion.
    """
    rng = np.random.default_rng(seed)
    gamma = estimate_lipschitz(system, X, U, n_samples, seed)
    alpha = estimate_alpha(system, ell, X, U, n_samples, seed)
    observable = alpha > 0.0
    xlo, xhi = _box(X, system.n_x)
    ulo, uhi = _box(U, system.n_u)
    report = DiagnosticsReport(system.name, ell, float(noise_level), gamma, alpha, observable, tolerance)
    for trial in range(n_trials):
        for _ in range(max_resample):
            x = rng.uniform(xlo, xhi)
            u = rng.uniform(ulo, uhi, size=(ell, system.n_u))
            traj = state_sequence(system, x, u)
            if np.all((traj >= xlo) & (traj <= xhi)):
                break
        else:
            raise UsageError("could not draw a trajectory that stays inside X")
        w = rng.standard_normal(ell * system.n_y) * noise_level
        y = observability_map(system, x, u) + w
        _, x_hat_now = invert_state(system, ell, y, u, X, grid_points)
        err = float(np.linalg.norm(x_hat_now - traj[-1]))
        wn = float(np.linalg.norm(w))
        if observable:
            bound = error_bound(gamma, alpha, ell, wn)
            report.samples.append(BoundSample(trial, err, wn, bound, bool(err <= bound + tolerance)))
        else:
            report.samples.append(BoundSample(trial, err, wn, None, None))
    return report


@dataclass
class Lemma1Row:
    i: int
    max_quotient: float
    gamma_power: float
    holds: bool


def check_lemma1(system: DiscreteSystem, i_max: int, X, U, n_samples: int = 20_000,
                 seed: int = 0) -> tuple[float, list[Lemma1Row]]:
    """Compare the sampled Lipschitz quotient of ``F_i`` with ``gamma^i``.

    ``gamma`` is the largest one-step quotient over the same sampled pairs,
    so the ``i = 1`` row matches it exactly.

    Returns ``(gamma_hat, rows)`` with one row per ``i = 1..i_max``.
    """
    if i_max < 1:
        raise UsageError("i_max must be >= 1")
    rng = np.random.default_rng(seed)
    xlo, xhi = _box(X, system.n_x)
    ulo, uhi = _box(U, system.n_u)
    x, xp = _sample_pairs(rng, xlo, xhi, n_samples)
    u = rng.uniform(ulo, uhi, size=(i_max, len(x), system.n_u))
    d0 = np.linalg.norm(x - xp, axis=1)
    quotients = np.empty(i_max)
    for i in range(i_max):
        x, xp = system.f(x, u[i]), system.f(xp, u[i])
        quotients[i] = np.max(np.linalg.norm(x - xp, axis=1) / d0)
    gamma = float(quotients[0])
    rows = []
    for i in range(i_max):
        q = float(quotients[i])
        g = gamma ** (i + 1)
        rows.append(Lemma1Row(i + 1, q, g, bool(q <= g * (1.0 + 1e-6))))
    return gamma, rows

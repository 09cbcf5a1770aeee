"""Quantized nonlinear filter for a discrete-time signal observed through a
conditional density.

The signal chain is replaced by per-layer grids with transition matrices;
the observation enters through weighted kernels H_k[i, j] = g_k(x_i, y_{k-1},
x_j, y_k) p_k[i, j]. The filter follows either the forward recursion
pi_k = pi_{k-1} H_k (normalized per step, with a log-mass ledger) or the
equivalent backward recursion u_{k-1} = H_k u_k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import norm

from .chain import QuantizedChain
from .errors import DegenerateObservationError, InputError
from .grids import Grid, Law1D, assign, newton_1d, scale_grid

# likelihood(k, x_prev, y_prev, x_next, y_next) -> nonnegative array, where
# x_prev is (Ni, 1, d), x_next is (1, Nj, d) and the result broadcasts to
# (Ni, Nj); y_prev / y_next are the fixed observations at steps k-1 and k.
Likelihood = Callable[[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray],
                      np.ndarray]


@dataclass
class FilterModel:
    """Quantized signal (grids, initial weights, transitions) plus the
    observation likelihood."""

    layers: list[Grid]
    initial: np.ndarray
    transitions: list[np.ndarray]
    likelihood: Likelihood

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=float)
        n = len(self.transitions)
        if len(self.layers) != n + 1:
            raise InputError("need one more layer than transition matrices")
        if self.initial.shape != (self.layers[0].size,):
            raise InputError("initial weight vector shape mismatch")
        if np.any(self.initial < 0) or abs(self.initial.sum() - 1.0) > 1e-9:
            raise InputError("initial weights must be a probability vector")
        for k, p in enumerate(self.transitions):
            if p.shape != (self.layers[k].size, self.layers[k + 1].size):
                raise InputError(f"transition {k} shape mismatch")
            if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
                raise InputError(f"transition {k} must be row-stochastic")

    @property
    def steps(self) -> int:
        return len(self.transitions)

    @classmethod
    def from_chain(cls, chain: QuantizedChain,
                   likelihood: Likelihood) -> "FilterModel":
        return cls(layers=list(chain.layers), initial=chain.marginals[0],
                   transitions=list(chain.transitions), likelihood=likelihood)


@dataclass
class FilterState:
    """Per-step normalized filter weights and the log of the normalization
    mass removed at each step; their sum is log pi_n(1), the log-likelihood
    of the observation path under the quantized model."""

    weights: list[np.ndarray]
    log_masses: list[float]

    @property
    def log_mass_total(self) -> float:
        return float(sum(self.log_masses))

    def expectation(self, values: np.ndarray, k: int = -1) -> float:
        """Normalized filter applied to a function given by its values on
        the layer-k grid."""
        v = np.asarray(values, dtype=float)
        if v.shape != self.weights[k].shape:
            raise InputError("value vector shape mismatch")
        return float(self.weights[k] @ v)


def _check_observations(observations, steps):
    y = np.asarray(observations, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2 or y.shape[0] != steps + 1:
        raise InputError("need one observation per layer (n+1 rows)")
    return y


def quantized_kernels(model: FilterModel, observations) -> list[np.ndarray]:
    """Observation-weighted transition kernels H_k[i, j] = g_k p_k[i, j],
    one (N_{k-1}, N_k) matrix per step k = 1..n."""
    y = _check_observations(observations, model.steps)
    kernels = []
    for k in range(1, model.steps + 1):
        xp = model.layers[k - 1].points[:, None, :]
        xn = model.layers[k].points[None, :, :]
        g = np.asarray(model.likelihood(k, xp, y[k - 1], xn, y[k]), dtype=float)
        g = np.broadcast_to(g, model.transitions[k - 1].shape)
        if np.any(g < 0) or not np.all(np.isfinite(g)):
            raise InputError(f"likelihood at step {k} must be finite and >= 0")
        kernels.append(g * model.transitions[k - 1])
    return kernels


def forward_filter(model: FilterModel, observations,
                   kernels: Optional[list[np.ndarray]] = None) -> FilterState:
    """Forward recursion pi_k = pi_{k-1} H_k with per-step renormalization.

    Raises DegenerateObservationError when the un-normalized mass vanishes.
    """
    if kernels is None:
        kernels = quantized_kernels(model, observations)
    pi = model.initial.copy()
    weights = [pi]
    log_masses = [0.0]
    for k, H in enumerate(kernels, start=1):
        pi = pi @ H
        mass = pi.sum()
        if not np.isfinite(mass) or mass <= 0.0:
            raise DegenerateObservationError(k)
        pi = pi / mass
        weights.append(pi)
        log_masses.append(math.log(mass))
    return FilterState(weights=weights, log_masses=log_masses)


def backward_value(model: FilterModel, observations, terminal,
                   kernels: Optional[list[np.ndarray]] = None):
    """Backward recursion u_{k-1} = H_k u_k started from the terminal values
    on the last grid.

    Returns (u0, log_scale, log_u_minus_1): u0 on the initial grid scaled so
    that the true vector is u0 * exp(log_scale), and the signed log of
    u_{-1} = initial . u0, i.e. the un-normalized filter applied to the
    terminal function. log_u_minus_1 is (sign, log|value|).
    """
    if kernels is None:
        kernels = quantized_kernels(model, observations)
    u = np.asarray(terminal, dtype=float)
    if u.shape != (model.layers[-1].size,):
        raise InputError("terminal values must live on the last grid")
    log_scale = 0.0
    for H in reversed(kernels):
        u = H @ u
        peak = np.abs(u).max()
        if peak > 0.0 and (peak > 1e100 or peak < 1e-100):
            u = u / peak
            log_scale += math.log(peak)
    total = float(model.initial @ u)
    sign = float(np.sign(total))
    log_abs = -math.inf if total == 0.0 else math.log(abs(total)) + log_scale
    return u, log_scale, (sign, log_abs)


def backward_expectation(model: FilterModel, observations, terminal) -> float:
    """The un-normalized filter applied to the terminal function, resolved
    to a plain real via the backward recursion."""
    _, _, (sign, log_abs) = backward_value(model, observations, terminal)
    return 0.0 if sign == 0.0 else sign * math.exp(log_abs)


def unnormalized_expectation(state: FilterState, values: np.ndarray,
                             k: int = -1):
    """Un-normalized filter pi_k applied to a function on the layer-k grid,
    as (sign, log|value|) to stay overflow-safe."""
    v = float(state.expectation(values, k))
    upto = len(state.weights) + k if k < 0 else k
    log_mass = float(sum(state.log_masses[:upto + 1]))
    if v == 0.0:
        return 0.0, -math.inf
    return float(np.sign(v)), math.log(abs(v)) + log_mass


# ---------------------------------------------------------------------------
# reference scalar models: AR(1) signal, increment observations
# ---------------------------------------------------------------------------

@dataclass
class ScalarFilterModel:
    """Scalar benchmark: signal X_k = a X_{k-1} + b eps_k with X_0 ~
    N(m0, s0^2); observation Y_k = Y_{k-1} + link(X_{k-1}) + sigma_obs eta_k,
    Y_0 = 0. The conditional density of Y_k given the past is Gaussian in
    the increment, so g_k(x, y, x', y') = phi((y' - y - link(x)) / sigma) / sigma.
    """

    name: str
    steps: int
    link: Callable[[np.ndarray], np.ndarray]
    sigma_obs: float
    ar_coeff: float
    ar_noise: float
    x0_mean: float = 0.0
    x0_std: float = 1.0
    linear_link_coeff: Optional[float] = None  # set when link(x) = c x

    def simulate(self, seed: int):
        """One joint trajectory; returns (x (n+1,), y (n+1,))."""
        rng = np.random.default_rng(seed)
        x = np.empty(self.steps + 1)
        y = np.empty(self.steps + 1)
        x[0] = self.x0_mean + self.x0_std * rng.standard_normal()
        y[0] = 0.0
        for k in range(1, self.steps + 1):
            y[k] = y[k - 1] + float(self.link(np.array([x[k - 1]]))[0]) \
                + self.sigma_obs * rng.standard_normal()
            x[k] = self.ar_coeff * x[k - 1] + self.ar_noise * rng.standard_normal()
        return x, y

    def likelihood(self, k, x_prev, y_prev, x_next, y_next):
        z = (y_next[0] - y_prev[0] - self.link(x_prev[..., 0])) / self.sigma_obs
        return norm.pdf(z) / self.sigma_obs

    def layer_moments(self):
        """Exact mean and std of X_k for k = 0..n."""
        means = np.empty(self.steps + 1)
        var = np.empty(self.steps + 1)
        means[0], var[0] = self.x0_mean, self.x0_std ** 2
        for k in range(1, self.steps + 1):
            means[k] = self.ar_coeff * means[k - 1]
            var[k] = self.ar_coeff ** 2 * var[k - 1] + self.ar_noise ** 2
        return means, np.sqrt(var)

    def build_filter(self, sizes: Sequence[int], method: str = "exact",
                     mc_paths: int = 100_000, seed: int = 0) -> FilterModel:
        """Quantized filter model on per-layer optimal Gaussian grids.

        "exact" computes the cell masses and transition rows in closed form
        from the Gaussian AR(1) structure; "mc" estimates them from
        simulated signal paths.
        """
        sizes = [int(s) for s in sizes]
        if len(sizes) != self.steps + 1:
            raise InputError("need n+1 layer sizes")
        means, stds = self.layer_moments()
        law = Law1D.gaussian()
        cache = {}
        layers = []
        for k, nk in enumerate(sizes):
            if nk not in cache:
                cache[nk] = newton_1d(law, nk)
            layers.append(scale_grid(cache[nk], [means[k]], stds[k]))
        if method == "exact":
            initial = _gaussian_cell_masses(layers[0], means[0], stds[0])
            transitions = [_gaussian_ar1_rows(layers[k], layers[k + 1],
                                              self.ar_coeff, self.ar_noise)
                           for k in range(self.steps)]
        elif method == "mc":
            rng = np.random.default_rng(seed)
            x = means[0] + stds[0] * rng.standard_normal(mc_paths)
            idx_prev, _ = assign(layers[0], x[:, None])
            initial = np.bincount(idx_prev, minlength=sizes[0]) / mc_paths
            transitions = []
            for k in range(self.steps):
                x = self.ar_coeff * x + self.ar_noise * rng.standard_normal(mc_paths)
                idx, _ = assign(layers[k + 1], x[:, None])
                joint = np.bincount(idx_prev * sizes[k + 1] + idx,
                                    minlength=sizes[k] * sizes[k + 1])
                joint = joint.reshape(sizes[k], sizes[k + 1]).astype(float)
                rows = joint.sum(axis=1)
                dead = rows == 0
                joint[dead] = 1.0 / sizes[k + 1]
                rows[dead] = 1.0
                transitions.append(joint / rows[:, None])
                idx_prev = idx
        else:
            raise InputError(f"unknown method {method!r}")
        return FilterModel(layers=layers, initial=initial,
                           transitions=transitions,
                           likelihood=self.likelihood)


def _voronoi_edges(points: np.ndarray) -> np.ndarray:
    x = points[:, 0]
    if np.any(np.diff(x) <= 0):
        raise InputError("scalar grid points must be strictly increasing")
    return np.concatenate(([-np.inf], 0.5 * (x[:-1] + x[1:]), [np.inf]))


def _gaussian_cell_masses(grid: Grid, mean: float, std: float) -> np.ndarray:
    edges = _voronoi_edges(grid.points)
    cdf = norm.cdf((edges - mean) / std)
    w = np.diff(cdf)
    return w / w.sum()


def _gaussian_ar1_rows(prev: Grid, nxt: Grid, a: float, b: float) -> np.ndarray:
    """Row i = exact law of a x_i + b eps over the Voronoi cells of `nxt`."""
    edges = _voronoi_edges(nxt.points)
    centers = a * prev.points[:, 0]
    cdf = norm.cdf((edges[None, :] - centers[:, None]) / b)
    rows = np.diff(cdf, axis=1)
    return rows / rows.sum(axis=1, keepdims=True)


def builtin_models(name: str, steps: int = 10) -> ScalarFilterModel:
    """Benchmark models: "linear-gaussian" (link x -> x, Kalman-checkable)
    and "sin-cube" (bounded non-Lipschitz link x -> sin(x^3))."""
    if name == "linear-gaussian":
        return ScalarFilterModel(name=name, steps=steps,
                                 link=lambda x: np.asarray(x, dtype=float),
                                 sigma_obs=0.5, ar_coeff=0.9, ar_noise=0.4,
                                 linear_link_coeff=1.0)
    if name == "sin-cube":
        return ScalarFilterModel(name=name, steps=steps,
                                 link=lambda x: np.sin(np.asarray(x, dtype=float) ** 3),
                                 sigma_obs=0.5, ar_coeff=0.9, ar_noise=0.4)
    raise InputError(f"unknown builtin model {name!r}")


def kalman_posterior(model: ScalarFilterModel, observations):
    """Exact posterior mean and variance of X_n given the observations, for
    a linear link. Each increment y_k - y_{k-1} = c X_{k-1} + sigma eta_k is
    a measurement of X_{k-1}: update on it, then predict one step forward.
    """
    if model.linear_link_coeff is None:
        raise InputError("closed-form posterior needs a linear link")
    c, s2 = model.linear_link_coeff, model.sigma_obs ** 2
    y = np.asarray(observations, dtype=float).reshape(-1)
    if y.shape[0] != model.steps + 1:
        raise InputError("need n+1 scalar observations")
    m, P = model.x0_mean, model.x0_std ** 2
    for k in range(1, model.steps + 1):
        z = y[k] - y[k - 1]
        gain = P * c / (c * c * P + s2)
        m = m + gain * (z - c * m)
        P = (1.0 - gain * c) * P
        m = model.ar_coeff * m
        P = model.ar_coeff ** 2 * P + model.ar_noise ** 2
    return m, P


# ---------------------------------------------------------------------------
# file interfaces
# ---------------------------------------------------------------------------

def read_observations(path) -> np.ndarray:
    """CSV with one row per step and one column per observation component."""
    import csv as _csv
    rows = []
    with open(path) as fh:
        for ln, row in enumerate(_csv.reader(fh), start=1):
            row = [c for c in row if c.strip()]
            if not row:
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise InputError(f"non-numeric observation at line {ln}")
    if not rows or len({len(r) for r in rows}) != 1:
        raise InputError("observation rows must be nonempty and rectangular")
    return np.asarray(rows)


def write_filter_output(state: FilterState, model: FilterModel,
                        outdir) -> None:
    """CSV of (k, i, normalized weight) plus a JSON summary with the total
    log mass and the posterior mean/variance of the final layer."""
    import csv as _csv
    import json as _json
    from pathlib import Path

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "filter.csv", "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["k", "i", "weight"])
        for k, w in enumerate(state.weights):
            for i, wi in enumerate(w):
                writer.writerow([k, i, f"{wi:.17g}"])
    pts = model.layers[-1].points
    w = state.weights[-1]
    mean = w @ pts
    var = w @ ((pts - mean) ** 2)
    with open(outdir / "filter.json", "w") as fh:
        _json.dump({"log_total_mass": state.log_mass_total,
                    "posterior_mean": list(np.atleast_1d(mean)),
                    "posterior_variance": list(np.atleast_1d(var))},
                   fh, indent=2)

"""Optimal vector quantization: grids, Voronoi projection, distortion,
grid-search algorithms (Lloyd's I, CLVQ, 1D Newton) and grid file I/O.

A grid is a finite codebook of N points in R^d; nearest-neighbor projection
onto it defines the Voronoi cells. Point order is a stable identity: index i
names cell i, and ties always resolve to the smallest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConvergenceError, InputError, ParseError

_WEIGHT_TOL = 1e-12

# Chunk size (rows) for batched nearest-neighbor assignment; keeps the
# M x N squared-distance block below ~100 MB for the grid sizes we use.
_ASSIGN_CHUNK = 65536


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    """Codebook of N points in R^d with optional per-point probabilities."""

    points: np.ndarray                    # (N, d)
    weights: Optional[np.ndarray] = None  # (N,) or None until estimated

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", pts)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise InputError("grid needs an (N, d) array with N >= 1")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            object.__setattr__(self, "weights", w)
            if w.shape != (pts.shape[0],):
                raise InputError("weights must have one entry per grid point")
            if np.any(w < -_WEIGHT_TOL) or abs(w.sum() - 1.0) > 1e-12:
                raise InputError("weights must be >= 0 and sum to 1")

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def with_weights(self, weights) -> "Grid":
        return Grid(self.points.copy(), np.asarray(weights, dtype=float))


@dataclass
class DistortionReport:
    """Empirical quadratic distortion, its gradient and cell occupancies."""

    value: float
    gradient: np.ndarray      # (N, d)
    cell_counts: np.ndarray   # (N,) ints


@dataclass
class StopCriteria:
    max_iterations: int = 200
    relative_distortion_tolerance: float = 1e-8
    stationarity_tolerance: float = 1e-6

    def __post_init__(self):
        if (self.max_iterations <= 0 or self.relative_distortion_tolerance <= 0
                or self.stationarity_tolerance <= 0):
            raise InputError("stop criteria must be strictly positive")


class SampleSource:
    """Either a frozen batch of points or a seeded i.i.d. generator.

    Generator mode draws from a named law ("gaussian" = standard normal,
    "uniform" = unit cube) or a user sampler ``f(rng, size) -> (size, d)``.
    Same seed always yields the same stream.
    """

    def __init__(self, batch=None, law=None, dim=None, seed=0, sampler=None):
        if batch is not None:
            b = np.asarray(batch, dtype=float)
            if b.ndim == 1:
                b = b[:, None]
            if b.ndim != 2 or b.shape[0] == 0:
                raise InputError("batch must be a nonempty (M, d) array")
            self._batch = b
            self.dim = b.shape[1]
            self.law = None
            self.seed = None
            self._sampler = None
        else:
            if dim is None or dim < 1:
                raise InputError("generator source needs a positive dim")
            if sampler is None and law not in ("gaussian", "uniform"):
                raise InputError(f"unknown law {law!r}")
            self._batch = None
            self.dim = int(dim)
            self.law = law if sampler is None else "custom"
            self.seed = int(seed)
            self._sampler = sampler

    @classmethod
    def from_batch(cls, batch) -> "SampleSource":
        return cls(batch=batch)

    @classmethod
    def gaussian(cls, dim, seed=0) -> "SampleSource":
        return cls(law="gaussian", dim=dim, seed=seed)

    @classmethod
    def uniform(cls, dim, seed=0) -> "SampleSource":
        return cls(law="uniform", dim=dim, seed=seed)

    @property
    def is_batch(self) -> bool:
        return self._batch is not None

    @property
    def batch(self) -> np.ndarray:
        if self._batch is None:
            raise InputError("source is in generator mode, no frozen batch")
        return self._batch

    def stream(self):
        """Fresh RNG positioned at the start of the stream."""
        if self.is_batch:
            raise InputError("batch source has no stream")
        return np.random.default_rng(self.seed)

    def draw(self, size, rng=None) -> np.ndarray:
        if self.is_batch:
            raise InputError("batch source cannot draw")
        rng = self.stream() if rng is None else rng
        if self._sampler is not None:
            out = np.asarray(self._sampler(rng, size), dtype=float)
            if out.shape != (size, self.dim):
                raise InputError("custom sampler returned wrong shape")
            return out
        if self.law == "gaussian":
            return rng.standard_normal((size, self.dim))
        return rng.random((size, self.dim))

    def materialize(self, default_size=1_000_000) -> np.ndarray:
        """Frozen batch view: the batch itself, or one seeded draw."""
        return self.batch if self.is_batch else self.draw(default_size)


# ---------------------------------------------------------------------------
# projection and distortion
# ---------------------------------------------------------------------------

def nearest_neighbor(grid: Grid, point) -> tuple[int, float]:
    """Index and Euclidean distance of the closest grid point.

    Ties resolve to the smallest index.
    """
    p = np.asarray(point, dtype=float).reshape(-1)
    if p.shape[0] != grid.dim:
        raise InputError(f"point has dim {p.shape[0]}, grid has dim {grid.dim}")
    d2 = np.sum((grid.points - p) ** 2, axis=1)
    i = int(np.argmin(d2))
    return i, float(math.sqrt(d2[i]))


def assign(grid: Grid, points: np.ndarray, chunk: int = _ASSIGN_CHUNK):
    """Vectorized nearest-neighbor assignment of an (M, d) batch.

    Returns (indices, squared distances). Exact linear scan per point,
    chunked to bound memory; argmin keeps the smallest-index tie rule.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[1] != grid.dim:
        raise InputError("batch dimension mismatch")
    c = grid.points
    c2 = np.sum(c * c, axis=1)
    idx = np.empty(pts.shape[0], dtype=np.int64)
    d2 = np.empty(pts.shape[0])
    for lo in range(0, pts.shape[0], chunk):
        hi = min(lo + chunk, pts.shape[0])
        block = pts[lo:hi]
        dist2 = np.sum(block * block, axis=1)[:, None] - 2.0 * block @ c.T + c2[None, :]
        ii = np.argmin(dist2, axis=1)
        idx[lo:hi] = ii
        d2[lo:hi] = np.maximum(dist2[np.arange(hi - lo), ii], 0.0)
    return idx, d2


def distortion_and_gradient(grid: Grid, source: SampleSource,
                            batch_size: int = 1_000_000) -> DistortionReport:
    """Empirical quadratic distortion D_{N,2} with gradient and occupancies.

    value    = (1/M) sum_m min_i |xi_m - x_i|^2
    grad_i   = (2/M) sum over cell i of (x_i - xi_m)
    Empty cells get a zero gradient entry.
    """
    batch = source.batch if source.is_batch else source.draw(batch_size)
    if batch.shape[0] == 0:
        raise InputError("empty sample batch")
    idx, d2 = assign(grid, batch)
    n, d = grid.size, grid.dim
    counts = np.bincount(idx, minlength=n)
    sums = np.zeros((n, d))
    for j in range(d):
        sums[:, j] = np.bincount(idx, weights=batch[:, j], minlength=n)
    grad = 2.0 * (counts[:, None] * grid.points - sums) / batch.shape[0]
    grad[counts == 0] = 0.0
    return DistortionReport(value=float(d2.mean()), gradient=grad, cell_counts=counts)


def ls_error(grid: Grid, source: SampleSource, s: float,
             batch_size: int = 1_000_000) -> float:
    """L^s mean quantization error ((1/M) sum dist^s)^(1/s)."""
    if s <= 0:
        raise InputError("s must be positive")
    batch = source.batch if source.is_batch else source.draw(batch_size)
    if batch.shape[0] == 0:
        raise InputError("empty sample batch")
    _, d2 = assign(grid, batch)
    return float(np.mean(d2 ** (s / 2.0)) ** (1.0 / s))


def scale_grid(base: Grid, shift, scale) -> Grid:
    """Affine image shift + scale . x_i of every point; weights preserved."""
    shift = np.asarray(shift, dtype=float).reshape(-1)
    if shift.shape[0] != base.dim:
        raise InputError("shift dimension mismatch")
    scale = np.asarray(scale, dtype=float)
    if scale.ndim == 0:
        pts = shift[None, :] + float(scale) * base.points
    elif scale.shape == (base.dim, base.dim):
        if abs(np.linalg.det(scale)) < 1e-300:
            raise InputError("singular matrix scale factor")
        pts = shift[None, :] + base.points @ scale.T
    else:
        raise InputError("scale must be a scalar or a d x d matrix")
    w = None if base.weights is None else base.weights.copy()
    return Grid(pts, w)


# ---------------------------------------------------------------------------
# grid search: Lloyd's I
# ---------------------------------------------------------------------------

def lloyd(initial: Grid, source: SampleSource, stop: StopCriteria = StopCriteria()):
    """Lloyd's I fixed-point iteration on a frozen empirical measure.

    Each sweep replaces every nonempty cell point by its sample mean; dead
    cells are re-seeded near a sample of the most populated cell. Returns
    (grid with empirical weights, final DistortionReport, iterations).
    """
    if not source.is_batch:
        raise InputError("Lloyd needs a fixed-batch source")
    batch = source.batch
    n = initial.size
    if batch.shape[0] < n:
        raise InputError("fewer samples than grid points")
    pts = initial.points.copy()
    if len(np.unique(pts, axis=0)) != n:
        raise InputError("initial points must be pairwise distinct")
    jitter = 1e-6 * batch.std(axis=0)
    rng = np.random.default_rng(0)
    prev = None
    it = 0
    counts = None
    for it in range(1, stop.max_iterations + 1):
        grid = Grid(pts)
        idx, d2 = assign(grid, batch)
        counts = np.bincount(idx, minlength=n)
        value = float(d2.mean())
        if prev is not None and value > prev * (1.0 + 1e-12):
            raise ConvergenceError("distortion increased during Lloyd sweep",
                                   residual=value - prev)
        means = pts.copy()
        for j in range(pts.shape[1]):
            sums = np.bincount(idx, weights=batch[:, j], minlength=n)
            np.divide(sums, counts, out=means[:, j], where=counts > 0)
        dead = np.flatnonzero(counts == 0)
        if dead.size:
            donor = int(np.argmax(counts))
            donors = np.flatnonzero(idx == donor)
            for i in dead:
                pick = batch[rng.choice(donors)]
                means[i] = pick + jitter * rng.standard_normal(pts.shape[1])
        else:
            # converged when the distortion plateaus and every point already
            # sits at its cell mean (|cell mean - x_i| = would-be movement)
            moved = np.linalg.norm(means - pts, axis=1)
            allowed = stop.stationarity_tolerance * (
                1.0 + np.linalg.norm(pts, axis=1))
            if (prev is not None
                    and prev - value < stop.relative_distortion_tolerance * prev
                    and np.all(moved <= allowed)):
                break
        pts = means
        prev = value
    grid = Grid(pts)
    report = distortion_and_gradient(grid, source)
    weights = report.cell_counts / batch.shape[0]
    return grid.with_weights(weights), report, it


# ---------------------------------------------------------------------------
# grid search: CLVQ (competitive learning / stochastic gradient)
# ---------------------------------------------------------------------------

def clvq(initial: Grid, source: SampleSource, steps: int,
         schedule: tuple[float, float] = (1.0, 9.0),
         weight_pass: int = 100_000) -> Grid:
    """Competitive learning vector quantization with step a / (b + t).

    Per draw, only the winner moves: x* <- x* - gamma_t (x* - xi_t).
    Weights come from a final frequency pass of `weight_pass` fresh draws.
    """
    if source.is_batch:
        raise InputError("CLVQ needs a seeded generator source")
    if steps < 1:
        raise InputError("steps must be >= 1")
    a, b = schedule
    if a <= 0 or b < 0:
        raise InputError("schedule needs a > 0 and b >= 0")
    if a / (b + 1.0) >= 1.0:
        raise InputError("first step gamma_1 >= 1 would overshoot")
    pts = initial.points.copy()
    grid = Grid(pts)
    rng = source.stream()
    block = 4096
    done = 0
    while done < steps:
        draws = source.draw(min(block, steps - done), rng=rng)
        for xi in draws:
            d2 = np.sum((pts - xi) ** 2, axis=1)
            w = int(np.argmin(d2))
            done += 1
            gamma = a / (b + done)
            pts[w] -= gamma * (pts[w] - xi)
    grid = Grid(pts)
    freq = source.draw(weight_pass, rng=rng)
    idx, _ = assign(grid, freq)
    weights = np.bincount(idx, minlength=grid.size) / weight_pass
    return grid.with_weights(weights)


# ---------------------------------------------------------------------------
# grid search: Newton in one dimension
# ---------------------------------------------------------------------------

@dataclass
class Law1D:
    """Scalar law descriptor for the 1D Newton search.

    first_moment is the partial first moment K(t) = int_{-inf}^t xi phi(xi) dxi.
    ppf is optional and only used to build the starting grid.
    """

    density: Callable[[np.ndarray], np.ndarray]
    cdf: Callable[[np.ndarray], np.ndarray]
    first_moment: Callable[[np.ndarray], np.ndarray]
    ppf: Optional[Callable[[np.ndarray], np.ndarray]] = None
    mean: float = 0.0

    @classmethod
    def gaussian(cls) -> "Law1D":
        from scipy.stats import norm
        return cls(density=norm.pdf, cdf=norm.cdf,
                   first_moment=lambda t: -norm.pdf(t), ppf=norm.ppf, mean=0.0)

    @classmethod
    def uniform01(cls) -> "Law1D":
        def pdf(t):
            t = np.asarray(t, dtype=float)
            return np.where((t >= 0.0) & (t <= 1.0), 1.0, 0.0)
        def cdf(t):
            return np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        def pm(t):
            return 0.5 * np.clip(np.asarray(t, dtype=float), 0.0, 1.0) ** 2
        return cls(density=pdf, cdf=cdf, first_moment=pm,
                   ppf=lambda u: np.asarray(u, dtype=float), mean=0.5)


def _newton_residual(x, law):
    """Gradient of D_{N,2} and cell masses for a sorted point vector."""
    m = 0.5 * (x[:-1] + x[1:])
    F = np.concatenate(([0.0], law.cdf(m), [1.0]))
    K = np.concatenate(([0.0], law.first_moment(m), [law.mean]))
    mass = np.diff(F)
    grad = 2.0 * (x * mass - np.diff(K))
    return grad, mass, m


def newton_1d(law: Law1D, N: int, tol: float = 1e-10,
              max_iter: int = 200) -> Grid:
    """Stationary L2-optimal grid for a scalar law via damped Newton.

    Solves grad D_{N,2} = 0, i.e. x_i = (K(m_{i+1}) - K(m_i)) / (F(m_{i+1}) - F(m_i))
    with midpoints m_i = (x_{i-1} + x_i)/2. Weights are the cell masses.
    """
    if N < 1:
        raise InputError("N must be >= 1")
    if law.ppf is not None:
        x = np.asarray(law.ppf((2.0 * np.arange(1, N + 1) - 1.0) / (2.0 * N)),
                       dtype=float)
    else:
        x = law.mean + np.linspace(-1.0, 1.0, N)
    grad, mass, m = _newton_residual(x, law)
    res = float(np.max(np.abs(grad)))
    for _ in range(max_iter):
        if res <= tol:
            break
        # tridiagonal Jacobian of the gradient in the point coordinates;
        # d grad_i / d x_i picks up the moving midpoints:
        #   2 mass_i + phi(m_{i+1})(x_i - m_{i+1}) - phi(m_i)(x_i - m_i)
        if N > 1:
            phi_m = law.density(m)
            move = np.zeros(N)
            move[:-1] += phi_m * (x[:-1] - m)
            move[1:] -= phi_m * (x[1:] - m)
            off = -0.5 * phi_m * np.diff(x)
            jac = np.diag(2.0 * mass + move)
            jac[np.arange(N - 1), np.arange(1, N)] = off
            jac[np.arange(1, N), np.arange(N - 1)] = off
        else:
            jac = np.diag(2.0 * mass)
        try:
            step = np.linalg.solve(jac, grad)
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular Newton system", residual=res)
        # damped update: halve while the residual does not decrease
        t = 1.0
        for _ in range(30):
            cand = x - t * step
            if np.all(np.diff(cand) > 0) or N == 1:
                g2, mass2, m2 = _newton_residual(cand, law)
                r2 = float(np.max(np.abs(g2)))
                if r2 < res:
                    x, grad, mass, m, res = cand, g2, mass2, m2, r2
                    break
            t *= 0.5
        else:
            raise ConvergenceError("Newton damping exhausted", residual=res)
    if res > tol:
        raise ConvergenceError("Newton did not reach tolerance", residual=res)
    return Grid(x[:, None], mass)


# ---------------------------------------------------------------------------
# grid file I/O
# ---------------------------------------------------------------------------

def save_grid(grid: Grid, path) -> None:
    """Plain-text grid file: "d N" header, then one point + weight per line.

    Weight -1 marks "unknown"; 17 significant digits give an exact double
    round trip.
    """
    with open(path, "w") as fh:
        fh.write(f"{grid.dim} {grid.size}\n")
        w = grid.weights
        for i in range(grid.size):
            coords = " ".join(f"{v:.17g}" for v in grid.points[i])
            wi = -1.0 if w is None else w[i]
            fh.write(f"{coords} {wi:.17g}\n")


def load_grid(path, legacy_layout: bool = False) -> Grid:
    """Read a grid file; `legacy_layout` accepts the public Gaussian-grid
    layout (all point rows first, then all weight rows, no interleaving)."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ParseError("empty grid file", line=1)
    head = lines[0].split()
    if len(head) != 2:
        raise ParseError("header must be 'd N'", line=1)
    try:
        d, n = int(head[0]), int(head[1])
    except ValueError:
        raise ParseError("non-integer header", line=1)
    if d < 1 or n < 1:
        raise ParseError("header values must be positive", line=1)
    body = lines[1:]
    if legacy_layout:
        if len(body) != 2 * n:
            raise ParseError(f"expected {2 * n} rows (points then weights), got {len(body)}",
                             line=len(lines))
        pts = _parse_rows(body[:n], d, offset=2)
        wrows = _parse_rows(body[n:], 1, offset=2 + n)
        weights = wrows[:, 0]
    else:
        if len(body) != n:
            raise ParseError(f"expected {n} rows, got {len(body)}", line=len(lines))
        rows = _parse_rows(body, d + 1, offset=2)
        pts, weights = rows[:, :d], rows[:, d]
    if np.all(weights == -1.0):
        return Grid(pts)
    if np.any(weights < 0):
        raise ParseError("negative weight (only -1 marks unknown)")
    return Grid(pts, weights / weights.sum() if abs(weights.sum() - 1) <= 1e-9
                else _reject_weights(weights))


def _reject_weights(weights):
    raise ParseError(f"weights sum to {weights.sum()!r}, not 1")


def _parse_rows(rows, width, offset):
    out = np.empty((len(rows), width))
    for i, ln in enumerate(rows):
        parts = ln.split()
        if len(parts) != width:
            raise ParseError(f"expected {width} columns, got {len(parts)}",
                             line=offset + i)
        try:
            out[i] = [float(p) for p in parts]
        except ValueError:
            raise ParseError("non-numeric entry", line=offset + i)
    return out

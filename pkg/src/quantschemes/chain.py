"""Euler-scheme simulation and Monte Carlo estimation of the quantization
tree: per-layer grids, marginal weights, transition matrices and the
Brownian companion weight tensors.

Coefficient functions are vectorized over paths: drift(t, x) maps an
(M, d) state block to (M, d); diffusion(t, x) maps it to (M, d, q).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InputError, NumericError, ParseError
from .grids import Grid, SampleSource, StopCriteria, assign, lloyd, scale_grid

_ROW_TOL = 1e-12


@dataclass
class DiffusionModel:
    """Coefficients of dX = b(t, X) dt + sigma(t, X) dW with declared
    Lipschitz constants (used by the error-bound calculator)."""

    dim_x: int
    dim_w: int
    drift: Callable[[float, np.ndarray], np.ndarray]
    diffusion: Callable[[float, np.ndarray], np.ndarray]
    x0: np.ndarray
    lip_b: float = 0.0
    lip_sigma: float = 0.0

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if self.x0.shape[0] != self.dim_x:
            raise InputError("x0 dimension mismatch")
        probe = np.tile(self.x0, (2, 1))
        b = np.asarray(self.drift(0.0, probe), dtype=float)
        s = np.asarray(self.diffusion(0.0, probe), dtype=float)
        if b.shape != (2, self.dim_x):
            raise InputError("drift must map (M, d) -> (M, d)")
        if s.shape != (2, self.dim_x, self.dim_w):
            raise InputError("diffusion must map (M, d) -> (M, d, q)")


@dataclass(frozen=True)
class TimeMesh:
    horizon: float
    steps: int

    def __post_init__(self):
        if self.horizon <= 0 or self.steps < 1:
            raise InputError("need horizon > 0 and steps >= 1")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)


@dataclass
class QuantizedChain:
    """Time mesh, per-layer grids, and the Monte Carlo weight estimates.

    transitions[k] is the N_k x N_{k+1} row-stochastic matrix p^k_{ij};
    companions[k] is the N_k x N_{k+1} x q tensor of Brownian companion
    weights. dead_rows[k] lists cells never visited at layer k (their rows
    fall back to uniform with zero companions).
    """

    mesh: TimeMesh
    layers: list[Grid]
    marginals: list[np.ndarray]
    transitions: list[np.ndarray]
    companions: list[np.ndarray]
    mc_paths: int
    seed: int
    centered: bool
    dead_rows: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        n = self.mesh.steps
        if len(self.layers) != n + 1 or len(self.marginals) != n + 1:
            raise InputError("need n+1 layers and marginals")
        if len(self.transitions) != n or len(self.companions) != n:
            raise InputError("need n transition and companion arrays")
        if not self.dead_rows:
            self.dead_rows = [np.empty(0, dtype=np.int64) for _ in range(n)]
        for k in range(n):
            p = self.transitions[k]
            if p.shape != (self.layers[k].size, self.layers[k + 1].size):
                raise InputError(f"transition {k} shape mismatch")
            if np.any(np.abs(p.sum(axis=1) - 1.0) > _ROW_TOL):
                raise InputError(f"transition {k} rows must sum to 1")
            c = self.companions[k]
            if c.shape[:2] != p.shape:
                raise InputError(f"companion {k} shape mismatch")

    @property
    def dim_x(self) -> int:
        return self.layers[0].dim

    @property
    def dim_w(self) -> int:
        return self.companions[0].shape[2]

    @property
    def sizes(self) -> list[int]:
        return [g.size for g in self.layers]


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

def euler_paths(model: DiffusionModel, mesh: TimeMesh, num_paths: int,
                seed: int):
    """Euler scheme X_{k+1} = X_k + dt b(t_k, X_k) + sigma(t_k, X_k) dW.

    Returns (paths (M, n+1, d), increments (M, n, q)); the increments are
    exactly those consumed by the recursion. Reproducible for a given seed.
    """
    if num_paths < 1:
        raise InputError("num_paths must be >= 1")
    rng = np.random.default_rng(seed)
    n, d, q = mesh.steps, model.dim_x, model.dim_w
    dt = mesh.dt
    sq = np.sqrt(dt)
    paths = np.empty((num_paths, n + 1, d))
    incr = np.empty((num_paths, n, q))
    paths[:, 0, :] = model.x0
    times = mesh.times
    for k in range(n):
        x = paths[:, k, :]
        b = np.asarray(model.drift(times[k], x), dtype=float)
        s = np.asarray(model.diffusion(times[k], x), dtype=float)
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(s))):
            bad = int(np.flatnonzero(~np.isfinite(b).all(axis=-1)
                                     | ~np.isfinite(s).all(axis=(-2, -1)))[0])
            raise NumericError(f"non-finite coefficient at step {k}, path {bad}")
        dw = sq * rng.standard_normal((num_paths, q))
        incr[:, k, :] = dw
        paths[:, k + 1, :] = x + dt * b + np.einsum("mdq,mq->md", s, dw)
    return paths, incr


# ---------------------------------------------------------------------------
# layer grids
# ---------------------------------------------------------------------------

def build_layer_grids(model: DiffusionModel, mesh: TimeMesh,
                      sizes: Sequence[int], method: str = "lloyd-on-samples",
                      base_grids: Optional[dict] = None,
                      layer_maps: Optional[Sequence] = None,
                      sample_budget: int = 100_000, seed: int = 0,
                      stop: StopCriteria = StopCriteria(max_iterations=60,
                                                        relative_distortion_tolerance=1e-6,
                                                        stationarity_tolerance=1e-6)
                      ) -> list[Grid]:
    """One grid per time layer.

    "scaled-gaussian" maps base N(0, I) grids (keyed by size in
    `base_grids`) through per-layer point maps `layer_maps[k]`; map k may be
    None at a deterministic layer of size 1, where the grid is the Euler
    point itself. "lloyd-on-samples" runs Lloyd on the empirical layer
    marginals of a fresh Euler simulation.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) != mesh.steps + 1 or any(s < 1 for s in sizes):
        raise InputError("sizes must list n+1 positive layer sizes")
    if method == "scaled-gaussian":
        if base_grids is None or layer_maps is None:
            raise InputError("scaled-gaussian needs base_grids and layer_maps")
        out = []
        det = _deterministic_points(model, mesh)
        for k, nk in enumerate(sizes):
            if layer_maps[k] is None:
                if nk != 1:
                    raise InputError(f"layer {k} has no map but size {nk}")
                out.append(Grid(det[k][None, :], np.array([1.0])))
                continue
            if nk not in base_grids:
                raise InputError(f"missing base grid of size {nk}")
            base = base_grids[nk]
            pts = np.asarray(layer_maps[k](base.points), dtype=float)
            w = None if base.weights is None else base.weights.copy()
            out.append(Grid(pts, w))
        return out
    if method == "lloyd-on-samples":
        paths, _ = euler_paths(model, mesh, sample_budget, seed)
        rng = np.random.default_rng(seed + 1)
        out = []
        for k, nk in enumerate(sizes):
            layer = paths[:, k, :]
            uniq = np.unique(layer, axis=0)
            if uniq.shape[0] <= nk:
                # degenerate support (e.g. sigma = 0): the support itself
                out.append(Grid(uniq[:nk] if nk <= uniq.shape[0] else uniq))
                continue
            init = layer[rng.choice(layer.shape[0], size=nk, replace=False)]
            while np.unique(init, axis=0).shape[0] != nk:
                init = layer[rng.choice(layer.shape[0], size=nk, replace=False)]
            g, _, _ = lloyd(Grid(init), SampleSource.from_batch(layer), stop)
            out.append(g)
        return out
    raise InputError(f"unknown method {method!r}")


def _deterministic_points(model: DiffusionModel, mesh: TimeMesh) -> np.ndarray:
    """Noise-free Euler recursion, one point per layer."""
    pts = np.empty((mesh.steps + 1, model.dim_x))
    pts[0] = model.x0
    times = mesh.times
    for k in range(mesh.steps):
        x = pts[k][None, :]
        pts[k + 1] = x + mesh.dt * np.asarray(model.drift(times[k], x))
    return pts


# ---------------------------------------------------------------------------
# weight estimation
# ---------------------------------------------------------------------------

def estimate_companions(model: DiffusionModel, mesh: TimeMesh,
                        layers: Sequence[Grid], num_paths: int, seed: int,
                        center: bool = True) -> QuantizedChain:
    """Single-pass Monte Carlo estimation of marginal, transition and
    companion weights on the given layer grids.

    All three families come from the same Euler paths, which makes the
    marginal recursion p^{k+1} = p^k P^k exact. Unvisited cells get a
    uniform fallback row with zero companions and are listed in dead_rows.
    """
    n = mesh.steps
    if len(layers) != n + 1:
        raise InputError("need n+1 layer grids")
    paths, incr = euler_paths(model, mesh, num_paths, seed)
    q = model.dim_w
    idx = [assign(layers[k], paths[:, k, :])[0] for k in range(n + 1)]
    marginals, transitions, companions, dead = [], [], [], []
    for k in range(n + 1):
        counts = np.bincount(idx[k], minlength=layers[k].size)
        marginals.append(counts / num_paths)
        if k == n:
            break
        nk, nk1 = layers[k].size, layers[k + 1].size
        flat = idx[k] * nk1 + idx[k + 1]
        joint = np.bincount(flat, minlength=nk * nk1).reshape(nk, nk1)
        pi = np.empty((nk, nk1, q))
        for j in range(q):
            pi[:, :, j] = np.bincount(flat, weights=incr[:, k, j],
                                      minlength=nk * nk1).reshape(nk, nk1)
        row = counts.astype(float)
        deadk = np.flatnonzero(counts == 0)
        trans = np.divide(joint, row[:, None], where=row[:, None] > 0,
                          out=np.zeros((nk, nk1)))
        pi = np.divide(pi, row[:, None, None], where=row[:, None, None] > 0,
                       out=pi)
        if deadk.size:
            trans[deadk] = 1.0 / nk1
            pi[deadk] = 0.0
        if center:
            alive = np.setdiff1d(np.arange(nk), deadk)
            pi[alive] -= pi[alive].sum(axis=1, keepdims=True) / nk1
        transitions.append(trans)
        companions.append(pi)
        dead.append(deadk)
    return QuantizedChain(mesh=mesh, layers=list(layers), marginals=marginals,
                          transitions=transitions, companions=companions,
                          mc_paths=num_paths, seed=seed, centered=center,
                          dead_rows=dead)


# ---------------------------------------------------------------------------
# chain file I/O
# ---------------------------------------------------------------------------

_MAGIC = "quantized-chain-v1"


def save_chain(chain: QuantizedChain, path, binary: bool = False) -> None:
    """Self-describing chain container; text (17 significant digits) or the
    little-endian float64 binary variant for large chains.

    Layout after the three header lines (magic/mode, metadata, layer sizes,
    dead-row counts): per layer the grid points and marginal, then per step
    the transition matrix, companion tensor and dead-row index list, all as
    flat row-major streams.
    """
    n = chain.mesh.steps
    header = (f"{_MAGIC} {'bin' if binary else 'txt'}\n"
              f"{chain.dim_x} {chain.dim_w} {n} {chain.mesh.horizon:.17g} "
              f"{chain.seed} {chain.mc_paths} {int(chain.centered)}\n"
              + " ".join(str(s) for s in chain.sizes) + "\n"
              + " ".join(str(dr.size) for dr in chain.dead_rows) + "\n")
    blocks = []
    for k in range(n + 1):
        blocks.append(chain.layers[k].points)
        blocks.append(chain.marginals[k])
    for k in range(n):
        blocks.append(chain.transitions[k])
        blocks.append(chain.companions[k])
        blocks.append(chain.dead_rows[k].astype(float))
    if binary:
        with open(path, "wb") as fh:
            fh.write(header.encode())
            for b in blocks:
                fh.write(np.asarray(b, dtype="<f8").tobytes())
    else:
        with open(path, "w") as fh:
            fh.write(header)
            for b in blocks:
                flat = np.asarray(b, dtype=float).ravel()
                fh.write(" ".join(f"{v:.17g}" for v in flat) + "\n")


def load_chain(path) -> QuantizedChain:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        nl = [raw.index(b"\n")]
        for _ in range(3):
            nl.append(raw.index(b"\n", nl[-1] + 1))
    except ValueError:
        raise ParseError("truncated chain header", line=1)
    magic = raw[:nl[0]].decode().split()
    if len(magic) != 2 or magic[0] != _MAGIC:
        raise ParseError("not a chain file", line=1)
    binary = magic[1] == "bin"
    meta = raw[nl[0] + 1:nl[1]].decode().split()
    if len(meta) != 7:
        raise ParseError("bad chain metadata", line=2)
    d, q, n = int(meta[0]), int(meta[1]), int(meta[2])
    horizon, seed, mc_paths = float(meta[3]), int(meta[4]), int(meta[5])
    centered = bool(int(meta[6]))
    sizes = [int(s) for s in raw[nl[1] + 1:nl[2]].decode().split()]
    if len(sizes) != n + 1:
        raise ParseError("layer size list length mismatch", line=3)
    dead_counts = [int(s) for s in raw[nl[2] + 1:nl[3]].decode().split()]
    if len(dead_counts) != n:
        raise ParseError("dead-row count list length mismatch", line=4)
    shapes = []
    for k in range(n + 1):
        shapes.append((sizes[k], d))
        shapes.append((sizes[k],))
    for k in range(n):
        shapes.append((sizes[k], sizes[k + 1]))
        shapes.append((sizes[k], sizes[k + 1], q))
        shapes.append((dead_counts[k],))
    body = raw[nl[3] + 1:]
    if binary:
        vals = np.frombuffer(body, dtype="<f8")
        total = sum(int(np.prod(s)) for s in shapes)
        if vals.size != total:
            raise ParseError(f"expected {total} values, got {vals.size}", line=5)
        arrays, pos = [], 0
        for s in shapes:
            cnt = int(np.prod(s))
            arrays.append(vals[pos:pos + cnt].reshape(s).copy())
            pos += cnt
    else:
        lines = body.decode().split("\n")
        arrays = []
        for li, s in enumerate(shapes):
            cnt = int(np.prod(s))
            try:
                parts = lines[li].split()
            except IndexError:
                raise ParseError("truncated chain file", line=5 + li)
            if len(parts) != cnt:
                raise ParseError(f"expected {cnt} values, got {len(parts)}",
                                 line=5 + li)
            try:
                arrays.append(np.array([float(p) for p in parts]).reshape(s))
            except ValueError:
                raise ParseError("non-numeric value", line=5 + li)
    layers = [Grid(arrays[2 * k], _weights_or_none(arrays[2 * k + 1]))
              for k in range(n + 1)]
    marginals = [arrays[2 * k + 1] for k in range(n + 1)]
    tr, co, dr = [], [], []
    base = 2 * (n + 1)
    for k in range(n):
        tr.append(arrays[base + 3 * k])
        co.append(arrays[base + 3 * k + 1])
        dr.append(arrays[base + 3 * k + 2].astype(np.int64))
    return QuantizedChain(mesh=TimeMesh(horizon, n), layers=layers,
                          marginals=marginals, transitions=tr, companions=co,
                          mc_paths=mc_paths, seed=seed, centered=centered,
                          dead_rows=dr)


def _weights_or_none(w):
    s = w.sum()
    return w / s if abs(s - 1.0) <= 1e-9 else None

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quantschemes.errors import ConvergenceError, InputError, ParseError
from quantschemes.grids import (Grid, Law1D, SampleSource, StopCriteria,
                                assign, clvq, distortion_and_gradient, lloyd,
                                load_grid, ls_error, nearest_neighbor,
                                newton_1d, save_grid, scale_grid)

GAUSS_2PT = 0.7978845608028654  # sqrt(2/pi)


# ---------------------------------------------------------------------------
# Grid type
# ---------------------------------------------------------------------------

def test_grid_basic():
    g = Grid([[0.0], [1.0]])
    assert g.size == 2 and g.dim == 1 and g.weights is None
    g2 = g.with_weights([0.25, 0.75])
    assert np.allclose(g2.weights, [0.25, 0.75])


def test_grid_validation():
    with pytest.raises(InputError):
        Grid(np.empty((0, 2)))
    with pytest.raises(InputError):
        Grid([[0.0], [1.0]], weights=[1.0])
    with pytest.raises(InputError):
        Grid([[0.0], [1.0]], weights=[0.7, 0.2])
    with pytest.raises(InputError):
        Grid([[0.0], [1.0]], weights=[-0.5, 1.5])


def test_stop_criteria_validation():
    with pytest.raises(InputError):
        StopCriteria(max_iterations=0)
    with pytest.raises(InputError):
        StopCriteria(relative_distortion_tolerance=-1.0)


def test_sample_source_reproducible():
    s = SampleSource.gaussian(2, seed=5)
    assert np.array_equal(s.draw(100), s.draw(100))
    assert not np.array_equal(SampleSource.gaussian(2, seed=6).draw(100),
                              s.draw(100))


def test_sample_source_modes():
    batch = SampleSource.from_batch([[1.0, 2.0]])
    assert batch.is_batch
    with pytest.raises(InputError):
        batch.draw(10)
    gen = SampleSource.uniform(3, seed=0)
    with pytest.raises(InputError):
        _ = gen.batch
    with pytest.raises(InputError):
        SampleSource(law="triangular", dim=1)


# ---------------------------------------------------------------------------
# nearest neighbor and assignment
# ---------------------------------------------------------------------------

def test_nearest_neighbor_examples():
    g = Grid([[0.0], [1.0]])
    assert nearest_neighbor(g, [0.4]) == (0, pytest.approx(0.4))
    # tie resolves to the smallest index
    assert nearest_neighbor(g, [0.5]) == (0, pytest.approx(0.5))
    g2 = Grid([[0.0, 0.0], [3.0, 4.0]])
    assert nearest_neighbor(g2, [3.0, 0.0]) == (0, pytest.approx(3.0))


def test_nearest_neighbor_dim_mismatch():
    with pytest.raises(InputError):
        nearest_neighbor(Grid([[0.0], [1.0]]), [0.0, 1.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 12), st.integers(1, 3))
def test_assign_matches_pointwise(seed, n, d):
    rng = np.random.default_rng(seed)
    grid = Grid(rng.normal(size=(n, d)))
    pts = rng.normal(size=(20, d))
    idx, d2 = assign(grid, pts)
    for m in range(20):
        i, dist = nearest_neighbor(grid, pts[m])
        assert idx[m] == i
        assert math.isclose(math.sqrt(max(d2[m], 0.0)), dist,
                            rel_tol=1e-9, abs_tol=1e-12)


def test_assign_tie_smallest_index():
    idx, _ = assign(Grid([[0.0], [1.0]]), np.array([[0.5], [0.5]]))
    assert list(idx) == [0, 0]


# ---------------------------------------------------------------------------
# distortion and gradient
# ---------------------------------------------------------------------------

def test_distortion_dirac():
    rep = distortion_and_gradient(Grid([[0.25]]),
                                  SampleSource.from_batch([[0.25]]))
    assert rep.value == 0.0
    assert np.allclose(rep.gradient, 0.0)


def test_distortion_hand_example():
    rep = distortion_and_gradient(Grid([[0.0], [1.0]]),
                                  SampleSource.from_batch([[0.25], [0.75]]))
    assert rep.value == pytest.approx(0.0625, abs=1e-15)
    assert np.allclose(rep.gradient[:, 0], [-0.25, 0.25], atol=1e-15)
    assert list(rep.cell_counts) == [1, 1]


def test_distortion_empty_cell_zero_gradient():
    rep = distortion_and_gradient(Grid([[0.0], [100.0]]),
                                  SampleSource.from_batch([[0.1], [0.2]]))
    assert rep.cell_counts[1] == 0
    assert np.allclose(rep.gradient[1], 0.0)


def test_distortion_empty_batch_error():
    with pytest.raises(InputError):
        SampleSource.from_batch(np.empty((0, 1)))


def _fd_gradient(points, batch, step_scale=1e-5):
    """Central finite differences of the empirical distortion."""
    src = SampleSource.from_batch(batch)
    out = np.zeros_like(points)
    for i in range(points.shape[0]):
        for j in range(points.shape[1]):
            h = step_scale * (1.0 + abs(points[i, j]))
            up = points.copy(); up[i, j] += h
            dn = points.copy(); dn[i, j] -= h
            fu = distortion_and_gradient(Grid(up), src).value
            fd = distortion_and_gradient(Grid(dn), src).value
            out[i, j] = (fu - fd) / (2.0 * h)
    return out


def _well_separated_case(rng, n, d):
    """Grid with pairwise distance >= 1 and a batch filling every cell with
    margin, so finite-difference steps never flip assignments."""
    pts = (np.arange(n)[:, None] * 1.5) * np.ones((1, d)) \
        + 0.1 * rng.normal(size=(n, d))
    batch = np.concatenate([
        pts[i] + 0.2 * (rng.random(size=(40, d)) - 0.5) for i in range(n)])
    return pts, batch


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(5):
        n, d = rng.integers(2, 7), rng.integers(1, 3)
        pts, batch = _well_separated_case(rng, int(n), int(d))
        rep = distortion_and_gradient(Grid(pts), SampleSource.from_batch(batch))
        fd = _fd_gradient(pts, batch)
        scale = max(1.0, np.abs(rep.gradient).max())
        assert np.abs(rep.gradient - fd).max() / scale <= 1e-6


# ---------------------------------------------------------------------------
# Lloyd
# ---------------------------------------------------------------------------

def test_lloyd_single_point_is_mean():
    batch = np.array([[0.0], [1.0], [5.0]])
    g, rep, _ = lloyd(Grid([[0.3]]), SampleSource.from_batch(batch))
    assert g.points[0, 0] == pytest.approx(2.0)
    assert np.allclose(g.weights, [1.0])


def test_lloyd_gaussian_two_points():
    rng = np.random.default_rng(1)
    batch = rng.standard_normal((300_000, 1))
    g, _, _ = lloyd(Grid([[-0.5], [0.4]]), SampleSource.from_batch(batch))
    assert np.allclose(np.sort(g.points[:, 0]), [-GAUSS_2PT, GAUSS_2PT],
                       atol=0.02)


def test_lloyd_uniform_ten_points():
    rng = np.random.default_rng(2)
    batch = rng.random((300_000, 1))
    init = rng.random((10, 1))
    g, _, _ = lloyd(Grid(init), SampleSource.from_batch(batch))
    expect = (2 * np.arange(1, 11) - 1) / 20.0
    assert np.allclose(np.sort(g.points[:, 0]), expect, atol=0.02)


def test_lloyd_weights_and_stationarity():
    rng = np.random.default_rng(3)
    batch = rng.standard_normal((100_000, 2))
    stop = StopCriteria(max_iterations=1000,
                        relative_distortion_tolerance=1e-9,
                        stationarity_tolerance=1e-4)
    g, rep, it = lloyd(Grid(rng.standard_normal((5, 2))),
                       SampleSource.from_batch(batch), stop)
    assert abs(g.weights.sum() - 1.0) < 1e-12
    # empirical conditional-mean fixed point on every nonempty cell
    idx, _ = assign(g, batch)
    for i in range(5):
        cell = batch[idx == i]
        assert cell.size
        resid = np.linalg.norm(cell.mean(axis=0) - g.points[i])
        assert resid <= 1e-4 * (1.0 + np.linalg.norm(g.points[i]))


def test_lloyd_input_validation():
    with pytest.raises(InputError):
        lloyd(Grid([[0.0], [1.0]]), SampleSource.gaussian(1))
    with pytest.raises(InputError):
        lloyd(Grid([[0.0], [1.0], [2.0]]),
              SampleSource.from_batch([[0.0], [1.0]]))
    with pytest.raises(InputError):
        lloyd(Grid([[0.0], [0.0]]), SampleSource.from_batch([[0.0], [1.0]]))


def test_lloyd_reseeds_dead_cells():
    rng = np.random.default_rng(8)
    batch = rng.random((500, 1))
    g, rep, _ = lloyd(Grid([[0.2], [0.5], [50.0]]),
                      SampleSource.from_batch(batch))
    assert np.all(rep.cell_counts > 0)
    assert np.all(np.abs(g.points) <= 1.5)


# ---------------------------------------------------------------------------
# CLVQ
# ---------------------------------------------------------------------------

def test_clvq_single_step_update():
    src = SampleSource(dim=1, seed=0, sampler=lambda rng, size: np.ones((size, 1)))
    g = clvq(Grid([[0.0]]), src, steps=1, schedule=(1.0, 9.0), weight_pass=10)
    assert g.points[0, 0] == pytest.approx(0.1)


def test_clvq_one_point_converges_to_mean():
    g = clvq(Grid([[2.0]]), SampleSource.gaussian(1, seed=4),
             steps=100_000, schedule=(1.0, 100.0), weight_pass=1000)
    assert abs(g.points[0, 0]) <= 0.05


def test_clvq_matches_lloyd_distortion():
    source = SampleSource.gaussian(1, seed=7)
    batch = source.draw(100_000)
    init = Grid(np.linspace(-2, 2, 20)[:, None])
    gl, repl, _ = lloyd(init, SampleSource.from_batch(batch))
    gc = clvq(init, source, steps=500_000, schedule=(100.0, 1000.0))
    repc = distortion_and_gradient(gc, SampleSource.from_batch(batch))
    assert repc.value <= 1.05 * repl.value


def test_clvq_validation():
    with pytest.raises(InputError):
        clvq(Grid([[0.0]]), SampleSource.from_batch([[0.0]]), steps=10)
    with pytest.raises(InputError):
        clvq(Grid([[0.0]]), SampleSource.gaussian(1), steps=10,
             schedule=(2.0, 0.0))
    with pytest.raises(InputError):
        clvq(Grid([[0.0]]), SampleSource.gaussian(1), steps=0)


# ---------------------------------------------------------------------------
# Newton (1D)
# ---------------------------------------------------------------------------

def test_newton_gaussian_one_point():
    g = newton_1d(Law1D.gaussian(), 1)
    assert g.points[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert g.weights[0] == pytest.approx(1.0)


def test_newton_gaussian_two_points():
    g = newton_1d(Law1D.gaussian(), 2)
    assert np.allclose(g.points[:, 0], [-GAUSS_2PT, GAUSS_2PT], atol=1e-8)
    assert np.allclose(g.weights, [0.5, 0.5], atol=1e-10)


def test_newton_uniform_four_points():
    g = newton_1d(Law1D.uniform01(), 4)
    assert np.allclose(g.points[:, 0], [0.125, 0.375, 0.625, 0.875],
                       atol=1e-10)
    assert np.allclose(g.weights, 0.25, atol=1e-10)


def test_newton_residual_and_validation():
    g = newton_1d(Law1D.gaussian(), 25)
    from quantschemes.grids import _newton_residual
    grad, mass, _ = _newton_residual(g.points[:, 0], Law1D.gaussian())
    assert np.abs(grad).max() <= 1e-10
    assert np.allclose(mass, g.weights)
    with pytest.raises(InputError):
        newton_1d(Law1D.gaussian(), 0)


def test_newton_convergence_error_carries_residual():
    with pytest.raises(ConvergenceError) as exc:
        newton_1d(Law1D.gaussian(), 40, tol=1e-10, max_iter=1)
    assert exc.value.residual is not None and exc.value.residual > 0


# ---------------------------------------------------------------------------
# Ls error
# ---------------------------------------------------------------------------

def test_ls_error_zero_on_support():
    g = Grid([[0.0], [1.0]])
    src = SampleSource.from_batch([[0.0], [1.0]])
    for s in (1.0, 2.0, 3.5):
        assert ls_error(g, src, s) == 0.0


def test_ls_error_uniform_closed_form():
    # dense deterministic stand-in for the uniform law
    batch = (np.arange(1_000_000) + 0.5)[:, None] / 1_000_000
    for n in (1, 4, 10):
        mid = Grid(((2 * np.arange(1, n + 1) - 1) / (2 * n))[:, None])
        e = ls_error(mid, SampleSource.from_batch(batch), 2.0)
        assert e == pytest.approx(1.0 / (2.0 * math.sqrt(3.0) * n), rel=1e-5)


def test_ls_error_monotone_in_s():
    rng = np.random.default_rng(11)
    g = Grid(rng.normal(size=(5, 2)))
    src = SampleSource.from_batch(rng.normal(size=(1000, 2)))
    assert ls_error(g, src, 2.0) <= ls_error(g, src, 3.0)


def test_ls_error_validation():
    with pytest.raises(InputError):
        ls_error(Grid([[0.0]]), SampleSource.from_batch([[0.0]]), 0.0)


# ---------------------------------------------------------------------------
# scaling
# ---------------------------------------------------------------------------

def test_scale_grid_identity_and_affine():
    g = Grid([[-1.0], [1.0]], weights=[0.5, 0.5])
    same = scale_grid(g, [0.0], 1.0)
    assert np.array_equal(same.points, g.points)
    assert np.array_equal(same.weights, g.weights)
    moved = scale_grid(g, [5.0], 2.0)
    assert np.allclose(moved.points[:, 0], [3.0, 7.0])


def test_scale_grid_equivariance():
    rng = np.random.default_rng(13)
    base = Grid(rng.normal(size=(6, 1)))
    batch = rng.normal(size=(5000, 1))
    a, b = 2.5, -1.0
    e_base = ls_error(base, SampleSource.from_batch(batch), 2.0)
    scaled = scale_grid(base, [b], a)
    e_scaled = ls_error(scaled, SampleSource.from_batch(a * batch + b), 2.0)
    assert e_scaled == pytest.approx(a * e_base, rel=1e-12)


def test_scale_grid_errors():
    g = Grid([[0.0, 0.0]])
    with pytest.raises(InputError):
        scale_grid(g, [0.0], np.zeros((2, 2)))
    with pytest.raises(InputError):
        scale_grid(g, [0.0, 0.0, 0.0], 1.0)


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def test_grid_roundtrip(tmp_path):
    rng = np.random.default_rng(17)
    g = Grid(rng.normal(size=(7, 3)))
    w = rng.random(7); w /= w.sum()
    for grid in (g, g.with_weights(w)):
        path = tmp_path / "g.txt"
        save_grid(grid, path)
        back = load_grid(path)
        assert np.array_equal(back.points, grid.points)
        if grid.weights is None:
            assert back.weights is None
        else:
            assert np.allclose(back.weights, grid.weights, atol=1e-15)


def test_grid_file_example(tmp_path):
    path = tmp_path / "g.txt"
    path.write_text("1 2\n-0.7978845608 0.5\n0.7978845608 0.5\n")
    g = load_grid(path)
    assert g.dim == 1 and g.size == 2
    assert np.allclose(g.points[:, 0], [-0.7978845608, 0.7978845608])
    assert np.allclose(g.weights, [0.5, 0.5])


def test_grid_file_errors(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1 3\n0 0.5\n1 0.5\n")
    with pytest.raises(ParseError):
        load_grid(path)
    path.write_text("1\n0 1\n")
    with pytest.raises(ParseError):
        load_grid(path)
    path.write_text("1 1\nfoo 1\n")
    with pytest.raises(ParseError) as exc:
        load_grid(path)
    assert exc.value.line == 2
    path.write_text("1 1\n0 -0.5\n")
    with pytest.raises(ParseError):
        load_grid(path)
    path.write_text("")
    with pytest.raises(ParseError):
        load_grid(path)


def test_grid_legacy_layout(tmp_path):
    path = tmp_path / "legacy.txt"
    path.write_text("2 2\n0 0\n1 1\n0.25\n0.75\n")
    g = load_grid(path, legacy_layout=True)
    assert g.size == 2 and g.dim == 2
    assert np.allclose(g.weights, [0.25, 0.75])
    with pytest.raises(ParseError):
        load_grid(path)  # interleaved reader must reject this layout


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6), st.integers(1, 3))
def test_grid_roundtrip_property(seed, n, d):
    import tempfile
    rng = np.random.default_rng(seed)
    g = Grid(rng.normal(size=(n, d)) * 10.0 ** float(rng.integers(-3, 4)))
    with tempfile.NamedTemporaryFile("w", suffix=".txt", delete=False) as fh:
        path = fh.name
    save_grid(g, path)
    assert np.array_equal(load_grid(path).points, g.points)

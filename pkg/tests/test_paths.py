import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bdsdelab.errors import EmptyLevy, GridMismatch, ValidationError
from bdsdelab.parallel import chunks, ordered_map
from bdsdelab.paths import (IncreasingProcessPath, LevySpec, TimeGrid, backward_ito_integral,
                            forward_ito_integral, gen_brownian, gen_bundle, gen_jump_measure,
                            stieltjes_integral)
from bdsdelab.rng import RngStream


def test_grid_basics():
    g = TimeGrid(2.0, 4)
    np.testing.assert_array_equal(g.times, [0.0, 0.5, 1.0, 1.5, 2.0])
    assert g.dt == 0.5 and g.n_cells == 4 and g.index_of(1.5) == 3
    with pytest.raises(ValidationError):
        TimeGrid(1.0, 0)
    with pytest.raises(ValidationError):
        g.index_of(0.3)


def test_single_step_path():
    W = gen_brownian(TimeGrid(1.0, 1), 1, RngStream(3, "W"))
    assert W.increments.shape == (1, 1, 1)
    assert W.values()[0, 0, 0] == 0.0


def test_same_stream_same_increments():
    g = TimeGrid(1.0, 4)
    a = gen_brownian(g, 2, RngStream(5, "W"), 10)
    b = gen_brownian(g, 2, RngStream(5, "W"), 10)
    np.testing.assert_array_equal(a.increments, b.increments)
    c = gen_brownian(g, 2, RngStream(5, "B"), 10)
    assert not np.array_equal(a.increments, c.increments)


def test_rows_do_not_depend_on_batch_size_or_threads():
    g = TimeGrid(1.0, 3)
    small = gen_brownian(g, 1, RngStream(9, "W"), 300)
    big = gen_brownian(g, 1, RngStream(9, "W"), 1000, threads=4)
    np.testing.assert_array_equal(small.increments, big.increments[:300])
    lev = LevySpec((1.0, 2.0), (1.0, 3.0))
    n1 = gen_jump_measure(g, lev, RngStream(9, "N"), 700)
    n4 = gen_jump_measure(g, lev, RngStream(9, "N"), 700, threads=4)
    np.testing.assert_array_equal(n1.counts, n4.counts)
    np.testing.assert_array_equal(n1.event_time, n4.event_time)


def test_bundle_identical_across_thread_counts():
    g = TimeGrid(1.0, 5)
    lev = LevySpec((0.5,), (2.0,))
    a = gen_bundle(g, 3, 50, 2, 1, lev, seed=4, threads=1)
    b = gen_bundle(g, 3, 50, 2, 1, lev, seed=4, threads=4)
    np.testing.assert_array_equal(a.dW, b.dW)
    np.testing.assert_array_equal(a.dB, b.dB)
    np.testing.assert_array_equal(a.counts, b.counts)


def test_brownian_moments():
    P = 100_000
    W = gen_brownian(TimeGrid(1.0, 1), 1, RngStream(1, "W"), P)
    x = W.increments[:, 0, 0]
    assert abs(x.mean()) <= 4 / np.sqrt(P)
    assert abs(x.var(ddof=1) - 1) <= 0.05


def test_levy_validation():
    with pytest.raises(ValidationError):
        LevySpec((1.0,), (0.0,))
    with pytest.raises(EmptyLevy):
        LevySpec((), ())


def test_poisson_count_and_marks():
    P = 100_000
    g = TimeGrid(1.0, 4)
    N = gen_jump_measure(g, LevySpec((1.0, 2.0), (0.5, 1.5)), RngStream(2, "N"), P)
    total = N.counts.sum(axis=(1, 2))
    assert abs(total.mean() - 2.0) <= 3 * np.sqrt(2 / P) * np.sqrt(2)
    freq = np.bincount(N.event_atom, minlength=2) / len(N.event_atom)
    np.testing.assert_allclose(freq, [0.25, 0.75], atol=0.02)
    assert np.all(N.event_time > 0) and np.all(N.event_time <= 1.0)
    cell = np.ceil(N.event_time / g.dt - 1e-12).astype(int) - 1
    assert N.counts[N.event_path, cell, N.event_atom].min() >= 1


def test_forward_integral_examples():
    g = TimeGrid(1.0, 8)
    W = gen_brownian(g, 1, RngStream(0, "W"), 5)
    np.testing.assert_allclose(forward_ito_integral(np.full(9, 2.5), W), 2.5 * W.values()[..., 0], atol=1e-14)
    assert np.all(forward_ito_integral(np.zeros(9), W) == 0)
    with pytest.raises(GridMismatch):
        forward_ito_integral(np.zeros(5), W)


def test_backward_integral_examples():
    g = TimeGrid(1.0, 8)
    B = gen_brownian(g, 1, RngStream(0, "B"), 5, backward=True)
    vals = B.values()[..., 0]
    np.testing.assert_allclose(backward_ito_integral(np.full(9, -1.5), B), -1.5 * (vals[:, -1:] - vals),
                               atol=1e-14)
    assert np.all(backward_ito_integral(np.zeros(9), B) == 0)


def test_ito_identity_for_w_dw():
    P = 100_000
    g = TimeGrid(1.0, 20)
    W = gen_brownian(g, 1, RngStream(8, "W"), P)
    vals = W.values()[..., 0]
    D = forward_ito_integral(vals, W)[:, -1] + 0.5 - vals[:, -1] ** 2 / 2
    assert abs(D.mean()) <= 4 * D.std(ddof=1) / np.sqrt(P)


def test_isometry():
    P = 20_000
    g = TimeGrid(1.0, 16)
    W = gen_brownian(g, 1, RngStream(6, "W"), P)
    Z = np.cos(W.values()[..., 0])
    lhs = forward_ito_integral(Z, W)[:, -1] ** 2
    rhs = np.sum(Z[:, :-1] ** 2, axis=1) * g.dt
    D = lhs - rhs
    assert abs(D.mean()) <= 4 * D.std(ddof=1) / np.sqrt(P)


def test_stieltjes_examples():
    g = TimeGrid(1.0, 10)
    zero = IncreasingProcessPath.zero(g)
    assert np.all(stieltjes_integral(g.times, zero) == 0)
    A = IncreasingProcessPath.from_spec(g, 1.0, [(0.5, 2.0)])
    np.testing.assert_allclose(stieltjes_integral(np.ones(11), A), A.values(), atol=1e-14)
    got = stieltjes_integral(g.times, A)[-1]
    # left-endpoint sum of s ds plus the jump weighted by s at 0.5
    assert got == pytest.approx(np.sum(g.times[:-1]) * g.dt + 0.5 * 2.0, abs=1e-14)
    fine = TimeGrid(1.0, 2000)
    Af = IncreasingProcessPath.from_spec(fine, 1.0, [(0.5, 2.0)])
    assert stieltjes_integral(fine.times, Af)[-1] == pytest.approx(1.5, abs=1e-3)


def test_increasing_process_shape_and_validation():
    g = TimeGrid(1.0, 4)
    A = IncreasingProcessPath.from_spec(g, [0.0, 1.0, 0.0, 2.0], [(0.75, 0.5)])
    v = A.values()
    assert v[0] == 0 and np.all(np.diff(v) >= 0)
    assert v[3] - v[2] == pytest.approx(0.5)
    assert v[4] - v[3] == pytest.approx(2.0 * 0.25)
    with pytest.raises(ValidationError):
        IncreasingProcessPath.from_spec(g, -1.0)
    with pytest.raises(ValidationError):
        IncreasingProcessPath.from_spec(g, 0.0, [(0.0, 1.0)])


def test_chunks_and_ordered_map():
    assert chunks(5, 2) == [slice(0, 2), slice(2, 4), slice(4, 5)]
    assert ordered_map(lambda v: v * v, range(6), threads=3) == [0, 1, 4, 9, 16, 25]


@given(st.lists(st.floats(0, 5), min_size=1, max_size=12), st.lists(st.floats(0, 3), min_size=1, max_size=12))
def test_increasing_process_is_nondecreasing(dens, jumps):
    n = max(len(dens), len(jumps))
    g = TimeGrid(1.0, n)
    d = np.resize(dens, n)
    js = [(g.times[k + 1], s) for k, s in enumerate(np.resize(jumps, n))]
    v = IncreasingProcessPath.from_spec(g, d, js).values()
    assert v[0] == 0 and np.all(np.diff(v) >= 0)


@given(st.integers(1, 12), st.lists(st.floats(-3, 3), min_size=12, max_size=12), st.integers(0, 2 ** 32))
def test_forward_backward_duality_for_deterministic_integrands(n, cell_vals, seed):
    g = TimeGrid(1.0, n)
    B = gen_brownian(g, 1, RngStream(seed, "B"), 3, backward=True)
    c = np.array(cell_vals[:n])
    fwd = forward_ito_integral(np.append(c, 0.0), B)
    bwd = backward_ito_integral(np.insert(c, 0, 0.0), B)
    # total over [0, T] agrees and the split at every t adds up
    np.testing.assert_allclose(fwd[:, -1], bwd[:, 0], atol=1e-12)
    np.testing.assert_allclose(fwd + bwd, np.broadcast_to(fwd[:, -1:], fwd.shape), atol=1e-12)


@given(st.integers(0, 2 ** 40), st.sampled_from([1, 2, 3, 4]))
def test_determinism_property(seed, threads):
    g = TimeGrid(1.0, 3)
    a = gen_brownian(g, 1, RngStream(seed, "W"), 513)
    b = gen_brownian(g, 1, RngStream(seed, "W"), 513, threads=threads)
    assert np.array_equal(a.increments, b.increments)

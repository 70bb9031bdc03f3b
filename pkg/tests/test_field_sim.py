import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sasextremes.field_sim import (
    EmptyBoxError,
    FieldSample,
    RealBox,
    abs_sup_measure,
    partial_maxima_field,
    sample_field,
    sample_origin_values,
    sup_measure,
)
from sasextremes.return_laws import ParameterError, first_zero_weights, pareto_law, sibuya_law
from sasextremes.stable_core import c_alpha


def small_field(seed, n=(50, 50), ell=8, beta=(0.4, 0.7), alpha=1.2):
    laws = [sibuya_law(b) for b in beta]
    return sample_field(laws, n, alpha, ell, np.random.default_rng(seed))


def dense_box_max(field, box, absolute=False):
    vals = field.dense_values()
    sl = tuple(slice(lo, hi + 1) for lo, hi in box.lattice_ranges(field.n))
    sub = vals[sl]
    return float(np.abs(sub).max() if absolute else sub.max())


def test_real_box_lattice_ranges():
    assert RealBox.closed((0, 0), (1, 1)).lattice_ranges((10, 4)) == [(0, 10), (0, 4)]
    assert RealBox.open((0, 0), (1, 1)).lattice_ranges((10, 4)) == [(1, 9), (1, 3)]
    assert RealBox.closed((0.25,), (0.5,)).lattice_ranges((10,)) == [(3, 5)]
    assert RealBox.closed((0.3,), (0.3,)).lattice_ranges((10,)) == [(3, 3)]
    with pytest.raises(EmptyBoxError):
        RealBox.open((0.3,), (0.4,)).lattice_ranges((10,))
    with pytest.raises(ParameterError):
        RealBox.closed((0.5,), (0.2,))
    assert RealBox.closed((0.0,), (1.0,)).lattice_ranges((0,)) == [(0, 0)]
    with pytest.raises(EmptyBoxError):
        RealBox.open((0.0,), (1.0,)).lattice_ranges((0,))


def test_real_box_cell_ranges():
    assert RealBox.closed((0.0,), (1.0,)).cell_ranges(0.25) == [(0, 4)]
    assert RealBox.open((0.0,), (1.0,)).cell_ranges(0.25) == [(0, 3)]
    assert RealBox.closed((0.3,), (0.6,)).cell_ranges(0.25) == [(1, 2)]
    assert RealBox.unit(2).scaled((0.5, 1)).upper == (0.5, 1.0)
    assert RealBox.unit(1).shifted(0.5).contains((1.5,))
    assert not RealBox.open((0.0,), (1.0,)).contains((1.0,))


def test_single_atom_sup_measure():
    rng = np.random.default_rng(0)
    for _ in range(50):
        f = sample_field([sibuya_law(0.5)] * 2, (1000, 1000), 1.0, 1, rng)
        top = f.bn * c_alpha(1.0) * f.gammas[0] ** -1.0
        unit = RealBox.unit(2)
        if f.signs[0] > 0:
            assert sup_measure(f, unit) == pytest.approx(top)
        else:
            assert sup_measure(f, unit) == 0.0
        assert abs_sup_measure(f, unit) == pytest.approx(top)


@pytest.mark.parametrize("seed", range(100))
def test_sparse_matches_dense(seed):
    f = small_field(seed)
    rng = np.random.default_rng(seed + 1000)
    boxes = [RealBox.unit(2)]
    for _ in range(3):
        a, b = np.sort(rng.random((2, 2)), axis=0)
        boxes.append(RealBox.closed(a, b) if rng.random() < 0.5 else RealBox.open(a - 0.05, b + 0.05))
    for box in boxes:
        try:
            expected = dense_box_max(f, box)
        except EmptyBoxError:
            with pytest.raises(EmptyBoxError):
                sup_measure(f, box)
            continue
        assert sup_measure(f, box) == pytest.approx(expected, rel=1e-12, abs=1e-12)
        assert abs_sup_measure(f, box) == pytest.approx(dense_box_max(f, box, absolute=True), rel=1e-12)


def test_nonzero_points_agree_with_dense():
    f = small_field(3)
    dense = f.dense_values()
    pts, vals = f.nonzero_points()
    assert np.allclose(dense[tuple(pts.T)], vals)
    mask = np.zeros_like(dense, dtype=bool)
    mask[tuple(pts.T)] = True
    assert (dense[~mask] == 0).all()
    k = tuple(pts[0])
    assert f.value_at(k) == pytest.approx(vals[0])


def test_abs_sup_is_max_of_signed_maxima():
    f = small_field(11, ell=20)
    flipped = FieldSample(f.laws, f.n, f.alpha, -f.signs, f.gammas, f.zero_sets, f.bn, f.calpha)
    box = RealBox.closed((0.1, 0.0), (0.9, 0.7))
    assert abs_sup_measure(f, box) == pytest.approx(max(sup_measure(f, box), sup_measure(flipped, box)))


def test_partial_maxima_monotone_and_match_unit_box():
    f = small_field(5, n=(300, 200), ell=32)
    rng = np.random.default_rng(2)
    grid = rng.random((40, 2))
    grid = np.vstack([grid, [[1.0, 1.0]]])
    m = partial_maxima_field(f, grid)
    assert m[-1] == pytest.approx(sup_measure(f, RealBox.unit(2)))
    for a in range(len(grid)):
        for b in range(len(grid)):
            if (grid[a] <= grid[b]).all():
                assert m[a] <= m[b] + 1e-12
    with pytest.raises(ParameterError):
        partial_maxima_field(f, [[1.2, 0.5]])


def test_origin_when_box_is_trivial():
    rng = np.random.default_rng(4)
    f = sample_field([pareto_law(0.3)], (0,), 1.5, 16, rng)
    expected = f.calpha ** (1 / 1.5) * np.sum(f.signs * f.gammas ** (-1 / 1.5))
    assert f.bn == 1.0
    assert f.value_at((0,)) == pytest.approx(expected)


def test_probability_origin_is_off_support():
    # one atom, n=(9,9): X_0 = 0 iff the first zero is not at 0 in some coordinate
    law = sibuya_law(0.5)
    p0 = 1 / first_zero_weights(law, 9).sum()
    target = 1 - p0 * p0
    rng = np.random.default_rng(8)
    zeros = [sample_field([law, law], (9, 9), 1.0, 1, r).value_at((0, 0)) == 0 for r in rng.spawn(20000)]
    freq = np.mean(zeros)
    assert abs(freq - target) < 4 * math.sqrt(target * (1 - target) / len(zeros))
    x = sample_origin_values([law, law], (9, 9), 1.0, 1, 20000, rng)
    assert abs(np.mean(x == 0) - target) < 4 * math.sqrt(target * (1 - target) / x.size)


def test_origin_values_marginal_matches_direct_sampler():
    law = sibuya_law(0.4)
    rng = np.random.default_rng(12)
    direct = [sample_field([law, law], (20, 20), 1.0, 16, r).value_at((0, 0)) for r in rng.spawn(4000)]
    direct = np.array(direct) / sample_field([law, law], (20, 20), 1.0, 1, rng).bn
    fast = sample_origin_values([law, law], (20, 20), 1.0, 16, 20000, rng)
    fast = fast / sample_field([law, law], (20, 20), 1.0, 1, rng).bn
    assert stats.ks_2samp(direct, fast).pvalue > 1e-3


def test_truncation_prefix_stable():
    laws = [sibuya_law(0.5), sibuya_law(0.3)]
    a = sample_field(laws, (100, 100), 1.0, 8, np.random.default_rng(7))
    b = sample_field(laws, (100, 100), 1.0, 24, np.random.default_rng(7))
    assert np.array_equal(a.gammas, b.gammas[:8])
    for i in range(2):
        for j in range(8):
            assert np.array_equal(a.zero_sets[i][j], b.zero_sets[i][j])


def test_truncation_tail_diagnostic_decreases():
    laws = [sibuya_law(0.4)] * 2
    rng = np.random.default_rng(21)
    exceed = {16: [], 64: []}
    for r in rng.spawn(200):
        big = sample_field(laws, (1000, 1000), 1.5, 128, r)
        full = abs_sup_measure(big, RealBox.unit(2))
        for ell in exceed:
            f = FieldSample(big.laws, big.n, big.alpha, big.signs[:ell], big.gammas[:ell],
                            [z[:ell] for z in big.zero_sets], big.bn, big.calpha)
            exceed[ell].append(abs(full - abs_sup_measure(f, RealBox.unit(2))) / big.bn > 0.1)
    assert np.mean(exceed[64]) <= np.mean(exceed[16])
    assert np.mean(exceed[64]) < 0.05


@given(
    alpha=st.floats(0.2, 1.9),
    beta=st.floats(0.1, 0.9),
    n=st.integers(0, 40),
    seed=st.integers(0, 2**32),
)
@settings(max_examples=40, deadline=None)
def test_field_values_recompute_from_atoms(alpha, beta, n, seed):
    f = sample_field([sibuya_law(beta)] * 2, (n, n + 3), alpha, 5, np.random.default_rng(seed))
    pts, vals = f.nonzero_points()
    coef = f.bn * f.calpha ** (1 / alpha) * f.signs * f.gammas ** (-1 / alpha)
    for k, v in zip(pts[:20], vals[:20]):
        inside = [all(k[i] in set(f.zero_sets[i][j].tolist()) for i in range(2)) for j in range(f.ell)]
        assert v == pytest.approx(float(np.dot(coef, inside)), rel=1e-12, abs=1e-300)


def test_dense_dump_refused():
    f = sample_field([sibuya_law(0.5)] * 2, (10**4, 10**4), 1.0, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        f.dense_values()


def test_sample_field_errors():
    with pytest.raises(ParameterError):
        sample_field([sibuya_law(0.5)], (5, 5), 1.0, 4, np.random.default_rng(0))
    with pytest.raises(ParameterError):
        sample_field([sibuya_law(0.5)], (5,), 2.0, 4, np.random.default_rng(0))
    with pytest.raises(ParameterError):
        sample_field([sibuya_law(0.5)], (5,), 1.0, 0, np.random.default_rng(0))

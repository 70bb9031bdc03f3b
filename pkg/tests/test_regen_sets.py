import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sasextremes.field_sim import RealBox
from sasextremes.regen_sets import (
    RegenerativeSet,
    RegenSetApprox,
    ResolutionMismatchError,
    ShiftedProductSet,
    cell_hit_probability,
    cross_validate_sets,
    ell_beta,
    intersect_nonempty,
    max_intersection_count,
    sample_regen_set,
    sample_regen_set_renewal,
    sample_shift,
)
from sasextremes.return_laws import ParameterError, sibuya_law


def test_ell_beta_examples():
    assert ell_beta((0.5, 0.5)) == pytest.approx(2.0)
    assert ell_beta((0.6, 0.75)) == pytest.approx(2.5)
    assert max_intersection_count((0.7, 0.7)) == 3
    assert max_intersection_count((0.5, 0.5)) == 1
    with pytest.raises(ParameterError):
        ell_beta((0.5, 1.0))


@pytest.mark.parametrize("method", ["overshoot", "bridge", "increments"])
def test_origin_cell_present(method, rng):
    for _ in range(5):
        s = sample_regen_set(0.6, 1.0, 2**-10, rng, method=method)
        assert s.origin_included
        assert s.cells[-1] <= 2**10


def test_sampler_errors(rng):
    with pytest.raises(ParameterError):
        sample_regen_set(0.5, 1.0, 2.0, rng)
    with pytest.raises(ParameterError):
        sample_regen_set(0.5, 1.0, 0.1, rng, method="walk")
    with pytest.raises(ParameterError):
        sample_regen_set(1.2, 1.0, 0.1, rng)
    with pytest.raises(ParameterError):
        sample_regen_set_renewal(sibuya_law(0.5), 10, 1.0, rng)
    with pytest.raises(ValueError):
        RegenSetApprox(0.5, 1.0, 0.1, np.array([3, 2]))


@pytest.mark.parametrize("beta", [0.3, 0.7])
def test_box_counting_slope_is_beta(beta, rng):
    deltas = 2.0 ** -np.arange(8, 17, 2)
    counts = np.zeros(deltas.size)
    for r in rng.spawn(200):
        fine = sample_regen_set(beta, 1.0, deltas[-1], r)
        for k, dl in enumerate(deltas):
            counts[k] += len(fine.coarsen(int(round(dl / deltas[-1]))))
    slope = np.polyfit(np.log(1 / deltas), np.log(counts), 1)[0]
    assert slope == pytest.approx(beta, rel=0.05)


def test_coverage_shrinks_under_refinement(rng):
    fine = sample_regen_set(0.6, 1.0, 2**-18, rng)
    cov = [fine.coarsen(2**k).coverage for k in (10, 6, 3, 0)]
    assert all(b <= a for a, b in zip(cov, cov[1:]))
    assert cov[-1] < 0.05


@pytest.mark.parametrize("beta", [0.3, 0.5, 0.8])
def test_exact_cell_occupancy(beta, rng):
    delta = 2**-5
    hits = np.zeros(32)
    reps = 4000
    for r in rng.spawn(reps):
        cells = sample_regen_set(beta, 1.0, delta, r).cells
        hits[cells[cells < 32]] += 1
    exact = np.array([cell_hit_probability(beta, c * delta, delta) for c in range(32)])
    se = np.sqrt(exact * (1 - exact) / reps) + 1e-9
    assert np.all(np.abs(hits / reps - exact) < 5 * se)


def test_cell_hit_probability_limits():
    assert cell_hit_probability(0.5, 0.0, 0.1) == 1.0
    assert cell_hit_probability(0.5, 1.0, 1e-12) < 1e-5
    # P(first point after level a lies within a + w) = P(O <= w / a)
    assert cell_hit_probability(0.5, 1.0, 1.0) == pytest.approx(stats.betaprime.cdf(1.0, 0.5, 0.5))


def test_cross_validation_renewal_vs_subordinator(rng):
    out = cross_validate_sets(0.5, sibuya_law(0.5), 1.0, 2**-5, 3000, rng, refine=64)
    # total variation of per-cell occupancy marginals
    assert out["max_gap"] < 0.05
    assert out["mean_gap"] < 0.02
    assert out["max_gap_exact"] < 0.05


def test_increment_sampler_agrees_with_exact(rng):
    delta = 2**-6
    a = np.zeros(64)
    b = np.zeros(64)
    for r in rng.spawn(600):
        s1 = sample_regen_set(0.6, 1.0, delta, r, method="increments").cells
        s2 = sample_regen_set(0.6, 1.0, delta, r, method="overshoot").cells
        a[s1[s1 < 64]] += 1
        b[s2[s2 < 64]] += 1
    assert np.abs(a - b).max() / 600 < 0.1


def test_renewal_sampler_contains_origin_and_scales(rng):
    s = sample_regen_set_renewal(sibuya_law(0.4), 2000, 1.0, rng)
    assert s.origin_included and s.shift == 0.0
    assert s.delta == pytest.approx(1 / 2000)


@pytest.mark.parametrize("beta", [0.3, 0.8])
def test_shift_law(beta, rng):
    v = sample_shift(beta, rng, size=20000)
    assert stats.kstest(v, lambda x: np.clip(x, 0, 1) ** (1 - beta)).statistic < 0.015


@pytest.mark.parametrize("beta", [0.3, 0.5])
def test_conditioned_renewal_shift(beta, rng):
    # the atom at 0 has mass ~ N^{beta-1}, so only moderate beta converge at this N
    firsts = [sample_regen_set_renewal(sibuya_law(beta), 10**5, 1.0, r, conditioned=True).shift
              for r in rng.spawn(3000)]
    assert stats.kstest(firsts, lambda x: np.clip(x, 0, 1) ** (1 - beta)).statistic < 0.035


def test_lazy_sampler_matches_exact_occupancy(rng):
    beta, delta = 0.6, 2**-4
    hits = np.zeros(16)
    reps = 3000
    for r in rng.spawn(reps):
        s = RegenerativeSet(beta, 0.0, r)
        # query in a scrambled order; answers must still describe one path
        order = r.permutation(16)
        for c in order:
            hits[c] += s.hits(c * delta, (c + 1) * delta)
    exact = np.array([cell_hit_probability(beta, c * delta, delta) for c in range(16)])
    se = np.sqrt(exact * (1 - exact) / reps) + 1e-9
    assert np.all(np.abs(hits / reps - exact) < 5 * se)


def test_lazy_pair_occupancy_matches_overshoot(rng):
    beta, delta = 0.5, 2**-3
    reps = 4000
    lazy = np.zeros((8, 8))
    exact = np.zeros((8, 8))
    for r in rng.spawn(reps):
        s = RegenerativeSet(beta, 0.0, r)
        for c in r.permutation(8):
            s.hits(c * delta, (c + 1) * delta)
        h = np.array([s.hits(c * delta, (c + 1) * delta) for c in range(8)])
        lazy += np.outer(h, h)
        cells = sample_regen_set(beta, 1.0, delta, r).cells
        e = np.isin(np.arange(8), cells)
        exact += np.outer(e, e)
    assert np.abs(lazy - exact).max() / reps < 0.04


@given(seed=st.integers(0, 2**32), beta=st.floats(0.1, 0.9))
@settings(max_examples=40, deadline=None)
def test_lazy_set_consistent(seed, beta):
    s = RegenerativeSet(beta, 0.25, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    queries = rng.random(30) * 3
    first = [s.first_point_from(a) for a in queries]
    again = [s.first_point_from(a) for a in queries]
    assert first == again
    assert all(p >= a for p, a in zip(first, queries))
    pts = s.known_points
    assert (np.diff(pts) >= 0).all() and pts[0] == 0.25
    # a point found from level a is also the answer from any level between a and it
    for a, p in zip(queries, first):
        assert s.first_point_from(0.5 * (a + p)) == p or 0.5 * (a + p) == p


def test_bridge_cells_match_method(rng):
    s = sample_regen_set(0.7, 1.0, 2**-8, rng, method="bridge")
    assert s.origin_included and (np.diff(s.cells) > 0).all()


def test_single_set_meets_box_around_shift(rng):
    for r in rng.spawn(50):
        p = ShiftedProductSet.sample((0.7, 0.4), r)
        v = np.array(p.shift)
        box = RealBox.closed(v - 0.01, v + 0.01)
        assert intersect_nonempty([p], box, delta=1e-6)
        grid = ShiftedProductSet(tuple(sample_regen_set(b, 2.0, 1e-3, r, shift=x) for b, x in zip((0.7, 0.4), v)))
        assert intersect_nonempty([grid], box)


def test_shifts_distinct(rng):
    sets = [ShiftedProductSet.sample((0.7, 0.7), r) for r in rng.spawn(200)]
    shifts = np.array([s.shift for s in sets])
    for i in range(2):
        assert np.unique(shifts[:, i]).size == shifts.shape[0]


def _frequency(m, betas, delta, reps, rng, horizon=2.0**60):
    box = RealBox.closed((0.0,) * len(betas), (horizon,) * len(betas))
    hits = 0
    for r in rng.spawn(reps):
        sets = [ShiftedProductSet.sample(betas, s) for s in r.spawn(m)]
        hits += intersect_nonempty(sets, box, delta=delta)
    return hits / reps


def test_two_fold_intersections_nonempty(rng):
    assert _frequency(2, (0.7, 0.7), 1e-4, 200, rng) >= 0.95


def test_four_fold_intersections_vanish(rng):
    freqs = [_frequency(4, (0.7, 0.7), dl, 200, np.random.default_rng(3)) for dl in (2**-8, 2**-24, 2**-40)]
    assert all(b <= a for a, b in zip(freqs, freqs[1:]))
    assert freqs[-1] <= 0.05


def test_resolution_monotone_on_coupled_paths(rng):
    box = RealBox.closed((0.0, 0.0), (2.0**40, 2.0**40))
    for r in rng.spawn(100):
        sets = [ShiftedProductSet.sample((0.6, 0.7), s) for s in r.spawn(3)]
        answers = [intersect_nonempty(sets, box, delta=dl) for dl in (2**-4, 2**-12, 2**-20, 2**-28)]
        assert all(a >= b for a, b in zip(answers, answers[1:]))


def test_grid_intersection_resolution_mismatch(rng):
    a = ShiftedProductSet((sample_regen_set(0.5, 1.0, 2**-8, rng),))
    b = ShiftedProductSet((sample_regen_set(0.5, 1.0, 2**-9, rng),))
    with pytest.raises(ResolutionMismatchError):
        intersect_nonempty([a, b], RealBox.unit(1))
    lazy = ShiftedProductSet.sample((0.5,), rng)
    with pytest.raises(ParameterError):
        intersect_nonempty([a, lazy], RealBox.unit(1))
    with pytest.raises(ParameterError):
        intersect_nonempty([lazy], RealBox.unit(1))


def test_grid_intersection_monotone_in_dilation(rng):
    box = RealBox.unit(2)
    for r in rng.spawn(30):
        sets = [ShiftedProductSet(tuple(sample_regen_set(0.7, 1.0, 2**-10, s, shift=float(sample_shift(0.7, s)))
                                        for s in q.spawn(2))) for q in r.spawn(3)]
        answers = [intersect_nonempty(sets, box, dilation=k) for k in (0, 1, 4)]
        assert answers[0] <= answers[1] <= answers[2]

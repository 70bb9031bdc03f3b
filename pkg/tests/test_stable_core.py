import math

import numpy as np
import pytest
from scipy import stats

from sasextremes.return_laws import ParameterError
from sasextremes.stable_core import (
    PoissonWeightSeq,
    c_alpha,
    frechet_cdf,
    make_rng,
    poisson_weights,
    replicate_rng,
    sample_one_sided_stable,
)


def test_c_alpha_values():
    assert c_alpha(1.0) == pytest.approx(2 / math.pi)
    assert c_alpha(0.5) == pytest.approx(0.7979, abs=1e-4)
    assert c_alpha(1e-9) == pytest.approx(1.0, abs=1e-6)


def test_c_alpha_continuous_at_one():
    for eps in (1e-6, -1e-6):
        assert abs(c_alpha(1 + eps) - 2 / math.pi) < 1e-4


@pytest.mark.parametrize("alpha", [0.0, 2.0, -1.0, 2.5])
def test_c_alpha_range(alpha):
    with pytest.raises(ParameterError):
        c_alpha(alpha)


def test_c_alpha_matches_sine_integral():
    # 1/C_alpha = int_0^inf x^{-alpha} sin x dx = Gamma(1 - alpha) cos(pi alpha / 2) for alpha < 1
    for alpha in (0.3, 0.7, 0.9):
        assert 1 / c_alpha(alpha) == pytest.approx(math.gamma(1 - alpha) * math.cos(math.pi * alpha / 2))


def test_one_sided_stable_laplace(rng):
    for beta in (0.3, 0.5, 0.8):
        x = sample_one_sided_stable(beta, 1.0, rng, size=10**6)
        assert (x > 0).all()
        assert abs(np.exp(-x).mean() - math.exp(-1)) < 0.01
    x = sample_one_sided_stable(0.5, 1.0, rng, size=10**6)
    assert abs(np.exp(-2 * x).mean() - math.exp(-math.sqrt(2))) < 0.01


def test_one_sided_stable_self_similar(rng):
    beta = 0.6
    a = sample_one_sided_stable(beta, 2.0, rng, size=10**5)
    b = 2 ** (1 / beta) * sample_one_sided_stable(beta, 1.0, rng, size=10**5)
    assert stats.ks_2samp(a, b).statistic < 0.01


def test_one_sided_stable_errors(rng):
    with pytest.raises(ParameterError):
        sample_one_sided_stable(1.0, 1.0, rng)
    with pytest.raises(ParameterError):
        sample_one_sided_stable(0.5, 0.0, rng)
    assert isinstance(sample_one_sided_stable(0.5, 1.0, rng), float)


def test_poisson_first_arrival(rng):
    g1 = np.array([poisson_weights(1, r).gammas[0] for r in rng.spawn(20000)])
    assert abs(g1.mean() - 1) < 0.03
    alpha = 1.5
    assert stats.kstest(g1 ** (-1 / alpha), lambda x: frechet_cdf(x, alpha)).statistic < 0.015


def test_poisson_increments_and_signs(rng):
    seq = poisson_weights(10**6, rng)
    gaps = np.diff(np.concatenate(([0.0], seq.gammas)))
    assert abs(gaps.mean() - 1) < 0.01
    assert stats.kstest(gaps[:10**5], "expon").pvalue > 1e-3
    assert abs(np.mean(seq.signs == 1) - 0.5) < 0.005
    assert set(np.unique(seq.signs)) == {-1, 1}
    assert (np.diff(seq.gammas) > 0).all()


def test_poisson_prefix_stable():
    a = poisson_weights(10, make_rng(3))
    b = poisson_weights(40, make_rng(3))
    assert np.array_equal(a.gammas, b.gammas[:10])
    assert np.array_equal(a.signs, b.signs[:10])
    a.extend(40)
    assert np.array_equal(a.gammas, b.gammas)
    assert len(a) == 40
    with pytest.raises(ParameterError):
        poisson_weights(0, make_rng(0))


def test_thinning_halves_the_rate(rng):
    # {Gamma_j : eps_j = 1} / 2 is again a unit-rate Poisson process
    first, second_gap, fresh_first, fresh_gap = [], [], [], []
    for r in rng.spawn(5000):
        seq = PoissonWeightSeq(r, 64)
        kept = seq.gammas[seq.signs == 1] / 2
        if kept.size >= 2:
            first.append(kept[0])
            second_gap.append(kept[1] - kept[0])
        fresh = PoissonWeightSeq(r, 2)
        fresh_first.append(fresh.gammas[0])
        fresh_gap.append(fresh.gammas[1] - fresh.gammas[0])
    assert stats.ks_2samp(first, fresh_first).pvalue > 1e-3
    assert stats.ks_2samp(second_gap, fresh_gap).pvalue > 1e-3


def test_frechet_cdf_examples(rng):
    assert frechet_cdf(3.0, 0.7, 3.0) == pytest.approx(math.exp(-1))
    assert frechet_cdf(2.0, 1.0) == pytest.approx(math.exp(-0.5))
    x = np.linspace(0.1, 10, 50)
    assert (np.diff(frechet_cdf(x, 1.2, 2.0)) > 0).all()
    with pytest.raises(ParameterError):
        frechet_cdf(0.0, 1.0)
    scale, alpha = 2.5, 0.9
    y = scale * rng.standard_exponential(10**5) ** (-1 / alpha)
    assert stats.kstest(y, lambda t: frechet_cdf(t, alpha, scale)).statistic < 0.01


def test_replicate_streams_independent_and_reproducible():
    a = replicate_rng(7, 1, 2).random(5)
    b = replicate_rng(7, 1, 2).random(5)
    c = replicate_rng(7, 1, 3).random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert make_rng(4).spawn(1)

"""Return-time laws with regularly varying tails and renewal zero sets.

Each coordinate chain of the field is simulated only through its zero set,
which is a (delayed) renewal process whose gaps are i.i.d. copies of the
return time ``phi``.  Under the countdown chain the first zero of a path
conditioned to hit ``{0, ..., n}`` sits at ``k`` with weight
``P_0(phi > k)``, which makes the normalizers exactly computable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import gammaln

__all__ = [
    "ParameterError",
    "ReturnTimeLaw",
    "SibuyaLaw",
    "ParetoLaw",
    "RenewalZeroSet",
    "sibuya_law",
    "pareto_law",
    "law_from_name",
    "first_zero_weights",
    "normalizer_bn",
    "sample_conditioned_zero_set",
    "sample_zero_set",
]

# samples of phi are clipped here; far beyond any horizon used in practice
MAX_RETURN_TIME = 2**62

# Bernoulli-number coefficients B_2k / (2k (2k-1)) of the Stirling series
_STIRLING = (1 / 12, -1 / 360, 1 / 1260, -1 / 1680, 1 / 1188, -691 / 360360)
_STIRLING_MIN_X = 64.0


class ParameterError(ValueError):
    """Raised for out-of-range model parameters."""


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if not 0.0 < beta < 1.0:
        raise ParameterError(f"beta must lie in (0, 1), got {beta}")
    return beta


def _stirling_tail(x: np.ndarray) -> np.ndarray:
    inv = 1.0 / x
    inv2 = inv * inv
    out = np.zeros_like(x)
    for coef in reversed(_STIRLING):
        out = out * inv2 + coef
    return out * inv


def _log_gamma_ratio(x: np.ndarray, a: float) -> np.ndarray:
    """log(Gamma(x + a) / Gamma(x)) for x >= 64, accurate to a few ulps."""
    r = np.log1p(a / x)
    return (x - 0.5) * r + a * np.log(x) + a * r - a + _stirling_tail(x + a) - _stirling_tail(x)


def sibuya_log_survival(n: np.ndarray | float, beta: float) -> np.ndarray:
    """log P(phi > n) = log Gamma(n+1-beta) - log Gamma(1-beta) - log Gamma(n+1)."""
    n = np.asarray(n, dtype=float)
    x = n + 1.0
    out = np.empty_like(x)
    big = x >= _STIRLING_MIN_X
    out[big] = _log_gamma_ratio(x[big], -beta) - gammaln(1.0 - beta)
    small = ~big
    if small.any():
        # small arguments: exact product prod_{k<=n} (1 - beta/k)
        ks = np.arange(1, int(_STIRLING_MIN_X) + 1, dtype=float)
        table = np.concatenate(([0.0], np.cumsum(np.log1p(-beta / ks))))
        out[small] = table[n[small].astype(np.int64)]
    return out


@dataclass(frozen=True)
class ReturnTimeLaw:
    """Law of the first return time ``phi >= 1`` to the origin.

    Subclasses provide ``log_survival``; everything else (tables, sampling,
    first-zero weights) is derived from it.
    """

    beta: float
    name: str = field(default="abstract", init=False)

    def __post_init__(self) -> None:
        _check_beta(self.beta)

    def log_survival(self, n: np.ndarray | float) -> np.ndarray:
        raise NotImplementedError

    def survival(self, n):
        """P_0(phi > n), vectorized over integer ``n >= 0``."""
        out = np.exp(self.log_survival(np.asarray(n, dtype=float)))
        return float(out) if np.ndim(out) == 0 else out

    def survival_table(self, n: int) -> np.ndarray:
        """Read-only array ``(P(phi > 0), ..., P(phi > n))``."""
        return _survival_table(self, int(n))

    def cumulative_weights(self, n: int) -> np.ndarray:
        """Partial sums of ``survival_table(n)``; the last entry is ``(b_n)^alpha``."""
        return _cumulative_weights(self, int(n))

    def sample(self, rng: np.random.Generator, size=None, cap: int | None = None):
        """Draw return times by inverse transform.

        With ``cap`` given, any draw exceeding ``cap`` is reported as
        ``cap + 1`` (the caller only needs to know that the horizon was
        overshot); this path is a table lookup and is used by the zero-set
        samplers.
        """
        u = rng.random(size)
        if cap is not None:
            out = self._capped_inverse(u, int(cap))
        else:
            out = self._inverse(np.atleast_1d(u))
            if np.ndim(u) == 0:
                out = out[0]
        return out if np.ndim(out) else int(out)

    def _capped_inverse(self, u, cap: int):
        neg = _negated_table(self, cap)
        # phi = #{m : S(m) >= u}, since S is non-increasing and S(0) = 1
        return np.searchsorted(neg, -np.asarray(u), side="right")

    def _inverse(self, u: np.ndarray) -> np.ndarray:
        # smallest m with S(m) < u, by bracketing then integer bisection
        log_u = np.log(u)
        lo = np.zeros(u.shape, dtype=np.int64)
        hi = np.ones(u.shape, dtype=np.int64)
        todo = self.log_survival(hi) >= log_u
        while todo.any():
            lo[todo] = hi[todo]
            hi[todo] = np.minimum(hi[todo] * 2, MAX_RETURN_TIME)
            capped = hi >= MAX_RETURN_TIME
            todo = (self.log_survival(hi) >= log_u) & ~capped
        while True:
            gap = hi - lo
            active = gap > 1
            if not active.any():
                break
            mid = lo + gap // 2
            above = self.log_survival(mid) >= log_u
            lo = np.where(active & above, mid, lo)
            hi = np.where(active & ~above, mid, hi)
        return hi


@dataclass(frozen=True)
class SibuyaLaw(ReturnTimeLaw):
    """Sibuya law: ``P(phi > n) = Gamma(n+1-beta) / (Gamma(1-beta) Gamma(n+1))``.

    The hazard is ``P(phi = k | phi >= k) = beta / k`` and the tail is
    ``n^{-beta} / Gamma(1-beta)``.
    """

    name: str = field(default="sibuya", init=False)

    def log_survival(self, n):
        return sibuya_log_survival(n, self.beta)


@dataclass(frozen=True)
class ParetoLaw(ReturnTimeLaw):
    """Discrete Pareto law with ``P(phi > n) = (n + 1)^{-beta}``."""

    name: str = field(default="pareto", init=False)

    def log_survival(self, n):
        return -self.beta * np.log1p(np.asarray(n, dtype=float))

    def _inverse(self, u):
        # (m+1)^{-beta} < u  <=>  m > u^{-1/beta} - 1
        x = np.floor(np.exp(-np.log(u) / self.beta))
        return np.clip(x, 1, MAX_RETURN_TIME).astype(np.int64)


@lru_cache(maxsize=64)
def _survival_table(law: ReturnTimeLaw, n: int) -> np.ndarray:
    if n < 0:
        raise ParameterError(f"horizon must be >= 0, got {n}")
    table = np.exp(law.log_survival(np.arange(n + 1, dtype=float)))
    table[0] = 1.0
    table.flags.writeable = False
    return table


@lru_cache(maxsize=64)
def _cumulative_weights(law: ReturnTimeLaw, n: int) -> np.ndarray:
    cum = np.cumsum(_survival_table(law, n))
    cum.flags.writeable = False
    return cum


@lru_cache(maxsize=64)
def _negated_table(law: ReturnTimeLaw, n: int) -> np.ndarray:
    neg = -_survival_table(law, n)
    neg.flags.writeable = False
    return neg


def sibuya_law(beta: float) -> SibuyaLaw:
    return SibuyaLaw(_check_beta(beta))


def pareto_law(beta: float) -> ParetoLaw:
    return ParetoLaw(_check_beta(beta))


_LAWS = {"sibuya": sibuya_law, "pareto": pareto_law}


def law_from_name(name: str, beta: float) -> ReturnTimeLaw:
    try:
        factory = _LAWS[name.lower()]
    except KeyError:
        raise ParameterError(f"unknown return law {name!r}; choose from {sorted(_LAWS)}") from None
    return factory(beta)


def first_zero_weights(law: ReturnTimeLaw, n: int) -> np.ndarray:
    """Mass of paths whose first zero in ``{0..n}`` is at ``k``: ``P_0(phi > k)``."""
    return np.array(law.survival_table(n))


def normalizer_bn(laws: Sequence[ReturnTimeLaw], n: Sequence[int] | int, alpha: float) -> float:
    """``b_n = prod_i (sum_{k<=n_i} P_0^{(i)}(phi > k))^{1/alpha}``."""
    if not 0.0 < alpha < 2.0:
        raise ParameterError(f"alpha must lie in (0, 2), got {alpha}")
    n = np.atleast_1d(np.asarray(n, dtype=np.int64))
    if len(laws) != len(n):
        raise ParameterError(f"got {len(laws)} laws for a {len(n)}-dimensional box")
    if (n < 0).any():
        raise ParameterError("box sizes must be non-negative")
    log_b = sum(math.log(law.cumulative_weights(int(ni))[-1]) for law, ni in zip(laws, n))
    return math.exp(log_b / alpha)


@dataclass(frozen=True)
class RenewalZeroSet:
    """Sorted zero set of one coordinate chain restricted to ``{0..horizon}``."""

    horizon: int
    points: np.ndarray

    def __post_init__(self) -> None:
        pts = self.points
        if pts.size and (pts[0] < 0 or pts[-1] > self.horizon or (np.diff(pts) <= 0).any()):
            raise ValueError("zero set points must be strictly increasing within [0, horizon]")

    def __len__(self) -> int:
        return int(self.points.size)

    def __contains__(self, k) -> bool:
        i = np.searchsorted(self.points, k)
        return bool(i < self.points.size and self.points[i] == k)

    @property
    def first(self) -> int | None:
        return int(self.points[0]) if self.points.size else None


def _renewal_points(law: ReturnTimeLaw, start: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``start`` followed by partial sums of i.i.d. return times, up to ``n``."""
    remaining = n - start
    if remaining <= 0:
        return np.array([start], dtype=np.int64)
    chunks = [np.array([start], dtype=np.int64)]
    pos = start
    batch = 32
    while True:
        # capping at n (not at the remaining horizon) keeps one lookup table per n
        gaps = law.sample(rng, size=batch, cap=n)
        steps = pos + np.cumsum(gaps)
        over = np.searchsorted(steps, n, side="right")
        chunks.append(steps[:over])
        if over < batch:
            break
        pos = int(steps[-1])
        batch *= 2
    return np.concatenate(chunks)


def sample_zero_set(law: ReturnTimeLaw, n: int, rng: np.random.Generator, start: int = 0) -> RenewalZeroSet:
    """Zero set on ``{0..n}`` of the chain started at a zero at time ``start`` (law ``P_0``)."""
    if n < 0 or not 0 <= start <= n:
        raise ParameterError("need 0 <= start <= n")
    return RenewalZeroSet(int(n), _renewal_points(law, int(start), int(n), rng))


def sample_first_zero(law: ReturnTimeLaw, n: int, rng: np.random.Generator, size=None):
    """First zero in ``{0..n}`` under the conditioned measure: ``P(k) ∝ P_0(phi > k)``."""
    cum = law.cumulative_weights(n)
    u = rng.random(size)
    return np.searchsorted(cum, u * cum[-1], side="right")


def sample_conditioned_zero_set(law: ReturnTimeLaw, n: int, rng: np.random.Generator) -> RenewalZeroSet:
    """Zero set on ``{0..n}`` of a path drawn from the conditioned sampling measure.

    The first zero ``k`` has probability proportional to ``P_0(phi > k)``;
    later zeros follow by adding i.i.d. return times.  Never empty.
    """
    if n < 0:
        raise ParameterError(f"horizon must be >= 0, got {n}")
    n = int(n)
    if n == 0:
        return RenewalZeroSet(0, np.zeros(1, dtype=np.int64))
    first = int(sample_first_zero(law, n, rng))
    return RenewalZeroSet(n, _renewal_points(law, first, n, rng))

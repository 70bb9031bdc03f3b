"""Stochastic primitives: the stable tail constant, one-sided stable laws,
LePage weights and the Fréchet CDF."""

from __future__ import annotations

import math

import numpy as np

from .return_laws import ParameterError

__all__ = [
    "c_alpha",
    "sample_one_sided_stable",
    "PoissonWeightSeq",
    "poisson_weights",
    "frechet_cdf",
    "make_rng",
    "replicate_rng",
]


def make_rng(seed: int | np.random.SeedSequence | None = None) -> np.random.Generator:
    """PCG64 generator backed by a SeedSequence, so that ``spawn`` works."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.default_rng(seed)


def replicate_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream for replicate ``key`` of an experiment with master ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def c_alpha(alpha: float) -> float:
    """Tail constant ``(int_0^inf x^{-alpha} sin x dx)^{-1}`` of the stable law."""
    alpha = float(alpha)
    if not 0.0 < alpha < 2.0:
        raise ParameterError(f"alpha must lie in (0, 2), got {alpha}")
    if alpha == 1.0:
        return 2.0 / math.pi
    return (1.0 - alpha) / (math.gamma(2.0 - alpha) * math.cos(math.pi * alpha / 2.0))


def sample_one_sided_stable(beta: float, t: float, rng: np.random.Generator, size=None):
    """Increment ``L_beta(t)`` of the standard beta-stable subordinator.

    Uses Kanter's representation ``(A(U) / E)^{(1-beta)/beta}`` with
    ``E[exp(-theta L(1))] = exp(-theta^beta)``, scaled by ``t^{1/beta}``.
    """
    beta = float(beta)
    if not 0.0 < beta < 1.0:
        raise ParameterError(f"beta must lie in (0, 1), got {beta}")
    if not t > 0:
        raise ParameterError(f"t must be positive, got {t}")
    u = rng.random(size)
    e = rng.standard_exponential(size)
    pu = np.pi * u
    zolotarev = (np.sin(beta * pu) / np.sin(pu)) ** (1.0 / (1.0 - beta)) * (
        np.sin((1.0 - beta) * pu) / np.sin(beta * pu)
    )
    out = t ** (1.0 / beta) * (zolotarev / e) ** ((1.0 - beta) / beta)
    return float(out) if np.ndim(out) == 0 else out


class PoissonWeightSeq:
    """Arrival times ``Gamma_1 < Gamma_2 < ...`` of a unit-rate Poisson process
    paired with independent Rademacher signs.

    Arrivals and signs come from two child streams of the generator passed in,
    so a sequence of length ``l'`` always extends the one of length ``l``.
    """

    def __init__(self, rng: np.random.Generator, count: int = 0) -> None:
        self._exp_rng, self._sign_rng = rng.spawn(2)
        self._gaps = np.empty(0)
        self.gammas = np.empty(0)
        self.signs = np.empty(0, dtype=np.int8)
        if count:
            self.extend(count)

    def __len__(self) -> int:
        return self.gammas.size

    def extend(self, count: int) -> None:
        """Grow the sequence to ``count`` pairs (no-op if already that long)."""
        extra = int(count) - len(self)
        if extra <= 0:
            return
        # cumulate all gaps again so that any length gives bit-identical prefixes
        self._gaps = np.concatenate((self._gaps, self._exp_rng.standard_exponential(extra)))
        self.gammas = np.cumsum(self._gaps)
        flips = np.where(self._sign_rng.random(extra) < 0.5, 1, -1).astype(np.int8)
        self.signs = np.concatenate((self.signs, flips))

    def weights(self, alpha: float) -> np.ndarray:
        return self.gammas ** (-1.0 / alpha)


def poisson_weights(count: int, rng: np.random.Generator) -> PoissonWeightSeq:
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    return PoissonWeightSeq(rng, count)


def frechet_cdf(x, alpha: float, scale: float = 1.0):
    """``P(scale * Gamma_1^{-1/alpha} <= x) = exp(-(scale/x)^alpha)``."""
    x = np.asarray(x, dtype=float)
    if (x <= 0).any():
        raise ParameterError("Fréchet CDF is defined for x > 0")
    out = np.exp(-((scale / x) ** alpha))
    return float(out) if out.ndim == 0 else out

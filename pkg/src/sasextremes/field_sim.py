"""Truncated series representation of the stable field on a lattice box.

On the box ``[0, n]`` the field is, in law,

    X_k = b_n C_alpha^{1/alpha} sum_{j<=l} eps_j Gamma_j^{-1/alpha} 1{k in Z_j},

where each ``Z_j`` is a product of independent renewal zero sets drawn from
the conditioned measure.  Nothing is stored densely: values are computed
from the atoms on demand, and box maxima go through ``lattice.product_max``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lattice import CoordinateIndex, product_max
from .return_laws import (
    ParameterError,
    ReturnTimeLaw,
    normalizer_bn,
    sample_conditioned_zero_set,
)
from .stable_core import c_alpha, poisson_weights

__all__ = [
    "EmptyBoxError",
    "RealBox",
    "FieldSample",
    "sample_field",
    "sup_measure",
    "abs_sup_measure",
    "partial_maxima_field",
    "sample_origin_values",
    "DEFAULT_ELL",
    "DENSE_DUMP_LIMIT",
]

DEFAULT_ELL = 64
DENSE_DUMP_LIMIT = 10_000_000
_SNAP = 1e-9


class EmptyBoxError(ValueError):
    """The box contains no lattice point (or no grid cell)."""


def _snap(x: float) -> float:
    r = round(x)
    return float(r) if abs(x - r) < _SNAP * max(1.0, abs(x)) else x


@dataclass(frozen=True)
class RealBox:
    """Axis-parallel box in normalized coordinates with per-face open/closed flags."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    closed_lower: tuple[bool, ...] | None = None
    closed_upper: tuple[bool, ...] | None = None

    def __post_init__(self) -> None:
        lo = tuple(float(x) for x in np.atleast_1d(self.lower))
        hi = tuple(float(x) for x in np.atleast_1d(self.upper))
        if len(lo) != len(hi):
            raise ParameterError("box corners have different dimensions")
        if any(a > b for a, b in zip(lo, hi)):
            raise ParameterError(f"box lower corner {lo} exceeds upper corner {hi}")
        d = len(lo)
        cl = (True,) * d if self.closed_lower is None else tuple(bool(c) for c in self.closed_lower)
        cu = (True,) * d if self.closed_upper is None else tuple(bool(c) for c in self.closed_upper)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "closed_lower", cl)
        object.__setattr__(self, "closed_upper", cu)

    @classmethod
    def closed(cls, lower, upper) -> RealBox:
        return cls(tuple(np.atleast_1d(lower)), tuple(np.atleast_1d(upper)))

    @classmethod
    def open(cls, lower, upper) -> RealBox:
        d = len(np.atleast_1d(lower))
        return cls(tuple(np.atleast_1d(lower)), tuple(np.atleast_1d(upper)), (False,) * d, (False,) * d)

    @classmethod
    def unit(cls, d: int) -> RealBox:
        return cls((0.0,) * d, (1.0,) * d)

    @property
    def dim(self) -> int:
        return len(self.lower)

    def scaled(self, c: Sequence[float]) -> RealBox:
        c = np.broadcast_to(np.asarray(c, dtype=float), (self.dim,))
        return RealBox(
            tuple(np.multiply(self.lower, c)), tuple(np.multiply(self.upper, c)), self.closed_lower, self.closed_upper
        )

    def shifted(self, x: Sequence[float]) -> RealBox:
        x = np.broadcast_to(np.asarray(x, dtype=float), (self.dim,))
        return RealBox(tuple(np.add(self.lower, x)), tuple(np.add(self.upper, x)), self.closed_lower, self.closed_upper)

    def contains(self, t: Sequence[float]) -> bool:
        for a, b, cl, cu, x in zip(self.lower, self.upper, self.closed_lower, self.closed_upper, t):
            if (x < a) or (x == a and not cl) or (x > b) or (x == b and not cu):
                return False
        return True

    def lattice_ranges(self, n: Sequence[int]) -> list[tuple[int, int]]:
        """Integer ranges ``[lo_i, hi_i]`` of the points ``k`` with ``k/n`` in the box."""
        if len(n) != self.dim:
            raise ParameterError(f"box of dimension {self.dim} used on a {len(n)}-dimensional lattice")
        out = []
        for a, b, cl, cu, ni in zip(self.lower, self.upper, self.closed_lower, self.closed_upper, n):
            if ni == 0:
                inside = (a < 0 or (a == 0 and cl)) and (b > 0 or (b == 0 and cu))
                lo, hi = (0, 0) if inside else (1, 0)
            else:
                x, y = _snap(a * ni), _snap(b * ni)
                lo = math.ceil(x) if cl else math.floor(x) + 1
                hi = math.floor(y) if cu else math.ceil(y) - 1
                lo, hi = max(lo, 0), min(hi, int(ni))
            if lo > hi:
                raise EmptyBoxError(f"box {self} contains no lattice point of [0, {tuple(n)}]")
            out.append((lo, hi))
        return out

    def cell_ranges(self, delta: float) -> list[tuple[int, int]]:
        """Index ranges of the grid cells ``[c delta, (c+1) delta)`` meeting the box."""
        out = []
        for a, b, cu in zip(self.lower, self.upper, self.closed_upper):
            lo = max(math.floor(_snap(a / delta)), 0)
            y = _snap(b / delta)
            hi = math.floor(y) if cu or y != math.floor(y) else int(y) - 1
            if lo > hi:
                raise EmptyBoxError(f"box {self} meets no cell of width {delta}")
            out.append((lo, hi))
        return out


@dataclass
class FieldSample:
    """One realization of the truncated series on the box ``[0, n]``.

    ``zero_sets[i][j]`` holds the sorted zero set of atom ``j`` in
    coordinate ``i``.
    """

    laws: tuple[ReturnTimeLaw, ...]
    n: tuple[int, ...]
    alpha: float
    signs: np.ndarray
    gammas: np.ndarray
    zero_sets: list[list[np.ndarray]]
    bn: float
    calpha: float
    _indices: list[CoordinateIndex] | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def ell(self) -> int:
        return self.gammas.size

    @property
    def scale(self) -> float:
        return self.bn * self.calpha ** (1.0 / self.alpha)

    @property
    def coefficients(self) -> np.ndarray:
        """Signed atom weights ``b_n C^{1/alpha} eps_j Gamma_j^{-1/alpha}``."""
        return self.scale * self.signs * self.gammas ** (-1.0 / self.alpha)

    def indices(self) -> list[CoordinateIndex]:
        if self._indices is None:
            self._indices = [CoordinateIndex(sets) for sets in self.zero_sets]
        return self._indices

    def atom_supports(self, k: Sequence[int]) -> np.ndarray:
        """Boolean vector: which atoms have ``k`` in their product zero set."""
        hit = np.ones(self.ell, dtype=bool)
        for i, ki in enumerate(k):
            for j in range(self.ell):
                if hit[j]:
                    pts = self.zero_sets[i][j]
                    pos = np.searchsorted(pts, ki)
                    hit[j] = pos < pts.size and pts[pos] == ki
        return hit

    def value_at(self, k: Sequence[int]) -> float:
        return float(self.coefficients @ self.atom_supports(k))

    def dense_values(self) -> np.ndarray:
        """All values on the box as a dense array (small boxes only)."""
        size = math.prod(ni + 1 for ni in self.n)
        if size > DENSE_DUMP_LIMIT:
            raise ValueError(f"dense evaluation of {size} points refused (limit {DENSE_DUMP_LIMIT})")
        out = np.zeros(tuple(ni + 1 for ni in self.n))
        for j, c in enumerate(self.coefficients):
            term = np.array(c)
            for i in range(self.dim):
                ind = np.zeros(self.n[i] + 1)
                ind[self.zero_sets[i][j]] = 1.0
                term = np.multiply.outer(term, ind)
            out += term
        return out

    def support_size(self) -> int:
        """Number of (atom, point) incidences; an upper bound on the nonzero points."""
        total = 0
        for j in range(self.ell):
            total += math.prod(len(self.zero_sets[i][j]) for i in range(self.dim))
        return total

    def nonzero_points(self, limit: int = DENSE_DUMP_LIMIT) -> tuple[np.ndarray, np.ndarray]:
        """Lattice points in the union of atom supports and the field values there."""
        total = self.support_size()
        if total > limit:
            raise ValueError(f"support has {total} incidences, above the dump limit {limit}")
        if total == 0:
            return np.empty((0, self.dim), dtype=np.int64), np.empty(0)
        blocks, vals = [], []
        coef = self.coefficients
        for j in range(self.ell):
            grids = np.meshgrid(*[self.zero_sets[i][j] for i in range(self.dim)], indexing="ij")
            pts = np.stack([g.ravel() for g in grids], axis=1)
            blocks.append(pts)
            vals.append(np.full(pts.shape[0], coef[j]))
        pts = np.concatenate(blocks)
        vals = np.concatenate(vals)
        uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
        summed = np.bincount(inverse.ravel(), weights=vals, minlength=uniq.shape[0])
        return uniq, summed

    def roots(self, box: RealBox) -> list[np.ndarray]:
        ranges = box.lattice_ranges(self.n)
        return [ix.root_rows(lo, hi) for ix, (lo, hi) in zip(self.indices(), ranges)]


def _check_field_args(laws, n, alpha, ell) -> tuple[tuple[ReturnTimeLaw, ...], tuple[int, ...]]:
    laws = tuple(laws)
    n = tuple(int(x) for x in np.atleast_1d(n))
    if len(laws) != len(n):
        raise ParameterError(f"{len(laws)} return laws for a {len(n)}-dimensional box")
    if any(x < 0 for x in n):
        raise ParameterError("box sizes must be non-negative")
    if ell < 1:
        raise ParameterError(f"truncation level must be >= 1, got {ell}")
    if not 0.0 < alpha < 2.0:
        raise ParameterError(f"alpha must lie in (0, 2), got {alpha}")
    return laws, n


def sample_field(
    laws: Sequence[ReturnTimeLaw],
    n: Sequence[int],
    alpha: float,
    ell: int = DEFAULT_ELL,
    rng: np.random.Generator | None = None,
) -> FieldSample:
    """Draw the first ``ell`` atoms of the series on the box ``[0, n]``.

    Every atom and every coordinate gets its own child stream, so the first
    ``ell`` atoms do not depend on the truncation level and, for a fixed
    generator, zero sets on different boxes are coupled through common
    uniforms.
    """
    laws, n = _check_field_args(laws, n, alpha, ell)
    rng = np.random.default_rng() if rng is None else rng
    weights = poisson_weights(ell, rng)
    zero_sets: list[list[np.ndarray]] = [[] for _ in n]
    for atom_rng in rng.spawn(ell):
        for i, coord_rng in enumerate(atom_rng.spawn(len(n))):
            zero_sets[i].append(sample_conditioned_zero_set(laws[i], n[i], coord_rng).points)
    return FieldSample(
        laws=laws,
        n=n,
        alpha=float(alpha),
        signs=weights.signs.astype(np.float64),
        gammas=weights.gammas,
        zero_sets=zero_sets,
        bn=normalizer_bn(laws, n, alpha),
        calpha=c_alpha(alpha),
    )


def sup_measure(sample: FieldSample, box: RealBox) -> float:
    """``max X_k`` over lattice points with ``k/n`` in ``box`` (not normalized)."""
    return product_max(sample.indices(), sample.roots(box), sample.coefficients)


def abs_sup_measure(sample: FieldSample, box: RealBox) -> float:
    """``max |X_k|`` over lattice points with ``k/n`` in ``box``."""
    roots = sample.roots(box)
    coef = sample.coefficients
    return max(product_max(sample.indices(), roots, coef), product_max(sample.indices(), roots, -coef))


def partial_maxima_field(sample: FieldSample, grid, absolute: bool = False) -> np.ndarray:
    """``M_n(t) = max_{0 <= k <= n t} X_k`` for each row ``t`` of ``grid``."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    evaluate = abs_sup_measure if absolute else sup_measure
    out = np.empty(grid.shape[0])
    for r, t in enumerate(grid):
        if (t < 0).any() or (t > 1).any():
            raise ParameterError(f"grid point {tuple(t)} outside [0, 1]^d")
        out[r] = evaluate(sample, RealBox.closed(np.zeros_like(t), t))
    return out


def sample_origin_values(
    laws: Sequence[ReturnTimeLaw],
    n: Sequence[int],
    alpha: float,
    ell: int,
    reps: int,
    rng: np.random.Generator,
    chunk: int = 4096,
) -> np.ndarray:
    """Independent copies of ``X_0`` under the truncated series, vectorized.

    Atom ``j`` contains the origin iff its first zero is 0 in every
    coordinate, which happens with probability ``prod_i 1 / (b^{(i)}_{n_i})^alpha``.
    """
    laws, n = _check_field_args(laws, n, alpha, ell)
    hit_prob = 1.0
    for law, ni in zip(laws, n):
        hit_prob /= law.cumulative_weights(ni)[-1]
    scale = normalizer_bn(laws, n, alpha) * c_alpha(alpha) ** (1.0 / alpha)
    out = np.empty(reps)
    for start in range(0, reps, chunk):
        m = min(chunk, reps - start)
        gammas = np.cumsum(rng.standard_exponential((m, ell)), axis=1)
        signs = np.where(rng.random((m, ell)) < 0.5, 1.0, -1.0)
        if hit_prob < 1.0:
            signs *= rng.random((m, ell)) < hit_prob
        out[start:start + m] = scale * (signs * gammas ** (-1.0 / alpha)).sum(axis=1)
    return out

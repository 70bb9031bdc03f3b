"""Stable regenerative sets, their grid approximations and intersection queries.

The beta-stable regenerative set is the closed range of a beta-stable
subordinator.  Two exact facts drive the samplers here:

* the first point of the set at or beyond a level ``a`` reached from a point
  ``p`` of the set is ``a + (a - p) O`` with ``O ~ BetaPrime(1 - beta, beta)``,
  which gives exact grid-cell occupancy;
* the last point ``G`` before ``a`` and the first point ``D`` after it have an
  explicit joint law, both for the free set and for a bridge between two
  known points, so the set can be refined lazily wherever a query needs it.

A third, approximate sampler runs the subordinator on a time grid; it is kept
as an independent construction for cross-validation.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numba
import numpy as np

from .return_laws import ParameterError, ReturnTimeLaw, sample_first_zero, sample_zero_set
from .stable_core import sample_one_sided_stable

__all__ = [
    "RegenSetApprox",
    "RegenerativeSet",
    "ShiftedProductSet",
    "ResolutionMismatchError",
    "sample_shift",
    "sample_regen_set",
    "sample_regen_set_renewal",
    "intersect_nonempty",
    "ell_beta",
    "max_intersection_count",
    "cell_hit_probability",
    "cross_validate_sets",
]

_RATIO_CHUNK = 1024


class ResolutionMismatchError(ValueError):
    """Grid approximations with different cell widths were combined."""


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if not 0.0 < beta < 1.0:
        raise ParameterError(f"beta must lie in (0, 1), got {beta}")
    return beta


def ell_beta(betas: Sequence[float]) -> float:
    """``min_i 1 / (1 - beta_i)``: product sets intersect a.s. iff their number is below it."""
    betas = [_check_beta(b) for b in np.atleast_1d(betas)]
    if not betas:
        raise ParameterError("need at least one beta")
    return min(1.0 / (1.0 - b) for b in betas)


def max_intersection_count(betas: Sequence[float]) -> int:
    """Largest integer ``m`` with ``m < ell_beta(betas)``."""
    ell = ell_beta(betas)
    return math.ceil(ell) - 1


def sample_shift(beta: float, rng: np.random.Generator, size=None):
    """Shift ``V`` on ``[0, 1]`` with ``P(V <= x) = x^{1 - beta}``."""
    beta = _check_beta(beta)
    return rng.random(size) ** (1.0 / (1.0 - beta))


def cell_hit_probability(beta: float, a: float, width: float) -> float:
    """``P(R meets [a, a + width))`` for the unshifted set started at 0.

    The first point at or after ``a > 0`` is ``a (1 + O)`` with
    ``O ~ BetaPrime(1 - beta, beta)``, so this is ``P(O < width / a)``.
    """
    from scipy.stats import betaprime

    beta = _check_beta(beta)
    if a <= 0:
        return 1.0
    return float(betaprime.cdf(width / a, 1.0 - beta, beta))


@dataclass(frozen=True)
class RegenSetApprox:
    """Grid approximation of a (shifted) stable regenerative set on ``[0, horizon]``.

    ``cells`` holds the sorted indices ``c`` such that the set meets
    ``[c delta, (c + 1) delta)``.
    """

    beta: float
    horizon: float
    delta: float
    cells: np.ndarray
    shift: float = 0.0

    def __post_init__(self) -> None:
        cells = np.asarray(self.cells, dtype=np.int64)
        if cells.size and (cells[0] < 0 or (np.diff(cells) <= 0).any()):
            raise ValueError("cells must be strictly increasing non-negative integers")
        object.__setattr__(self, "cells", cells)

    def __len__(self) -> int:
        return int(self.cells.size)

    @property
    def origin_included(self) -> bool:
        return bool(self.cells.size) and self.cells[0] == 0

    @property
    def coverage(self) -> float:
        """Fraction of ``[0, horizon]`` covered by marked cells."""
        return self.cells.size * self.delta / self.horizon

    def dilated(self, k: int = 1) -> np.ndarray:
        """Cell indices within ``k`` cells of a marked cell."""
        if k == 0:
            return self.cells
        grown = (self.cells[:, None] + np.arange(-k, k + 1)[None, :]).ravel()
        grown = np.unique(grown)
        return grown[grown >= 0]

    def coarsen(self, factor: int) -> RegenSetApprox:
        """Exact occupancy at cell width ``factor * delta``."""
        factor = int(factor)
        if factor < 1:
            raise ParameterError("coarsening factor must be >= 1")
        return RegenSetApprox(self.beta, self.horizon, self.delta * factor, np.unique(self.cells // factor), self.shift)

    def contains(self, x: float, dilation: int = 0) -> bool:
        """Membership of ``x`` in the union of (dilated) marked cells."""
        c = math.floor(x / self.delta)
        i = np.searchsorted(self.cells, c - dilation)
        return bool(i < self.cells.size and self.cells[i] <= c + dilation)


@numba.njit(cache=True)
def _overshoot_walk(position, last, horizon, delta, beta, uniforms, out):  # pragma: no cover - compiled
    # Johnk's sampler: with X = U^{1/(1-beta)}, Y = V^{1/beta} conditioned on
    # X + Y <= 1, X/Y is BetaPrime(1 - beta, beta); acceptance is above 0.8
    inv_a = 1.0 / (1.0 - beta)
    inv_b = 1.0 / beta
    k = 0
    j = 0
    p = position
    n = uniforms.size
    while p <= horizon and k < out.size:
        ratio = -1.0
        while j + 1 < n:
            lx = math.log(uniforms[j]) * inv_a
            ly = math.log(uniforms[j + 1]) * inv_b
            j += 2
            if math.exp(lx) + math.exp(ly) <= 1.0:
                ratio = math.exp(lx - ly)
                break
        if ratio < 0.0:
            break
        c = math.floor(p / delta)
        if c <= last:
            # guards against rounding in (c + 1) * delta for non-dyadic widths
            c = last + 1
        out[k] = c
        k += 1
        last = c
        a = (c + 1) * delta
        p = a + (a - p) * ratio
    return k, p, last


def _overshoot_cells(beta: float, start: float, horizon: float, delta: float, rng: np.random.Generator) -> np.ndarray:
    parts = []
    p, last = float(start), -1
    chunk = _RATIO_CHUNK
    while p <= horizon:
        # 1 - U keeps the uniforms in (0, 1]
        uniforms = 1.0 - rng.random(2 * chunk + 2)
        out = np.empty(chunk, dtype=np.int64)
        k, p, last = _overshoot_walk(p, last, horizon, delta, beta, uniforms, out)
        parts.append(out[:k])
        chunk *= 2
    return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)


@lru_cache(maxsize=32)
def _unit_median(beta: float) -> float:
    # fixed private stream: the step size must not depend on the caller's generator
    return float(np.median(sample_one_sided_stable(beta, 1.0, np.random.default_rng(0), 20001)))


def _increment_cells(beta: float, start: float, horizon: float, delta: float, rng: np.random.Generator) -> np.ndarray:
    # median increment delta / 100; at delta / 10 grid positions visibly under-cover
    h = (delta / (100.0 * _unit_median(beta))) ** beta
    parts = [np.array([start])]
    pos = float(start)
    batch = 4096
    while pos <= horizon:
        steps = pos + np.cumsum(sample_one_sided_stable(beta, h, rng, batch))
        parts.append(steps)
        pos = float(steps[-1])
        batch *= 2
    path = np.concatenate(parts)
    path = path[path <= horizon]
    return np.unique(np.floor(path / delta).astype(np.int64))


def sample_regen_set(
    beta: float,
    T: float,
    delta: float,
    rng: np.random.Generator,
    shift: float = 0.0,
    method: str = "overshoot",
) -> RegenSetApprox:
    """Cells of width ``delta`` met by ``shift + R_beta`` on ``[0, T]``.

    ``method="overshoot"`` is exact; ``"bridge"`` uses the lazy sampler
    (also exact, slower); ``"increments"`` runs the subordinator on a time
    grid and marks the cell of every grid position.
    """
    beta = _check_beta(beta)
    if not (T > 0 and 0 < delta < T):
        raise ParameterError(f"need T > 0 and 0 < delta < T, got T={T}, delta={delta}")
    if shift < 0:
        raise ParameterError("shift must be non-negative")
    if method == "overshoot":
        cells = _overshoot_cells(beta, shift, T, delta, rng)
    elif method == "increments":
        cells = _increment_cells(beta, shift, T, delta, rng)
    elif method == "bridge":
        cells = RegenerativeSet(beta, shift, rng).cells(delta, T)
    else:
        raise ParameterError(f"unknown method {method!r}")
    return RegenSetApprox(beta, float(T), float(delta), cells, float(shift))


def sample_regen_set_renewal(
    law: ReturnTimeLaw,
    N: int,
    T: float,
    rng: np.random.Generator,
    conditioned: bool = False,
) -> RegenSetApprox:
    """Renewal zero set on ``{0..floor(N T)}`` scaled by ``1/N``, as cells of width ``1/N``.

    With ``conditioned=True`` the first point is drawn from the conditioned
    measure on ``{0..N}``, so that it converges to the shift law.
    """
    if N < 1000:
        raise ParameterError(f"N must be >= 1000, got {N}")
    top = int(math.floor(N * T))
    start = int(sample_first_zero(law, int(N), rng)) if conditioned else 0
    points = sample_zero_set(law, top, rng, start=min(start, top)).points
    shift = start / N
    return RegenSetApprox(law.beta, float(T), 1.0 / N, points, shift)


class RegenerativeSet:
    """Lazily refined exact sample of ``shift + R_beta`` on ``[shift, inf)``.

    The state is a sorted list of known points; each gap between neighbours is
    either an unexplored bridge or known to be empty, and the region after the
    last point is unexplored.  Queries only split the pieces they touch, so
    any sequence of queries is answered by one consistent sample path.
    """

    _BRIDGE = 0
    _EMPTY = 1

    def __init__(self, beta: float, shift: float, rng: np.random.Generator) -> None:
        self.beta = _check_beta(beta)
        self.shift = float(shift)
        self._rng = rng
        self._points = [self.shift]
        self._kinds: list[int] = []

    def __len__(self) -> int:
        return len(self._points)

    @property
    def known_points(self) -> np.ndarray:
        return np.array(self._points)

    def first_point_from(self, a: float) -> float:
        """Smallest point of the set that is ``>= a``."""
        pts = self._points
        if a <= pts[0]:
            return pts[0]
        i = bisect.bisect_right(pts, a) - 1
        x = pts[i]
        if x == a:
            return a
        if i == len(pts) - 1:
            g, d = self._free_split(x, a)
            pts[i + 1:i + 1] = [g, d]
            self._kinds[i:i] = [self._BRIDGE, self._EMPTY]
            return d
        if self._kinds[i] == self._EMPTY:
            return pts[i + 1]
        y = pts[i + 1]
        g, d = self._bridge_split(x, y, a)
        pts[i + 1:i + 1] = [g, d]
        self._kinds[i:i + 1] = [self._BRIDGE, self._EMPTY, self._BRIDGE]
        return d

    def hits(self, a: float, b: float) -> bool:
        """Whether the set meets ``[a, b)``."""
        return self.first_point_from(a) < b

    def cells(self, delta: float, horizon: float) -> np.ndarray:
        """Indices of the width-``delta`` cells met on ``[0, horizon]``."""
        out = []
        p = self.first_point_from(0.0)
        last = -1
        while p <= horizon:
            c = max(math.floor(p / delta), last + 1)
            out.append(c)
            last = c
            p = self.first_point_from((c + 1) * delta)
        return np.array(out, dtype=np.int64)

    def _free_split(self, x: float, a: float) -> tuple[float, float]:
        # last point before a is x + (a - x) Beta(beta, 1 - beta); the jump
        # across a has tail ((a - g) / y)^beta
        b, rng = self.beta, self._rng
        g = x + (a - x) * rng.beta(b, 1.0 - b)
        d = g + (a - g) * rng.random() ** (-1.0 / b)
        return g, max(d, a)

    def _bridge_split(self, x: float, y: float, a: float) -> tuple[float, float]:
        # On the unit bridge, (G, D) at level t has density
        # proportional to g^{b-1} (d-g)^{-1-b} (1-d)^{b-1}.  G/t is a
        # Beta(b, 1-b) variable reweighted by (1-t)/(1-G), and given G the
        # ratio (1-s)/s with s = (D-G)/(1-G) has density ~ w^{b-1}.
        b, rng = self.beta, self._rng
        t = (a - x) / (y - x)
        while True:
            u = rng.beta(b, 1.0 - b)
            if rng.random() * (1.0 - t * u) < 1.0 - t:
                break
        g = t * u
        if g >= t:
            # u rounded to 1: the level itself is the last point before it
            return a, a
        w = (1.0 - t) / (t - g) * rng.random() ** (1.0 / b)
        d = g + (1.0 - g) / (1.0 + w)
        gg = x + g * (y - x)
        dd = x + d * (y - x)
        return min(max(gg, x), a), min(max(dd, a), y)


@dataclass(frozen=True)
class ShiftedProductSet:
    """Product ``prod_i (v_i + R_i)`` of independent regenerative sets.

    Components are either ``RegenSetApprox`` (fixed grid) or
    ``RegenerativeSet`` (lazy, exact).
    """

    components: tuple

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def shift(self) -> tuple[float, ...]:
        return tuple(c.shift for c in self.components)

    @property
    def lazy(self) -> bool:
        return all(isinstance(c, RegenerativeSet) for c in self.components)

    @classmethod
    def sample(cls, betas: Sequence[float], rng: np.random.Generator, shift=None) -> ShiftedProductSet:
        """Lazy product with independent shifts from the shift law (or the given ones)."""
        betas = [_check_beta(b) for b in betas]
        streams = rng.spawn(len(betas))
        if shift is None:
            shift = [sample_shift(b, s) for b, s in zip(betas, streams)]
        return cls(tuple(RegenerativeSet(b, v, s) for b, v, s in zip(betas, shift, streams)))


def _lazy_common_point(sets: Sequence[RegenerativeSet], lo: float, hi: float, delta: float) -> bool:
    # dyadic search for a cell met by every set; a cell [a, b) is final once
    # b - a <= delta * max(1, a), so the resolution is relative far from 0
    stack = [(lo, hi)]
    while stack:
        a, b = stack.pop()
        if all(s.hits(a, b) for s in sets):
            if b - a <= delta * max(1.0, abs(a)):
                return True
            m = 0.5 * (a + b)
            if not a < m < b:
                return True
            stack.append((m, b))
            stack.append((a, m))
    return False


def intersect_nonempty(sets: Sequence[ShiftedProductSet], box, delta: float | None = None, dilation: int = 1) -> bool:
    """Whether every set meets a common cell inside ``box``.

    For grid approximations the cells are those of the sets themselves,
    grown by ``dilation`` cells.  For lazy sets the search refines dyadically
    down to width ``delta * max(1, |t|)``; the answer can only switch from
    true to false as ``delta`` decreases.
    """
    if not sets:
        raise ParameterError("need at least one set")
    d = sets[0].dim
    if any(s.dim != d for s in sets) or box.dim != d:
        raise ParameterError("dimension mismatch between sets and box")
    if all(s.lazy for s in sets):
        if delta is None or delta <= 0:
            raise ParameterError("lazy sets need a positive resolution delta")
        for i in range(d):
            lo, hi = box.lower[i], box.upper[i]
            # half-open cells: extend by a hair so a closed upper face is included
            hi = math.nextafter(hi, math.inf) if box.closed_upper[i] else hi
            if not _lazy_common_point([s.components[i] for s in sets], lo, hi, delta):
                return False
        return True
    if any(s.lazy for s in sets):
        raise ParameterError("cannot mix lazy sets and grid approximations")
    widths = {c.delta for s in sets for c in s.components}
    if len(widths) != 1:
        raise ResolutionMismatchError(f"sets use different cell widths {sorted(widths)}")
    width = widths.pop()
    for i, (lo, hi) in enumerate(box.cell_ranges(width)):
        common = None
        for s in sets:
            cells = s.components[i].dilated(dilation)
            cells = cells[(cells >= lo) & (cells <= hi)]
            common = cells if common is None else np.intersect1d(common, cells, assume_unique=True)
            if common.size == 0:
                return False
    return True


def cross_validate_sets(
    beta: float,
    law: ReturnTimeLaw,
    T: float,
    delta: float,
    reps: int,
    rng: np.random.Generator,
    refine: int = 64,
) -> dict:
    """Compare cell-occupancy frequencies of the subordinator and renewal samplers.

    The renewal chain runs at width ``delta / refine`` and is coarsened to
    ``delta``.  Returns per-cell frequencies,
    the exact occupancy probabilities, and the max/mean absolute gaps.
    """
    # only cells lying fully inside [0, T]
    ncells = int(math.floor(T / delta + 1e-9))
    freq_sub = np.zeros(ncells)
    freq_ren = np.zeros(ncells)
    N = int(round(refine / delta))
    sub_rng, ren_rng = rng.spawn(2)
    for _ in range(reps):
        sub = sample_regen_set(beta, T, delta, sub_rng)
        freq_sub[sub.cells[sub.cells < ncells]] += 1
        ren = sample_regen_set_renewal(law, N, T, ren_rng).coarsen(refine)
        freq_ren[ren.cells[ren.cells < ncells]] += 1
    freq_sub /= reps
    freq_ren /= reps
    exact = np.array([cell_hit_probability(beta, c * delta, delta) for c in range(ncells)])
    gap = np.abs(freq_sub - freq_ren)
    return {
        "subordinator": freq_sub,
        "renewal": freq_ren,
        "exact": exact,
        "max_gap": float(gap.max()),
        "mean_gap": float(gap.mean()),
        "max_gap_exact": float(np.abs(freq_sub - exact).max()),
    }

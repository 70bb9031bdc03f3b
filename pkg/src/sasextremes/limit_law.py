"""The limiting random sup measure on ``[0, 1]^d`` and its field ``W(t) = eta([0, t])``.

Restricted to the unit cube the sup measure is generated by atoms
``(Gamma_j^{-1/alpha}, V_j + R_j)``: Poisson weights attached to products of
independent stable regenerative sets shifted by ``V_j^{(i)}`` with
``P(V <= x) = x^{1 - beta_i}``.  ``eta(B)`` is the largest total weight of a
group of atoms whose sets meet at a common point of ``B``.

Sets are represented by exact cell occupancy at width ``delta``; a group
counts as meeting when its sets share a cell.  Values are therefore biased
upward and decrease as ``delta`` is refined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .field_sim import RealBox
from .lattice import CoordinateIndex, product_max
from .regen_sets import RegenSetApprox, ell_beta, sample_regen_set, sample_shift
from .return_laws import ParameterError
from .stable_core import poisson_weights

__all__ = [
    "LimitAtom",
    "LimitSupMeasureSample",
    "OverlapViolation",
    "sample_limit_measure",
    "eval_sup_measure",
    "eval_sup_measure_grid",
    "max_overlap",
    "eval_limit_field",
    "scaled_law_check",
    "MIN_CELLS",
]

MIN_CELLS = 1000


class OverlapViolation(RuntimeError):
    """More atoms share a cell than the intersection bound allows (resolution too coarse)."""


@dataclass(frozen=True)
class LimitAtom:
    gamma: float
    weight: float
    shift: tuple[float, ...]
    sets: tuple[RegenSetApprox, ...]


@dataclass
class LimitSupMeasureSample:
    """Truncated restricted representation with ``ell`` atoms at cell width ``delta``."""

    alpha: float
    betas: tuple[float, ...]
    delta: float
    atoms: list[LimitAtom]
    _indices: list[CoordinateIndex] | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return len(self.betas)

    @property
    def ell(self) -> int:
        return len(self.atoms)

    @property
    def weights(self) -> np.ndarray:
        return np.array([a.weight for a in self.atoms])

    @property
    def shifts(self) -> np.ndarray:
        return np.array([a.shift for a in self.atoms])

    @property
    def ell_beta(self) -> float:
        return ell_beta(self.betas)

    def indices(self) -> list[CoordinateIndex]:
        if self._indices is None:
            self._indices = [CoordinateIndex([a.sets[i].cells for a in self.atoms]) for i in range(self.dim)]
        return self._indices

    def truncated(self, ell: int) -> LimitSupMeasureSample:
        """The first ``ell`` atoms of this sample."""
        if not 1 <= ell <= self.ell:
            raise ParameterError(f"truncation level must lie in [1, {self.ell}]")
        return LimitSupMeasureSample(self.alpha, self.betas, self.delta, self.atoms[:ell])

    def roots(self, box: RealBox) -> list[np.ndarray]:
        ranges = box.cell_ranges(self.delta)
        return [ix.root_rows(lo, hi) for ix, (lo, hi) in zip(self.indices(), ranges)]


def sample_limit_measure(
    alpha: float,
    betas: Sequence[float],
    ell: int,
    delta: float,
    rng: np.random.Generator,
) -> LimitSupMeasureSample:
    """Draw ``ell`` atoms of the restricted representation on ``[0, 1]^d``.

    Weights come from one child stream and each atom from its own, so a
    larger ``ell`` with the same generator only appends atoms.
    """
    betas = tuple(float(b) for b in np.atleast_1d(betas))
    ell_beta(betas)
    if not 0.0 < alpha < 2.0:
        raise ParameterError(f"alpha must lie in (0, 2), got {alpha}")
    if ell < 1:
        raise ParameterError(f"ell must be >= 1, got {ell}")
    if not 0.0 < delta <= 1.0 / MIN_CELLS:
        raise ParameterError(f"delta must lie in (0, {1.0 / MIN_CELLS}] so that [0, 1] has >= {MIN_CELLS} cells")
    pw = poisson_weights(ell, rng)
    atoms = []
    for j, atom_rng in enumerate(rng.spawn(ell)):
        shift, sets = [], []
        for beta, coord_rng in zip(betas, atom_rng.spawn(len(betas))):
            v = float(sample_shift(beta, coord_rng))
            shift.append(v)
            sets.append(sample_regen_set(beta, 1.0, delta, coord_rng, shift=v))
        g = float(pw.gammas[j])
        atoms.append(LimitAtom(g, g ** (-1.0 / alpha), tuple(shift), tuple(sets)))
    return LimitSupMeasureSample(float(alpha), betas, float(delta), atoms)


def _restricted_cells(sample: LimitSupMeasureSample, box: RealBox) -> tuple[list[int], list[list[np.ndarray]]]:
    ranges = box.cell_ranges(sample.delta)
    active, cells = [], []
    for j, atom in enumerate(sample.atoms):
        per = []
        for s, (lo, hi) in zip(atom.sets, ranges):
            a, b = np.searchsorted(s.cells, [lo, hi + 1])
            if a == b:
                break
            per.append(s.cells[a:b])
        else:
            active.append(j)
            cells.append(per)
    return active, cells


def eval_sup_measure(
    sample: LimitSupMeasureSample,
    box: RealBox,
    max_size: int | None | str = "auto",
    strict: bool = False,
) -> float:
    """``eta(B)`` as the best total weight of a group of atoms meeting in ``B``.

    Groups are enumerated depth first in decreasing weight order and pruned
    by the weight still attainable.  ``max_size="auto"`` caps group sizes
    at the largest integer below ``ell(beta)``; ``None`` removes the cap.
    With ``strict=True`` an overlap at or above ``ell(beta)`` raises
    ``OverlapViolation``.
    """
    cap_limit = math.ceil(sample.ell_beta) - 1
    cap = cap_limit if max_size == "auto" else max_size
    if strict and max_overlap(sample, box) > cap_limit:
        raise OverlapViolation(f"more than {cap_limit} atoms share a cell at width {sample.delta}")
    active, cells = _restricted_cells(sample, box)
    if not active:
        return 0.0
    w = sample.weights[active]
    cap = len(active) if cap is None else int(cap)
    # prefix sums give the weight of the heaviest k atoms after position p
    csum = np.concatenate(([0.0], np.cumsum(w)))
    best = 0.0
    d = sample.dim

    def visit(value: float, common: list[np.ndarray], pos: int, size: int) -> None:
        nonlocal best
        if value > best:
            best = value
        room = cap - size
        for q in range(pos, len(active)):
            if value + csum[min(q + room, len(active))] - csum[q] <= best:
                return
            nxt = []
            for i in range(d):
                inter = cells[q][i] if common is None else np.intersect1d(common[i], cells[q][i], assume_unique=True)
                if inter.size == 0:
                    break
                nxt.append(inter)
            else:
                if room > 0:
                    visit(value + w[q], nxt, q + 1, size + 1)

    visit(0.0, None, 0, 0)
    return float(best)


def eval_sup_measure_grid(sample: LimitSupMeasureSample, box: RealBox) -> float:
    """Same quantity by maximizing ``sum_j U_j 1{cell in R_j}`` over all cells of ``B``."""
    return max(0.0, product_max(sample.indices(), sample.roots(box), sample.weights))


def max_overlap(sample: LimitSupMeasureSample, box: RealBox) -> int:
    """Largest number of atoms sharing one cell of ``B``."""
    value = product_max(sample.indices(), sample.roots(box), np.ones(sample.ell))
    return int(round(max(value, 0.0)))


def eval_limit_field(sample: LimitSupMeasureSample, grid, **kwargs) -> np.ndarray:
    """``W(t) = eta([0, t])`` for each row ``t`` of ``grid``."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    out = np.empty(grid.shape[0])
    for r, t in enumerate(grid):
        if (t < 0).any() or (t > 1).any():
            raise ParameterError(f"grid point {tuple(t)} outside [0, 1]^d")
        out[r] = eval_sup_measure(sample, RealBox.closed(np.zeros_like(t), t), **kwargs)
    return out


def scaled_law_check(
    alpha: float,
    betas: Sequence[float],
    c: Sequence[float],
    reps: int,
    rng: np.random.Generator,
    ell: int = 64,
    delta: float = 2.0**-14,
) -> dict:
    """Two-sample comparison of ``eta([0, c])`` with ``prod_i c_i^{(1-beta_i)/alpha} eta([0, 1]^d)``.

    The two ensembles are independent.  Returns the KS statistic, its
    p-value and the scale factor.
    """
    betas = tuple(float(b) for b in np.atleast_1d(betas))
    c = np.broadcast_to(np.asarray(c, dtype=float), (len(betas),))
    if (c <= 0).any() or (c > 1).any():
        raise ParameterError("scale factors must lie in (0, 1]")
    factor = float(np.prod(c ** ((1.0 - np.array(betas)) / alpha)))
    scaled_rng, full_rng = rng.spawn(2)
    scaled_box = RealBox.closed(np.zeros(len(betas)), c)
    unit = RealBox.unit(len(betas))
    scaled = np.empty(reps)
    full = np.empty(reps)
    for r, (ra, rb) in enumerate(zip(scaled_rng.spawn(reps), full_rng.spawn(reps))):
        scaled[r] = eval_sup_measure(sample_limit_measure(alpha, betas, ell, delta, ra), scaled_box)
        full[r] = factor * eval_sup_measure(sample_limit_measure(alpha, betas, ell, delta, rb), unit)
    res = stats.ks_2samp(scaled, full)
    return {"factor": factor, "ks": float(res.statistic), "pvalue": float(res.pvalue), "scaled": scaled, "full": full}

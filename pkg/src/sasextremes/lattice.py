"""Maxima of product-supported step functions over boxes.

Both the truncated field and the truncated limit sup measure have the form

    g(k) = sum_j c_j * prod_i 1{k_i in Z_j^(i)},

a weighted sum of indicators of product sets, evaluated on a box that is
itself a product of integer ranges.  The value at ``k`` only depends on the
per-coordinate membership masks ``m_i(k_i) = {j : k_i in Z_j^(i)}`` through
their intersection, so the maximum over the box is a maximum over pairs
(triples, ...) of realized masks.

``product_max`` searches subsets ``S`` of atoms depth first.  A node covers
all points whose mask contains ``S``; it is evaluated densely once the
number of distinct masks left is small, and pruned whenever the best
positive mass any point in it can carry cannot beat the incumbent.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

__all__ = ["CoordinateIndex", "product_max", "DENSE_LIMIT"]

DENSE_LIMIT = 250_000
_CHUNK = 2048


def _unique_rows(masks: np.ndarray) -> np.ndarray:
    if masks.shape[1] == 1:
        return np.unique(masks[:, 0])[:, None]
    return np.unique(masks, axis=0)


def _unpack(masks: np.ndarray, ell: int) -> np.ndarray:
    as_bytes = np.ascontiguousarray(masks.astype("<u8")).view(np.uint8)
    return np.unpackbits(as_bytes, axis=1, bitorder="little")[:, :ell].astype(np.float64)


class CoordinateIndex:
    """Membership masks of every point hit by at least one atom in one coordinate.

    ``point_sets[j]`` is the sorted integer support of atom ``j`` in this
    coordinate.  Row ``nrows`` is a virtual point carrying the empty mask;
    ``root_rows`` adds it whenever a range contains an uncovered point.
    """

    def __init__(self, point_sets: Sequence[np.ndarray]) -> None:
        self.ell = len(point_sets)
        self.words = max(1, -(-self.ell // 64))
        lengths = np.fromiter((len(p) for p in point_sets), dtype=np.int64, count=self.ell)
        pts = np.concatenate([np.asarray(p, dtype=np.int64) for p in point_sets]) if self.ell else np.empty(0, np.int64)
        atoms = np.repeat(np.arange(self.ell), lengths)
        top = int(pts.max()) + 1 if pts.size else 0
        if top <= 64 * pts.size + 1024:
            # dense rank table is cheaper than sorting all pairs
            present = np.zeros(top, dtype=bool)
            present[pts] = True
            self.points = np.flatnonzero(present)
            rank = np.cumsum(present) - 1
            rows = rank[pts]
        else:
            self.points, rows = np.unique(pts, return_inverse=True)
            rows = rows.ravel()
        self.nrows = self.points.size
        self.pair_rows = rows
        self.pair_atoms = atoms
        masks = np.zeros((self.nrows + 1, self.words), dtype=np.uint64)
        bounds = np.concatenate(([0], np.cumsum(lengths)))
        for j in range(self.ell):
            # rows are distinct within one atom, so plain fancy assignment is safe
            r = rows[bounds[j]:bounds[j + 1]]
            masks[r, j // 64] |= np.uint64(1) << np.uint64(j % 64)
        self.masks = masks
        self.atom_rows = [rows[bounds[j]:bounds[j + 1]] for j in range(self.ell)]

    @property
    def empty_row(self) -> int:
        return self.nrows

    def row_span(self, lo: int, hi: int) -> tuple[int, int]:
        """Half-open range of rows whose points lie in ``[lo, hi]``."""
        a = int(np.searchsorted(self.points, lo, side="left"))
        b = int(np.searchsorted(self.points, hi, side="right"))
        return a, b

    def root_rows(self, lo: int, hi: int) -> np.ndarray:
        """Rows for the integer range ``[lo, hi]`` (empty row included if needed)."""
        a, b = self.row_span(lo, hi)
        rows = np.arange(a, b)
        if b - a < hi - lo + 1:
            rows = np.append(rows, self.empty_row)
        return rows

    def has_atom(self, rows: np.ndarray, atom: int) -> np.ndarray:
        bit = np.uint64(1) << np.uint64(atom % 64)
        return (self.masks[rows, atom // 64] & bit) != 0

    def refine(self, rows: np.ndarray, span: tuple[int, int], subset_mask: np.ndarray, atom: int) -> np.ndarray:
        """Rows of ``rows`` carrying ``atom``, where ``rows`` is the set of rows in
        ``span`` whose masks contain ``subset_mask``."""
        own = self.atom_rows[atom]
        if own.size >= rows.size:
            return rows[self.has_atom(rows, atom)]
        a, b = np.searchsorted(own, span[0]), np.searchsorted(own, span[1])
        own = own[a:b]
        if subset_mask.any():
            keep = ((self.masks[own] & subset_mask) == subset_mask).all(axis=1)
            own = own[keep]
        return own


def _dense_max(uniq: list[np.ndarray], coef: np.ndarray) -> float:
    ell = coef.size
    if len(uniq) == 1:
        return float((_unpack(uniq[0], ell) @ coef).max())
    acc = uniq[0]
    for nxt in uniq[1:-1]:
        acc = _unique_rows((acc[:, None, :] & nxt[None, :, :]).reshape(-1, acc.shape[1]))
    last = _unpack(uniq[-1], ell).T
    best = -np.inf
    for start in range(0, acc.shape[0], _CHUNK):
        block = _unpack(acc[start:start + _CHUNK], ell) * coef
        best = max(best, float((block @ last).max()))
    return best


def _suffix_max(uniq: np.ndarray, positive: np.ndarray) -> np.ndarray:
    """``out[q] = max_r sum_{p >= q, p in mask_r} positive_p`` (with ``out[ell] = 0``)."""
    ell = positive.size
    out = np.zeros(ell + 1)
    running = np.zeros(uniq.shape[0])
    current = 0.0
    for q in range(ell - 1, -1, -1):
        if positive[q] > 0:
            bit = np.uint64(1) << np.uint64(q % 64)
            running += positive[q] * ((uniq[:, q // 64] & bit) != 0)
            current = float(running.max())
        out[q] = current
    return out


def _exists_empty_meet(extras: list[np.ndarray]) -> bool:
    """Whether one mask per family can be chosen with an all-zero AND."""
    for fam in extras:
        if not fam.any(axis=1).all():
            return True
    acc = extras[0]
    for nxt in extras[1:]:
        found = []
        for start in range(0, acc.shape[0], _CHUNK // 8):
            meet = acc[start:start + _CHUNK // 8, None, :] & nxt[None, :, :]
            flat = meet.reshape(-1, acc.shape[1])
            if not flat.any(axis=1).all():
                return True
            found.append(_unique_rows(flat))
        acc = _unique_rows(np.concatenate(found))
    return False


def product_max(
    indices: Sequence[CoordinateIndex],
    roots: Sequence[np.ndarray],
    coef: np.ndarray,
    dense_limit: int = DENSE_LIMIT,
) -> float:
    """Max over the product of ``roots`` of ``sum_j coef_j * [j in all masks]``."""
    coef = np.asarray(coef, dtype=np.float64)
    d = len(indices)
    ell = coef.size
    words = indices[0].words
    positive = np.maximum(coef, 0.0)
    order = [q for q in range(ell) if coef[q] > 0] + [q for q in range(ell) if coef[q] <= 0]
    roots = [np.asarray(r) for r in roots]
    # the empty row carries no atom, so it never enters a child node
    spans = [(int(r[0]), int(r[r < ix.empty_row][-1]) + 1) if (r < ix.empty_row).any() else (0, 0)
             for r, ix in zip(roots, indices)]
    best = -np.inf

    # A point belongs to the node of its exact mask S, reached through the
    # sorted elements of S.  Below a node whose largest atom is ``last`` only
    # atoms with a larger index can be added, which gives the bound
    # value(S) + min_i max_r sum_{p > last, p in m_i(r)} coef_p^+.
    def visit(subset_mask: np.ndarray, value: float, rows: list[np.ndarray], last: int) -> None:
        nonlocal best
        uniq = [_unique_rows(indices[i].masks[rows[i]]) for i in range(d)]
        tails = np.min([_suffix_max(u, positive) for u in uniq], axis=0)
        if value + tails[last + 1] <= best:
            return
        size = 1
        for u in uniq:
            size *= u.shape[0]
        if size <= dense_limit:
            best = max(best, _dense_max(uniq, coef))
            return
        if value > best:
            extras = [u & ~subset_mask for u in uniq]
            if _exists_empty_meet(extras):
                best = value
        for q in order:
            if q <= last or value + coef[q] + tails[q + 1] <= best:
                continue
            child = []
            for i in range(d):
                sel = indices[i].refine(rows[i], spans[i], subset_mask, q)
                if sel.size == 0:
                    break
                child.append(sel)
            else:
                mask = subset_mask.copy()
                mask[q // 64] |= np.uint64(1) << np.uint64(q % 64)
                visit(mask, value + coef[q], child, q)

    visit(np.zeros(words, dtype=np.uint64), 0.0, roots, -1)
    return best

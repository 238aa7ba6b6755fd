"""Boxes, uniform binary grids and the distance primitives built on them.

A :class:`Grid` tiles an axis-aligned region into ``2**depth[i]`` cells
along dimension ``i``.  Cells are addressed by a single row-major integer
(the box index).  Everything here is immutable and vectorised over arrays
of indices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


class GridError(ValueError):
    """Raised on malformed grid input (bad dimension, bad index, empty set)."""


@dataclass(frozen=True)
class Box:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi):
            raise GridError(f"lo has dimension {len(lo)} but hi has {len(hi)}")
        if not all(a < b for a, b in zip(lo, hi)):
            raise GridError(f"degenerate box: lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.lo) + np.asarray(self.hi)) / 2

    @property
    def width(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    def contains(self, point, closed: bool = True) -> bool:
        p = np.asarray(point, dtype=float)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        if closed:
            return bool(np.all(p >= lo) and np.all(p <= hi))
        return bool(np.all(p > lo) and np.all(p < hi))

    def contains_box(self, other: "Box", tol: float = 1e-12) -> bool:
        return bool(
            np.all(np.asarray(other.lo) >= np.asarray(self.lo) - tol)
            and np.all(np.asarray(other.hi) <= np.asarray(self.hi) + tol)
        )


@dataclass(frozen=True)
class Grid:
    """Uniform subdivision of ``bounds`` with per-dimension binary depth.

    Periodic dimensions identify ``bounds.lo[i]`` with ``bounds.hi[i]``.
    """

    bounds: Box
    depth: tuple[int, ...]
    periodic: tuple[bool, ...] = ()

    def __post_init__(self):
        depth = tuple(int(d) for d in np.atleast_1d(self.depth))
        if len(depth) != self.bounds.dim:
            raise GridError(f"depth has {len(depth)} entries for a {self.bounds.dim}-d region")
        if any(d < 0 for d in depth):
            raise GridError("depth entries must be nonnegative")
        periodic = tuple(bool(p) for p in self.periodic) or (False,) * self.bounds.dim
        if len(periodic) != self.bounds.dim:
            raise GridError("periodic flags do not match the region dimension")
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "periodic", periodic)

    @classmethod
    def from_bounds(cls, lo, hi, depth, periodic=None) -> "Grid":
        """Build a grid; a scalar ``depth`` bisects every dimension that many times."""
        box = Box(tuple(np.atleast_1d(lo)), tuple(np.atleast_1d(hi)))
        if np.ndim(depth) == 0:
            depth = (int(depth),) * box.dim
        return cls(box, tuple(depth), tuple(periodic) if periodic is not None else ())

    @property
    def dim(self) -> int:
        return self.bounds.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(2**d for d in self.depth)

    @property
    def n_boxes(self) -> int:
        return 2 ** sum(self.depth)

    @property
    def total_depth(self) -> int:
        return sum(self.depth)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.bounds.lo)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.bounds.hi)

    @property
    def widths(self) -> np.ndarray:
        """Cell width along each dimension."""
        return (self.hi - self.lo) / np.asarray(self.shape)

    @property
    def box_diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    # -- index <-> coordinates ------------------------------------------------

    def wrap(self, points) -> np.ndarray:
        """Wrap periodic coordinates into ``[lo, hi)``."""
        pts = np.array(points, dtype=float, copy=True)
        per = np.asarray(self.periodic)
        if per.any():
            period = self.hi - self.lo
            pts[..., per] = self.lo[per] + np.mod(pts[..., per] - self.lo[per], period[per])
        return pts

    def multi_index(self, idx) -> np.ndarray:
        """Row-major multi-index of each box, shape ``(..., dim)``."""
        idx = np.asarray(idx, dtype=np.int64)
        return np.stack(np.unravel_index(idx, self.shape), axis=-1).astype(np.int64)

    def linear_index(self, multi) -> np.ndarray:
        multi = np.asarray(multi, dtype=np.int64)
        return np.ravel_multi_index(tuple(np.moveaxis(multi, -1, 0)), self.shape).astype(np.int64)

    def boxes_of(self, points) -> np.ndarray:
        """Vectorised :meth:`box_of`; returns ``-1`` for points outside the grid.

        A point on a shared face belongs to the cell with the smaller index.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[-1] != self.dim:
            raise GridError(f"points have dimension {pts.shape[-1]}, grid has {self.dim}")
        pts = self.wrap(pts)
        shape = np.asarray(self.shape)
        with np.errstate(over="ignore", invalid="ignore"):
            rel = np.nan_to_num((pts - self.lo) / self.widths, nan=0.0, posinf=0.0, neginf=0.0)
        cell = np.ceil(np.clip(rel, -1, shape + 1)).astype(np.int64) - 1
        cell = np.maximum(cell, 0)
        outside = np.any((pts < self.lo) | (pts > self.hi) | ~np.isfinite(pts), axis=1)
        cell = np.minimum(cell, shape - 1)
        out = np.where(outside, -1, 0).astype(np.int64)
        ok = ~outside
        if ok.any():
            out[ok] = self.linear_index(cell[ok])
        return out

    def box_of(self, point) -> int | None:
        """Index of the cell containing ``point``, or ``None`` when it is outside."""
        p = np.asarray(point, dtype=float).reshape(-1)
        if p.size != self.dim:
            raise GridError(f"point has dimension {p.size}, grid has {self.dim}")
        i = int(self.boxes_of(p[None, :])[0])
        return None if i < 0 else i

    def check_indices(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_boxes):
            raise GridError(f"box index out of range [0, {self.n_boxes})")
        return idx

    def cell_lows(self, idx) -> np.ndarray:
        idx = self.check_indices(idx)
        return self.lo + self.multi_index(idx) * self.widths

    def centers(self, idx) -> np.ndarray:
        return self.cell_lows(idx) + self.widths / 2

    def cell_bounds(self, idx: int) -> Box:
        lo = self.cell_lows(np.int64(idx))
        return Box(tuple(lo), tuple(lo + self.widths))

    # -- refinement -------------------------------------------------------------

    def subdivide(self, dims: Iterable[int] | None = None) -> "Grid":
        """Grid with one more bisection on each dimension in ``dims`` (all if None)."""
        dims = tuple(range(self.dim)) if dims is None else tuple(sorted(set(int(d) for d in dims)))
        if not dims or any(d < 0 or d >= self.dim for d in dims):
            raise GridError(f"invalid subdivision dimensions {dims}")
        depth = list(self.depth)
        for d in dims:
            depth[d] += 1
        return Grid(self.bounds, tuple(depth), self.periodic)

    def _depth_delta(self, other: "Grid") -> np.ndarray:
        delta = np.asarray(other.depth) - np.asarray(self.depth)
        if other.bounds != self.bounds or np.any(delta < 0):
            raise GridError("grid is not a refinement of this grid")
        return delta

    def children(self, idx, fine: "Grid") -> np.ndarray:
        """Indices in ``fine`` of every child of the given cells (sorted)."""
        delta = self._depth_delta(fine)
        multi = self.multi_index(np.atleast_1d(idx)) << delta
        offs = np.stack(np.meshgrid(*[np.arange(2**k) for k in delta], indexing="ij"), -1).reshape(-1, self.dim)
        kids = (multi[:, None, :] + offs[None, :, :]).reshape(-1, self.dim)
        return np.unique(fine.linear_index(kids))

    def parents(self, fine_idx, fine: "Grid") -> np.ndarray:
        """Index in this grid of the parent of each ``fine`` cell."""
        delta = self._depth_delta(fine)
        return self.linear_index(fine.multi_index(np.asarray(fine_idx)) >> delta)


def split_depth(total: int, dim: int) -> tuple[int, ...]:
    """Spread ``total`` bisections over ``dim`` axes, cycling from axis 0."""
    return tuple(total // dim + (1 if i < total % dim else 0) for i in range(dim))


def cell_gaps(grid: Grid, a_multi: np.ndarray, b_multi: np.ndarray) -> np.ndarray:
    """Per-dimension closed-cell gap (phase-space units) between paired cells."""
    diff = np.abs(a_multi - b_multi)
    shape = np.asarray(grid.shape)
    per = np.asarray(grid.periodic)
    diff = np.where(per, np.minimum(diff, shape - diff), diff)
    return np.maximum(diff - 1, 0) * grid.widths


def set_distance(a, b, grid: Grid, mode: str = "min", chunk: int = 4_000_000) -> float:
    """Distance between two unions of grid cells.

    ``mode="min"`` gives the symmetric minimum distance between closed cells
    (zero when they touch).  ``mode="one_sided"`` gives
    ``max_{cell in a} min_{cell in b}`` distance.
    """
    a = np.unique(grid.check_indices(a))
    b = np.unique(grid.check_indices(b))
    if a.size == 0 or b.size == 0:
        raise GridError("set_distance needs two nonempty box sets")
    if mode not in ("min", "one_sided"):
        raise GridError(f"unknown mode {mode!r}")
    ma, mb = grid.multi_index(a), grid.multi_index(b)
    step = max(1, chunk // mb.shape[0])
    best = np.inf if mode == "min" else 0.0
    for s in range(0, ma.shape[0], step):
        gaps = cell_gaps(grid, ma[s:s + step, None, :], mb[None, :, :])
        dist = np.sqrt(np.sum(gaps**2, axis=-1))
        if mode == "min":
            best = min(best, float(dist.min()))
            if best == 0.0:
                break
        else:
            best = max(best, float(dist.min(axis=1).max()))
    return best


def neighbor_pairs(idx: np.ndarray, grid: Grid, connectivity: str = "face"):
    """Pairs ``(i, j)`` of positions in sorted ``idx`` whose cells are neighbours.

    ``face`` neighbours share a (d-1)-face; ``full`` also counts edges/corners.
    """
    idx = np.asarray(idx, dtype=np.int64)
    multi = grid.multi_index(idx)
    shape = np.asarray(grid.shape)
    per = np.asarray(grid.periodic)
    if connectivity == "face":
        offsets = np.concatenate([np.eye(grid.dim, dtype=np.int64), -np.eye(grid.dim, dtype=np.int64)])
    elif connectivity == "full":
        grids = np.meshgrid(*[[-1, 0, 1]] * grid.dim, indexing="ij")
        offsets = np.stack(grids, -1).reshape(-1, grid.dim)
        offsets = offsets[np.any(offsets != 0, axis=1)]
    else:
        raise GridError(f"unknown connectivity {connectivity!r}")
    src, dst = [], []
    for off in offsets:
        nb = multi + off
        nb = np.where(per, np.mod(nb, shape), nb)
        valid = np.all((nb >= 0) & (nb < shape), axis=1)
        lin = np.full(idx.shape, -1, dtype=np.int64)
        lin[valid] = grid.linear_index(nb[valid])
        pos = np.searchsorted(idx, lin)
        pos = np.minimum(pos, max(idx.size - 1, 0))
        hit = valid & (idx[pos] == lin) & (lin != idx)
        src.append(np.nonzero(hit)[0])
        dst.append(pos[hit])
    return np.concatenate(src), np.concatenate(dst)


def box_components(idx: Sequence[int], grid: Grid, connectivity: str = "face") -> list[np.ndarray]:
    """Split a box set into connected components of touching cells."""
    idx = np.unique(np.asarray(idx, dtype=np.int64))
    if idx.size == 0:
        return []
    src, dst = neighbor_pairs(idx, grid, connectivity)
    adj = coo_matrix((np.ones(src.size), (src, dst)), shape=(idx.size, idx.size)).tocsr()
    n, labels = connected_components(adj, directed=False)
    return [idx[labels == k] for k in range(n)]


def boxes_in_ball(grid: Grid, center, radius: float) -> np.ndarray:
    """All cells whose closed box meets the Euclidean ball."""
    center = np.asarray(center, dtype=float)
    all_idx = np.arange(grid.n_boxes, dtype=np.int64)
    lows = grid.cell_lows(all_idx)
    nearest = np.clip(center, lows, lows + grid.widths)
    return all_idx[np.linalg.norm(nearest - center, axis=1) <= radius]


def dilate(idx, grid: Grid, layers: int = 1) -> np.ndarray:
    """Cells within ``layers`` (Chebyshev, in cells) of the given cells, sorted."""
    idx = np.unique(grid.check_indices(idx))
    if layers <= 0 or idx.size == 0:
        return idx
    multi = grid.multi_index(idx)
    shape = np.asarray(grid.shape)
    per = np.asarray(grid.periodic)
    r = np.arange(-layers, layers + 1)
    offsets = np.stack(np.meshgrid(*[r] * grid.dim, indexing="ij"), -1).reshape(-1, grid.dim)
    out = []
    for off in offsets:
        nb = multi + off
        nb = np.where(per, np.mod(nb, shape), nb)
        ok = np.all((nb >= 0) & (nb < shape), axis=1)
        out.append(grid.linear_index(nb[ok]))
    return np.unique(np.concatenate(out))

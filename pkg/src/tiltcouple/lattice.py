"""Lattice blowups of continuous shapes, discrete balls, annuli and the far region.

Points are integer d-vectors stored as rows of int64 arrays. A `LatticeDomain`
keeps a dense lookup grid over its bounding box so that coordinate to index
translation and neighbour tables are plain array operations.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

# Relative slack on squared radii, so that decimal radii such as 0.3 * 10
# include lattice points lying exactly on the sphere.
TIE_SLACK = 1e-9


class GeometryError(ValueError):
    """Raised when a requested lattice geometry is degenerate or inconsistent."""


class EmptyDomainError(GeometryError):
    pass


def unit_steps(d: int) -> np.ndarray:
    """The 2d nearest-neighbour steps, ordered +e_0, -e_0, +e_1, -e_1, ..."""
    steps = np.zeros((2 * d, d), dtype=np.int64)
    for i in range(d):
        steps[2 * i, i] = 1
        steps[2 * i + 1, i] = -1
    return steps


@dataclass(frozen=True)
class Shape:
    """A compact continuous shape D in R^d together with its anchor point x_0.

    `kind` is "ball", "box" or "predicate". A predicate shape needs `bounds`
    (lower and upper corners of a box containing it) and a vectorised
    membership function acting on real points of shape (n, d).
    """

    kind: str
    center: tuple[float, ...]
    radius: float = 1.0
    half_widths: tuple[float, ...] | None = None
    predicate: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    bounds: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    anchor: tuple[float, ...] | None = None
    name: str = ""

    def __post_init__(self):
        if len(self.center) < 3:
            raise GeometryError(f"dimension must be at least 3, got {len(self.center)}")
        if self.kind == "ball":
            if not self.radius > 0:
                raise GeometryError("ball radius must be positive")
        elif self.kind == "box":
            if self.half_widths is None or len(self.half_widths) != len(self.center):
                raise GeometryError("box needs one half-width per axis")
            if min(self.half_widths) <= 0:
                raise GeometryError("box half-widths must be positive")
        elif self.kind == "predicate":
            if self.predicate is None or self.bounds is None:
                raise GeometryError("predicate shape needs a membership function and bounds")
        else:
            raise GeometryError(f"unknown shape kind {self.kind!r}")
        if not self.contains(np.asarray([self.anchor_point], dtype=float))[0]:
            raise GeometryError("anchor point must lie in the shape")

    @classmethod
    def ball(cls, radius: float = 1.0, d: int = 3, center=None, anchor=None) -> "Shape":
        center = tuple(float(c) for c in (center if center is not None else [0.0] * d))
        return cls("ball", center, radius=float(radius), anchor=anchor,
                   name=f"ball(r={radius:g})")

    @classmethod
    def box(cls, lower, upper, anchor=None) -> "Shape":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        center = tuple((lower + upper) / 2)
        half = tuple((upper - lower) / 2)
        return cls("box", center, half_widths=half, anchor=anchor,
                   name="box(" + ",".join(f"[{a:g},{b:g}]" for a, b in zip(lower, upper)) + ")")

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def anchor_point(self) -> tuple[float, ...]:
        return tuple(self.anchor) if self.anchor is not None else self.center

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Membership of real points (n, d) in D."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        c = np.asarray(self.center)
        if self.kind == "ball":
            r2 = self.radius ** 2
            return ((x - c) ** 2).sum(axis=1) <= r2 * (1 + TIE_SLACK)
        if self.kind == "box":
            h = np.asarray(self.half_widths)
            return (np.abs(x - c) <= h * (1 + TIE_SLACK)).all(axis=1)
        return np.asarray(self.predicate(x), dtype=bool)

    def contains_blowup(self, points: np.ndarray, N: int) -> np.ndarray:
        """Membership of integer points in N*D, exact for balls and boxes."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        c = np.asarray(self.center) * N
        if self.kind == "ball":
            r2 = (self.radius * N) ** 2
            return ((points - c) ** 2).sum(axis=1) <= r2 * (1 + TIE_SLACK)
        if self.kind == "box":
            h = np.asarray(self.half_widths) * N
            return (np.abs(points - c) <= h * (1 + TIE_SLACK)).all(axis=1)
        return np.asarray(self.predicate(points / N), dtype=bool)

    def blowup_bounds(self, N: int) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "ball":
            lo = np.asarray(self.center) - self.radius
            hi = np.asarray(self.center) + self.radius
        elif self.kind == "box":
            lo = np.asarray(self.center) - np.asarray(self.half_widths)
            hi = np.asarray(self.center) + np.asarray(self.half_widths)
        else:
            lo, hi = (np.asarray(b, dtype=float) for b in self.bounds)
        return np.floor(lo * N).astype(np.int64) - 1, np.ceil(hi * N).astype(np.int64) + 1

    def key(self) -> str:
        """Stable short hash identifying the shape (used for cache keys)."""
        if self.kind == "predicate":
            text = f"predicate:{self.name}:{self.bounds}:{self.anchor_point}"
        else:
            text = f"{self.kind}:{self.center}:{self.radius}:{self.half_widths}:{self.anchor_point}"
        return hashlib.sha1(text.encode()).hexdigest()[:12]


def _sorted_unique(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.int64)
    if points.ndim != 2:
        raise GeometryError("points must be a 2-d array of integer vectors")
    if len(points) == 0:
        return points.reshape(0, points.shape[1])
    return np.unique(points, axis=0)


class LatticeDomain:
    """A finite set of lattice points with neighbour table and boundaries.

    Points are sorted lexicographically, so the index map is deterministic.
    `neighbors[i, k]` is the index of points[i] + unit_steps(d)[k], or -1.
    """

    def __init__(self, points: np.ndarray, N: int = 1, d: int | None = None):
        points = np.asarray(points, dtype=np.int64)
        if points.ndim == 1 and d is not None:
            points = points.reshape(-1, d)
        points = _sorted_unique(points)
        if len(points) == 0:
            raise EmptyDomainError("lattice domain is empty")
        self.N = int(N)
        self.points = points
        self.points.setflags(write=False)
        self.d = points.shape[1]
        self._lo = points.min(axis=0) - 1
        shape = tuple(points.max(axis=0) - self._lo + 2)
        self._grid = np.full(shape, -1, dtype=np.int64)
        self._grid[tuple((points - self._lo).T)] = np.arange(len(points))
        steps = unit_steps(self.d)
        nbr = np.empty((len(points), 2 * self.d), dtype=np.int64)
        for k, e in enumerate(steps):
            nbr[:, k] = self._grid[tuple((points + e - self._lo).T)]
        self.neighbors = nbr
        self.neighbors.setflags(write=False)
        self.inner_mask = (nbr < 0).any(axis=1)
        self.inner_mask.setflags(write=False)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def interior_mask(self) -> np.ndarray:
        return ~self.inner_mask

    @property
    def inner_boundary(self) -> np.ndarray:
        return self.points[self.inner_mask]

    @property
    def interior(self) -> np.ndarray:
        return self.points[~self.inner_mask]

    @property
    def exterior_boundary(self) -> np.ndarray:
        steps = unit_steps(self.d)
        rows, cols = np.nonzero(self.neighbors < 0)
        return _sorted_unique(self.points[rows] + steps[cols])

    def index_of(self, coords: np.ndarray) -> np.ndarray:
        """Indices of the given integer points, -1 for points outside the domain."""
        coords = np.atleast_2d(np.asarray(coords, dtype=np.int64))
        rel = coords - self._lo
        inside = ((rel >= 0) & (rel < np.asarray(self._grid.shape))).all(axis=1)
        out = np.full(len(coords), -1, dtype=np.int64)
        out[inside] = self._grid[tuple(rel[inside].T)]
        return out

    def contains(self, coords: np.ndarray) -> np.ndarray:
        return self.index_of(coords) >= 0

    def subdomain(self, mask: np.ndarray) -> "LatticeDomain":
        return LatticeDomain(self.points[np.asarray(mask, dtype=bool)], N=self.N)

    def components(self) -> int:
        """Number of nearest-neighbour connected components."""
        rows, slots = np.nonzero(self.neighbors >= 0)
        adj = sp.csr_matrix((np.ones(len(rows)), (rows, self.neighbors[rows, slots])),
                            shape=(len(self), len(self)))
        return int(connected_components(adj, directed=False)[0])

    def is_connected(self) -> bool:
        return self.components() == 1


def discretize(shape: Shape, N: int) -> LatticeDomain:
    """The blowup (N*D) intersected with Z^d."""
    if N < 1:
        raise GeometryError("blowup factor N must be at least 1")
    lo, hi = shape.blowup_bounds(N)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, shape.d)
    inside = shape.contains_blowup(grid, N)
    if not inside.any():
        raise EmptyDomainError(f"{shape.name or shape.kind} contains no lattice point at N={N}")
    return LatticeDomain(grid[inside], N=N)


def anchor_point(shape: Shape, N: int) -> np.ndarray:
    """x_0^N, the anchor scaled by N and rounded to the lattice."""
    return np.rint(np.asarray(shape.anchor_point) * N).astype(np.int64)


def inner_boundary(points: np.ndarray) -> np.ndarray:
    """{x in K : some nearest neighbour of x lies outside K}."""
    return LatticeDomain(points).inner_boundary


@dataclass(frozen=True)
class BallRegion:
    """Discrete Euclidean ball {y in Z^d : |y - center| <= radius}."""

    center: tuple[int, ...]
    radius: float

    @property
    def d(self) -> int:
        return len(self.center)

    def contains(self, coords: np.ndarray) -> np.ndarray:
        coords = np.atleast_2d(np.asarray(coords, dtype=np.int64))
        diff = coords - np.asarray(self.center, dtype=np.int64)
        return (diff * diff).sum(axis=1) <= self.radius ** 2 * (1 + TIE_SLACK)

    def points(self) -> np.ndarray:
        r = int(np.floor(self.radius * (1 + TIE_SLACK))) if self.radius > 0 else 0
        axes = [np.arange(c - r, c + r + 1) for c in self.center]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)
        return grid[self.contains(grid)]

    def boundary(self) -> np.ndarray:
        return inner_boundary(self.points())


def ball_region(center, radius: float) -> BallRegion:
    if radius < 0:
        raise GeometryError("ball radius must be nonnegative")
    center = np.asarray(center)
    if not np.allclose(center, np.rint(center)):
        raise GeometryError("ball centers are lattice points")
    return BallRegion(tuple(int(c) for c in np.rint(center)), float(radius))


def annulus(center, r: float, R: float) -> np.ndarray:
    """(B(x, R) minus B(x, r)) together with the inner boundary of B(x, r)."""
    if not 0 <= r < R:
        raise GeometryError(f"annulus needs 0 <= r < R, got r={r}, R={R}")
    outer = ball_region(center, R)
    inner = ball_region(center, r)
    pts = outer.points()
    keep = ~inner.contains(pts)
    ring = inner.boundary()
    return _sorted_unique(np.vstack([pts[keep], ring]))


def squared_distances_to_set(x: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Exact integer squared Euclidean distance from each row of x to the set K."""
    x = np.atleast_2d(np.asarray(x, dtype=np.int64))
    K = np.atleast_2d(np.asarray(K, dtype=np.int64))
    if len(K) == 0:
        raise GeometryError("distance to an empty set")
    _, nearest = cKDTree(K).query(x)
    diff = x - K[nearest]
    return (diff * diff).sum(axis=1)


def distance_to_set(x, K: np.ndarray) -> float:
    return float(np.sqrt(squared_distances_to_set(np.asarray(x), K)[0]))


@dataclass(frozen=True)
class DeltaRegion:
    """The far region {x in D_N : d(x, B) > N^gamma} and its restricted boundary."""

    gamma: float
    threshold: float
    mask: np.ndarray
    boundary_mask: np.ndarray
    domain: LatticeDomain = field(repr=False)

    @property
    def points(self) -> np.ndarray:
        return self.domain.points[self.mask]

    @property
    def boundary(self) -> np.ndarray:
        return self.domain.points[self.boundary_mask]


def delta_region(domain: LatticeDomain, B: BallRegion, gamma: float) -> DeltaRegion:
    """Delta = points of D_N farther than N^gamma from B.

    Its boundary only keeps points with a neighbour in D_N outside Delta, so
    points touching the exterior of D_N alone are excluded.
    """
    if not 0 < gamma < 1:
        raise GeometryError(f"gamma must lie in (0, 1), got {gamma}")
    ball_pts = B.points()
    if not domain.contains(ball_pts).all():
        raise GeometryError("the ball B must be contained in the domain")
    threshold = float(domain.N) ** gamma
    d2 = squared_distances_to_set(domain.points, ball_pts)
    mask = d2 > threshold ** 2 * (1 + TIE_SLACK)
    if not mask.any():
        raise GeometryError(f"empty far region: N^gamma = {threshold:.3g} exceeds the domain extent")
    nbr = domain.neighbors
    inside_not_far = (nbr >= 0) & ~mask[np.where(nbr >= 0, nbr, 0)]
    boundary_mask = mask & inside_not_far.any(axis=1)
    if not boundary_mask.any():
        raise GeometryError("far region has an empty boundary")
    mask.setflags(write=False)
    boundary_mask.setflags(write=False)
    return DeltaRegion(gamma, threshold, mask, boundary_mask, domain)

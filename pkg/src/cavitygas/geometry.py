"""Cavity geometries: grid masks for the quantum solvers, exact boundaries for ray tracing.

Supported kinds:

* ``rectangle``   -- integrable control, analytic eigenbasis.
* ``stadium``     -- desymmetrized (quarter) Bunimovich stadium: rectangle
                     [0,a]x[0,b] plus a quarter disk of radius ``radius``
                     centered at (a, 0).  The full stadium has two mirror
                     symmetries whose sectors superpose to non-universal level
                     statistics; the quarter domain is a single sector.
* ``sinai``       -- desymmetrized Sinai billiard: rectangle [0,a]x[0,b] minus
                     a quarter disk of radius ``radius`` centered at the origin
                     corner.  Incommensurate a, b avoid the diagonal symmetry.
* ``anderson_chain`` -- 1D disordered tight-binding chain (no continuum geometry).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .constants import PhysicalConstants

KINDS = ("rectangle", "stadium", "sinai", "anderson_chain")


@dataclass(frozen=True)
class CavitySpec:
    kind: str
    dimension: int
    lengths: tuple[float, ...]
    grid: tuple[int, ...]
    radius: float | None = None          # stadium endcap / sinai scatterer
    disorder_strength: float = 0.0       # anderson_chain only
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown cavity kind {self.kind!r}")
        object.__setattr__(self, "lengths", tuple(float(L) for L in self.lengths))
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        if any(L <= 0 for L in self.lengths):
            raise ValueError("all lengths must be positive")
        if any(g < 16 for g in self.grid):
            raise ValueError("need at least 16 grid points per axis")
        if self.kind == "anderson_chain":
            if self.dimension != 1:
                raise ValueError("anderson_chain is one-dimensional")
            if self.disorder_strength <= 0:
                raise ValueError("anderson_chain needs disorder_strength > 0")
        elif self.kind in ("stadium", "sinai"):
            if self.dimension != 2:
                raise ValueError(f"{self.kind} requires dimension 2")
        if len(self.lengths) != self.dimension or len(self.grid) != self.dimension:
            raise ValueError("lengths/grid must have one entry per dimension")
        if self.radius is not None and self.radius < 0:
            raise ValueError("radius must be non-negative")

    @property
    def effective_radius(self) -> float:
        """Default scatterer/endcap radius when not given explicitly."""
        if self.kind == "stadium":
            return self.lengths[1] if self.radius is None else self.radius
        if self.kind == "sinai":
            return 0.6 * min(self.lengths) if self.radius is None else self.radius
        return 0.0

    def content_hash(self, constants: PhysicalConstants) -> str:
        doc = {
            "kind": self.kind,
            "dimension": self.dimension,
            "lengths": [repr(L) for L in self.lengths],
            "grid": list(self.grid),
            "radius": repr(self.effective_radius),
            "disorder_strength": repr(self.disorder_strength),
            "rng_seed": self.rng_seed,
            "hbar": repr(constants.hbar),
            "mass": repr(constants.mass),
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def bounding_box(spec: CavitySpec) -> tuple[float, ...]:
    """Extent of the rectangular grid that encloses the cavity."""
    if spec.kind == "stadium":
        a, b = spec.lengths
        return (a + spec.effective_radius, b)
    return spec.lengths


def interior_mask(spec: CavitySpec) -> tuple[np.ndarray, tuple[float, ...]]:
    """Boolean mask of interior grid points and the per-axis spacings.

    Points sit at (j+1)*h along each axis, i.e. the interior nodes of a
    Dirichlet discretization; the boundary itself carries no unknowns.
    """
    box = bounding_box(spec)
    h = tuple(box[i] / (spec.grid[i] + 1) for i in range(spec.dimension))
    if spec.dimension == 1:
        return np.ones(spec.grid[0], dtype=bool), h
    x = (np.arange(spec.grid[0]) + 1) * h[0]
    y = (np.arange(spec.grid[1]) + 1) * h[1]
    X, Y = np.meshgrid(x, y, indexing="ij")
    if spec.kind == "rectangle":
        mask = np.ones(spec.grid, dtype=bool)
    elif spec.kind == "stadium":
        a, b = spec.lengths
        r = spec.effective_radius
        mask = X <= a
        if r > 0:
            mask |= (X - a) ** 2 + Y ** 2 <= r ** 2
        mask &= Y <= b
    elif spec.kind == "sinai":
        R = spec.effective_radius
        if R >= min(spec.lengths):
            raise ValueError("sinai scatterer radius must be smaller than both sides")
        mask = X ** 2 + Y ** 2 >= R ** 2
    else:
        raise ValueError(f"no grid mask for kind {spec.kind!r}")
    if not mask.any():
        raise ValueError("geometry has zero interior cells")
    return mask, h


def cavity_volume(spec: CavitySpec) -> float:
    """Geometric volume (length/area) of the cavity."""
    if spec.kind == "rectangle":
        return math.prod(spec.lengths)
    if spec.kind == "stadium":
        a, b = spec.lengths
        r = spec.effective_radius
        return a * b + math.pi * r * r / 4.0
    if spec.kind == "sinai":
        a, b = spec.lengths
        R = spec.effective_radius
        return a * b - math.pi * R * R / 4.0
    if spec.kind == "anderson_chain":
        return float(spec.grid[0])
    raise ValueError(spec.kind)


# ---------------------------------------------------------------------------
# Exact boundary description for classical ray tracing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    p0: tuple[float, float]
    p1: tuple[float, float]

    def direction(self):
        dx = self.p1[0] - self.p0[0]
        dy = self.p1[1] - self.p0[1]
        n = math.hypot(dx, dy)
        return dx / n, dy / n

    @property
    def length(self):
        return math.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1])


@dataclass(frozen=True)
class Arc:
    center: tuple[float, float]
    radius: float
    theta0: float   # start angle, radians
    theta1: float   # end angle; interior lies on the concave or convex side

    def contains_angle(self, theta: float, tol: float = 1e-12) -> bool:
        lo, hi = self.theta0, self.theta1
        t = (theta - lo) % (2 * math.pi)
        span = (hi - lo) % (2 * math.pi)
        if span == 0.0:
            span = 2 * math.pi
        return t <= span + tol


@dataclass(frozen=True)
class BilliardGeometry:
    kind: str
    lengths: tuple[float, float]
    radius: float
    walls: tuple = field(default_factory=tuple)

    @property
    def size(self) -> float:
        return max(self.lengths)

    def contains(self, x: float, y: float) -> bool:
        a, b = self.lengths
        if self.kind == "rectangle":
            return 0 < x < a and 0 < y < b
        if self.kind == "stadium":
            if not (0 < y < b) or x <= 0:
                return False
            if x < a:
                return True
            return self.radius > 0 and (x - a) ** 2 + y ** 2 < self.radius ** 2
        if self.kind == "sinai":
            return 0 < x < a and 0 < y < b and x * x + y * y > self.radius ** 2
        raise ValueError(self.kind)


def billiard_geometry(spec: CavitySpec) -> BilliardGeometry:
    """Boundary walls (segments and arcs) for the classical billiard."""
    if spec.kind == "rectangle":
        a, b = spec.lengths
        walls = (
            Segment((0.0, 0.0), (a, 0.0)),
            Segment((a, 0.0), (a, b)),
            Segment((a, b), (0.0, b)),
            Segment((0.0, b), (0.0, 0.0)),
        )
        return BilliardGeometry("rectangle", (a, b), 0.0, walls)
    if spec.kind == "stadium":
        a, b = spec.lengths
        r = spec.effective_radius
        walls = [
            Segment((0.0, 0.0), (a + r, 0.0)),
            Segment((0.0, b), (0.0, 0.0)),
            Segment((a, b), (0.0, b)),
        ]
        if r > 0:
            walls.append(Arc((a, 0.0), r, 0.0, math.pi / 2))
            if r < b:
                walls.append(Segment((a, r), (a, b)))
        else:
            walls.append(Segment((a, 0.0), (a, b)))
        return BilliardGeometry("stadium", (a, b), r, tuple(walls))
    if spec.kind == "sinai":
        a, b = spec.lengths
        R = spec.effective_radius
        walls = (
            Segment((R, 0.0), (a, 0.0)),
            Segment((a, 0.0), (a, b)),
            Segment((a, b), (0.0, b)),
            Segment((0.0, b), (0.0, R)),
            Arc((0.0, 0.0), R, 0.0, math.pi / 2),
        )
        return BilliardGeometry("sinai", (a, b), R, walls)
    raise ValueError(f"no billiard geometry for kind {spec.kind!r}")

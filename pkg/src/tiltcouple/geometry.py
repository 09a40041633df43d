"""The coupling geometry for one blowup factor N: D_N, B, B^eps, the far region and the tilt.

All radii follow the convention B^r = B(x_0^N, r N) in units of N, so B = B^0
has radius alpha N and B^eps has radius (alpha + eps) N.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import BallRegion, DeltaRegion, GeometryError, Shape, ball_region, delta_region, unit_steps
from .spectrum import EigenPair, eigenpair_for
from .walks import TiltingField, WalkKernel, build_tilting_field, phi_kernel, psi_kernel


@dataclass(frozen=True)
class CouplingGeometry:
    shape: Shape = field(repr=False)
    N: int
    alpha: float
    eps: float
    gamma: float
    escape_multiplier: float
    pair: EigenPair = field(repr=False)
    B: BallRegion
    B_eps: BallRegion
    G: BallRegion
    delta: DeltaRegion = field(repr=False)
    tilt: TiltingField = field(repr=False)
    phi_walk: WalkKernel = field(repr=False)
    psi_walk: WalkKernel = field(repr=False)

    @property
    def d(self) -> int:
        return self.pair.d

    @property
    def center(self) -> tuple[int, ...]:
        return self.B.center

    @property
    def domain(self):
        return self.pair.domain

    def in_B(self, pts: np.ndarray) -> np.ndarray:
        return self.B.contains(pts)

    def in_delta(self, pts: np.ndarray) -> np.ndarray:
        idx = self.domain.index_of(pts)
        return np.where(idx >= 0, self.delta.mask[np.where(idx >= 0, idx, 0)], False)

    @property
    def B_mask(self) -> np.ndarray:
        """B as a mask over D_N."""
        return self.B.contains(self.domain.points)

    @property
    def B_boundary(self) -> np.ndarray:
        return self.B.boundary()

    @property
    def delta_boundary(self) -> np.ndarray:
        return self.delta.boundary


def build_geometry(shape: Shape, N: int, alpha: float, eps: float, gamma: float,
                   escape_multiplier: float = 3.0, tol: float = 1e-12,
                   cache_dir=None, pair: EigenPair | None = None) -> CouplingGeometry:
    """Assemble and validate the geometry.

    Excursions from B to the far region must never see the seam of the tilt:
    the complement of the far region, together with its neighbours, has to lie
    in B^eps, where Psi_N = phi_N. Otherwise a `GeometryError` is raised.
    """
    if not (alpha > 0 and eps > 0):
        raise GeometryError("alpha and eps must be positive")
    if pair is None:
        pair = eigenpair_for(shape, N, tol=tol, cache_dir=cache_dir)
    center = pair.anchor
    B = ball_region(center, alpha * N)
    B_eps = ball_region(center, (alpha + eps) * N)
    G = ball_region(center, alpha * N / 2)
    domain = pair.domain
    if not domain.contains(B_eps.points()).all():
        raise GeometryError("B^eps must lie inside D_N")
    if not domain.contains((B_eps.points() + unit_steps(domain.d)[:, None, :]).reshape(-1, domain.d)).all():
        raise GeometryError("B^eps must be at positive lattice distance from the exterior of D_N")
    delta = delta_region(domain, B, gamma)
    near = domain.points[~delta.mask]
    reach = np.vstack([near] + [near + e for e in unit_steps(domain.d)])
    if not B_eps.contains(reach).all():
        raise GeometryError(
            f"the region within N^gamma = {delta.threshold:.3g} of B reaches outside B^eps; "
            "lower gamma or raise eps")
    tilt = build_tilting_field(pair, B_eps, escape_multiplier * (alpha + eps) * N)
    return CouplingGeometry(shape, N, alpha, eps, gamma, escape_multiplier, pair, B, B_eps, G,
                            delta, tilt, phi_kernel(pair), psi_kernel(tilt))

"""Constructive verification of descent-map contraction conditions.

Everything here is finite-sample evidence on a deterministic grid, not
a proof: we estimate anchored Lipschitz constants, check strict local
monotonicity, build the 1-D gain ``sign(h') * (2/K - eps)``, evaluate
the Frobenius-norm sufficient bound, and certify contraction ratios
sample by sample.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Array, DescentStep, SmoothMap, as_vector, dm_update
from .errors import DegenerateNeighborhoodError, DimensionMismatchError, NotMonotoneError

# Total sample budget for multi-dimensional lattices; beyond the largest
# lattice that fits, the remainder is filled with seeded uniform draws.
LATTICE_CAP = 100_000

# Ties count as violations in strict monotonicity checks.
STRICT_TOL = 1e-12


@dataclass(frozen=True)
class Neighborhood:
    """A sampled Euclidean ball around an anchor point.

    `grid_per_dim` controls the per-axis resolution of the regular
    lattice (>= 3 so the anchor and both extremes appear in 1-D).
    """

    anchor: Array
    radius: float
    grid_per_dim: int = 1001

    def __post_init__(self):
        object.__setattr__(self, "anchor", as_vector(self.anchor, "anchor"))
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise DegenerateNeighborhoodError(
                f"neighborhood radius must be finite and positive, got {self.radius}"
            )
        if self.grid_per_dim < 3:
            raise ValueError("grid_per_dim must be >= 3")

    @property
    def dim(self) -> int:
        return self.anchor.size


def neighborhood_points(nbhd: Neighborhood, seed: int = 0) -> Array:
    """Deterministic sample of the ball, shape (N, p), anchor included.

    1-D uses the full regular grid. In higher dimensions a regular
    lattice is intersected with the ball; if the requested lattice would
    exceed the sample cap, the per-axis count is reduced and the budget
    is topped up with seeded uniform draws from the ball.
    """
    p = nbhd.dim
    a, r = nbhd.anchor, nbhd.radius
    if p == 1:
        return np.linspace(a[0] - r, a[0] + r, nbhd.grid_per_dim).reshape(-1, 1)

    requested = nbhd.grid_per_dim**p
    g = nbhd.grid_per_dim
    if requested > LATTICE_CAP:
        g = max(3, int(LATTICE_CAP ** (1.0 / p)))
    axes = [np.linspace(a[i] - r, a[i] + r, g) for i in range(p)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    inside = np.linalg.norm(pts - a, axis=1) <= r * (1 + 1e-12)
    pts = pts[inside]

    budget = min(requested, LATTICE_CAP)
    if pts.shape[0] < budget:
        rng = np.random.default_rng(seed)
        extra = []
        needed = budget - pts.shape[0]
        while len(extra) < needed:
            cand = a + rng.uniform(-r, r, size=p)
            if np.linalg.norm(cand - a) <= r:
                extra.append(cand)
        pts = np.vstack([pts, np.array(extra)])
    return pts


@dataclass(frozen=True)
class ContractionCertificate:
    """Finite-sample contraction evidence: the max observed ratio
    ||x* - x'|| / ||x* - x|| over all checked samples."""

    contraction_factor: float
    samples_checked: int
    worst_point: Array

    @property
    def valid(self) -> bool:
        return self.contraction_factor < 1.0


def _anchored_values(map: SmoothMap, nbhd: Neighborhood, seed: int = 0):
    """Grid points away from the anchor with their map values."""
    if map.param_dim != nbhd.dim:
        raise DimensionMismatchError("param", expected=map.param_dim, got=nbhd.dim)
    pts = neighborhood_points(nbhd, seed=seed)
    dist = np.linalg.norm(pts - nbhd.anchor, axis=1)
    # drop the anchor itself plus float-rounding ghosts of it, whose
    # difference quotients are pure cancellation noise
    keep = dist > 1e-12 * nbhd.radius
    pts, dist = pts[keep], dist[keep]
    if pts.shape[0] == 0:
        raise DegenerateNeighborhoodError("all sampled points coincide with the anchor")
    h0 = map.evaluate(nbhd.anchor)
    hv = np.array([map.evaluate(x) for x in pts])
    return pts, dist, hv, h0


def lipschitz_anchored(map: SmoothMap, nbhd: Neighborhood, seed: int = 0) -> float:
    """Anchored Lipschitz estimate: max ||h(x)-h(x*)|| / ||x-x*|| on the grid."""
    _, dist, hv, h0 = _anchored_values(map, nbhd, seed=seed)
    ratios = np.linalg.norm(hv - h0, axis=1) / dist
    return float(np.max(ratios))


def monotone_anchored_1d(map: SmoothMap, nbhd: Neighborhood) -> int | None:
    """Sign of (h(x)-h(x*))*(x-x*) over the grid: +1, -1, or None if mixed."""
    if map.param_dim != 1 or map.feature_dim != 1:
        raise ValueError("monotone_anchored_1d requires p = m = 1")
    pts, _, hv, h0 = _anchored_values(map, nbhd)
    prod = (hv[:, 0] - h0[0]) * (pts[:, 0] - nbhd.anchor[0])
    if np.all(prod > STRICT_TOL):
        return 1
    if np.all(prod < -STRICT_TOL):
        return -1
    return None


def generic_dm_1d(map: SmoothMap, nbhd: Neighborhood, epsilon: float | None = None) -> float:
    """Scalar gain ``sign * (2/K - epsilon)`` for a 1-D monotone map.

    `epsilon` defaults to 1% of the 2/K budget. Values at or above 2/K
    would flip the bound and are rejected.
    """
    sign = monotone_anchored_1d(map, nbhd)
    if sign is None:
        raise NotMonotoneError(f"map {map.name or '<anonymous>'} is not monotone on the grid")
    K = lipschitz_anchored(map, nbhd)
    budget = 2.0 / K
    if epsilon is None:
        epsilon = 0.01 * budget
    if not (0 < epsilon < budget):
        raise ValueError(f"epsilon must lie in (0, 2/K) = (0, {budget:.6g}), got {epsilon}")
    return sign * (budget - epsilon)


def monotone_operator_check(map: SmoothMap, gain, nbhd: Neighborhood, seed: int = 0) -> bool:
    """True iff x -> gain @ h(x) is strictly monotone anchored at the anchor.

    Checks <x - x*, R h(x) - R h(x*)> > 0 at every grid sample; ties
    within STRICT_TOL count as violations.
    """
    gain = np.asarray(gain, dtype=float)
    if gain.shape != (nbhd.dim, map.feature_dim):
        raise ValueError(f"gain must be {(nbhd.dim, map.feature_dim)}, got {gain.shape}")
    pts, _, hv, h0 = _anchored_values(map, nbhd, seed=seed)
    inner = np.einsum("ij,ij->i", pts - nbhd.anchor, (hv - h0) @ gain.T)
    return bool(np.all(inner > STRICT_TOL))


def frobenius_dm_bound(
    map: SmoothMap, gain, nbhd: Neighborhood, seed: int = 0
) -> tuple[float, bool]:
    """Sufficient-condition bound ``(2/K) * min_i cos(theta_i)``.

    theta_i is the angle between (x* - x_i) and gain @ (h(x*) - h(x_i)).
    Returns the bound and whether ||gain||_F lies strictly below it.
    Requires the monotone-operator condition (otherwise some cosine is
    not positive and the bound is meaningless).
    """
    gain = np.asarray(gain, dtype=float)
    if not monotone_operator_check(map, gain, nbhd, seed=seed):
        raise NotMonotoneError("gain @ h is not a strictly monotone operator on the grid")
    pts, dist, hv, h0 = _anchored_values(map, nbhd, seed=seed)
    dx = nbhd.anchor - pts
    rdh = (h0 - hv) @ gain.T
    rdh_norm = np.linalg.norm(rdh, axis=1)
    cos = np.einsum("ij,ij->i", dx, rdh) / (dist * rdh_norm)
    K = np.max(np.linalg.norm(hv - h0, axis=1) / dist)
    bound = (2.0 / K) * float(np.min(cos))
    fro = float(np.linalg.norm(gain, ord="fro"))
    return bound, fro < bound


def contraction_certify(
    map: SmoothMap,
    step: DescentStep,
    nbhd: Neighborhood,
    y=None,
    seed: int = 0,
) -> ContractionCertificate:
    """Apply one update at every grid sample and record the worst ratio.

    `y` must equal the map value at the anchor; it defaults to exactly
    that. An invalid certificate (factor >= 1) is a normal return.
    """
    if y is None:
        y = map.evaluate(nbhd.anchor)
    pts, dist, hv, _ = _anchored_values(map, nbhd)
    y = as_vector(y, "y", dim=map.feature_dim)
    # row i equals dm_update(pts[i], step, hv[i], y)
    nxt = pts - (hv - y) @ step.gain.T
    ratios = np.linalg.norm(nbhd.anchor - nxt, axis=1) / dist
    worst = int(np.argmax(ratios))
    return ContractionCertificate(
        contraction_factor=float(ratios[worst]),
        samples_checked=int(pts.shape[0]),
        worst_point=as_vector(pts[worst], "worst_point"),
    )


def monotone_1d_registry(grid_per_dim: int = 1001):
    """Named 1-D monotone maps with anchors used by the certificate suite."""

    def _map(name, f):
        return SmoothMap(1, 1, lambda x, f=f: np.array([f(x[0])]), name=name)

    entries = [
        ("linear", _map("linear", lambda t: 2.0 * t), 0.0, 1.0),
        ("cube", _map("cube", lambda t: t**3), 1.0, 0.5),
        ("exp", _map("exp", math.exp), 0.0, 1.0),
        ("erf", _map("erf", math.erf), 0.0, 2.0),
    ]
    return [
        (name, m, Neighborhood(np.array([anchor]), radius, grid_per_dim))
        for name, m, anchor, radius in entries
    ]


def random_operator_suite(seed: int = 0, count: int = 10):
    """Seeded random 2-D/3-D maps with gains scaled under the Frobenius bound.

    Alternates well-conditioned linear maps and mildly nonlinear
    perturbations of them; the gain is a positive multiple of A^T, which
    keeps the monotone-operator condition, then rescaled to 90% of the
    computed bound (positive rescaling leaves the angles unchanged).
    """
    rng = np.random.default_rng(seed)
    suite = []
    for i in range(count):
        p = 2 if i % 2 == 0 else 3
        # well-conditioned SPD factor: eigenvalues in [1, 2]
        Q, _ = np.linalg.qr(rng.normal(size=(p, p)))
        eigs = rng.uniform(1.0, 2.0, size=p)
        A = Q @ np.diag(eigs) @ Q.T
        anchor = rng.uniform(-0.5, 0.5, size=p)
        nonlinear = i % 3 == 2

        def fn(x, A=A, anchor=anchor, nonlinear=nonlinear):
            out = A @ x
            if nonlinear:
                out = out + 0.05 * np.sin(x - anchor)
            return out

        m = SmoothMap(p, p, fn, name=f"random-{i}{'-nl' if nonlinear else ''}")
        nbhd = Neighborhood(anchor, 0.5, grid_per_dim=41 if p == 2 else 21)
        gain0 = A.T
        bound, _ = frobenius_dm_bound(m, gain0, nbhd)
        gain = gain0 * (0.9 * bound / np.linalg.norm(gain0, ord="fro"))
        suite.append((m.name, m, gain, nbhd))
    return suite

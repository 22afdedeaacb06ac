"""Empirical measures and exact Wasserstein distances.

Distances between equal-size uniform empirical measures reduce to an
assignment problem, solved exactly.  1D measures (any sizes, any weights)
use the monotone quantile coupling, which is optimal for costs |x-y|^p
with p >= 1.  Distances to a Dirac mass have a closed form at any size.

Families of measures ("ensembles") get the nested distance: the same
assignment construction one level up, with the inner distance as ground
cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

MAX_ASSIGNMENT_SIZE = 512
MAX_ENSEMBLE_SIZE = 256


class MeasureError(ValueError):
    """Invalid measure data or incompatible operands."""


class CapacityError(MeasureError):
    """Problem size exceeds the exact-solver cap; subsample first."""


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted point cloud in R^d.

    points: (n, d) array; weights: (n,) nonnegative, summing to 1.
    """

    points: np.ndarray
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise MeasureError("points must be a nonempty (n, d) array")
        if not np.all(np.isfinite(pts)):
            raise MeasureError("points must be finite")
        object.__setattr__(self, "points", pts)
        n = pts.shape[0]
        if self.weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (n,):
                raise MeasureError("weights must have shape (n,)")
            if np.any(w < 0):
                raise MeasureError("weights must be nonnegative")
            if abs(w.sum() - 1.0) > 1e-12:
                raise MeasureError("weights must sum to 1 (within 1e-12)")
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def uniform(self) -> bool:
        return bool(np.allclose(self.weights, 1.0 / self.n, atol=1e-12))

    def mean(self) -> np.ndarray:
        return self.weights @ self.points


@dataclass(frozen=True)
class MeasureEnsemble:
    """Finite family of empirical measures with outer weights."""

    members: tuple
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        members = tuple(self.members)
        if len(members) < 1:
            raise MeasureError("ensemble must have at least one member")
        for m in members:
            if not isinstance(m, EmpiricalMeasure):
                raise MeasureError("ensemble members must be EmpiricalMeasure")
        object.__setattr__(self, "members", members)
        M = len(members)
        if self.weights is None:
            w = np.full(M, 1.0 / M)
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (M,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise MeasureError("bad ensemble weights")
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class CouplePoint:
    """A (measure, family-of-measures) couple: one point of the product space."""

    law: EmpiricalMeasure
    meta_law: MeasureEnsemble


def dirac(x) -> EmpiricalMeasure:
    """Point mass at x."""
    return EmpiricalMeasure(np.atleast_2d(np.asarray(x, dtype=float)))


def assignment_solve(cost: np.ndarray):
    """Exact minimum-cost assignment on a square cost matrix.

    Returns (permutation sigma, total cost) with sigma minimizing
    sum_i cost[i, sigma[i]].
    """
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise MeasureError("cost matrix must be square")
    if not np.all(np.isfinite(c)):
        raise MeasureError("cost matrix must be finite")
    n = c.shape[0]
    if n > MAX_ASSIGNMENT_SIZE:
        raise CapacityError(
            f"assignment size {n} exceeds cap {MAX_ASSIGNMENT_SIZE}; subsample first"
        )
    rows, cols = linear_sum_assignment(c)
    perm = np.empty(n, dtype=int)
    perm[rows] = cols
    return perm, float(c[rows, cols].sum())


def _quantile_cost_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float) -> float:
    """Integral of |F_mu^{-1} - F_nu^{-1}|^p over (0,1), via merged breakpoints."""
    xs = mu.points[:, 0]
    ys = nu.points[:, 0]
    ix = np.argsort(xs, kind="stable")
    iy = np.argsort(ys, kind="stable")
    xs, wx = xs[ix], mu.weights[ix]
    ys, wy = ys[iy], nu.weights[iy]
    cx = np.cumsum(wx)
    cy = np.cumsum(wy)
    # the cumsum of ~1/n weights can overshoot 1 by a few ulp, which would
    # drop the final slab below; weights are validated to sum to 1, so pin it
    cx[-1] = 1.0
    cy[-1] = 1.0
    # merged CDF levels; on each slab both quantile functions are constant
    levels = np.union1d(np.minimum(cx, 1.0), np.minimum(cy, 1.0))
    qx = xs[np.minimum(np.searchsorted(cx, levels - 1e-15), len(xs) - 1)]
    qy = ys[np.minimum(np.searchsorted(cy, levels - 1e-15), len(ys) - 1)]
    widths = np.diff(np.concatenate(([0.0], levels)))
    return float(np.sum(widths * np.abs(qx - qy) ** p))


def wasserstein_to_dirac(mu: EmpiricalMeasure, x0, p: float) -> float:
    """W_p between mu and a point mass at x0 (closed form)."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape[0] != mu.dim:
        raise MeasureError(f"dimension mismatch: measure is {mu.dim}-d, point is {x0.shape[0]}-d")
    r = np.linalg.norm(mu.points - x0, axis=1)
    return float((mu.weights @ r**p) ** (1.0 / p))


def _canon_key(mu: EmpiricalMeasure):
    return (mu.points.tobytes(), mu.weights.tobytes())


def wasserstein_p(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float) -> float:
    """Exact W_p between empirical measures.

    1D: quantile coupling, any sizes and weights.  d >= 2: exact assignment,
    requiring equal sizes, uniform weights, and n <= MAX_ASSIGNMENT_SIZE.
    Single-point operands route through the Dirac closed form.
    """
    if p < 1:
        raise MeasureError("order p must be >= 1")
    if mu.dim != nu.dim:
        raise MeasureError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if nu.n == 1:
        return wasserstein_to_dirac(mu, nu.points[0], p)
    if mu.n == 1:
        return wasserstein_to_dirac(nu, mu.points[0], p)
    if mu.dim == 1:
        return _quantile_cost_1d(mu, nu, p) ** (1.0 / p)
    if mu.n != nu.n:
        raise MeasureError(
            "multi-dimensional exact mode requires equal sample sizes "
            f"(got {mu.n} and {nu.n}); subsample to match"
        )
    if not (mu.uniform and nu.uniform):
        raise MeasureError("multi-dimensional exact mode requires uniform weights")
    # canonical operand order: the assignment total is a float sum whose
    # rounding depends on the cost-matrix orientation, so fix it to make
    # the metric exactly symmetric
    if _canon_key(nu) < _canon_key(mu):
        mu, nu = nu, mu
    n = mu.n
    if n > MAX_ASSIGNMENT_SIZE:
        raise CapacityError(
            f"sample size {n} exceeds cap {MAX_ASSIGNMENT_SIZE}; subsample first"
        )
    diff = mu.points[:, None, :] - nu.points[None, :, :]
    cost = np.linalg.norm(diff, axis=2) ** p
    _, total = assignment_solve(cost)
    return float((total / n) ** (1.0 / p))


def nested_wasserstein(A: MeasureEnsemble, B: MeasureEnsemble, p: float) -> float:
    """Nested distance between families of measures (assignment over members)."""
    if A.size != B.size:
        raise MeasureError(f"ensembles must have equal size (got {A.size} and {B.size})")
    M = A.size
    if M > MAX_ENSEMBLE_SIZE:
        raise CapacityError(f"ensemble size {M} exceeds cap {MAX_ENSEMBLE_SIZE}")
    if M == 1:
        return wasserstein_p(A.members[0], B.members[0], p)
    if tuple(map(_canon_key, B.members)) < tuple(map(_canon_key, A.members)):
        A, B = B, A
    cost = np.empty((M, M))
    for i, a in enumerate(A.members):
        for j, b in enumerate(B.members):
            cost[i, j] = wasserstein_p(a, b, p) ** p
    _, total = assignment_solve(cost)
    return float((total / M) ** (1.0 / p))


def product_distance(P: CouplePoint, Q: CouplePoint, p: float) -> float:
    """Sum of the measure-level and family-level distances."""
    return wasserstein_p(P.law, Q.law, p) + nested_wasserstein(P.meta_law, Q.meta_law, p)


def save_measure_csv(path, mu: EmpiricalMeasure, include_weights: bool = False):
    """One row per point, columns x1..xd (+ optional weight)."""
    d = mu.dim
    header = ",".join(f"x{j + 1}" for j in range(d))
    cols = [mu.points]
    if include_weights:
        header += ",weight"
        cols.append(mu.weights[:, None])
    data = np.hstack(cols)
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def load_measure_csv(path) -> EmpiricalMeasure:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    names = [h.strip() for h in header]
    xcols = [i for i, h in enumerate(names) if h.startswith("x")]
    if not xcols:
        raise MeasureError(f"no coordinate columns (x1..xd) in {path}: {names}")
    weights = None
    if "weight" in names:
        weights = data[:, names.index("weight")]
        weights = weights / weights.sum()
    return EmpiricalMeasure(data[:, xcols], weights)


def save_ensemble_csv(path, ens: MeasureEnsemble):
    """Leading block_id column, then x1..xd."""
    d = ens.members[0].dim
    header = "block_id," + ",".join(f"x{j + 1}" for j in range(d))
    rows = []
    for b, m in enumerate(ens.members):
        rows.append(np.hstack([np.full((m.n, 1), b), m.points]))
    np.savetxt(path, np.vstack(rows), delimiter=",", header=header, comments="", fmt="%.17g")


def load_ensemble_csv(path) -> MeasureEnsemble:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    names = [h.strip() for h in header]
    if "block_id" not in names:
        raise MeasureError(f"no block_id column in {path}")
    bcol = names.index("block_id")
    xcols = [i for i, h in enumerate(names) if h.startswith("x")]
    ids = data[:, bcol].astype(int)
    members = [EmpiricalMeasure(data[ids == b][:, xcols]) for b in np.unique(ids)]
    return MeasureEnsemble(tuple(members))

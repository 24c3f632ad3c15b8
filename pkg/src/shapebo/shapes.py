"""Componentwise shape constraints and their derivative-sign encodings.

A constraint on dimension ``j`` restricts the objective as a function of
``x_j`` with the other coordinates held fixed.  Monotonicity pins the sign of
the first partial, convexity/concavity the sign of the second, and
quasiconvexity ("U-shaped") allows the first partial one sign change from
negative to positive.  Sign constraints are enforced at a scattered grid (a
maximin Latin hypercube plus the observed inputs).  Quasiconvex constraints
are enforced along axis-aligned grid lines, one changepoint pattern per line:
each line fixes the remaining coordinates at an anchor value and sweeps the
constrained one, mirroring the component functions the constraint is about.
In one dimension the single line contains the whole grid, so the pattern is
checked across all enforcement points.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from shapebo.design import maximin_lhs
from shapebo.kernel import DerivRequest

__all__ = [
    "Shape",
    "ConstraintSpec",
    "SignBound",
    "build_derivative_requests",
    "quasiconvex_pattern_ok",
]

#: Derivative values this close to zero are sign-compatible with both sides of
#: a quasiconvex changepoint, avoiding measure-zero rejection artifacts.
ZERO_TOL = 1e-12

#: Target number of enforcement points per grid line for quasiconvex dims.
POINTS_PER_LINE = 25


class Shape(enum.Enum):
    """Per-dimension shape declarations."""

    NONE = "none"
    MONOTONE_INCREASING = "monotone-increasing"
    MONOTONE_DECREASING = "monotone-decreasing"
    CONVEX = "convex"
    CONCAVE = "concave"
    QUASICONVEX = "quasiconvex"

    @classmethod
    def from_name(cls, name):
        if isinstance(name, Shape):
            return name
        if name is None:
            return cls.NONE
        key = str(name).strip().lower().replace("_", "-")
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown shape constraint {name!r}; valid: "
                         + ", ".join(m.value for m in cls))

    @property
    def order(self):
        if self in (Shape.MONOTONE_INCREASING, Shape.MONOTONE_DECREASING, Shape.QUASICONVEX):
            return 1
        if self in (Shape.CONVEX, Shape.CONCAVE):
            return 2
        return 0


class SignBound(enum.Enum):
    """Bound attached to a derivative request."""

    NONNEGATIVE = ">=0"
    NONPOSITIVE = "<=0"
    QUASICONVEX_PATTERN = "quasiconvex-pattern"


_SIGN_OF = {
    Shape.MONOTONE_INCREASING: SignBound.NONNEGATIVE,
    Shape.MONOTONE_DECREASING: SignBound.NONPOSITIVE,
    Shape.CONVEX: SignBound.NONNEGATIVE,
    Shape.CONCAVE: SignBound.NONPOSITIVE,
    Shape.QUASICONVEX: SignBound.QUASICONVEX_PATTERN,
}


def _seed_key(seed):
    # Stable integer tuple from an int or a spawned SeedSequence, so repeated
    # grid construction within a run reproduces the same points.
    if isinstance(seed, np.random.SeedSequence):
        ent = seed.entropy
        ents = tuple(ent) if isinstance(ent, (list, tuple)) else (int(ent),)
        return (*ents, *seed.spawn_key)
    if seed is None:
        return (0,)
    return (int(seed),)


@dataclass
class ConstraintSpec:
    """Shape declarations plus the grid where they are enforced.

    Attributes
    ----------
    per_dim : list of Shape
        One entry per search dimension.
    grid_size : int
        Number of Latin-hypercube enforcement points per constraint (the
        sign-constraint grid additionally includes all observed inputs).
    grid : ndarray or None
        ``g x d`` matrix of sign-constraint enforcement points.
    qc_lines : dict or None
        For each quasiconvex dimension ``j``, a list of line matrices; each
        line holds points sharing every coordinate but ``j``, sorted by
        ``x_j``, where the changepoint pattern is checked.
    """

    per_dim: list
    grid_size: int = 100
    grid: np.ndarray | None = None
    qc_lines: dict | None = None

    def __post_init__(self):
        self.per_dim = [Shape.from_name(s) for s in self.per_dim]
        if self.grid_size < 1:
            raise ValueError(f"grid_size must be >= 1, got {self.grid_size}")
        if self.grid is not None:
            self.grid = np.atleast_2d(np.asarray(self.grid, dtype=float))
            if self.grid.shape[1] != len(self.per_dim):
                raise ValueError(
                    f"grid has {self.grid.shape[1]} columns for {len(self.per_dim)} dimensions"
                )

    @property
    def dim(self):
        return len(self.per_dim)

    @property
    def active(self):
        return any(s is not Shape.NONE for s in self.per_dim)

    @property
    def has_quasiconvex(self):
        return any(s is Shape.QUASICONVEX for s in self.per_dim)

    def constrained_dims(self):
        return [j for j, s in enumerate(self.per_dim) if s is not Shape.NONE]

    def with_grid(self, box, observed=None, seed=0):
        """Return a copy with enforcement geometry over ``box``.

        The sign-constraint grid is a maximin LHS of ``grid_size`` points
        plus all ``observed`` inputs (duplicate rows dropped).  Quasiconvex
        lines spread the same point budget over axis-aligned sweeps; observed
        inputs are snapped onto the nearest line so their coordinates are
        enforced too.  Deterministic given ``seed``.
        """
        box = np.atleast_2d(np.asarray(box, dtype=float))
        lo, hi = box[:, 0], box[:, 1]
        d = self.dim
        key = _seed_key(seed)
        base = lo + maximin_lhs(self.grid_size, d, seed=(*key, 0)) * (hi - lo)
        pts = base if observed is None or len(observed) == 0 else np.vstack(
            [base, np.atleast_2d(observed)]
        )
        pts = np.unique(pts, axis=0)

        qc_lines = {}
        obs = None if observed is None or len(observed) == 0 else np.atleast_2d(
            np.asarray(observed, dtype=float)
        )
        for j, shape in enumerate(self.per_dim):
            if shape is not Shape.QUASICONVEX:
                continue
            qc_lines[j] = self._build_lines(j, lo, hi, obs, key)
        return ConstraintSpec(list(self.per_dim), self.grid_size, pts, qc_lines or None)

    def _build_lines(self, j, lo, hi, observed, key):
        d = self.dim
        if d == 1:
            positions = lo[0] + maximin_lhs(self.grid_size, 1, seed=(*key, 0))[:, 0] * (hi[0] - lo[0])
            if observed is not None:
                positions = np.concatenate([positions, observed[:, 0]])
            line = np.unique(positions)[:, None]
            return [line]
        n_lines = max(1, round(self.grid_size / POINTS_PER_LINE))
        per_line = math.ceil(self.grid_size / n_lines)
        rest = [k for k in range(d) if k != j]
        anchors = maximin_lhs(n_lines, d - 1, seed=(*key, 100 + j)) * (hi[rest] - lo[rest]) + lo[rest]
        sweep = lo[j] + (np.arange(per_line) + 0.5) / per_line * (hi[j] - lo[j])
        assign = None
        if observed is not None:
            d2 = np.sum((observed[:, rest][:, None, :] - anchors[None, :, :]) ** 2, axis=2)
            assign = np.argmin(d2, axis=1)
        lines = []
        for a_i, anchor in enumerate(anchors):
            positions = sweep
            if assign is not None and np.any(assign == a_i):
                positions = np.concatenate([positions, observed[assign == a_i, j]])
            positions = np.unique(positions)
            line = np.empty((positions.size, d))
            line[:, rest] = anchor
            line[:, j] = positions
            lines.append(line)
        return lines


def build_derivative_requests(spec: ConstraintSpec):
    """Map shape declarations to (DerivRequest, bound) pairs.

    Monotone dims yield order-1 requests with a fixed sign at every grid
    point, convex/concave order-2, and quasiconvex dims order-1 requests
    tagged for pattern checking, line by line in sorted sweep order.
    """
    if spec.grid is None:
        raise ValueError("ConstraintSpec has no grid; call with_grid first")
    out = []
    for j, shape in enumerate(spec.per_dim):
        if shape is Shape.NONE:
            continue
        if shape is Shape.QUASICONVEX:
            for line in (spec.qc_lines or {}).get(j, []):
                for p in line:
                    out.append((DerivRequest(p, j, 1), SignBound.QUASICONVEX_PATTERN))
            continue
        bound = _SIGN_OF[shape]
        for p in spec.grid:
            out.append((DerivRequest(p, j, shape.order), bound))
    return out


def _signs_ok(values, tol=ZERO_TOL):
    # True iff no strictly positive value precedes a strictly negative one.
    values = np.asarray(values, dtype=float)
    pos = np.flatnonzero(values > tol)
    neg = np.flatnonzero(values < -tol)
    if pos.size == 0 or neg.size == 0:
        return True
    return pos[0] > neg[-1]


def _signs_ok_batch(values, tol=ZERO_TOL):
    """Vectorized ``_signs_ok`` over rows of an ``(s, k)`` matrix.

    ``tol`` may be a scalar or a per-column vector; entries within it count
    as zero and are compatible with both sides of the changepoint.
    """
    values = np.asarray(values, dtype=float)
    tol = np.asarray(tol, dtype=float)
    pos = values > tol
    neg = values < -tol
    k = values.shape[1]
    first_pos = np.where(pos.any(axis=1), pos.argmax(axis=1), k)
    last_neg = np.where(neg.any(axis=1), k - 1 - neg[:, ::-1].argmax(axis=1), -1)
    return first_pos > last_neg


def quasiconvex_pattern_ok(coords, deriv_signs) -> bool:
    """Check a first-derivative sign sequence for a valid single changepoint.

    ``coords`` must be strictly increasing; ``deriv_signs`` are the derivative
    values at those coordinates.  Returns True iff some split point has all
    values <= 0 before it and >= 0 from it on (monotone sequences count, with
    the changepoint beyond either end).  Values within ``ZERO_TOL`` of zero
    are compatible with both sides.
    """
    coords = np.asarray(coords, dtype=float)
    deriv_signs = np.asarray(deriv_signs, dtype=float)
    if coords.shape != deriv_signs.shape or coords.ndim != 1:
        raise ValueError("coords and deriv_signs must be 1-D and the same length")
    if coords.size > 1 and not np.all(np.diff(coords) > 0):
        raise ValueError("coords must be strictly sorted ascending")
    return bool(_signs_ok(deriv_signs))

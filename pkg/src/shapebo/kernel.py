"""Squared-exponential covariance and its derivative cross-covariances.

The surrogate kernel is ``k(x, x') = tau2 * exp(-sum_i psi_i (x_i - x'_i)^2)``.
Because a Gaussian process and its partial derivatives are jointly Gaussian,
covariances between derivative values are mixed partials of the kernel.  For
the squared-exponential these are available in closed form: a Hermite
polynomial in the separation times the Gaussian factor.  Orders up to two on
each argument are supported, which covers monotonicity (first partials) and
convexity (second partials) constraints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "HyperParams",
    "DerivRequest",
    "UnsupportedOrderError",
    "se_cov",
    "se_cov_deriv",
    "assemble_cov_matrix",
]

#: Relative jitter added to diagonals before factorization, scaled by tau2 so
#: behavior is invariant under rescaling of the objective.
JITTER_REL = 1e-8

MAX_ORDER = 2


class UnsupportedOrderError(ValueError):
    """Raised for derivative orders above 2 on either kernel argument."""


@dataclass(frozen=True, eq=False)
class HyperParams:
    """Kernel, noise, and mean parameters of the GP surrogate.

    Attributes
    ----------
    mean_mu : float
        Constant prior mean, in objective units.
    signal_var_tau2 : float
        Covariance amplitude (> 0), objective units squared.
    noise_var_sigma2 : float
        Observation noise variance (>= 0), objective units squared.
    lengthscale_prec_psi : ndarray
        Per-dimension precision multipliers (> 0), 1 / input-units^2.
    """

    mean_mu: float
    signal_var_tau2: float
    noise_var_sigma2: float
    lengthscale_prec_psi: np.ndarray

    def __post_init__(self):
        psi = np.atleast_1d(np.asarray(self.lengthscale_prec_psi, dtype=float))
        object.__setattr__(self, "lengthscale_prec_psi", psi)
        if not self.signal_var_tau2 > 0:
            raise ValueError(f"signal_var_tau2 must be > 0, got {self.signal_var_tau2}")
        if self.noise_var_sigma2 < 0:
            raise ValueError(f"noise_var_sigma2 must be >= 0, got {self.noise_var_sigma2}")
        if psi.ndim != 1 or not np.all(psi > 0):
            raise ValueError("lengthscale_prec_psi must be a 1-D vector of positives")

    @property
    def dim(self) -> int:
        return self.lengthscale_prec_psi.shape[0]

    def jitter(self) -> float:
        return JITTER_REL * self.signal_var_tau2


@dataclass(frozen=True, eq=False)
class DerivRequest:
    """A partial-derivative coordinate: d^order f / dx_dim^order at ``point``."""

    point: np.ndarray
    dim: int
    order: int

    def __post_init__(self):
        object.__setattr__(self, "point", np.atleast_1d(np.asarray(self.point, dtype=float)))
        if self.order not in (1, 2):
            raise UnsupportedOrderError(f"derivative order must be 1 or 2, got {self.order}")
        if not 0 <= self.dim < self.point.shape[0]:
            raise ValueError(f"dim {self.dim} out of range for a {self.point.shape[0]}-vector")


def _check_point(x, d, name):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (d,):
        raise ValueError(f"{name} has shape {x.shape}, expected ({d},)")
    return x


def se_cov(x, x2, theta: HyperParams) -> float:
    """Squared-exponential covariance ``tau2 * exp(-sum psi_i (x_i - x2_i)^2)``."""
    d = theta.dim
    x = _check_point(x, d, "x")
    x2 = _check_point(x2, d, "x2")
    u = x - x2
    return float(theta.signal_var_tau2 * np.exp(-np.dot(theta.lengthscale_prec_psi, u * u)))


def _hermite(m, t):
    # Physicists' Hermite polynomials H_0..H_4; enough for mixed order (2,2).
    if m == 0:
        return np.ones_like(t)
    if m == 1:
        return 2.0 * t
    if m == 2:
        return 4.0 * t * t - 2.0
    if m == 3:
        return (8.0 * t * t - 12.0) * t
    if m == 4:
        return (16.0 * t * t - 48.0) * t * t + 12.0
    raise UnsupportedOrderError(f"no Hermite table entry for order {m}")


def _deriv_factor(u_j, u_k, psi_j, psi_k, o_left, o_right, same_dim):
    """Polynomial prefactor turning the SE kernel into its mixed partial.

    ``u_j = x_j - x2_j`` is the separation along the left derivative's
    dimension, ``u_k`` along the right one.  Derivatives with respect to the
    second argument flip sign once per order, which the Hermite identity
    ``d^m/du^m exp(-psi u^2) = (-1)^m psi^(m/2) H_m(sqrt(psi) u) exp(-psi u^2)``
    absorbs into the closed forms below.
    """
    if same_dim:
        m = o_left + o_right
        sign = -1.0 if o_left % 2 else 1.0
        return sign * psi_j ** (m / 2.0) * _hermite(m, np.sqrt(psi_j) * u_j)
    left = psi_j ** (o_left / 2.0) * _hermite(o_left, np.sqrt(psi_j) * u_j)
    if o_left % 2:
        left = -left
    right = psi_k ** (o_right / 2.0) * _hermite(o_right, np.sqrt(psi_k) * u_k)
    return left * right


def _as_dim_order(side, name):
    # Accepts None, a DerivRequest, or a (dim, order) pair; order 0 means the
    # function itself.
    if side is None:
        return 0, 0
    if isinstance(side, DerivRequest):
        dim, order = side.dim, side.order
    else:
        dim, order = side
    if order == 0:
        return 0, 0
    if order not in (1, 2):
        raise UnsupportedOrderError(f"{name} derivative order {order} not supported (max {MAX_ORDER})")
    return int(dim), int(order)


def se_cov_deriv(x, x2, left, right, theta: HyperParams) -> float:
    """Mixed partial of the SE kernel: Cov(d^o f/dx_j^o (x), d^o' f/dx'_k^o' (x2)).

    ``left`` and ``right`` are ``DerivRequest``s, ``(dim, order)`` pairs, or
    ``None`` for no derivative on that side.  Orders up to 2 per side.
    """
    d = theta.dim
    x = _check_point(x, d, "x")
    x2 = _check_point(x2, d, "x2")
    j, o = _as_dim_order(left, "left")
    k, o2 = _as_dim_order(right, "right")
    for dim, order, name in ((j, o, "left"), (k, o2, "right")):
        if order and not 0 <= dim < d:
            raise ValueError(f"{name} dim {dim} out of range for d={d}")
    base = se_cov(x, x2, theta)
    if o == 0 and o2 == 0:
        return base
    psi = theta.lengthscale_prec_psi
    u = x - x2
    if o and o2:
        factor = _deriv_factor(u[j], u[k], psi[j], psi[k], o, o2, same_dim=(j == k))
    elif o:
        factor = _deriv_factor(u[j], u[j], psi[j], psi[j], o, 0, same_dim=False)
    else:
        factor = _deriv_factor(u[k], u[k], psi[k], psi[k], 0, o2, same_dim=False)
    return float(base * factor)


def _normalize_entries(entries, d):
    """Split a mixed list of points / DerivRequests into parallel arrays."""
    n = len(entries)
    pts = np.empty((n, d))
    dims = np.zeros(n, dtype=np.intp)
    orders = np.zeros(n, dtype=np.intp)
    for i, e in enumerate(entries):
        if isinstance(e, DerivRequest):
            p = _check_point(e.point, d, f"entry {i}")
            dims[i] = e.dim
            orders[i] = e.order
            if e.dim >= d:
                raise ValueError(f"entry {i}: dim {e.dim} out of range for d={d}")
        else:
            p = _check_point(e, d, f"entry {i}")
        pts[i] = p
    return pts, dims, orders


def assemble_cov_matrix(rows, cols, theta: HyperParams) -> np.ndarray:
    """Stack kernel (derivative) cross-covariances into a dense matrix.

    ``rows`` and ``cols`` are lists whose entries are either d-vectors
    (function values) or :class:`DerivRequest`s.  Entry ``M[a, b]`` equals
    ``se_cov_deriv`` of row ``a`` against column ``b``.  The computation is
    vectorized over blocks sharing a (dim, order) signature.
    """
    d = theta.dim
    psi = theta.lengthscale_prec_psi
    rp, rdim, rord = _normalize_entries(list(rows), d)
    cp, cdim, cord = _normalize_entries(list(cols), d)

    # Gaussian factor for all pairs at once.
    z_r = rp * np.sqrt(psi)
    z_c = cp * np.sqrt(psi)
    sq = (
        np.sum(z_r * z_r, axis=1)[:, None]
        + np.sum(z_c * z_c, axis=1)[None, :]
        - 2.0 * z_r @ z_c.T
    )
    np.maximum(sq, 0.0, out=sq)
    base = theta.signal_var_tau2 * np.exp(-sq)

    out = np.empty((rp.shape[0], cp.shape[0]))
    row_keys = {}
    for i, key in enumerate(zip(rord, rdim)):
        row_keys.setdefault((int(key[0]), int(key[1])), []).append(i)
    col_keys = {}
    for i, key in enumerate(zip(cord, cdim)):
        col_keys.setdefault((int(key[0]), int(key[1])), []).append(i)

    for (ro, rj), ridx in row_keys.items():
        ridx = np.asarray(ridx, dtype=np.intp)
        for (co, ck), cidx in col_keys.items():
            cidx = np.asarray(cidx, dtype=np.intp)
            block = base[np.ix_(ridx, cidx)]
            if ro or co:
                uj = rp[ridx, rj][:, None] - cp[cidx, rj][None, :]
                uk = rp[ridx, ck][:, None] - cp[cidx, ck][None, :]
                if ro and co:
                    fac = _deriv_factor(uj, uk, psi[rj], psi[ck], ro, co, same_dim=(rj == ck))
                elif ro:
                    fac = _deriv_factor(uj, uj, psi[rj], psi[rj], ro, 0, same_dim=False)
                else:
                    fac = _deriv_factor(uk, uk, psi[ck], psi[ck], 0, co, same_dim=False)
                block = block * fac
            out[np.ix_(ridx, cidx)] = block
    return out

"""Polar decomposition of SDE coefficients.

For an SDE ``dX = a(X) dt + b(X) dW`` in ``R^n`` with ``m``-dimensional noise,
the radius ``R = |X|`` and the angle ``Phi = X/|X|`` satisfy

    dR   = mu(R, Phi) dt + sigma(R, Phi) dW1
    dPhi = nu(R, Phi) dt + chi(R, Phi) dW

This module computes ``mu, sigma, nu, chi`` from ``(a, b)``.  Everything here
broadcasts over leading batch axes, and every reduction over a state or noise
axis is an explicit left-to-right sum so that a point evaluated alone gives the
same bits as the same point evaluated inside a batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ORIGIN_TOL = 1e-12
SPHERE_TOL = 1e-9


class ZeroPointError(ValueError):
    """Raised when a polar quantity is requested at (or numerically at) the origin."""


class DimensionError(ValueError):
    pass


# -- explicit-order reductions ------------------------------------------------

def dot(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Inner product over the last axis, summed in index order."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    acc = u[..., 0] * v[..., 0]
    for i in range(1, u.shape[-1]):
        acc = acc + u[..., i] * v[..., i]
    return acc


def norm(u: np.ndarray) -> np.ndarray:
    return np.sqrt(dot(u, u))


def frobenius_sq(B: np.ndarray) -> np.ndarray:
    """Squared Frobenius norm over the last two axes."""
    B = np.asarray(B, dtype=float)
    acc = np.zeros(B.shape[:-2])
    for i in range(B.shape[-2]):
        for k in range(B.shape[-1]):
            acc = acc + B[..., i, k] * B[..., i, k]
    return acc


def matvec(B: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``B @ w`` for ``B`` of shape (..., n, m) and ``w`` of shape (..., m)."""
    B = np.asarray(B, dtype=float)
    w = np.asarray(w, dtype=float)
    acc = B[..., :, 0] * w[..., None, 0]
    for k in range(1, B.shape[-1]):
        acc = acc + B[..., :, k] * w[..., None, k]
    return acc


def vecmat(u: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``u^T B`` for ``u`` of shape (..., n) and ``B`` of shape (..., n, m)."""
    u = np.asarray(u, dtype=float)
    B = np.asarray(B, dtype=float)
    acc = u[..., 0, None] * B[..., 0, :]
    for i in range(1, B.shape[-2]):
        acc = acc + u[..., i, None] * B[..., i, :]
    return acc


def gram(B: np.ndarray) -> np.ndarray:
    """``B B^T`` over the last two axes."""
    B = np.asarray(B, dtype=float)
    acc = B[..., :, None, 0] * B[..., None, :, 0]
    for k in range(1, B.shape[-1]):
        acc = acc + B[..., :, None, k] * B[..., None, :, k]
    return acc


# -- systems ------------------------------------------------------------------

@dataclass(frozen=True)
class SdeSystem:
    """Autonomous SDE ``dX = drift(X) dt + diffusion(X) dW``.

    ``drift`` maps an array of shape (..., n) to (..., n) and ``diffusion`` maps
    it to (..., n, m).  Both must accept batched input.
    """

    dim_state: int
    dim_noise: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    label: str = ""

    def __post_init__(self):
        if self.dim_state < 2:
            raise DimensionError(f"dim_state must be >= 2, got {self.dim_state}")
        if self.dim_noise < 1:
            raise DimensionError(f"dim_noise must be >= 1, got {self.dim_noise}")

    def drift_at(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim_state:
            raise DimensionError(f"state has length {x.shape[-1]}, expected {self.dim_state}")
        a = np.asarray(self.drift(x), dtype=float)
        if a.shape != x.shape:
            raise DimensionError(f"drift returned shape {a.shape}, expected {x.shape}")
        return a

    def diffusion_at(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim_state:
            raise DimensionError(f"state has length {x.shape[-1]}, expected {self.dim_state}")
        b = np.asarray(self.diffusion(x), dtype=float)
        expected = x.shape + (self.dim_noise,)
        if b.shape != expected:
            raise DimensionError(f"diffusion returned shape {b.shape}, expected {expected}")
        return b


def zero_drift(x: np.ndarray) -> np.ndarray:
    return np.zeros_like(np.asarray(x, dtype=float))


def identity_diffusion(n: int) -> Callable[[np.ndarray], np.ndarray]:
    eye = np.eye(n)

    def diffusion(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(eye, x.shape[:-1] + (n, n)).copy()

    return diffusion


def zero_diffusion(n: int, m: int) -> Callable[[np.ndarray], np.ndarray]:
    def diffusion(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (n, m))

    return diffusion


# -- decompositions -----------------------------------------------------------

@dataclass(frozen=True)
class RadialDecomposition:
    radial: np.ndarray
    tangential: np.ndarray


def _check_point(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    r = norm(x)
    if np.any(r <= ORIGIN_TOL):
        raise ZeroPointError("decomposition is undefined at the origin")
    return r


def decompose_vector(x, v) -> RadialDecomposition:
    """Split ``v`` into its projection on the line through ``x`` and the rest."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.shape[-1] != v.shape[-1]:
        raise DimensionError("x and v must have the same length")
    r = _check_point(x)
    radial = (dot(x, v) / (r * r))[..., None] * x
    return RadialDecomposition(radial, v - radial)


def decompose_matrix(x, B) -> RadialDecomposition:
    """Column-wise radial/tangential split of an (n, m) matrix field value."""
    x = np.asarray(x, dtype=float)
    B = np.asarray(B, dtype=float)
    if B.shape[-2] != x.shape[-1]:
        raise DimensionError("B must have as many rows as x has entries")
    r = _check_point(x)
    coef = vecmat(x, B) / (r * r)[..., None]
    radial = x[..., :, None] * coef[..., None, :]
    return RadialDecomposition(radial, B - radial)


# -- polar coefficients -------------------------------------------------------

@dataclass(frozen=True)
class PolarCoefficients:
    """Radius/angle coefficients at one or many points ``r * phi``.

    ``mu`` and ``sigma`` have the batch shape, ``nu`` has an extra axis of
    length n and ``chi`` two extra axes (n, m).
    """

    mu: np.ndarray
    sigma: np.ndarray
    nu: np.ndarray
    chi: np.ndarray


def normalize_angle(phi) -> np.ndarray:
    """Renormalize ``phi`` to the unit sphere; reject anything far off it."""
    phi = np.asarray(phi, dtype=float)
    length = norm(phi)
    if np.any(np.abs(length - 1.0) > SPHERE_TOL):
        worst = float(np.max(np.abs(length - 1.0)))
        raise ValueError(f"phi is not a unit vector (| |phi| - 1 | = {worst:.3g})")
    return phi / length[..., None]


def _polar_from_fields(a, B, r, phi) -> PolarCoefficients:
    r_ = r[..., None]
    # radial/tangential splits along phi (|phi| = 1)
    a_par = dot(phi, a)
    a_tan = a - a_par[..., None] * phi
    phiB = vecmat(phi, B)
    B_tan = B - phi[..., :, None] * phiB[..., None, :]
    btan_sq = frobenius_sq(B_tan)

    mu = a_par + btan_sq / (2.0 * r)
    sigma = norm(phiB)
    chi = B_tan / r[..., None, None]

    # Ito drift of x -> x/|x|:  a_tan/r - (2 (D phi)_tan + |B_tan|^2 phi) / (2 r^2),  D = B B^T
    Dphi = matvec(B, phiB)
    Dphi_tan = Dphi - dot(phi, Dphi)[..., None] * phi
    nu = a_tan / r_ - (2.0 * Dphi_tan + btan_sq[..., None] * phi) / (2.0 * r_ * r_)
    return PolarCoefficients(mu=mu, sigma=sigma, nu=nu, chi=chi)


def polar_coefficients(sys: SdeSystem, r, phi) -> PolarCoefficients:
    """Coefficients ``mu, sigma, nu, chi`` of the radius/angle system at ``r * phi``.

    ``r`` may be a scalar or an array of shape (k,) with ``phi`` of shape
    (k, n).  ``phi`` is renormalized if it is within 1e-9 of the unit sphere.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape[-1] != sys.dim_state:
        raise DimensionError(f"phi has length {phi.shape[-1]}, expected {sys.dim_state}")
    r = np.asarray(r, dtype=float)
    if np.any(~(r > ORIGIN_TOL)):
        raise ZeroPointError(f"radius must exceed {ORIGIN_TOL}")
    phi = normalize_angle(phi)
    single = phi.ndim == 1
    if single:
        # evaluate a lone point as a batch of one: numpy scalars take different
        # code paths for some ufuncs (e.g. power) and would round differently
        phi = phi[None, :]
    r = np.broadcast_to(r, phi.shape[:-1]).astype(float)
    x = r[..., None] * phi
    c = _polar_from_fields(sys.drift_at(x), sys.diffusion_at(x), r, phi)
    if single:
        return PolarCoefficients(mu=c.mu[0], sigma=c.sigma[0], nu=c.nu[0], chi=c.chi[0])
    return c


def polar_coefficients_at(sys: SdeSystem, x) -> PolarCoefficients:
    """Same as :func:`polar_coefficients` with ``(r, phi)`` taken from a point."""
    x = np.asarray(x, dtype=float)
    r = _check_point(x)
    return polar_coefficients(sys, r, x / r[..., None])

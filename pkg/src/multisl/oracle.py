"""Banded finite-difference reference solver.

Second-order ghost-point discretization of the Robin problem, symmetrized
with trapezoid weights and solved with a banded symmetric eigensolver.  Two
resolutions are combined by Richardson extrapolation, which removes the
leading ``O(dx^2)`` error term and makes the oracle accurate enough to judge
the shooting solver at the 1e-6 level.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import eig_banded, solve_banded

from .model import PotentialMatrix, check_symmetric


def _banded_operator(pot: PotentialMatrix, left_h, big_h, n_points: int):
    """Lower banded form of ``W^{-1/2} S W^{-1/2}`` with channels interleaved."""
    a = pot.grid.a
    m = pot.m
    dx = a / (n_points - 1)
    x = np.linspace(0.0, a, n_points)
    v = pot.at(x)
    v = 0.5 * (v + np.swapaxes(v, 1, 2))
    wts = np.ones(n_points)
    wts[0] = wts[-1] = 0.5
    # symmetric block-tridiagonal S; diagonal blocks then the I/dx^2 couplings
    diag = 2.0 * np.eye(m)[None] / dx**2 + v
    diag[0] = np.eye(m) / dx**2 + left_h / dx + 0.5 * v[0]
    diag[-1] = np.eye(m) / dx**2 + big_h / dx + 0.5 * v[-1]
    scale = 1.0 / np.sqrt(wts)
    diag = diag * scale[:, None, None] ** 2
    off = -np.ones(n_points - 1) * scale[:-1] * scale[1:] / dx**2
    size = n_points * m
    bw = 2 * m - 1
    band = np.zeros((bw + 1, size))
    # lower band storage: band[d, j] = A[j + d, j]
    for alpha in range(m):
        for beta in range(alpha, m):
            d = beta - alpha
            band[d, alpha::m] = diag[:, beta, alpha]
    # same channel, neighbouring points: offset m
    for alpha in range(m):
        band[m, alpha : size - m : m] = off
    return band, scale


def _inverse_iteration(band: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Eigenvectors for the eigenvalues ``w`` of a lower-banded symmetric matrix.

    A banded LU solve per eigenvalue replaces the selected-vector LAPACK
    path, which forms a dense orthogonal matrix of the full size.
    """
    bw, size = band.shape[0] - 1, band.shape[1]
    full = np.zeros((2 * bw + 1, size))
    full[bw:] = band
    for d in range(1, bw + 1):
        full[bw - d, d:] = band[d, :-d]
    rng = np.random.default_rng(0)
    out = np.empty((size, w.size))
    for k, lam in enumerate(w):
        shifted = full.copy()
        # nudge off the eigenvalue so the factorization stays finite
        shifted[bw] -= lam + 1e-10 * (1.0 + abs(lam))
        v = rng.standard_normal(size)
        for _ in range(3):
            v = solve_banded((bw, bw), shifted, v)
            v /= np.linalg.norm(v)
        out[:, k] = v
    # clustered eigenvalues: re-orthogonalize in order
    q, r = np.linalg.qr(out)
    return q * np.sign(np.diagonal(r))


def _solve(pot, left_h, big_h, count, n_points, vectors):
    band, scale = _banded_operator(pot, left_h, big_h, n_points)
    w = eig_banded(band, lower=True, select="i", select_range=(0, count - 1), eigvals_only=True)
    if not vectors:
        return w, None
    z = _inverse_iteration(band, w)
    z = z.reshape(n_points, pot.m, count) * scale[:, None, None]
    return w, z


def fd_eigenvalues(pot: PotentialMatrix, left_h, big_h, count: int, n_points: int = 2000) -> np.ndarray:
    """Lowest ``count`` eigenvalues on a single grid of ``n_points`` (no extrapolation)."""
    left_h = check_symmetric(left_h, "left_h")
    big_h = check_symmetric(big_h, "H")
    w, _ = _solve(pot, left_h, big_h, count, n_points, vectors=False)
    return w


def oracle_eigenvalues(pot: PotentialMatrix, left_h, big_h, count: int, n_points: int = 2000) -> np.ndarray:
    """Richardson-extrapolated eigenvalues from grids of ``n`` and ``2n - 1`` points."""
    coarse = fd_eigenvalues(pot, left_h, big_h, count, n_points)
    fine = fd_eigenvalues(pot, left_h, big_h, count, 2 * n_points - 1)
    return (4.0 * fine - coarse) / 3.0


def oracle_eigenvectors(pot: PotentialMatrix, left_h, big_h, count: int, n_points: int = 2000):
    """Eigenvalues plus L2-normalized eigenvector samples ``(count, n_points, M)``.

    The vectors are normalized with the trapezoid rule implied by the scheme
    and sign-fixed so the first non-negligible value at ``x = 0`` is positive.
    """
    left_h = check_symmetric(left_h, "left_h")
    big_h = check_symmetric(big_h, "H")
    w, z = _solve(pot, left_h, big_h, count, n_points, vectors=True)
    dx = pot.grid.a / (n_points - 1)
    wts = np.full(n_points, dx)
    wts[0] = wts[-1] = dx / 2
    z = np.moveaxis(z, 2, 0)
    norms = np.sqrt(np.einsum("x,nxa,nxa->n", wts, z, z))
    z = z / norms[:, None, None]
    for k in range(count):
        y0 = z[k, 0]
        j = int(np.argmax(np.abs(y0) > 1e-8 * np.abs(y0).max()))
        if y0[j] < 0:
            z[k] = -z[k]
    return w, z


def oracle_boundary_values(pot: PotentialMatrix, left_h, big_h, count: int, n_points: int = 2000):
    """Richardson-extrapolated ``(lambda_n, y_n(0))``; ``y_n(0)`` equals ``gamma_n``."""
    w1, z1 = oracle_eigenvectors(pot, left_h, big_h, count, n_points)
    w2, z2 = oracle_eigenvectors(pot, left_h, big_h, count, 2 * n_points - 1)
    y1, y2 = z1[:, 0, :], z2[:, 0, :]
    y2 = y2 * np.sign(np.sum(y1 * y2, axis=1))[:, None]
    return (4.0 * w2 - w1) / 3.0, (4.0 * y2 - y1) / 3.0

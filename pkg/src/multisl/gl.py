"""Gel'fand-Levitan reconstruction on a finite interval.

With a reference problem ``(V0, h, H)`` whose matrix solutions are
``phi0(x, lambda)``, truncated spectral data ``{lambda_n, gamma_n}`` of the
unknown problem and reference data ``{lambda0_n, gamma0_n}`` define

    F(x, t) = sum_n phi0(x, l_n) g_n g_n^T phi0(t, l_n)^T
              - sum_n phi0(x, l0_n) g0_n g0_n^T phi0(t, l0_n)^T,

the kernel of the transformation operator solves

    K(x, t) + F(x, t) + int_0^x K(x, s) F(s, t) ds = 0,   0 <= t <= x,

and the potential is ``V(x) = V0(x) + 2 d/dx K(x, x)``.

``F`` is a finite sum, so it factors as ``G(x) S G(t)^T`` with ``G`` of size
``M x 2N`` and ``S = diag(+1, ..., -1, ...)``.  The Nystrom system for each
row then reduces to ``P (I + S B(x)) = G(x)`` with
``B(x) = sum_k w_k G(t_k)^T G(t_k)`` and ``K(x, t) = -P S G(t)^T``, which is
exactly the discretized equation, only cheaper.  A dense Nystrom solve of the
same discretization is kept for cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IllConditionedGL, NonFiniteMatrix, TruncationMismatch
from .forward import locate_eigenvalues, norming_vectors, propagate
from .model import BoundarySpec, PotentialMatrix, ProblemSet, sign_normalize

GL_COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Eigenvalues with norming vectors, tied to the reference (comparison) problem."""

    lams: np.ndarray
    gammas: np.ndarray
    reference: PotentialMatrix
    boundary: BoundarySpec

    def __post_init__(self):
        lams = np.asarray(self.lams, dtype=float).reshape(-1)
        g = np.asarray(self.gammas, dtype=float).reshape(lams.size, -1)
        if g.shape[1] != self.reference.m:
            raise TruncationMismatch(f"gammas have {g.shape[1]} components, reference has M={self.reference.m}")
        if np.any(np.diff(lams) < 0):
            raise TruncationMismatch("eigenvalues must be sorted")
        object.__setattr__(self, "lams", lams)
        object.__setattr__(self, "gammas", np.stack([sign_normalize(v) for v in g]))

    @property
    def truncation(self) -> int:
        return self.lams.size

    @property
    def m(self) -> int:
        return self.reference.m

    @classmethod
    def from_norming(cls, vectors, reference: PotentialMatrix, boundary: BoundarySpec) -> "SpectralData":
        return cls(np.array([v.lam for v in vectors]), np.stack([v.gamma for v in vectors]), reference, boundary)


def _common_basis(mats, tol=1e-10):
    """Orthogonal Q diagonalizing every matrix in ``mats``, or None if they do not commute."""
    for i, a in enumerate(mats):
        for b in mats[i + 1 :]:
            if np.abs(a @ b - b @ a).max() > tol * (1 + np.abs(a).max() * np.abs(b).max()):
                return None
    # generic combination separates common eigenspaces
    weights = (1.0, 0.7548776662466927, 0.5698402909980532)
    combo = sum(w * a for w, a in zip(weights, mats))
    _, q = np.linalg.eigh(combo)
    for a in mats:
        d = q.T @ a @ q
        if np.abs(d - np.diag(np.diagonal(d))).max() > 1e-8 * (1 + np.abs(a).max()):
            return None
    return q


def reference_data(reference: PotentialMatrix, boundary: BoundarySpec, count: int) -> SpectralData:
    """Lowest ``count`` eigenvalues and norming vectors of the reference problem.

    A constant reference potential whose matrix commutes with ``h`` and ``H``
    splits into independent scalar channels; those are solved one at a time,
    so repeated eigenvalues (for example ``V0 = 0`` with ``h = H = 0``) are
    allowed.  Any other reference goes through the coupled solver and must
    have a simple spectrum.
    """
    m = reference.m
    s = reference.samples
    constant = np.abs(s - s[0]).max() <= 1e-14 * (1 + np.abs(s).max())
    q = _common_basis([s[0], boundary.h, boundary.big_h]) if constant else None
    if q is None:
        ps = ProblemSet(reference, boundary, tuple(boundary.h + np.eye(m) for _ in range(m)))
        lams = locate_eigenvalues(ps, 0, count)
        vecs = norming_vectors(ps, 0, lams)
        return SpectralData.from_norming(vecs, reference, boundary)
    grid = reference.grid
    lam_all, g_all = [], []
    for alpha in range(m):
        e = q[:, alpha]
        c = float(e @ s[0] @ e)
        h = float(e @ boundary.h @ e)
        big_h = float(e @ boundary.big_h @ e)
        pot = PotentialMatrix(grid, np.full(grid.n_points, c))
        ps = ProblemSet(pot, BoundarySpec([[h]], [[big_h]]), ([[h + 1.0]],))
        lams = locate_eigenvalues(ps, 0, count)
        for v in norming_vectors(ps, 0, lams):
            lam_all.append(v.lam)
            g_all.append(v.gamma[0] * e)
    order = np.argsort(lam_all, kind="stable")[:count]
    return SpectralData(np.array(lam_all)[order], np.array(g_all)[order], reference, boundary)


def asymptotic_reference(
    lams, gammas, grid, boundary: BoundarySpec, clusters: int = 5
) -> PotentialMatrix:
    """Constant reference potential matched to the high-energy clusters of the data.

    For Robin ends the eigenvalues of cluster ``k`` approach
    ``(pi k / a)^2`` plus the eigenvalues of ``C + (2/a)(h + H)``, where ``C``
    is the mean potential, and the norming vectors approach the matching
    eigenvectors.  Averaging ``sum_alpha (lambda_alpha - (pi k/a)^2) u u^T``
    over the last complete clusters therefore estimates ``C`` from spectral
    data alone.  Using it as the comparison potential removes the O(1)
    truncation artifacts a mismatched mean produces.
    """
    lams = np.asarray(lams, dtype=float)
    gammas = np.asarray(gammas, dtype=float).reshape(lams.size, -1)
    m = gammas.shape[1]
    a = grid.a
    n_clusters = lams.size // m
    use = min(clusters, n_clusters)
    if use < 1:
        raise TruncationMismatch(f"need at least one full cluster of {m} eigenvalues")
    est = np.zeros((m, m))
    for k in range(n_clusters - use, n_clusters):
        sl = slice(k * m, (k + 1) * m)
        u = gammas[sl] / np.linalg.norm(gammas[sl], axis=1)[:, None]
        est += (u.T * (lams[sl] - (np.pi * k / a) ** 2)) @ u
    est = est / use - (2.0 / a) * (boundary.h + boundary.big_h)
    est = 0.5 * (est + est.T)
    return PotentialMatrix(grid, np.broadcast_to(est, (grid.n_points, m, m)))


@dataclass(frozen=True, eq=False)
class GLKernelField:
    """Separable input kernel ``F(x_j, x_k) = G_j S G_k^T`` on the reference grid."""

    x: np.ndarray
    factors: np.ndarray  # (n_points, M, R)
    signs: np.ndarray  # (R,)

    @property
    def m(self) -> int:
        return self.factors.shape[1]

    def at(self, j: int, k: int) -> np.ndarray:
        return (self.factors[j] * self.signs) @ self.factors[k].T

    def block(self, upto: int) -> np.ndarray:
        """``F(x_l, x_k)`` for ``l, k <= upto`` as an array ``(upto+1, upto+1, M, M)``."""
        g = self.factors[: upto + 1]
        return np.einsum("lar,r,kbr->lkab", g, self.signs, g)


def _factors(data: SpectralData, lams, gammas) -> np.ndarray:
    ys, _ = propagate(data.reference, data.boundary.h, lams, trace=True)
    return np.einsum("nxab,nb->xan", ys, gammas)


def kernel_field(data: SpectralData, reference: SpectralData | None = None) -> GLKernelField:
    """Factorized ``F`` for ``data`` against the reference problem's own spectral data."""
    if reference is None:
        reference = reference_data(data.reference, data.boundary, data.truncation)
    if reference.truncation != data.truncation:
        raise TruncationMismatch(
            f"data truncation {data.truncation} differs from reference truncation {reference.truncation}"
        )
    g = np.concatenate(
        [_factors(data, data.lams, data.gammas), _factors(data, reference.lams, reference.gammas)], axis=2
    )
    signs = np.concatenate([np.ones(data.truncation), -np.ones(reference.truncation)])
    if not np.all(np.isfinite(g)):
        raise NonFiniteMatrix("input kernel factors are not finite")
    return GLKernelField(data.reference.grid.x, g, signs)


def input_kernel(data: SpectralData, x: float, t: float, reference: SpectralData | None = None) -> np.ndarray:
    """``F(x, t)`` at two grid coordinates."""
    field_ = kernel_field(data, reference)
    spacing = data.reference.grid.spacing
    j, k = (int(round(v / spacing)) for v in (x, t))
    for v, i in ((x, j), (t, k)):
        if not 0 <= i < field_.x.size or abs(field_.x[i] - v) > 1e-9 * (1 + abs(v)):
            raise ValueError(f"{v} is not a grid coordinate")
    return field_.at(j, k)


def quadrature_weights(j: int, spacing: float) -> np.ndarray:
    """Weights for ``int_0^{x_j}`` on ``j + 1`` points: Simpson, with a 3/8 panel when ``j`` is odd."""
    w = np.zeros(j + 1)
    if j == 0:
        return w
    if j == 1:
        w[:] = spacing / 2
        return w
    even = j if j % 2 == 0 else j - 3
    if even:
        w[0:even + 1:2] += 2 * spacing / 3
        w[1:even:2] += 4 * spacing / 3
        w[0] -= spacing / 3
        w[even] -= spacing / 3
    if j % 2:
        w[j - 3 :] += 3 * spacing / 8 * np.array([1.0, 3.0, 3.0, 1.0])
    return w


def solve_gl_row(field_: GLKernelField, j: int, method: str = "lowrank"):
    """``K(x_j, x_k)`` for ``k = 0..j``, shape ``(j + 1, M, M)``.

    Returns ``(row, residual, cond)`` where ``residual`` is the max-norm of the
    discretized equation evaluated with the returned row.
    """
    m = field_.m
    spacing = field_.x[1] - field_.x[0]
    w = quadrature_weights(j, spacing)
    if method == "dense":
        f = field_.block(j)  # (l, k, a, b)
        # unknown X[a, (l, c)] = K(x_j, x_l)[a, c]; equation over columns (k, b)
        fw = (w[:, None, None, None] * f).transpose(0, 2, 1, 3).reshape((j + 1) * m, (j + 1) * m)
        sys = np.eye((j + 1) * m) + fw
        rhs = -f[j].transpose(1, 0, 2).reshape(m, (j + 1) * m)  # F(x_j, x_k)[a, b]
        cond = float(np.linalg.cond(sys))
        if not np.isfinite(cond) or cond > GL_COND_LIMIT:
            raise IllConditionedGL(f"Nystrom matrix condition number {cond:.3g} at x={field_.x[j]:.6g}", cond=cond)
        x = np.linalg.solve(sys.T, rhs.T).T
        row = x.reshape(m, j + 1, m).transpose(1, 0, 2)
        resid = np.abs(x @ sys - rhs).max()
        return row, float(resid), cond
    if method != "lowrank":
        raise ValueError(f"unknown method {method!r}")
    g = field_.factors[: j + 1]
    s = field_.signs
    b = np.einsum("k,kar,kas->rs", w, g, g)
    sys = np.eye(s.size) + s[:, None] * b
    cond = float(np.linalg.cond(sys))
    if not np.isfinite(cond) or cond > GL_COND_LIMIT:
        raise IllConditionedGL(f"GL system condition number {cond:.3g} at x={field_.x[j]:.6g}", cond=cond)
    p = np.linalg.solve(sys.T, g[j].T).T
    row = -np.einsum("ar,r,kbr->kab", p, s, g)
    resid = _row_residual(field_, j, row, w)
    return row, resid, cond


def _row_residual(field_: GLKernelField, j: int, row: np.ndarray, w: np.ndarray) -> float:
    g = field_.factors[: j + 1]
    s = field_.signs
    f_row = np.einsum("ar,r,kbr->kab", g[j], s, g)
    # int K(x_j, s) F(s, t_k) ds, with F(s, t) = G(s) S G(t)^T
    kg = np.einsum("l,lac,lcr->ar", w, row, g)
    conv = np.einsum("ar,r,kbr->kab", kg, s, g)
    return float(np.abs(row + f_row + conv).max())


@dataclass
class GLSolution:
    x: np.ndarray
    diagonal: np.ndarray  # K(x, x), (n_points, M, M)
    residuals: np.ndarray
    conditions: np.ndarray


def solve_gl(field_: GLKernelField, residuals: bool = True) -> GLSolution:
    """Diagonal ``K(x, x)`` on every grid point via the factorized Nystrom system.

    ``B(x_j)`` is accumulated from Simpson panels (a 3/8 panel closes odd
    ``j``), so each row costs one ``2N x 2N`` solve.  The residual of the
    discretized equation for row ``j`` equals ``(G_j - P (I + S B)) S G^T``,
    which is what gets reported.
    """
    n = field_.x.size
    m = field_.m
    g = field_.factors
    s = field_.signs
    r = s.size
    spacing = field_.x[1] - field_.x[0]
    gram = np.einsum("kar,kas->krs", g[: min(n, 4)], g[: min(n, 4)])
    diag = np.zeros((n, m, m))
    res = np.zeros(n)
    conds = np.ones(n)
    even_sum = np.zeros((r, r))  # integral over [0, x_j] for the latest even j
    even_prev = np.zeros((r, r))  # same for the even j before it
    window = {k: gram[k] for k in range(gram.shape[0])}
    eye = np.eye(r)
    sg = (g * s).reshape(n * m, r) if residuals else None
    for j in range(n):
        if j not in window:
            window[j] = g[j].T @ g[j]
            window.pop(j - 4, None)
        if j == 0:
            b = np.zeros((r, r))
        elif j == 1:
            b = spacing / 2 * (window[0] + window[1])
        elif j % 2 == 0:
            even_prev = even_sum
            even_sum = even_sum + spacing / 3 * (window[j - 2] + 4 * window[j - 1] + window[j])
            b = even_sum
        else:
            b = even_prev + 3 * spacing / 8 * (window[j - 3] + 3 * window[j - 2] + 3 * window[j - 1] + window[j])
        sys = eye + s[:, None] * b
        cond = float(np.linalg.cond(sys))
        if not np.isfinite(cond) or cond > GL_COND_LIMIT:
            raise IllConditionedGL(f"GL system condition number {cond:.3g} at x={field_.x[j]:.6g}", cond=cond)
        conds[j] = cond
        p = np.linalg.solve(sys.T, g[j].T).T
        diag[j] = -(p * s) @ g[j].T
        if residuals:
            rv = g[j] - p @ sys
            res[j] = float(np.abs(rv @ sg[: (j + 1) * m].T).max())
    return GLSolution(field_.x, diag, res, conds)


def extract_potential(diagonal: np.ndarray, x: np.ndarray, reference: PotentialMatrix):
    """``V = V0 + 2 d/dx K(x, x)``, symmetrized; returns ``(potential, asymmetry)``."""
    dk = np.gradient(diagonal, x, axis=0, edge_order=2)
    v = reference.samples + 2.0 * dk
    if not np.all(np.isfinite(v)):
        raise NonFiniteMatrix("reconstructed potential is not finite")
    asym = float(np.abs(v - np.swapaxes(v, 1, 2)).max())
    v = 0.5 * (v + np.swapaxes(v, 1, 2))
    return PotentialMatrix(reference.grid, v), asym


@dataclass
class Reconstruction:
    potential: PotentialMatrix
    asymmetry: float
    truncation: int
    residuals: np.ndarray
    conditions: np.ndarray
    boundary_shift: np.ndarray  # K(0, 0): implied change of h
    notes: dict = field(default_factory=dict)


def reconstruct(data: SpectralData, reference: SpectralData | None = None, residuals: bool = True) -> Reconstruction:
    """Potential from spectral data: input kernel, GL rows on every grid point, extraction."""
    fld = kernel_field(data, reference)
    sol = solve_gl(fld, residuals=residuals)
    pot, asym = extract_potential(sol.diagonal, sol.x, data.reference)
    return Reconstruction(pot, asym, data.truncation, sol.residuals, sol.conditions, sol.diagonal[0].copy())

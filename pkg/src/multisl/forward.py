"""Forward solver for ``-y'' + V(x) y = lambda y`` on ``[0, a]`` with Robin ends.

Propagation
-----------
Matrix solutions are advanced on the model grid by a fixed-step fourth-order
scheme: the symmetric exponential-midpoint step (exact propagator for the
potential frozen at the sub-step midpoint, evaluated in the eigenbasis of that
frozen matrix) composed as a Yoshida triple jump.  The eigenbases depend only
on the potential, so every ``lambda`` reuses them and a whole batch of energies
is propagated with a handful of vectorized array operations per grid step.

Eigenvalues
-----------
Roots of ``det Phi(lambda)`` are bracketed with an exact per-interval root
count.  With ``Z = Y'(a) + H Y(a)`` the matrix
``W = (Z + i k Y)(Z - i k Y)^{-1}`` is unitary and its eigen-angles rotate
monotonically counter-clockwise in ``lambda``; every eigenvalue of the
boundary-value problem is one passage of an angle through ``pi``.  Counting
passages between scan points catches pairs of close roots that a pure
sign-change scan would step over, and flags degenerate (double) roots.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import simpson

from .errors import (
    DegenerateSpectrum,
    DimensionError,
    ExtrapolationDiverged,
    IntegrationOverflow,
    NearSingularDenominator,
    NonFiniteMatrix,
    NullSpaceAmbiguous,
    RootCountMismatch,
)
from .model import DEGENERACY_TOL, NormingVector, PotentialMatrix, ProblemSet, check_symmetric, sign_normalize

log = logging.getLogger(__name__)

OVERFLOW_LIMIT = 1e150
_CBRT2 = 2.0 ** (1.0 / 3.0)
_W1 = 1.0 / (2.0 - _CBRT2)
_W0 = 1.0 - 2.0 * _W1
# sub-step fractions of the triple jump and their midpoints within a grid step
_FRACTIONS = np.array([_W1, _W0, _W1])
_MIDPOINTS = np.array([_W1 / 2, _W1 + _W0 / 2, _W1 + _W0 + _W1 / 2])


@dataclass(frozen=True, eq=False)
class BoundarySolutionTrace:
    """Matrix solution and its x-derivative sampled on the model grid."""

    lam: float
    x: np.ndarray
    values: np.ndarray
    derivatives: np.ndarray

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def wronskian(self) -> np.ndarray:
        """``phi'^T phi - phi^T phi'`` at every grid point (constant in x)."""
        vt = np.swapaxes(self.values, 1, 2)
        dt = np.swapaxes(self.derivatives, 1, 2)
        return dt @ self.values - vt @ self.derivatives


@dataclass(frozen=True, eq=False)
class CharacteristicMatrix:
    lam: float
    phi: np.ndarray

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.phi))


@dataclass(frozen=True, eq=False)
class _Plan:
    """Potential-dependent data for the propagator; independent of lambda.

    Sub-steps are flattened: sub-step ``s`` belongs to grid step ``s // 3``.
    The state is carried in the eigenbasis of the frozen potential of the
    current sub-step, so ``rot[s] = Q_s^T Q_{s-1}`` is all that is needed to
    move between sub-steps.
    """

    taus: np.ndarray  # (3,) sub-step lengths
    v: np.ndarray  # (S, M) eigenvalues of V at sub-step midpoints
    rot: np.ndarray  # (S, M, M); rot[0] = Q_0^T
    q_out: np.ndarray  # (K, M, M) basis at the end of each grid step


@lru_cache(maxsize=16)
def _plan(pot: PotentialMatrix) -> _Plan:
    x = pot.grid.x
    h = pot.grid.spacing
    mids = x[:-1, None] + _MIDPOINTS[None, :] * h
    vm = pot.at(mids.ravel())
    vm = 0.5 * (vm + np.swapaxes(vm, 1, 2))
    w, q = np.linalg.eigh(vm)
    rot = np.empty_like(q)
    rot[0] = q[0].T
    rot[1:] = np.swapaxes(q[1:], 1, 2) @ q[:-1]
    return _Plan(taus=_FRACTIONS * h, v=w, rot=rot, q_out=q[2::3].copy())


def _free_blocks(w: np.ndarray, tau: float):
    """Exact propagator entries for ``y'' = -w y`` over a step ``tau``.

    Returns ``(c, s, t)`` with ``[y, y'] -> [c y + s y', t y + c y']``.
    """
    pos = w >= 0
    r = np.sqrt(np.abs(w))
    arg = r * abs(tau)
    c = np.where(pos, np.cos(arg), np.cosh(np.where(pos, 0.0, arg)))
    small = arg < 1e-8
    safe = np.where(small, 1.0, arg)
    sinc = np.where(pos, np.sin(safe) / safe, np.sinh(np.where(pos, 0.0, safe)) / safe)
    sinc = np.where(small, 1.0 - np.where(pos, 1.0, -1.0) * arg**2 / 6.0, sinc)
    s = tau * sinc
    return c, s, -w * s


_BLOCK = 96  # grid steps whose trig factors are evaluated together


def _run(plan: _Plan, lams: np.ndarray, u0: np.ndarray, record=None):
    """Advance the state ``u0`` (shape ``(M, B, 2M)``: rows of ``[Y | Y']``) to ``x = a``.

    ``record(k, u)`` is called after grid step ``k`` with the state mapped
    back to the original channel basis.
    """
    s_total, m = plan.v.shape
    k_total = s_total // 3
    b = lams.size
    u = (plan.rot[0] @ u0.reshape(m, -1)).reshape(m, b, 2 * m)
    for k0 in range(0, k_total, _BLOCK):
        k1 = min(k_total, k0 + _BLOCK)
        # (steps, 3, M, B) trig factors for this block
        w = lams[None, None, None, :] - plan.v[3 * k0 : 3 * k1].reshape(k1 - k0, 3, m)[..., None]
        blocks = [_free_blocks(w[:, j], plan.taus[j]) for j in range(3)]
        for k in range(k0, k1):
            for j in range(3):
                s = 3 * k + j
                if s:
                    u = (plan.rot[s] @ u.reshape(m, -1)).reshape(m, b, 2 * m)
                c, sn, t = (arr[k - k0][..., None] for arr in blocks[j])
                y, yp = u[..., :m], u[..., m:]
                u = np.concatenate([c * y + sn * yp, t * y + c * yp], axis=2)
            if record is not None:
                record(k, (plan.q_out[k] @ u.reshape(m, -1)).reshape(m, b, 2 * m))
    return (plan.q_out[-1] @ u.reshape(m, -1)).reshape(m, b, 2 * m)


def _to_pairs(u: np.ndarray):
    """``(M, B, 2M)`` state rows to ``(Y, Y')`` stacks of shape ``(B, M, M)``."""
    m = u.shape[0]
    return np.moveaxis(u[..., :m], 0, 1), np.moveaxis(u[..., m:], 0, 1)


def _overflow_error(pot, lam, k):
    x = float(pot.grid.x[min(k, pot.grid.n_points - 1)])
    return IntegrationOverflow(
        f"solution magnitude exceeded {OVERFLOW_LIMIT:g} at x={x:.6g} for lambda={lam:.6g}", x=x, lam=float(lam)
    )


def _bad(arr, axes):
    return (~np.isfinite(arr) | (np.abs(arr) > OVERFLOW_LIMIT)).any(axis=axes)


def propagate(pot: PotentialMatrix, left_h, lams, trace: bool = False):
    """Propagate ``phi(0) = I, phi'(0) = left_h`` for a batch of energies.

    Returns ``(Y, Yp)`` at ``x = a`` with shape ``(B, M, M)``, or along the
    whole grid with shape ``(B, n_points, M, M)`` when ``trace`` is true.
    """
    left_h = check_symmetric(left_h, "left_h")
    if left_h.shape[0] != pot.m:
        raise DimensionError(f"left_h is {left_h.shape}, potential has M={pot.m}")
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    if not np.all(np.isfinite(lams)):
        raise NonFiniteMatrix("lambda must be finite")
    plan = _plan(pot)
    m = pot.m
    b = lams.size
    # u0 rows are channels of [Y | Y'] with Y = I, Y' = left_h (symmetric)
    u0 = np.broadcast_to(np.concatenate([np.eye(m), left_h], axis=1)[:, None, :], (m, b, 2 * m)).copy()
    with np.errstate(over="ignore", invalid="ignore"):
        if not trace:
            y, yp = _to_pairs(_run(plan, lams, u0))
            bad = _bad(y, (1, 2)) | _bad(yp, (1, 2))
            if bad.any():
                j = int(np.argmax(bad))
                propagate(pot, left_h, lams[j : j + 1], trace=True)  # raises with the location
                raise _overflow_error(pot, lams[j], pot.grid.n_points - 1)  # pragma: no cover
            return y, yp
        n = pot.grid.n_points
        ys = np.empty((b, n, m, m))
        yps = np.empty((b, n, m, m))
        ys[:, 0] = np.eye(m)
        yps[:, 0] = left_h

        def record(k, u):
            ys[:, k + 1], yps[:, k + 1] = _to_pairs(u)

        _run(plan, lams, u0, record)
    bad = _bad(ys, (2, 3)) | _bad(yps, (2, 3))
    if bad.any():
        bi = int(np.argmax(bad.any(axis=1)))
        raise _overflow_error(pot, lams[bi], int(np.argmax(bad[bi])))
    return ys, yps


def integrate_matrix_solution(pot: PotentialMatrix, left_h, lam: float) -> BoundarySolutionTrace:
    """Matrix solution with ``phi(0) = I`` and ``phi'(0) = left_h`` along the grid."""
    y, yp = propagate(pot, left_h, [lam], trace=True)
    return BoundarySolutionTrace(float(lam), pot.grid.x, y[0], yp[0])


def characteristic_matrix(trace: BoundarySolutionTrace, big_h) -> CharacteristicMatrix:
    """``Phi = phi'(a)^T + phi(a)^T H``."""
    big_h = check_symmetric(big_h, "H")
    phi = trace.derivatives[-1].T + trace.values[-1].T @ big_h
    if not np.all(np.isfinite(phi)):
        raise NonFiniteMatrix(f"characteristic matrix is not finite at lambda={trace.lam}", lam=trace.lam)
    return CharacteristicMatrix(trace.lam, phi)


def boundary_z(ps: ProblemSet, which: int, lams) -> tuple[np.ndarray, np.ndarray]:
    """``(Y(a), Z)`` with ``Z = Y'(a) + H Y(a) = Phi^T`` for a batch of energies."""
    y, yp = propagate(ps.potential, ps.left_h(which), lams)
    return y, yp + ps.base.big_h[None] @ y


def characteristic_det(ps: ProblemSet, which: int, lam):
    """``det Phi(lambda)`` for problem ``which`` (0 = base, i = perturbed i)."""
    scalar = np.ndim(lam) == 0
    _, z = boundary_z(ps, which, lam)
    d = np.linalg.det(z)
    return float(d[0]) if scalar else d


# -- root location -----------------------------------------------------------


def _angles(y: np.ndarray, z: np.ndarray, kappa: np.ndarray) -> np.ndarray:
    """Sum of principal eigen-angles of ``W = (Z + i k Y)(Z - i k Y)^{-1}``."""
    kap = kappa[:, None, None]
    c = z - 1j * kap * y
    d = z + 1j * kap * y
    w = np.linalg.solve(c, d)  # similar to D C^{-1}
    return np.angle(np.linalg.eigvals(w)).sum(axis=1)


def _crossings(ya, za, yb, zb, kappa) -> np.ndarray:
    """Number of angle passages through pi between two energies (same kappa)."""
    sa = _angles(ya, za, kappa)
    sb = _angles(yb, zb, kappa)
    return (-np.floor((sb - sa) / (2 * np.pi) + 1e-9)).astype(int)


def _kappa(lams: np.ndarray, vmin: float, a: float) -> np.ndarray:
    return np.sqrt(np.maximum(lams - vmin, (np.pi / a) ** 2))


def _scan_step(lam: float, vmin: float, a: float, m: int, divisor: float) -> float:
    k = a * np.sqrt(max(lam - vmin, 0.0)) / np.pi
    return (np.pi / a) ** 2 * (2.0 * k + 1.0) / (m * divisor)


def weyl_count(pot: PotentialMatrix, lam: float) -> float:
    """Asymptotic eigenvalue count below ``lam`` for Robin-type boundaries."""
    vbar = np.linalg.eigvalsh(pot.mean())
    a = pot.grid.a
    return float(np.sum(a * np.sqrt(np.maximum(lam - vbar, 0.0)) / np.pi + 0.5 * (lam > vbar)))


def lowest_eigenvalue_estimate(ps: ProblemSet, which: int = 0) -> float:
    from .oracle import fd_eigenvalues

    n = max(200, min(800, ps.grid.n_points))
    return float(fd_eigenvalues(ps.potential, ps.left_h(which), ps.base.big_h, 1, n_points=n)[0])


@dataclass
class EigenReport:
    eigenvalues: np.ndarray
    scan_points: int = 0
    refinements: int = 0
    weyl_expected: float = 0.0
    weyl_found: int = 0
    notes: list = field(default_factory=list)


def _refine(f, lo, hi, flo, fhi, tol):
    """Vectorized Illinois (modified regula falsi) refinement of sign-change brackets.

    Once successive estimates agree to ``100 tol``, the two points
    ``x -+ 0.4 tol`` are evaluated, which closes the bracket to ``0.8 tol``
    around the root.  Returns bracket midpoints once every width is at most
    ``tol``.
    """
    lo, hi, flo, fhi = (np.array(v, dtype=float) for v in (lo, hi, flo, fhi))
    # interpolation weights; the Illinois rule halves the stale end
    glo, ghi = flo.copy(), fhi.copy()
    side = np.zeros(lo.size, dtype=int)
    prev = np.full(lo.size, np.inf)
    for _ in range(200):
        idx = np.nonzero(hi - lo > tol)[0]
        if idx.size == 0:
            break
        a_, b_ = lo[idx], hi[idx]
        x = (a_ * ghi[idx] - b_ * glo[idx]) / (ghi[idx] - glo[idx])
        x = np.where(np.isfinite(x) & (x > a_) & (x < b_), x, 0.5 * (a_ + b_))
        eps = 0.4 * tol[idx]
        close = np.abs(x - prev[idx]) < 100 * tol[idx]
        prev[idx] = x
        pa = np.clip(np.where(close, x - eps, x), a_, b_)
        pb = np.clip(x + eps, a_, b_)[close]
        vals = f(np.concatenate([pa, pb]))
        fa = vals[: idx.size]
        left = np.sign(fa) == np.sign(flo[idx])
        i_l, i_r = idx[left], idx[~left]
        lo[i_l], flo[i_l], glo[i_l] = pa[left], fa[left], fa[left]
        hi[i_r], fhi[i_r], ghi[i_r] = pa[~left], fa[~left], fa[~left]
        ghi[i_l[side[i_l] == -1]] *= 0.5
        glo[i_r[side[i_r] == 1]] *= 0.5
        side[i_l], side[i_r] = -1, 1
        if pb.size:
            ic = idx[close]
            fb = vals[idx.size :]
            # only ever shrink: pb may fall outside an already tightened bracket
            right = (np.sign(fb) != np.sign(flo[ic])) & (pb < hi[ic])
            left = (np.sign(fb) == np.sign(flo[ic])) & (pb > lo[ic])
            hi[ic[right]], fhi[ic[right]], ghi[ic[right]] = pb[right], fb[right], fb[right]
            lo[ic[left]], flo[ic[left]], glo[ic[left]] = pb[left], fb[left], fb[left]
    return 0.5 * (lo + hi)


def locate_eigenvalues(
    ps: ProblemSet,
    which: int,
    count: int,
    *,
    tol: float = 1e-12,
    degeneracy_tol: float = DEGENERACY_TOL,
    divisor: float = 8.0,
    lam_start: float | None = None,
    report: bool = False,
):
    """Lowest ``count`` eigenvalues of problem ``which`` in ascending order.

    Raises ``DegenerateSpectrum`` if two roots lie within the degeneracy
    tolerance and ``RootCountMismatch`` if the count disagrees with the Weyl
    estimate even after a refined rescan.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    try:
        return _locate(ps, which, count, tol, degeneracy_tol, divisor, lam_start, report)
    except RootCountMismatch:
        log.warning("root count mismatch for problem %d; rescanning with a finer step", which)
        return _locate(ps, which, count, tol, degeneracy_tol, divisor * 4, lam_start, report)


def _locate(ps, which, count, tol, degeneracy_tol, divisor, lam_start, report):
    pot = ps.potential
    a, m = pot.grid.a, pot.m
    vmin = float(np.linalg.eigvalsh(pot.samples).min())
    if lam_start is None:
        est = lowest_eigenvalue_estimate(ps, which)
        lam_start = est - 1.0 - 0.1 * abs(est)

    def z_at(lams):
        return boundary_z(ps, which, lams)

    def det_at(lams):
        return np.linalg.det(z_at(lams)[1])

    brackets = []  # (lo, hi, flo, fhi)
    n_scan = 0
    lam0 = lam_start
    y0, z0 = z_at([lam0])
    found = 0
    while found < count:
        # first pass runs past the Weyl estimate for `count` roots; later passes are fixed chunks
        pts = []
        lam = lam0
        while len(pts) < 256 or (n_scan == 0 and weyl_count(pot, lam) < count + m + 1):
            lam = lam + _scan_step(lam, vmin, a, m, divisor)
            pts.append(lam)
        pts = np.array(pts)
        y, z = z_at(pts)
        n_scan += pts.size
        lo = np.concatenate([[lam0], pts[:-1]])
        ylo = np.concatenate([y0, y[:-1]])
        zlo = np.concatenate([z0, z[:-1]])
        intervals = _resolve(ps, which, lo, pts, ylo, zlo, y, z, vmin, degeneracy_tol)
        for lo_i, hi_i, flo_i, fhi_i in intervals:
            if found >= count:
                break
            brackets.append((lo_i, hi_i, flo_i, fhi_i))
            found += 1
        lam0, y0, z0 = pts[-1], y[-1:], z[-1:]

    lo, hi, flo, fhi = (np.array(v) for v in zip(*brackets))
    roots = _refine(det_at, lo, hi, flo, fhi, tol * (1.0 + np.maximum(np.abs(lo), np.abs(hi))))
    roots = np.sort(roots)
    gaps = np.diff(roots)
    close = gaps < degeneracy_tol * (1.0 + np.abs(roots[1:]))
    if close.any():
        j = int(np.argmax(close))
        raise DegenerateSpectrum(
            f"eigenvalues {roots[j]:.12g} and {roots[j + 1]:.12g} are degenerate", which=which, lam=float(roots[j])
        )
    lam_top = float(roots[-1])
    expected = weyl_count(pot, lam_top)
    n_found = count
    if abs(n_found - expected) > m + 1:
        raise RootCountMismatch(
            f"found {n_found} roots below {lam_top:.6g}, Weyl estimate {expected:.1f}",
            which=which,
            lam=lam_top,
        )
    if report:
        return EigenReport(roots, n_scan, len(brackets), expected, n_found)
    return roots


def _resolve(ps, which, lo, hi, ylo, zlo, yhi, zhi, vmin, degeneracy_tol):
    """Split scan intervals until each holds at most one simple root.

    Returns a list of ``(lo, hi, det_lo, det_hi)`` brackets in ascending order.
    """
    a = ps.grid.a
    out = []
    stuck = []  # (lo, hi, count) of brackets that cannot be split further
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    for _ in range(60):
        if lo.size == 0:
            break
        kap = _kappa(hi, vmin, a)
        r = _crossings(ylo, zlo, yhi, zhi, kap)
        dlo = np.linalg.det(zlo)
        dhi = np.linalg.det(zhi)
        flip = np.sign(dlo) * np.sign(dhi) < 0
        ok1 = (r == 1) & flip
        for j in np.nonzero(ok1)[0]:
            out.append((lo[j], hi[j], dlo[j], dhi[j]))
        split = ((r >= 2) | ((r % 2 == 1) != flip)) & ~ok1
        if not split.any():
            break
        narrow = split & ((hi - lo) < degeneracy_tol * (1.0 + np.abs(hi)))
        for j in np.nonzero(narrow)[0]:
            stuck.append((lo[j], hi[j], int(r[j])))
        split &= ~narrow
        if not split.any():
            break
        idx = np.nonzero(split)[0]
        # quarter each offending interval
        edges = lo[idx, None] + (hi[idx] - lo[idx])[:, None] * np.linspace(0, 1, 5)[None, :]
        inner = edges[:, 1:-1].ravel()
        yi, zi = boundary_z(ps, which, inner)
        yi = yi.reshape(idx.size, 3, *yi.shape[1:])
        zi = zi.reshape(idx.size, 3, *zi.shape[1:])
        ys = np.concatenate([ylo[idx, None], yi, yhi[idx, None]], axis=1)
        zs = np.concatenate([zlo[idx, None], zi, zhi[idx, None]], axis=1)
        lo, hi = edges[:, :-1].ravel(), edges[:, 1:].ravel()
        ylo, yhi = ys[:, :-1].reshape(-1, *ys.shape[2:]), ys[:, 1:].reshape(-1, *ys.shape[2:])
        zlo, zhi = zs[:, :-1].reshape(-1, *zs.shape[2:]), zs[:, 1:].reshape(-1, *zs.shape[2:])
    if stuck:
        # relative tolerance makes high brackets narrow first; report the lowest
        lo_j, hi_j, r_j = min(stuck)
        if r_j >= 2:
            raise DegenerateSpectrum(f"{r_j} eigenvalues within [{lo_j:.12g}, {hi_j:.12g}]", which=which, lam=float(lo_j))
        raise RootCountMismatch(f"inconsistent root count near lambda={lo_j:.12g}", which=which, lam=float(lo_j))
    out.sort(key=lambda t: t[0])
    return out


# -- norming vectors ---------------------------------------------------------


def _null_direction(z: np.ndarray, degeneracy_tol: float = DEGENERACY_TOL):
    _, s, vt = np.linalg.svd(z)
    if s.size > 1 and s[-2] - s[-1] <= degeneracy_tol * s[0]:
        raise NullSpaceAmbiguous(
            f"two smallest singular values {s[-2]:.3e}, {s[-1]:.3e} are not separated", sigma=s.tolist()
        )
    return sign_normalize(vt[-1]), (s[-1] / s[0] if s[0] > 0 else 0.0)


def eigen_direction(ps: ProblemSet, which: int, lam_n: float, return_residual: bool = False):
    """Unit right null vector of ``Phi^T(lambda_n)`` (direction of gamma)."""
    _, z = boundary_z(ps, which, [lam_n])
    d, rel = _null_direction(z[0])
    return (d, rel) if return_residual else d


def eigen_residuals(ps: ProblemSet, which: int, lams) -> np.ndarray:
    """Smallest singular value of ``Phi(lambda)`` relative to the size of the boundary data.

    The scale is ``|Y'(a)| + (1 + |H|) |Y(a)|`` in the 2-norm, so the value
    stays meaningful for a single channel, where the ratio of singular values
    would always be one.
    """
    y, z = boundary_z(ps, which, np.atleast_1d(np.asarray(lams, dtype=float)))
    big_h = ps.base.big_h
    yp = z - big_h[None] @ y
    s_min = np.linalg.svd(z, compute_uv=False)[:, -1]
    scale = np.linalg.norm(yp, ord=2, axis=(1, 2)) + (1 + np.linalg.norm(big_h, 2)) * np.linalg.norm(y, ord=2, axis=(1, 2))
    return s_min / scale


def norming_vectors(ps: ProblemSet, which: int, lams) -> list[NormingVector]:
    """Direct norming vectors for a batch of located eigenvalues."""
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    x = ps.grid.x
    out = []
    # bound memory: traces are (B, n_points, M, M)
    per = max(1, 4_000_000 // (x.size * ps.m * ps.m * 2))
    big_h = ps.base.big_h
    for start in range(0, lams.size, per):
        chunk = lams[start : start + per]
        y, yp = propagate(ps.potential, ps.left_h(which), chunk, trace=True)
        for b, lam in enumerate(chunk):
            z = yp[b, -1] + big_h @ y[b, -1]
            d, _ = _null_direction(z)
            f = y[b] @ d
            norm2 = simpson(np.sum(f * f, axis=1), x=x)
            out.append(NormingVector(lam, sign_normalize(d / np.sqrt(norm2))))
    return out


def direct_norming_vector(ps: ProblemSet, which: int, lam_n: float) -> NormingVector:
    """``gamma`` such that ``phi(x, lambda_n) gamma`` has unit L2 norm."""
    return norming_vectors(ps, which, [lam_n])[0]


def eigenfunctions(ps: ProblemSet, which: int, norming: list[NormingVector]) -> np.ndarray:
    """``y_n(x) = phi(x, lambda_n) gamma_n`` sampled on the grid, shape (N, n_points, M)."""
    lams = np.array([nv.lam for nv in norming])
    y, _ = propagate(ps.potential, ps.left_h(which), lams, trace=True)
    g = np.stack([nv.gamma for nv in norming])
    return np.einsum("bxij,bj->bxi", y, g)


# -- Green identity and residue checks ---------------------------------------


def green_identity_terms(ps: ProblemSet, i: int, lam: float, lam_n: float, v, gamma_n=None) -> dict:
    """Both sides of the Green identity for ``f_i`` plus the right-end term.

    ``lhs = (lam - lam_n) int f_i(x) y_n(x) dx`` and
    ``rhs = v^T (h_i - h) gamma_n``.  ``boundary`` is
    ``(Phi_i + m_i Phi) . y_n(a)``; the exact identity is
    ``lhs = rhs - boundary``.  The boundary term vanishes when M = 1 (or when
    ``Phi_i`` is parallel to ``Phi``) because ``m_i`` is a single scalar.
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != ps.m:
        raise DimensionError(f"v has length {v.size}, expected {ps.m}")
    if gamma_n is None:
        gamma_n = direct_norming_vector(ps, 0, lam_n).gamma
    gamma_n = np.asarray(gamma_n, dtype=float)
    xi = ps.difference(i)
    rhs = float(v @ xi @ gamma_n)
    if not np.any(v):
        return {"lhs": 0.0, "rhs": 0.0, "boundary": 0.0, "m_i": 0.0}
    x = ps.grid.x
    big_h = ps.base.big_h
    y_phi, yp_phi = propagate(ps.potential, ps.base.h, [lam, lam_n], trace=True)
    y_chi, yp_chi = propagate(ps.potential, ps.left_h(i), [lam], trace=True)
    z = yp_phi[0, -1] + big_h @ y_phi[0, -1]
    z_i = yp_chi[0, -1] + big_h @ y_chi[0, -1]
    phi_vec = z @ v  # Phi = Phi_hat^T v
    phi_i_vec = z_i @ v
    den = float(phi_vec @ phi_vec)
    if abs(den) < 1e-12 * np.linalg.norm(z) ** 2 * float(v @ v):
        raise NearSingularDenominator(f"lambda={lam} is too close to a base eigenvalue", lam=lam)
    m_i = -float(phi_i_vec @ phi_vec) / den
    u = y_chi[0] @ v + m_i * (y_phi[0] @ v)  # f_i as a column function
    y_n = y_phi[1] @ gamma_n
    lhs = (lam - lam_n) * simpson(np.sum(u * y_n, axis=1), x=x)
    boundary = float((phi_i_vec + m_i * phi_vec) @ y_n[-1])
    return {"lhs": float(lhs), "rhs": rhs, "boundary": boundary, "m_i": m_i}


def green_identity_residual(ps: ProblemSet, i: int, lam: float, lam_n: float, v, gamma_n=None) -> float:
    """``|(lam - lam_n) int f_i y_n dx - v^T (h_i - h) gamma_n|``."""
    t = green_identity_terms(ps, i, lam, lam_n, v, gamma_n)
    return abs(t["lhs"] - t["rhs"])


RESIDUE_OFFSETS = (1e-3, 5e-4, 2.5e-4)


def residue_limit(pot: PotentialMatrix, h, h_i, big_h, lam_n: float, gamma_n, offsets=RESIDUE_OFFSETS) -> float:
    """Richardson limit of ``(lam - lam_n) (Phi_i . Phi) / (Phi . Phi)`` as lam -> lam_n.

    ``Phi = Phi_hat^T(lam) gamma_n`` uses the constant extension of gamma.
    """
    gamma_n = np.asarray(gamma_n, dtype=float)
    big_h = np.asarray(big_h, dtype=float)
    deltas = np.asarray(offsets) * (1.0 + abs(lam_n))
    lams = lam_n + deltas
    y, yp = propagate(pot, h, lams)
    yi, ypi = propagate(pot, h_i, lams)
    phi = (yp + big_h[None] @ y) @ gamma_n
    phi_i = (ypi + big_h[None] @ yi) @ gamma_n
    g = deltas * np.sum(phi_i * phi, axis=1) / np.sum(phi * phi, axis=1)
    # offsets halve, so two rounds of linear Richardson elimination
    r1 = 2 * g[1:] - g[:-1]
    est = (4 * r1[1] - r1[0]) / 3
    if abs(r1[1] - r1[0]) > 1e-3 * max(abs(est), 1e-12):
        raise ExtrapolationDiverged(
            f"residue estimates {r1[0]:.6g} and {r1[1]:.6g} disagree at lambda_n={lam_n}", lam=lam_n
        )
    return float(est)


def spectral_residue(ps: ProblemSet, i: int, lam_n: float, gamma_n=None) -> float:
    """Limit of ``(lam - lam_n) (Phi_i . Phi)/(Phi . Phi)`` at a base eigenvalue."""
    if gamma_n is None:
        gamma_n = direct_norming_vector(ps, 0, lam_n).gamma
    return residue_limit(ps.potential, ps.base.h, ps.left_h(i), ps.base.big_h, lam_n, gamma_n)

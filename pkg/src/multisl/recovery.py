"""Norming vectors from M + 1 spectra.

For each base eigenvalue ``lambda_n`` and perturbation ``i`` the spectra fix
the value of ``gamma^T (h_i - h) gamma`` through a ratio of products over the
two spectra.  The products are truncated at the available depth ``N`` and
the remainder is estimated from the large-index behaviour
``lambda_mu ~ (pi k / a)^2 + c`` with index-independent shifts
``lambda_mu^i - lambda_mu ~ d_i``.  The M targets per eigenvalue are then
linear in suitable bilinear variables, which are unfolded back into
``gamma``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, polygamma

from .errors import (
    ChainBreak,
    CrossSpectrumCollision,
    MultiSLError,
    NegativeSquare,
    NonPositivePivot,
    PatternError,
    RedundantPerturbation,
    SingularSystem,
    TailUnstable,
)
from .model import (
    DEGENERACY_TOL,
    NormingVector,
    PerturbationCross,
    PerturbationJacobi,
    SpectraSet,
    TailModel,
    sign_normalize,
)

TAIL_WINDOW = 10
TAIL_SPREAD_LIMIT = 0.2
SINGULAR_COND = 1e12
# pivot squares below this fraction of the typical target are rounding noise
PIVOT_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class QuadraticFormTargets:
    """``values[n, i]`` is the target for ``gamma_n^T (h_{i+1} - h) gamma_n`` (both 0-based)."""

    values: np.ndarray
    products: np.ndarray
    tails: np.ndarray
    errors: dict = field(default_factory=dict)  # 0-based n -> error recorded while building row n

    def __getitem__(self, n):
        if n in self.errors:
            raise MultiSLError.from_dict(self.errors[n])
        return self.values[n]

    @property
    def truncation(self) -> int:
        return self.values.shape[0]

    @property
    def scale(self) -> float:
        """Typical target magnitude: median over n of the largest ``|Q[n, i]|``."""
        mag = np.where(np.isfinite(self.values), np.abs(self.values), 0.0)
        return float(np.median(mag.max(axis=1)))


def cluster_index(mu, m: int):
    """Per-channel index ``k`` of merged eigenvalue ``mu`` (1-based), starting at 0."""
    return (np.asarray(mu) - 1) // m


def estimate_tail(spectra: SpectraSet, a: float, window: int = TAIL_WINDOW, check: bool = True) -> TailModel:
    """Shift and offset estimates from the last complete clusters of the spectra.

    The window is rounded up to whole clusters of M eigenvalues so that the
    per-channel shifts inside a cluster average out.  With at least three
    clusters of positive index, the cluster means are fitted as
    ``d + e / k^2``, which removes most of the finite-``k`` bias of ``d``.
    Stability is judged on the cluster means from ``k = 2`` on: their spread
    must stay below 20% of the shift, with an absolute floor for shifts that
    are essentially zero.
    """
    m = spectra.m
    n = spectra.truncation
    n_full = (n // m) * m
    clusters = max(1, -(-window // m))
    if n_full < m * clusters:
        clusters = n_full // m
    if clusters < 1:
        raise TailUnstable(f"truncation {n} is too small for a tail estimate with M={m}")
    stop = n_full
    start = stop - clusters * m
    mu = np.arange(start + 1, stop + 1)
    base = spectra.base_spectrum[start:stop]
    k = cluster_index(mu, m)
    offset = float(np.mean(base - (np.pi * k / a) ** 2))
    kc = k.reshape(clusters, m)[:, 0].astype(float)
    fit = kc > 0
    # the two lowest clusters are far from asymptotic; keep them out of the stability check
    settled = kc >= 2
    shifts = np.empty(m)
    slopes = np.zeros(m)
    spread = np.empty(m)
    for i, pert in enumerate(spectra.perturbed_spectra):
        diff = (pert[start:stop] - base).reshape(clusters, m).mean(axis=1)
        d = float(diff.mean())
        judged = diff[settled] if settled.sum() >= 2 else diff
        spread[i] = float(judged.max() - judged.min())
        # near-zero shifts get an absolute floor so rounding noise is not flagged
        if check and spread[i] > max(TAIL_SPREAD_LIMIT * abs(d), 1e-6):
            raise TailUnstable(
                f"shift estimate for perturbation {i + 1} has spread {spread[i]:.3g} around {d:.3g}",
                perturbation=i + 1,
            )
        if fit.sum() >= 3:
            design = np.stack([np.ones(fit.sum()), kc[fit] ** -2.0], axis=1)
            d, slopes[i] = np.linalg.lstsq(design, diff[fit], rcond=None)[0]
        shifts[i] = d
    return TailModel(n, shifts, offset, a, m, spread, slopes)


# clusters beyond the truncation whose factors are summed term by term
TAIL_EXPLICIT = 2000


def _tail_sum(lam_n: float, tail: TailModel, k_first: int | None = None) -> float:
    """``sum_{mu > N} 1 / ((pi k_mu / a)^2 + c - lam_n)``, or from cluster ``k_first`` on."""
    n, m, a = tail.truncation, tail.m, tail.a
    scale = (a / np.pi) ** 2
    total = 0.0
    if k_first is None:
        k_next = n // m  # cluster of mu = N + 1
        partial = (m - n % m) % m
        if partial:
            total += partial / ((np.pi * k_next / a) ** 2 + tail.asymptotic_offset - lam_n)
            k_next += 1
    else:
        k_next = k_first
    # sum_{k >= K} 1/(k^2 - z^2) with z^2 = (lam_n - c) (a/pi)^2
    z2 = (lam_n - tail.asymptotic_offset) * scale
    big_k = float(k_next)
    if abs(z2) < 1e-12:
        s = float(polygamma(1, big_k))
    else:
        z = np.sqrt(complex(z2))
        s = ((digamma(big_k + z) - digamma(big_k - z)) / (2.0 * z)).real
    return total + m * scale * float(s)


def _tail_log(lam_n: float, i: int, tail: TailModel) -> float:
    """``log prod_{mu > N} (lambda_mu - lambda_n) / (lambda_mu^i - lambda_n)`` under the tail model.

    The first ``TAIL_EXPLICIT`` clusters are summed exactly; beyond them the
    first-order term ``-d / (lambda_mu - lambda_n)`` in closed form is used.
    """
    n, m, a = tail.truncation, tail.m, tail.a
    d = float(tail.shift_estimates[i - 1])
    e = float(tail.shift_slopes[i - 1])
    mu = np.arange(n + 1, (n // m + TAIL_EXPLICIT) * m + 1)
    k = cluster_index(mu, m).astype(float)
    gap = (np.pi * k / a) ** 2 + tail.asymptotic_offset - lam_n
    shift = d + e / np.maximum(k, 1.0) ** 2
    ratio = shift / gap
    if np.any(gap <= 0) or np.any(ratio <= -1.0):
        raise TailUnstable(f"tail model is not valid at lambda_n = {lam_n:.6g}", lam=lam_n)
    return float(-np.sum(np.log1p(ratio)) - d * _tail_sum(lam_n, tail, n // m + TAIL_EXPLICIT))


def tail_correction(n: int, i: int, tail: TailModel, spectra: SpectraSet | None = None) -> float:
    """Estimated product of the omitted factors for eigenvalue ``n`` and perturbation ``i``.

    ``n`` and ``i`` are 1-based.  ``spectra`` defaults the evaluation point to
    ``lambda_n``; without it, ``lambda_n`` is taken from the offset model.
    """
    if tail.shift_estimates[i - 1] == 0.0 and tail.shift_slopes[i - 1] == 0.0:
        return 1.0
    if spectra is not None:
        lam_n = float(spectra.base_spectrum[n - 1])
    else:
        lam_n = (np.pi * int(cluster_index(n, tail.m)) / tail.a) ** 2 + tail.asymptotic_offset
    return float(np.exp(_tail_log(lam_n, i, tail)))


def truncated_product(n: int, i: int, spectra: SpectraSet, tol: float = DEGENERACY_TOL) -> float:
    """``prod_{mu != n} (lambda_mu - lambda_n) / (lambda_mu^i - lambda_n)`` in log space."""
    base = spectra.base_spectrum
    pert = spectra.perturbed_spectra[i - 1]
    lam_n = base[n - 1]
    num = np.delete(base, n - 1) - lam_n
    den = np.delete(pert, n - 1) - lam_n
    close = np.abs(den) < tol * (1.0 + abs(lam_n))
    if close.any():
        mu = int(np.nonzero(close)[0][0])
        mu += 1 if mu < n - 1 else 2
        raise CrossSpectrumCollision(
            f"lambda_{n} = {lam_n:.12g} collides with eigenvalue {mu} of perturbed spectrum {i}",
            n=n,
            i=i,
            mu=mu,
        )
    sign = np.prod(np.sign(num) * np.sign(den))
    return float(sign * np.exp(np.sum(np.log(np.abs(num))) - np.sum(np.log(np.abs(den)))))


def quadratic_form_targets(spectra: SpectraSet, tail: TailModel | None = None, strict: bool = True) -> QuadraticFormTargets:
    """Targets ``Q[n, i] = (lambda_n^i - lambda_n) / (P T)`` for every base eigenvalue.

    With ``strict=False`` a failing row (for example a cross-spectrum
    collision) is filled with NaN and its error is raised only when that row
    is requested.
    """
    n_total, m = spectra.truncation, spectra.m
    if tail is None:
        tail = TailModel.none(n_total, m)
    q = np.full((n_total, m), np.nan)
    p = np.full((n_total, m), np.nan)
    t = np.full((n_total, m), np.nan)
    errors = {}
    for n in range(1, n_total + 1):
        try:
            for i in range(1, m + 1):
                p[n - 1, i - 1] = truncated_product(n, i, spectra)
                t[n - 1, i - 1] = tail_correction(n, i, tail, spectra)
                shift = spectra.perturbed_spectra[i - 1][n - 1] - spectra.base_spectrum[n - 1]
                q[n - 1, i - 1] = shift / (p[n - 1, i - 1] * t[n - 1, i - 1])
        except MultiSLError as exc:
            if strict:
                raise
            q[n - 1] = np.nan
            errors[n - 1] = exc.to_dict()
    return QuadraticFormTargets(q, p, t, errors)


def consistency_ratio(spectra: SpectraSet, tail: TailModel, n: int, i: int, xi, gamma) -> float:
    """``P T gamma^T xi gamma / (lambda_n^i - lambda_n)``; equals one when the product identity holds."""
    shift = spectra.perturbed_spectra[i - 1][n - 1] - spectra.base_spectrum[n - 1]
    qf = float(np.asarray(gamma) @ np.asarray(xi) @ np.asarray(gamma))
    return truncated_product(n, i, spectra) * tail_correction(n, i, tail, spectra) * qf / shift


def _solve_linear(coeffs: np.ndarray, rhs: np.ndarray):
    cond = float(np.linalg.cond(coeffs))
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        raise SingularSystem(f"coefficient matrix is singular (condition number {cond:.3g})", cond=cond)
    return np.linalg.solve(coeffs, rhs), cond


def _floor(targets) -> float:
    return PIVOT_FLOOR * targets.scale if isinstance(targets, QuadraticFormTargets) else 0.0


def _check_perts(perts, kind, m):
    if len(perts) != m:
        raise PatternError(f"need {m} perturbations, got {len(perts)}")
    if not all(isinstance(p, kind) for p in perts):
        raise PatternError(f"all perturbations must be {kind.__name__}")
    if any(p.m != m for p in perts):
        raise PatternError("perturbation sizes do not match the number of spectra")
    pivots = {p.pivot for p in perts}
    if len(pivots) != 1:
        raise PatternError(f"perturbations must share one pivot, got {sorted(pivots)}")
    return pivots.pop()


def scheme_condition(perts) -> float:
    """Condition number of the scheme's coefficient matrix; raises ``SingularSystem`` if unusable."""
    rows = np.stack([p.coefficient_row() for p in perts])
    if rows.shape[0] != rows.shape[1]:
        raise PatternError(f"need {rows.shape[1]} perturbations, got {rows.shape[0]}")
    return _solve_linear(rows, np.zeros(rows.shape[0]))[1]


def jacobi_matrix(perts) -> np.ndarray:
    return np.stack([p.coefficient_row() for p in perts])


def unfold_jacobi(omega, pivot: int = 0, floor: float = 0.0) -> np.ndarray:
    """``gamma`` from ``omega = (gamma_l^2, gamma_0 gamma_1, ..., gamma_{M-2} gamma_{M-1})``."""
    omega = np.asarray(omega, dtype=float)
    m = omega.size
    if omega[0] <= floor:
        raise NonPositivePivot(f"pivot square {omega[0]:.6g} is not positive", value=float(omega[0]))
    g = np.empty(m)
    g[pivot] = np.sqrt(omega[0])
    edges = omega[1:]
    for e in range(pivot, m - 1):
        if g[e] == 0.0:
            raise ChainBreak(f"component {e} vanished; cannot continue the chain", component=e)
        g[e + 1] = edges[e] / g[e]
    for e in range(pivot - 1, -1, -1):
        if g[e + 1] == 0.0:
            raise ChainBreak(f"component {e + 1} vanished; cannot continue the chain", component=e + 1)
        g[e] = edges[e] / g[e + 1]
    return g


def solve_jacobi_scheme(targets, perts, n: int, return_cond: bool = False):
    """Recover ``gamma_n`` (``n`` 1-based) with tridiagonal perturbations."""
    q = np.asarray(targets[n - 1], dtype=float)
    pivot = _check_perts(perts, PerturbationJacobi, q.size)
    omega, cond = _solve_linear(jacobi_matrix(perts), q)
    g = sign_normalize(unfold_jacobi(omega, pivot, _floor(targets)))
    return (g, cond) if return_cond else g


def cross_matrix(perts) -> np.ndarray:
    return np.stack([p.coefficient_row() for p in perts])


def unfold_cross(theta, pivot: int, floor: float = 0.0) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta[pivot] <= floor:
        raise NonPositivePivot(f"pivot square {theta[pivot]:.6g} is not positive", value=float(theta[pivot]))
    gl = np.sqrt(theta[pivot])
    g = theta / gl
    g[pivot] = gl
    return g


def solve_cross_scheme(targets, perts, n: int, return_cond: bool = False):
    """Recover ``gamma_n`` (``n`` 1-based) with row/column perturbations at a shared pivot."""
    q = np.asarray(targets[n - 1], dtype=float)
    pivot = _check_perts(perts, PerturbationCross, q.size)
    theta, cond = _solve_linear(cross_matrix(perts), q)
    g = sign_normalize(unfold_cross(theta, pivot, _floor(targets)))
    return (g, cond) if return_cond else g


@dataclass
class RecoveryResult:
    vectors: list  # NormingVector or None per n
    condition: np.ndarray
    tail_factors: np.ndarray
    failures: dict = field(default_factory=dict)  # n (1-based) -> error dict
    scheme_used: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def gammas(self) -> np.ndarray:
        m = self.tail_factors.shape[1]
        return np.stack([v.gamma if v is not None else np.full(m, np.nan) for v in self.vectors])


# failures that indicate a vanishing pivot component and justify the fallback
_FALLBACK_ERRORS = (NonPositivePivot, ChainBreak, CrossSpectrumCollision)


def recover_all(spectra: SpectraSet, perts, tail: TailModel | None = None, fallback=None) -> RecoveryResult:
    """Recover every ``gamma_n``; per-n failures are collected, not raised.

    ``perts`` are all Jacobi or all cross records.  ``fallback`` is an optional
    ``(SpectraSet, cross perturbations, TailModel)`` triple used for the
    eigenvalues where the primary scheme sees a vanishing pivot component:
    a non-positive pivot square, a broken chain, or a collision of ``lambda_n``
    with a perturbed eigenvalue (the perturbation does not move it).
    """
    if isinstance(perts[0], PerturbationJacobi):
        solver, kind = solve_jacobi_scheme, "jacobi"
    elif isinstance(perts[0], PerturbationCross):
        solver, kind = solve_cross_scheme, "cross"
    else:
        raise PatternError(f"unknown perturbation type {type(perts[0]).__name__}")
    targets = quadratic_form_targets(spectra, tail, strict=False)
    fb_targets = None
    n_total = spectra.truncation
    vectors, conds, used, failures = [], np.full(n_total, np.nan), [], {}
    for n in range(1, n_total + 1):
        lam = float(spectra.base_spectrum[n - 1])
        try:
            g, conds[n - 1] = solver(targets, perts, n, return_cond=True)
            vectors.append(NormingVector(lam, g))
            used.append(kind)
            continue
        except MultiSLError as exc:
            if fallback is None or not isinstance(exc, _FALLBACK_ERRORS):
                failures[n] = exc.to_dict()
                vectors.append(None)
                used.append(None)
                continue
        try:
            fb_spectra, fb_perts, fb_tail = fallback
            if fb_targets is None:
                fb_targets = quadratic_form_targets(fb_spectra, fb_tail, strict=False)
            g, conds[n - 1] = solve_cross_scheme(fb_targets, fb_perts, n, return_cond=True)
            vectors.append(NormingVector(lam, g))
            used.append("cross")
        except MultiSLError as exc:
            failures[n] = exc.to_dict()
            vectors.append(None)
            used.append(None)
    return RecoveryResult(vectors, conds, targets.tails, failures, used)


def two_spectra_one_channel(spec1, spec2, h1: float, h2: float, tail: TailModel | None = None) -> np.ndarray:
    """Norming constants of the ``h1`` problem from its spectrum and the ``h2`` spectrum."""
    dh = float(h2) - float(h1)
    if dh == 0.0:
        raise RedundantPerturbation("h2 equals h1; the two spectra carry no information")
    spectra = SpectraSet(np.asarray(spec1, dtype=float), (np.asarray(spec2, dtype=float),))
    n_total = spectra.truncation
    if tail is None:
        tail = TailModel.none(n_total, 1)
    out = np.empty(n_total)
    for n in range(1, n_total + 1):
        p = truncated_product(n, 1, spectra)
        t = tail_correction(n, 1, tail, spectra)
        sq = (spec2[n - 1] - spec1[n - 1]) / (dh * p * t)
        if not sq > 0.0:
            raise NegativeSquare(f"gamma_{n}^2 = {sq:.6g} is not positive", n=n, value=float(sq))
        out[n - 1] = np.sqrt(sq)
    return out

"""Domain types shared by the solver, recovery and reconstruction layers.

All records are frozen; array fields are copied and marked read-only on
construction so they can be shared between workers without defensive copies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np

from .errors import (
    AsymmetricMatrix,
    DimensionError,
    DiscontinuousPotential,
    InvalidGrid,
    InvalidSpectra,
    PatternError,
    PivotOutOfRange,
    RedundantPerturbation,
)

SYMMETRY_TOL = 1e-12
DEGENERACY_TOL = 1e-6
# components smaller than this (relative to the vector norm) count as zero
# when fixing the overall sign of a norming vector
SIGN_ZERO_TOL = 1e-8


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def check_symmetric(m, name: str = "matrix", tol: float = SYMMETRY_TOL) -> np.ndarray:
    """Return ``m`` as a square float array, raising if it is not symmetric."""
    m = np.asarray(m, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {m.shape}", field=name)
    if not np.all(np.isfinite(m)):
        raise AsymmetricMatrix(f"{name} has non-finite entries", field=name)
    gap = np.abs(m - m.T)
    if np.any(gap > tol * (1.0 + np.abs(m))):
        raise AsymmetricMatrix(f"{name} is not symmetric (max |m - m^T| = {gap.max():.3e})", field=name)
    return m


def degenerate(x: float, y: float, tol: float = DEGENERACY_TOL) -> bool:
    return abs(x - y) < tol * (1.0 + max(abs(x), abs(y)))


def sign_normalize(v) -> np.ndarray:
    """Flip ``v`` so its first non-negligible component is positive."""
    v = np.asarray(v, dtype=float)
    scale = np.max(np.abs(v)) if v.size else 0.0
    if scale == 0.0:
        return v.copy()
    for comp in v:
        if abs(comp) > SIGN_ZERO_TOL * scale:
            return v.copy() if comp > 0 else -v
    return v.copy()  # pragma: no cover


@dataclass(frozen=True)
class Grid:
    """Uniform grid on ``[0, a]`` including both endpoints."""

    a: float
    n_points: int

    def __post_init__(self):
        if not (np.isfinite(self.a) and self.a > 0):
            raise InvalidGrid(f"interval length must be positive, got {self.a}", field="a")
        if int(self.n_points) != self.n_points or self.n_points < 3:
            raise InvalidGrid(f"n_points must be an integer >= 3, got {self.n_points}", field="n_points")
        object.__setattr__(self, "n_points", int(self.n_points))
        object.__setattr__(self, "a", float(self.a))

    @property
    def spacing(self) -> float:
        return self.a / (self.n_points - 1)

    @cached_property
    def x(self) -> np.ndarray:
        return _frozen(np.arange(self.n_points) * self.spacing)


@dataclass(frozen=True, eq=False)
class PotentialMatrix:
    """Grid-sampled real symmetric potential matrix with thresholds folded in.

    ``samples`` has shape ``(n_points, M, M)`` and already contains the channel
    thresholds on its diagonal; the raw thresholds are kept only for reporting.
    """

    grid: Grid
    samples: np.ndarray
    thresholds: np.ndarray = field(default=None)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None, None]
        if s.ndim != 3 or s.shape[1] != s.shape[2]:
            raise DimensionError(f"samples must have shape (n_points, M, M), got {s.shape}", field="samples")
        if s.shape[0] != self.grid.n_points:
            raise DimensionError(
                f"samples cover {s.shape[0]} points but grid has {self.grid.n_points}", field="samples"
            )
        if not np.all(np.isfinite(s)):
            raise DimensionError("potential samples must be finite", field="samples")
        gap = np.abs(s - np.swapaxes(s, 1, 2))
        if np.any(gap > SYMMETRY_TOL * (1.0 + np.abs(s))):
            raise AsymmetricMatrix(f"potential is not symmetric (max gap {gap.max():.3e})", field="samples")
        m = s.shape[1]
        eps = np.zeros(m) if self.thresholds is None else np.asarray(self.thresholds, dtype=float).reshape(-1)
        if eps.shape != (m,):
            raise DimensionError(f"expected {m} thresholds, got {eps.shape}", field="thresholds")
        s = 0.5 * (s + np.swapaxes(s, 1, 2)) + np.diag(eps)[None]
        object.__setattr__(self, "samples", _frozen(s))
        object.__setattr__(self, "thresholds", _frozen(eps))

    @classmethod
    def from_function(cls, grid: Grid, func, thresholds=None, m: int | None = None) -> "PotentialMatrix":
        """Sample ``func(x) -> (M, M)`` (vectorized over x or not) on ``grid``."""
        x = grid.x
        try:
            vals = np.asarray(func(x), dtype=float)
            if vals.shape[0] != x.size:
                raise ValueError
        except (ValueError, TypeError):
            vals = np.stack([np.asarray(func(xi), dtype=float) for xi in x])
        if vals.ndim == 1:
            vals = vals[:, None, None]
        return cls(grid, vals, thresholds)

    @classmethod
    def zero(cls, grid: Grid, m: int, thresholds=None) -> "PotentialMatrix":
        return cls(grid, np.zeros((grid.n_points, m, m)), thresholds)

    @property
    def m(self) -> int:
        return self.samples.shape[1]

    def check_lipschitz(self, cap: float) -> None:
        """Raise if adjacent samples differ by more than ``cap * spacing``."""
        jump = np.abs(np.diff(self.samples, axis=0)).max(initial=0.0)
        if jump > cap * self.grid.spacing:
            raise DiscontinuousPotential(
                f"adjacent-sample jump {jump:.3e} exceeds Lipschitz cap {cap} * spacing", field="samples"
            )

    @cached_property
    def spline(self):
        from scipy.interpolate import CubicSpline

        return CubicSpline(self.grid.x, self.samples, axis=0)

    def at(self, x) -> np.ndarray:
        """Cubic-spline interpolation of the samples; symmetric by construction."""
        return self.spline(x)

    def resampled(self, grid: Grid) -> "PotentialMatrix":
        if abs(grid.a - self.grid.a) > 1e-12 * self.grid.a:
            raise DimensionError("cannot resample onto a grid of different length", field="grid")
        return PotentialMatrix(grid, self.at(grid.x))

    def mean(self) -> np.ndarray:
        from scipy.integrate import simpson

        return simpson(self.samples, x=self.grid.x, axis=0) / self.grid.a


@dataclass(frozen=True, eq=False)
class BoundarySpec:
    """Robin matrices: ``y'(0) = h y(0)`` and ``y'(a) + H y(a) = 0``."""

    h: np.ndarray
    big_h: np.ndarray

    def __post_init__(self):
        h = check_symmetric(self.h, "h")
        big_h = check_symmetric(self.big_h, "H")
        if h.shape != big_h.shape:
            raise DimensionError(f"h {h.shape} and H {big_h.shape} differ in size", field="H")
        object.__setattr__(self, "h", _frozen(h))
        object.__setattr__(self, "big_h", _frozen(big_h))

    @property
    def m(self) -> int:
        return self.h.shape[0]


@dataclass(frozen=True, eq=False)
class ProblemSet:
    """The base problem plus M problems that differ only in the left matrix."""

    potential: PotentialMatrix
    base: BoundarySpec
    perturbed_h: tuple

    def __post_init__(self):
        m = self.potential.m
        if self.base.m != m:
            raise DimensionError(f"boundary matrices are {self.base.m}x{self.base.m}, potential is {m}x{m}")
        hs = tuple(check_symmetric(h, f"perturbed_h[{k}]") for k, h in enumerate(self.perturbed_h))
        if len(hs) != m:
            raise DimensionError(f"need exactly M={m} perturbed matrices, got {len(hs)}", field="perturbed_h")
        for k, h in enumerate(hs):
            if h.shape != (m, m):
                raise DimensionError(f"perturbed_h[{k}] has shape {h.shape}", field=f"perturbed_h[{k}]")
            if np.allclose(h, self.base.h, rtol=0.0, atol=SYMMETRY_TOL):
                raise RedundantPerturbation(
                    f"perturbed_h[{k}] equals the base h; the problem would be redundant",
                    field=f"perturbed_h[{k}]",
                )
        object.__setattr__(self, "perturbed_h", tuple(_frozen(h) for h in hs))

    @property
    def m(self) -> int:
        return self.potential.m

    @property
    def grid(self) -> Grid:
        return self.potential.grid

    def left_h(self, which: int = 0) -> np.ndarray:
        """Left matrix of problem ``which`` (0 = base, i = perturbed i, 1-based)."""
        if which == 0:
            return self.base.h
        if not 1 <= which <= self.m:
            raise PivotOutOfRange(f"problem index {which} outside 0..{self.m}")
        return self.perturbed_h[which - 1]

    def difference(self, i: int) -> np.ndarray:
        """``h_i - h`` for perturbation ``i`` (1-based)."""
        return self.left_h(i) - self.base.h


@dataclass(frozen=True, eq=False)
class SpectraSet:
    """Base spectrum and M perturbed spectra, truncated at a common depth."""

    base_spectrum: np.ndarray
    perturbed_spectra: tuple

    def __post_init__(self):
        base = np.asarray(self.base_spectrum, dtype=float)
        pert = tuple(np.asarray(s, dtype=float) for s in self.perturbed_spectra)
        if base.ndim != 1 or base.size == 0:
            raise InvalidSpectra("base spectrum must be a non-empty 1-D list")
        for k, s in enumerate((base,) + pert):
            if s.shape != base.shape:
                raise InvalidSpectra(f"spectrum {k} has length {s.size}, expected {base.size}")
            if not np.all(np.isfinite(s)):
                raise InvalidSpectra(f"spectrum {k} has non-finite entries")
            gaps = np.diff(s)
            tol = DEGENERACY_TOL * (1.0 + np.abs(s[1:]))
            if np.any(gaps <= tol):
                j = int(np.argmax(gaps <= tol))
                raise InvalidSpectra(
                    f"spectrum {k} is not strictly increasing beyond the degeneracy tolerance at index {j}",
                    spectrum=k,
                    index=j,
                )
        object.__setattr__(self, "base_spectrum", _frozen(base))
        object.__setattr__(self, "perturbed_spectra", tuple(_frozen(s) for s in pert))

    @property
    def truncation(self) -> int:
        return self.base_spectrum.size

    @property
    def m(self) -> int:
        return len(self.perturbed_spectra)

    def truncated(self, n: int) -> "SpectraSet":
        return SpectraSet(self.base_spectrum[:n], tuple(s[:n] for s in self.perturbed_spectra))


@dataclass(frozen=True, eq=False)
class NormingVector:
    lam: float
    gamma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "gamma", _frozen(np.atleast_1d(self.gamma)))


@dataclass(frozen=True, eq=False)
class PerturbationJacobi:
    """Tridiagonal ``h_i - h`` with a single non-zero diagonal entry.

    ``diag`` sits at channel ``pivot`` (0-based); ``off[k]`` couples channels
    ``k`` and ``k + 1``.
    """

    diag: float
    off: np.ndarray
    pivot: int = 0

    def __post_init__(self):
        off = np.atleast_1d(np.asarray(self.off, dtype=float))
        if not np.all(np.isfinite(off)) or not np.isfinite(self.diag):
            raise PatternError("Jacobi couplings must be finite")
        object.__setattr__(self, "off", _frozen(off))
        object.__setattr__(self, "diag", float(self.diag))

    @property
    def m(self) -> int:
        return self.off.size + 1

    def coefficient_row(self) -> np.ndarray:
        """Coefficients of (omega_pivot, omega_edge_1, ..., omega_edge_{M-1})."""
        return np.concatenate([[self.diag], 2.0 * self.off])


@dataclass(frozen=True, eq=False)
class PerturbationCross:
    """``h_i - h`` supported on row and column ``pivot`` (0-based).

    ``row[pivot]`` is the diagonal entry, the remaining entries are the
    couplings of the pivot channel to every other channel.
    """

    pivot: int
    row: np.ndarray

    def __post_init__(self):
        row = np.atleast_1d(np.asarray(self.row, dtype=float))
        if not np.all(np.isfinite(row)):
            raise PatternError("cross couplings must be finite")
        object.__setattr__(self, "row", _frozen(row))
        object.__setattr__(self, "pivot", int(self.pivot))

    @property
    def m(self) -> int:
        return self.row.size

    def coefficient_row(self) -> np.ndarray:
        """Coefficients of theta_k = gamma_pivot * gamma_k (theta_pivot = gamma_pivot**2)."""
        out = 2.0 * self.row.copy()
        out[self.pivot] = self.row[self.pivot]
        return out


Perturbation = Union[PerturbationJacobi, PerturbationCross]


@dataclass(frozen=True, eq=False)
class TailModel:
    """Asymptotic model for the spectra beyond the truncation depth.

    ``lambda_mu ~ (pi * k / a)**2 + offset`` with ``k`` the per-channel index,
    and ``lambda_mu^i - lambda_mu ~ shift_estimates[i - 1] + shift_slopes[i - 1] / k**2``.
    """

    truncation: int
    shift_estimates: np.ndarray
    asymptotic_offset: float
    a: float
    m: int
    spread: np.ndarray = field(default=None)
    shift_slopes: np.ndarray = field(default=None)

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.shift_estimates, dtype=float))
        if not np.all(np.isfinite(d)):
            raise InvalidSpectra("tail shift estimates must be finite")
        object.__setattr__(self, "shift_estimates", _frozen(d))
        e = np.zeros_like(d) if self.shift_slopes is None else np.atleast_1d(np.asarray(self.shift_slopes, float))
        if e.shape != d.shape or not np.all(np.isfinite(e)):
            raise InvalidSpectra("tail shift slopes must be finite and match the shift estimates")
        object.__setattr__(self, "shift_slopes", _frozen(e))
        if self.spread is not None:
            object.__setattr__(self, "spread", _frozen(self.spread))

    @classmethod
    def none(cls, truncation: int, m: int, a: float = np.pi) -> "TailModel":
        """A model that applies no correction (all shifts zero)."""
        return cls(truncation, np.zeros(m), 0.0, a, m)


def quadratic_form(m, v) -> float:
    """Return ``v^T m v``."""
    m = np.asarray(m, dtype=float)
    v = np.asarray(v, dtype=float).reshape(-1)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2 or m.shape != (v.size, v.size):
        raise DimensionError(f"matrix {m.shape} incompatible with vector of length {v.size}")
    return float(v @ m @ v)


def assemble_perturbation(p: Perturbation) -> np.ndarray:
    """Dense symmetric matrix for a Jacobi or cross perturbation record."""
    m = p.m
    if not 0 <= p.pivot < m:
        raise PivotOutOfRange(f"pivot {p.pivot} outside 0..{m - 1}")
    out = np.zeros((m, m))
    if isinstance(p, PerturbationJacobi):
        out[p.pivot, p.pivot] = p.diag
        k = np.arange(m - 1)
        out[k, k + 1] = p.off
        out[k + 1, k] = p.off
    elif isinstance(p, PerturbationCross):
        out[p.pivot, :] = p.row
        out[:, p.pivot] = p.row
    else:
        raise PatternError(f"unknown perturbation type {type(p).__name__}")
    return out


def classify_perturbation(xi, kind: str, pivot: int = 0) -> Perturbation:
    """Recover a perturbation record from a dense ``h_i - h`` matrix.

    Raises ``PatternError`` if ``xi`` has entries outside the sparsity pattern
    of the requested kind.
    """
    xi = check_symmetric(xi, "perturbation")
    m = xi.shape[0]
    if not 0 <= pivot < m:
        raise PivotOutOfRange(f"pivot {pivot} outside 0..{m - 1}")
    if kind == "jacobi":
        rec = PerturbationJacobi(xi[pivot, pivot], np.diagonal(xi, 1).copy(), pivot)
    elif kind == "cross":
        rec = PerturbationCross(pivot, xi[pivot].copy())
    else:
        raise PatternError(f"unknown scheme {kind!r}")
    if not np.allclose(assemble_perturbation(rec), xi, rtol=0.0, atol=1e-14 * (1 + np.abs(xi).max())):
        raise PatternError(f"matrix does not have the {kind} pattern at pivot {pivot}")
    return rec


def as_perturbations(ps: ProblemSet, kind: str, pivot: int = 0) -> list:
    return [classify_perturbation(ps.difference(i), kind, pivot) for i in range(1, ps.m + 1)]


def stack_matrices(ms: Sequence) -> np.ndarray:
    return np.stack([np.asarray(m, dtype=float) for m in ms])

"""Named potentials and perturbation sets used by configs, tests and scripts."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError, UnknownPreset
from .model import BoundarySpec, Grid, PotentialMatrix, ProblemSet

# Small off-diagonal coupling used by the default perturbation sets.  The
# product identity is exact only for rank-one perturbations, and with a
# single diagonal entry any coupling makes the matrix rank two, so the
# recovered norming vectors carry an error proportional to this value.
DEFAULT_EPSILON = 1e-5

POTENTIAL_PRESETS = ("free", "decoupled", "coupled-sine", "coupled-gauss", "table")


def _default_thresholds(m: int) -> np.ndarray:
    return 0.5 * np.arange(m, dtype=float)


def _neighbour_coupling(grid: Grid, m: int, profile: np.ndarray) -> np.ndarray:
    out = np.zeros((grid.n_points, m, m))
    for k in range(m - 1):
        out[:, k, k + 1] = out[:, k + 1, k] = profile
    return out


def make_potential(grid: Grid, preset: str, m: int = 1, thresholds=None, **params) -> PotentialMatrix:
    """Build a preset potential on ``grid``.

    ``free``
        zero potential and zero thresholds unless given.
    ``decoupled``
        zero coupling; the thresholds alone separate the channels.
    ``coupled-sine``
        neighbouring channels coupled by ``c sin(pi x / a)``.
    ``coupled-gauss``
        neighbouring channels coupled by ``c exp(-(x - center)^2 / (2 width^2))``.
    ``table``
        explicit ``samples`` of shape ``(n_points, M, M)``.
    """
    if preset not in POTENTIAL_PRESETS:
        raise UnknownPreset(f"unknown potential preset {preset!r}; choose from {', '.join(POTENTIAL_PRESETS)}",
                            field="potential.preset")
    if preset == "table":
        if "samples" not in params:
            raise ConfigError("table preset needs 'samples'", field="potential.samples")
        samples = np.asarray(params.pop("samples"), dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None, None]
        _no_extra(params)
        return PotentialMatrix(grid, samples, thresholds)
    if m < 1:
        raise DimensionError(f"channel count must be positive, got {m}", field="potential.m")
    if thresholds is None:
        thresholds = np.zeros(m) if preset == "free" else _default_thresholds(m)
    x, a = grid.x, grid.a
    if preset in ("free", "decoupled"):
        _no_extra(params)
        return PotentialMatrix.zero(grid, m, thresholds)
    if preset == "coupled-sine":
        c = float(params.pop("c", 0.3))
        _no_extra(params)
        return PotentialMatrix(grid, _neighbour_coupling(grid, m, c * np.sin(np.pi * x / a)), thresholds)
    c = float(params.pop("c", 0.3))
    center = float(params.pop("center", a / 2))
    width = float(params.pop("width", 0.4))
    _no_extra(params)
    if width <= 0:
        raise ConfigError(f"width must be positive, got {width}", field="potential.width")
    prof = c * np.exp(-((x - center) ** 2) / (2 * width**2))
    return PotentialMatrix(grid, _neighbour_coupling(grid, m, prof), thresholds)


def _no_extra(params: dict) -> None:
    if params:
        key = sorted(params)[0]
        raise ConfigError(f"unexpected potential parameter {key!r}", field=f"potential.{key}")


def default_perturbations(m: int, scheme: str = "jacobi", pivot: int = 0, epsilon: float = DEFAULT_EPSILON):
    """``M`` matrices ``h_i - h`` with a well-posed coefficient matrix.

    The first has a unit entry on the pivot diagonal.  Each further one adds
    ``epsilon`` on one coupling: consecutive edges for the Jacobi scheme, the
    pivot row for the cross scheme.  The coefficient matrix then has
    condition number about ``1 / epsilon``.
    """
    if not 0 <= pivot < m:
        raise ConfigError(f"pivot {pivot} outside 0..{m - 1}", field="perturbations.pivot")
    base = np.zeros((m, m))
    base[pivot, pivot] = 1.0
    out = [base]
    if scheme == "jacobi":
        for k in range(m - 1):
            xi = base.copy()
            xi[k, k + 1] = xi[k + 1, k] = epsilon
            out.append(xi)
    elif scheme == "cross":
        for k in range(m):
            if k == pivot:
                continue
            xi = base.copy()
            xi[pivot, k] = xi[k, pivot] = epsilon
            out.append(xi)
    else:
        raise ConfigError(f"unknown scheme {scheme!r}", field="perturbations.scheme")
    return out


def coupled_problem(
    n_points: int = 2001, c: float = 0.3, scheme: str = "jacobi", pivot: int = 0, epsilon: float = DEFAULT_EPSILON
) -> ProblemSet:
    """The two-channel sine-coupled test problem on ``[0, pi]`` with thresholds (0, 0.5)."""
    grid = Grid(np.pi, n_points)
    pot = make_potential(grid, "coupled-sine", m=2, thresholds=[0.0, 0.5], c=c)
    h = np.zeros((2, 2))
    xis = default_perturbations(2, scheme, pivot, epsilon)
    return ProblemSet(pot, BoundarySpec(h, h), tuple(h + xi for xi in xis))


def free_problem(n_points: int = 2001, dh: float = 1.0) -> ProblemSet:
    """One channel, zero potential on ``[0, pi]``, Neumann ends, perturbed by ``dh``."""
    grid = Grid(np.pi, n_points)
    return ProblemSet(PotentialMatrix.zero(grid, 1), BoundarySpec([[0.0]], [[0.0]]), ([[dh]],))

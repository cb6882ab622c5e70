"""Exception hierarchy.

Every error carries a stable string ``code`` and the process ``exit_code`` the
CLI maps it to: 2 for configuration problems, 3 for solver failures and 4 for
tolerance failures.
"""

from __future__ import annotations


class MultiSLError(Exception):
    code = "E_GENERIC"
    exit_code = 3

    def __init__(self, message: str = "", **context):
        super().__init__(message)
        self.context = context

    def to_dict(self) -> dict:
        out = {"error": type(self).__name__, "code": self.code, "message": str(self)}
        if self.context:
            out["context"] = {k: _jsonable(v) for k, v in self.context.items()}
        return out

    @classmethod
    def from_dict(cls, info: dict, **extra) -> "MultiSLError":
        """Rebuild an error recorded with :meth:`to_dict`."""
        kinds = {}
        stack = [MultiSLError]
        while stack:
            k = stack.pop()
            kinds[k.__name__] = k
            stack.extend(k.__subclasses__())
        kind = kinds.get(info.get("error"), MultiSLError)
        return kind(info.get("message", ""), **{**info.get("context", {}), **extra})


def _jsonable(v):
    try:
        import numpy as np

        if isinstance(v, np.generic):
            return v.item()
        if isinstance(v, np.ndarray):
            return v.tolist()
    except ImportError:  # pragma: no cover
        pass
    return v


# -- configuration / validation (exit 2) ------------------------------------


class ConfigError(MultiSLError, ValueError):
    code = "E_CONFIG"
    exit_code = 2


class DimensionError(ConfigError):
    code = "E_DIMENSION"


class AsymmetricMatrix(ConfigError):
    code = "E_ASYMMETRIC_MATRIX"


class RedundantPerturbation(ConfigError):
    """A perturbed left-boundary matrix equals the base one."""

    code = "E_REDUNDANT_PERTURBATION"


class InvalidGrid(ConfigError):
    code = "E_INVALID_GRID"


class DiscontinuousPotential(ConfigError):
    code = "E_DISCONTINUOUS_POTENTIAL"


class InvalidSpectra(ConfigError):
    code = "E_INVALID_SPECTRA"


class UnknownPreset(ConfigError):
    code = "E_UNKNOWN_PRESET"


class PatternError(ConfigError):
    """Perturbation record does not have the Jacobi/cross sparsity pattern."""

    code = "E_PERTURBATION_PATTERN"


class PivotOutOfRange(ConfigError, IndexError):
    code = "E_PIVOT_RANGE"


# -- solver (exit 3) ---------------------------------------------------------


class SolverError(MultiSLError):
    code = "E_SOLVER"
    exit_code = 3


class IntegrationOverflow(SolverError):
    code = "E_INTEGRATION_OVERFLOW"


class NonFiniteMatrix(SolverError):
    code = "E_NON_FINITE"


class DegenerateSpectrum(SolverError):
    code = "E_DEGENERATE_SPECTRUM"


class RootCountMismatch(SolverError):
    code = "E_ROOT_COUNT"


class NullSpaceAmbiguous(SolverError):
    code = "E_NULLSPACE_AMBIGUOUS"


class NearSingularDenominator(SolverError):
    code = "E_NEAR_SINGULAR"


class ExtrapolationDiverged(SolverError):
    code = "E_EXTRAPOLATION"


class CrossSpectrumCollision(SolverError):
    code = "E_CROSS_COLLISION"


class TailUnstable(SolverError):
    code = "E_TAIL_UNSTABLE"


class SingularSystem(SolverError):
    code = "E_SINGULAR_SYSTEM"


class NonPositivePivot(SolverError):
    code = "E_NON_POSITIVE_PIVOT"


class ChainBreak(SolverError):
    code = "E_CHAIN_BREAK"


class NegativeSquare(SolverError):
    code = "E_NEGATIVE_SQUARE"


class TruncationMismatch(SolverError):
    code = "E_TRUNCATION_MISMATCH"


class IllConditionedGL(SolverError):
    code = "E_GL_ILL_CONDITIONED"


# -- tolerance (exit 4) ------------------------------------------------------


class ToleranceFailure(MultiSLError):
    code = "E_TOLERANCE"
    exit_code = 4

"""Shared fixtures.  Deep spectra are expensive, so they are computed once per session."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from multisl.forward import locate_eigenvalues, norming_vectors
from multisl.presets import coupled_problem, free_problem


@dataclass
class CoupledData:
    jacobi: object  # ProblemSet with Jacobi perturbations (pivot 0)
    cross: object  # same potential, cross perturbations (pivot 1)
    base: np.ndarray
    gammas: np.ndarray  # direct norming vectors of the base problem
    pert_jacobi: tuple
    pert_cross: tuple


@dataclass
class FreeData:
    problem: object
    base: np.ndarray
    pert: np.ndarray


@pytest.fixture(scope="session")
def coupled200() -> CoupledData:
    psj = coupled_problem(scheme="jacobi", pivot=0)
    psc = coupled_problem(scheme="cross", pivot=1)
    n = 200
    base = locate_eigenvalues(psj, 0, n)
    gam = np.stack([v.gamma for v in norming_vectors(psj, 0, base)])
    pj = tuple(locate_eigenvalues(psj, i, n) for i in (1, 2))
    pc = tuple(locate_eigenvalues(psc, i, n) for i in (1, 2))
    return CoupledData(psj, psc, base, gam, pj, pc)


@pytest.fixture(scope="session")
def free200() -> FreeData:
    ps = free_problem()
    return FreeData(ps, locate_eigenvalues(ps, 0, 200), locate_eigenvalues(ps, 1, 200))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)

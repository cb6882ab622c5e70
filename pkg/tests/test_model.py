import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from multisl.errors import (
    AsymmetricMatrix,
    DimensionError,
    InvalidSpectra,
    PatternError,
    PivotOutOfRange,
    RedundantPerturbation,
)
from multisl.model import (
    BoundarySpec,
    Grid,
    PerturbationCross,
    PerturbationJacobi,
    PotentialMatrix,
    ProblemSet,
    SpectraSet,
    assemble_perturbation,
    classify_perturbation,
    quadratic_form,
    sign_normalize,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_quadratic_form_expansion():
    xi = assemble_perturbation(PerturbationJacobi(1.0, [2.0]))
    assert quadratic_form(xi, [1.0, 1.0]) == 5.0


def test_assemble_jacobi_pattern():
    out = assemble_perturbation(PerturbationJacobi(1.0, [0.5]))
    np.testing.assert_array_equal(out, [[1.0, 0.5], [0.5, 0.0]])


def test_assemble_cross_pattern():
    # channel 2 in one-based counting
    out = assemble_perturbation(PerturbationCross(1, [0.1, 0.7, 0.2]))
    mask = np.zeros((3, 3), bool)
    mask[1, :] = mask[:, 1] = True
    assert np.all(out[~mask] == 0)
    np.testing.assert_array_equal(out[1], [0.1, 0.7, 0.2])
    np.testing.assert_array_equal(out, out.T)


def test_one_channel_jacobi_is_scalar_shift():
    assert assemble_perturbation(PerturbationJacobi(0.75, [])).tolist() == [[0.75]]


def test_pivot_out_of_range():
    with pytest.raises(IndexError):
        assemble_perturbation(PerturbationCross(3, [0.1, 0.2, 0.3]))
    with pytest.raises(PivotOutOfRange):
        classify_perturbation(np.eye(2), "cross", 2)


def test_classify_rejects_foreign_entries():
    with pytest.raises(PatternError):
        classify_perturbation(np.eye(2), "jacobi", 0)
    with pytest.raises(PatternError):
        classify_perturbation(np.ones((3, 3)), "cross", 1)


def test_thresholds_fold_into_diagonal():
    g = Grid(1.0, 11)
    pot = PotentialMatrix.zero(g, 2, thresholds=[0.0, 0.5])
    np.testing.assert_array_equal(pot.samples[3], np.diag([0.0, 0.5]))


def test_potential_validation():
    g = Grid(1.0, 5)
    bad = np.zeros((5, 2, 2))
    bad[:, 0, 1] = 1.0
    with pytest.raises(AsymmetricMatrix):
        PotentialMatrix(g, bad)
    with pytest.raises(DimensionError):
        PotentialMatrix(g, np.zeros((4, 2, 2)))


def test_redundant_perturbation_rejected():
    g = Grid(np.pi, 11)
    h = np.zeros((1, 1))
    with pytest.raises(RedundantPerturbation):
        ProblemSet(PotentialMatrix.zero(g, 1), BoundarySpec(h, h), (h,))


def test_spectra_must_increase():
    with pytest.raises(InvalidSpectra):
        SpectraSet([0.0, 1.0, 1.0], ([0.5, 1.5, 2.0],))


@given(arrays(float, (3, 3), elements=finite), arrays(float, 3, elements=finite))
def test_quadratic_form_sign_irrelevant(a, v):
    m = a + a.T
    assert quadratic_form(m, v) == quadratic_form(m, -v)


@given(finite, finite, arrays(float, 2, elements=finite))
def test_assembled_matrices_are_symmetric(d, c, row):
    j = assemble_perturbation(PerturbationJacobi(d, [c, row[0]]))
    x = assemble_perturbation(PerturbationCross(0, [d, *row]))
    assert np.array_equal(j, j.T) and np.array_equal(x, x.T)


@settings(max_examples=200)
@given(finite, arrays(float, 3, elements=finite), arrays(float, 4, elements=finite))
def test_jacobi_quadratic_form_matches_omega_substitution(d, off, v):
    # pivot 0: omega_1 = v_0^2 and omega_{k+1} = v_k v_{k+1}
    p = PerturbationJacobi(d, off, 0)
    omega = np.concatenate([[v[0] ** 2], v[:-1] * v[1:]])
    expected = p.coefficient_row() @ omega
    got = quadratic_form(assemble_perturbation(p), v)
    assert got == pytest.approx(expected, rel=1e-12, abs=1e-9)


def test_sign_normalize_first_nonzero_positive():
    np.testing.assert_array_equal(sign_normalize([0.0, -2.0, 1.0]), [0.0, 2.0, -1.0])

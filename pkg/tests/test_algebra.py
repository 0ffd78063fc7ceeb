from fractions import Fraction

import numpy as np
import pytest

from hypolab import algebra
from hypolab.algebra import (
    AlgebraError,
    DimensionError,
    GradingError,
    HomomorphismError,
    NotHoermanderError,
    bracket,
    bracket_word_expansion,
    dilation_matrix,
    free_nilpotent,
    hall_basis,
    lift_homomorphism,
    named_spec,
    nilpotency_step,
    ricci_lower_bound,
    unit,
    validate,
    witt_dimension,
)


def test_heisenberg_bracket_exact(heis):
    e1, e2, e3 = (unit(3, i) for i in range(3))
    assert list(bracket(heis, e1, e2)) == [0, 0, 1]
    assert list(bracket(heis, e2, e1)) == [0, 0, -1]
    assert list(bracket(heis, e1, e3)) == [0, 0, 0]
    assert all(isinstance(x, Fraction) for x in bracket(heis, e1, e2))


def test_validate_accepts_known_algebras(heis, free23):
    for spec in (heis, algebra.abelian(3), free23[0], named_spec("heisenberg3+abelian:1")):
        assert validate(spec).ok


def test_validate_reports_jacobi_violation():
    # [e1,e2]=e3, [e2,e3]=e1, [e1,e3]=e1 violates Jacobi
    bad = algebra.from_brackets(3, {(0, 1): {2: 1}, (1, 2): {0: 1}, (0, 2): {0: 1}}, (0, 1))
    rep = validate(bad)
    assert not rep.ok
    assert any(kind == "jacobi" for kind, _ in rep.violations)


def test_validate_reports_antisymmetry_violation(heis):
    s = heis.structure.copy()
    s[1, 0, 2] = Fraction(0)
    rep = validate(algebra.LieAlgebraSpec(3, s, (0, 1)))
    assert any(kind == "antisymmetry" for kind, _ in rep.violations)


def test_validate_reports_grading_violation():
    spec = algebra.from_brackets(3, {(0, 1): {2: 1}}, (0, 1), grading=(1, 1, 1))
    assert any(kind == "grading" for kind, _ in validate(spec).violations)


def test_nilpotency_steps(heis, free23):
    assert nilpotency_step(heis) == 2
    assert nilpotency_step(algebra.abelian(2)) == 1
    assert nilpotency_step(free23[0]) == 3


def test_non_nilpotent_step_is_none():
    # sl2: [h,e]=2e, [h,f]=-2f, [e,f]=h
    sl2 = algebra.from_brackets(3, {(0, 1): {1: 2}, (0, 2): {2: -2}, (1, 2): {0: 1}}, (1, 2))
    assert validate(sl2).ok
    assert nilpotency_step(sl2) is None


@pytest.mark.parametrize("k,n,expected", [(2, 1, 2), (2, 2, 1), (2, 3, 2), (2, 4, 3), (3, 2, 3), (3, 3, 8), (3, 4, 18)])
def test_witt_dimension(k, n, expected):
    assert witt_dimension(k, n) == expected


@pytest.mark.parametrize("k,m,dim", [(2, 2, 3), (2, 3, 5), (2, 4, 8), (3, 2, 6), (3, 3, 14)])
def test_free_nilpotent_dimensions(k, m, dim):
    spec, hall = free_nilpotent(k, m)
    assert spec.dim == dim == len(hall.trees)
    assert validate(spec).ok
    assert spec.step == m


def test_free_22_is_heisenberg(heis):
    spec, _ = free_nilpotent(2, 2)
    assert np.array_equal(spec.structure, heis.structure)


def test_free_dim_cap():
    with pytest.raises(DimensionError):
        free_nilpotent(3, 5, dim_cap=20)


def test_hall_basis_labels():
    hall = hall_basis(2, 3)
    assert [hall.label(i) for i in range(5)] == ["e1", "e2", "[e1,e2]", "[e1,[e1,e2]]", "[e2,[e1,e2]]"]
    assert hall.weights == (1, 1, 2, 3, 3)


def test_lift_homomorphism_onto_heisenberg(heis):
    free, hall = free_nilpotent(2, 2)
    pi = lift_homomorphism(free, heis, hall)
    assert np.array_equal(pi.astype(float), np.eye(3))


def test_lift_homomorphism_free23_to_heisenberg(heis, free23):
    pi = lift_homomorphism(free23[0], heis)
    # degree-3 brackets vanish in the step-2 target
    assert np.all(pi[:, 3:] == 0)
    assert list(pi[:, 2]) == [0, 0, 1]


def test_lift_homomorphism_generator_mismatch(heis):
    free, _ = free_nilpotent(3, 2)
    with pytest.raises(HomomorphismError):
        lift_homomorphism(free, heis)


def test_hoermander_levels(heis):
    lv = heis.levels
    assert lv.generating and lv.depth == 1
    level1 = dict(lv.levels[1])
    # alpha (1, 0) is ad_{X_0} X_1 = [X_0, X_1]
    assert list(level1[(1, 0)]) == [0, 0, 1]
    assert list(level1[(0, 1)]) == [0, 0, -1]
    assert not any(level1[(0, 0)])


def test_non_hoermander_raises():
    spec = named_spec("heisenberg3+abelian:1").with_generators((0, 1))
    assert not spec.levels.generating
    with pytest.raises(NotHoermanderError):
        spec.frame


def test_metric_frame_heisenberg(heis):
    fr = heis.frame
    assert np.allclose(fr.B, np.eye(3))
    assert fr.alphas == ((1, 0),)


def test_bracket_word_expansion():
    assert bracket_word_expansion((1,)) == [((1,), 1)]
    assert bracket_word_expansion((1, 2)) == [((2, 1), 1), ((1, 2), -1)]
    assert bracket_word_expansion((1, 2, 2)) == [((2, 2, 1), 1), ((2, 1, 2), -2), ((1, 2, 2), 1)]
    with pytest.raises(AlgebraError):
        bracket_word_expansion(())


def test_word_expansion_matches_matrix_commutators(free23, gen):
    spec = free23[0]
    # represent X_i by random matrices; words must reproduce nested commutators
    mats = [gen.normal(size=(4, 4)) for _ in range(2)]
    alpha = (0, 1, 1)
    comm = mats[alpha[0]]
    for a in alpha[1:]:
        comm = mats[a] @ comm - comm @ mats[a]
    total = np.zeros((4, 4))
    for word, eps in bracket_word_expansion(alpha):
        prod = np.eye(4)
        for a in word:
            prod = prod @ mats[a]
        total += eps * prod
    assert np.allclose(total, comm)


def test_dilation_is_automorphism(heis):
    phi = dilation_matrix(heis, 3.0)
    assert np.allclose(np.diag(phi), [3, 3, 9])
    with pytest.raises(GradingError):
        dilation_matrix(algebra.from_brackets(3, {(0, 1): {2: 1}}, (0, 1)), 2.0)


def test_ricci_lower_bound(heis):
    assert ricci_lower_bound(heis, np.eye(3)) == pytest.approx(-0.5)
    assert ricci_lower_bound(algebra.abelian(2)) == 0.0


def test_named_spec_errors():
    with pytest.raises(AlgebraError):
        named_spec("nonsense")
    with pytest.raises(AlgebraError):
        named_spec("abelian:x")


def test_json_round_trip(free23):
    spec = free23[0]
    back = algebra.spec_from_json(algebra.spec_to_json(spec))
    assert np.array_equal(back.structure, spec.structure)
    assert back.generators == spec.generators and back.grading == spec.grading


def test_json_rejects_bad_order():
    doc = {"dim": 3, "generators": [1, 2], "brackets": [{"i": 2, "j": 1, "coeffs": {"3": "1"}}]}
    with pytest.raises(AlgebraError):
        algebra.spec_from_json(doc)

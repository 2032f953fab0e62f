import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_system, random_well_conditioned
from lti_ident.errors import DimensionError, PoleError, UndefinedCorrelationError
from lti_ident.metrics import linear_sum_assignment, mcc, transfer_equivalence
from lti_ident.systems import StateSpace, similarity_transform


def brute_force(cost):
    n = cost.shape[0]
    return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def test_assignment_zero_diagonal():
    cost = np.ones((4, 4)) - np.eye(4)
    perm, total = linear_sum_assignment(cost)
    assert perm.tolist() == [0, 1, 2, 3] and total == 0.0


def test_assignment_against_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        cost = rng.standard_normal((6, 6))
        perm, total = linear_sum_assignment(cost)
        assert sorted(perm.tolist()) == list(range(6))
        assert total == brute_force(cost)


def test_assignment_ties_pick_lexicographically_smallest():
    perm, total = linear_sum_assignment(np.zeros((3, 3)))
    assert perm.tolist() == [0, 1, 2] and total == 0.0
    # two optimal matchings: (0->1, 1->0, 2->2) and (0->2, 1->0, 2->1)
    cost = np.array([[5.0, 0.0, 0.0], [0.0, 5.0, 5.0], [5.0, 5.0, 0.0]])
    perm, _ = linear_sum_assignment(cost)
    assert perm.tolist() == [1, 0, 2]


@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_assignment_matches_enumeration(n, seed):
    cost = np.random.default_rng(seed).integers(0, 4, (n, n)).astype(float)
    perm, total = linear_sum_assignment(cost)
    assert total == brute_force(cost)
    optimal = [p for p in itertools.permutations(range(n)) if sum(cost[i, p[i]] for i in range(n)) == total]
    assert tuple(perm.tolist()) == min(optimal)


def test_assignment_errors():
    with pytest.raises(DimensionError):
        linear_sum_assignment(np.ones((2, 3)))
    with pytest.raises(ValueError):
        linear_sum_assignment(np.array([[np.nan, 1.0], [1.0, 0.0]]))


def test_mcc_identity():
    u = np.random.default_rng(0).standard_normal((500, 3))
    rep = mcc(u, u)
    assert rep.mcc == pytest.approx(1.0, abs=1e-12)
    assert rep.permutation.tolist() == [0, 1, 2]
    assert rep.n_samples == 500


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_mcc_invariant_to_permutation_and_scaling(d, seed):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((200, d))
    perm = rng.permutation(d)
    D = rng.uniform(0.1, 10, d) * rng.choice([-1, 1], d)
    u_hat = u[:, perm] * D + rng.standard_normal(d)
    rep = mcc(u, u_hat)
    assert abs(rep.mcc - 1.0) <= 1e-12
    # true component i is found at estimated column perm^-1(i)
    assert rep.permutation.tolist() == np.argsort(perm).tolist()
    assert np.isclose(rep.mcc, rep.per_component_corr.mean())


@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_mcc_symmetric(d, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((100, d))
    b = a @ rng.standard_normal((d, d)) + rng.standard_normal((100, d))
    assert abs(mcc(a, b).mcc - mcc(b, a).mcc) <= 1e-12


def test_mcc_of_independent_noise_is_small():
    rng = np.random.default_rng(1)
    n = 5000
    vals = [mcc(rng.standard_normal((n, 1)), rng.standard_normal((n, 1))).mcc for _ in range(50)]
    assert max(vals) <= 3 / np.sqrt(n) * 1.5
    assert np.mean(vals) <= 3 / np.sqrt(n)


def test_mcc_errors():
    u = np.random.default_rng(0).standard_normal((10, 2))
    bad = u.copy()
    bad[:, 1] = 4.0
    with pytest.raises(UndefinedCorrelationError) as info:
        mcc(u, bad)
    assert info.value.component == 1 and info.value.which == "u_hat"
    with pytest.raises(DimensionError):
        mcc(u, u[:, :1])
    with pytest.raises(ValueError):
        mcc(u[:1], u[:1])


def test_equivalence_reflexive(rng):
    for _ in range(5):
        sys = random_system(rng, 4, 2, 3)
        eq = transfer_equivalence(sys, sys, tol=1e-12)
        assert eq.equivalent
        assert eq.permutation.tolist() == [0, 1]
        np.testing.assert_allclose(eq.scales, 1.0)


def test_equivalence_under_similarity(rng):
    sys = random_system(rng, 3)
    ok, perm, scales = transfer_equivalence(sys, similarity_transform(sys, random_well_conditioned(rng, 3)))
    assert ok and perm.tolist() == [0, 1, 2]
    np.testing.assert_allclose(scales, 1.0, rtol=1e-9)


def test_equivalence_recovers_column_permutation_and_scale(rng):
    sys = random_system(rng, 3)
    cols = [2, 0, 1]
    d = np.array([2.0, -0.5, 3.0])
    other = StateSpace(sys.A, sys.B[:, cols] * d, sys.C)
    eq = transfer_equivalence(sys, other)
    assert eq.equivalent
    # H1[:, j] = scales[j] * H2[:, perm[j]]
    for j in range(3):
        k = eq.permutation[j]
        assert cols[k] == j
        assert eq.scales[j] == pytest.approx(1 / d[k], rel=1e-9)


def test_equivalence_detects_perturbed_dynamics(rng):
    sys = random_system(rng, 3)
    dA = rng.standard_normal((3, 3))
    other = StateSpace(sys.A + 0.1 * dA / np.linalg.norm(dA), sys.B, sys.C)
    eq = transfer_equivalence(sys, other, tol=1e-6)
    assert not eq.equivalent and eq.max_rel_error > 1e-6


def test_equivalence_errors(rng):
    sys = random_system(rng, 2)
    with pytest.raises(DimensionError):
        transfer_equivalence(sys, random_system(rng, 2, 1, 2))
    pole = np.linalg.eigvals(sys.A)[0]
    with pytest.raises(PoleError):
        transfer_equivalence(sys, sys, z_samples=[pole])

import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_system, random_well_conditioned
from lti_ident.errors import DimensionError, RankDeficiencyError
from lti_ident.metrics import transfer_equivalence
from lti_ident.sysid import RankGapWarning, hankel, ho_kalman
from lti_ident.systems import StateSpace, markov_params, similarity_transform


def rel_fro(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_smallest_hankel_is_cb(rng):
    sys = random_system(rng, 3, 2, 2)
    H = hankel(markov_params(sys, 3), 1, 1)
    np.testing.assert_allclose(H.data, sys.C @ sys.B)


def test_hankel_nilpotent_band():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    mp = markov_params(StateSpace(A, np.eye(2), np.eye(2)), 6)
    H = hankel(mp, 3, 3)
    for i in range(3):
        for j in range(3):
            want = {0: np.eye(2), 1: A}.get(i + j, np.zeros((2, 2)))
            np.testing.assert_array_equal(H.block(i, j), want)


def test_hankel_rank_equals_order(rng):
    for d_x in (2, 3, 5):
        sys = random_system(rng, d_x, 1, 1)
        H = hankel(markov_params(sys, 2 * d_x + 1), d_x, d_x).data
        s = np.linalg.svd(H, compute_uv=False)
        assert np.sum(s > s[0] * 1e-10) == d_x


def test_hankel_horizon_too_short(rng):
    mp = markov_params(random_system(rng, 2), 4)
    with pytest.raises(DimensionError):
        hankel(mp, 3, 2)


def test_round_trip_small_example(rng):
    sys = random_system(rng, 2, 1, 2)
    mp = markov_params(sys, 7)
    res = ho_kalman(mp, 2, 3, 3)
    assert res.effective_rank == 2 and (res.T1, res.T2) == (3, 3)
    assert np.all(np.diff(res.singular_values) <= 0)
    back = markov_params(res.sys, 7).blocks
    for k in range(6):
        assert rel_fro(back[k], mp.blocks[k]) <= 1e-8
    # same class, different coordinates
    assert not np.allclose(res.sys.A, sys.A)
    assert transfer_equivalence(sys, res.sys, tol=1e-7).equivalent


def test_overestimated_order_is_rank_deficient(rng):
    sys = random_system(rng, 3, 2, 2)
    with pytest.raises(RankDeficiencyError):
        ho_kalman(markov_params(sys, 11), 5)


def test_weak_gap_warns(rng):
    # two modes of similar strength, but only one requested
    sys = StateSpace(np.diag([0.9, -0.8]), np.ones((2, 1)), np.ones((1, 2)))
    mp = markov_params(sys, 7)
    with pytest.warns(RankGapWarning):
        ho_kalman(mp, 1, 3, 3)


def test_order_exceeding_hankel_size(rng):
    mp = markov_params(random_system(rng, 2, 1, 1), 10)
    with pytest.raises(DimensionError):
        ho_kalman(mp, 3, 2, 2)


@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_round_trip_square_systems(d_x, seed):
    sys = random_system(np.random.default_rng(seed), d_x)
    T = 2 * d_x + 1
    mp = markov_params(sys, T)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankGapWarning)
        res = ho_kalman(mp, d_x)
    back = markov_params(res.sys, T)
    for k in range(1, T):
        assert rel_fro(back.block(k), mp.block(k)) <= 1e-8


def test_similarity_inputs_give_same_realization(rng):
    sys = random_system(rng, 4, 2, 2)
    P = random_well_conditioned(rng, 4)
    a = ho_kalman(markov_params(sys, 9), 4).sys
    b = ho_kalman(markov_params(similarity_transform(sys, P), 9), 4).sys
    ma, mb = markov_params(a, 9), markov_params(b, 9)
    for k in range(1, 9):
        np.testing.assert_allclose(ma.block(k), mb.block(k), atol=1e-8 * np.linalg.norm(ma.block(1)))

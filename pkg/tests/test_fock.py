import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpsqkd.errors import ConfigError
from dpsqkd.fock import (FockState, apply_creation_superposition, gram_matrix, gram_rank,
                         inner_product, linear_combination, to_dense, vacuum)
from dpsqkd.source import all_bitstrings, psi_state


def build_by_creation(s, nu, n):
    """(a_s^dagger)^nu |0> / sqrt(nu!) with a_s = n^{-1/2} sum_i (-1)^{s_i} a_i."""
    coeffs = np.array([(-1) ** b for b in s]) / math.sqrt(n)
    state = vacuum(n)
    for _ in range(nu):
        state = apply_creation_superposition(state, coeffs)
    return state.scaled(1 / math.sqrt(math.factorial(nu)))


def test_vacuum_is_normalized():
    v = vacuum(3)
    assert v.photon_number == 0
    assert inner_product(v, v) == pytest.approx(1)


def test_creation_bosonic_factor():
    # (a^dagger)^3 |0> = sqrt(3!) |3>
    state = vacuum(1)
    for _ in range(3):
        state = apply_creation_superposition(state, [1.0])
    assert state.amplitudes[(3,)] == pytest.approx(math.sqrt(6))


def test_two_mode_creation_matches_binomial():
    # ((a1^dag + a2^dag)/sqrt2)^2 |0> = (|2,0> + sqrt2 |1,1> + |0,2>) / sqrt2
    state = vacuum(2)
    for _ in range(2):
        state = apply_creation_superposition(state, [1 / math.sqrt(2)] * 2)
    assert state.amplitudes[(2, 0)] == pytest.approx(1 / math.sqrt(2))
    assert state.amplitudes[(1, 1)] == pytest.approx(1.0)
    assert state.norm() == pytest.approx(math.sqrt(2))


@pytest.mark.parametrize("n,nu", [(3, 0), (3, 2), (4, 3), (5, 2)])
def test_closed_form_source_state_matches_creation_route(n, nu):
    for s in all_bitstrings(n):
        a = psi_state(s, nu, n)
        b = build_by_creation(s, nu, n)
        assert abs(inner_product(a, b)) == pytest.approx(1, abs=1e-12)
        assert a.norm() == pytest.approx(1, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 6), st.integers(0, 4), st.data())
def test_source_overlap_depends_on_hamming_distance(n, nu, data):
    s = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    t = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    wt = sum(a != b for a, b in zip(s, t))
    got = inner_product(psi_state(s, nu, n), psi_state(t, nu, n))
    assert got.real == pytest.approx((1 - 2 * wt / n) ** nu, abs=1e-12)
    assert abs(got.imag) < 1e-12


def test_inner_product_is_conjugate_linear_in_first_argument():
    x = FockState(2, {(1, 0): 1j})
    y = FockState(2, {(1, 0): 1.0})
    assert inner_product(x, y) == pytest.approx(-1j)
    assert inner_product(y, x) == pytest.approx(1j)


def test_linear_combination_cancels_to_zero():
    a = psi_state((0, 0, 0), 2, 3)
    z = linear_combination([a, a], [1, -1])
    assert z.is_zero and z.photon_number is None


def test_mixed_sectors_rejected():
    with pytest.raises(ConfigError):
        FockState(2, {(1, 0): 1.0, (1, 1): 1.0})
    with pytest.raises(ConfigError):
        FockState(2, {(1, 0, 0): 1.0})


def test_dense_and_gram_consistency():
    states = [psi_state(s, 2, 3) for s in all_bitstrings(3)]
    mat, basis = to_dense(states)
    assert len(basis) == math.comb(4, 2)
    g = gram_matrix(states)
    np.testing.assert_allclose(g, mat.conj() @ mat.T)
    np.testing.assert_allclose(g, g.conj().T)


def test_gram_rank_of_dependent_states():
    a = psi_state((0, 0, 0), 1, 3)
    b = psi_state((1, 1, 1), 1, 3)  # equals -a
    assert gram_rank([a, b]) == 1


def test_gram_rank_is_unitary_invariant():
    rng = np.random.default_rng(3)
    n, nu = 4, 2
    states = [psi_state(s, nu, n) for s in all_bitstrings(n)]
    mat, _ = to_dense(states)
    z = rng.normal(size=(mat.shape[1],) * 2) + 1j * rng.normal(size=(mat.shape[1],) * 2)
    q, _ = np.linalg.qr(z)
    rotated = mat @ q
    assert np.linalg.matrix_rank(rotated, tol=1e-9) == gram_rank(states)

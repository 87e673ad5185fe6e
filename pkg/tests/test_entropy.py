import math

import numpy as np
import pytest

from dpsqkd.entropy import (CqState, binary_entropy, conditional_entropy_cq,
                            disjoint_support_check, random_cq_state, von_neumann_entropy)
from dpsqkd.errors import ConfigError


def test_entropy_of_pure_and_maximally_mixed_states():
    assert von_neumann_entropy(np.diag([1.0, 0, 0])) == pytest.approx(0, abs=1e-12)
    assert von_neumann_entropy(np.eye(4) / 4) == pytest.approx(2)


def test_entropy_renormalizes_or_rejects_off_trace_input():
    assert von_neumann_entropy(np.eye(2)) == pytest.approx(1)
    with pytest.raises(ConfigError):
        von_neumann_entropy(np.eye(2), normalize=False)
    with pytest.raises(ConfigError):
        von_neumann_entropy(np.diag([1.5, -0.5]))


def test_non_hermitian_input_rejected():
    with pytest.raises(ConfigError):
        von_neumann_entropy(np.array([[0.5, 0.1], [0.0, 0.5]]))


def test_binary_entropy_values():
    assert binary_entropy(0.5) == pytest.approx(1)
    assert binary_entropy(0.0) == 0
    assert binary_entropy(0.11) == pytest.approx(-(0.11 * math.log2(0.11) + 0.89 * math.log2(0.89)))


def test_disjoint_blocks_give_zero():
    sigma = CqState((np.diag([0.5, 0.0]), np.diag([0.0, 0.5])))
    assert conditional_entropy_cq(sigma) == pytest.approx(0, abs=1e-12)
    assert disjoint_support_check(sigma)


def test_identical_blocks_give_one_bit():
    rho = np.array([[0.7, 0.2], [0.2, 0.3]])
    sigma = CqState((rho / 2, rho / 2))
    assert conditional_entropy_cq(sigma) == pytest.approx(1, abs=1e-12)
    assert not disjoint_support_check(sigma)


@pytest.mark.parametrize("p,theta", [(0.5, 0.3), (0.2, 1.0), (0.9, math.pi / 4)])
def test_two_pure_blocks_against_closed_form(p, theta):
    a = np.array([1.0, 0.0])
    b = np.array([math.cos(theta), math.sin(theta)])
    sigma = CqState((p * np.outer(a, a), (1 - p) * np.outer(b, b)))
    c2 = math.cos(theta) ** 2
    lam = (1 + math.sqrt(1 - 4 * p * (1 - p) * (1 - c2))) / 2
    expected = binary_entropy(p) - binary_entropy(lam)
    assert conditional_entropy_cq(sigma) == pytest.approx(expected, abs=1e-12)


def test_unnormalized_state_is_normalized_internally():
    rho = np.eye(2) / 2
    assert conditional_entropy_cq(CqState((rho / 10, rho / 10))) == pytest.approx(1)


def test_cq_state_validation():
    with pytest.raises(ConfigError):
        CqState((np.diag([0.6, -0.1]), np.diag([0.2, 0.3])))
    with pytest.raises(ConfigError):
        CqState((np.eye(2), np.eye(2)))
    with pytest.raises(ConfigError):
        CqState((np.zeros((2, 2)), np.zeros((2, 2))))
    with pytest.raises(ConfigError):
        CqState((np.eye(2) / 4, np.eye(3) / 6))


def test_partial_overlap_is_not_disjoint():
    v = np.array([1.0, 1.0]) / math.sqrt(2)
    sigma = CqState((0.5 * np.diag([1.0, 0.0]), 0.5 * np.outer(v, v)))
    assert not disjoint_support_check(sigma)
    assert conditional_entropy_cq(sigma) > 1e-3


def test_random_states_respect_bounds_and_zero_criterion():
    rng = np.random.default_rng(11)
    for _ in range(500):
        dim = int(rng.integers(2, 9))
        disjoint = bool(rng.integers(2))
        sigma = random_cq_state(rng, dim, disjoint)
        assert sigma.trace == pytest.approx(1)
        h = conditional_entropy_cq(sigma)
        assert -1e-9 <= h <= 1 + 1e-9
        assert (h <= 1e-9) == disjoint_support_check(sigma) == disjoint

"""
目的関数・拡張ラグランジュ関数・停留性残差のテスト
"""

import math

import numpy as np
import pytest

from app.core.grouping import GroupedFactor, make_partition
from app.core.linops import SamplingProblem
from app.core.objectives import (
    augmented_lagrangian,
    exact_penalty_objective,
    feasibility_residual,
    lp0_objective,
    phi_objective,
    stationarity_residual,
)
from app.core.regularizer import CappedPhi, PhiKind


@pytest.fixture
def factors(rng):
    part = make_partition(6, 3)
    X = GroupedFactor(rng.standard_normal((5, 6)), part)
    Y = GroupedFactor(rng.standard_normal((6, 6)), part)
    return X, Y


def test_objectives_on_zero_factors():
    part = make_partition(4, 2)
    Z = GroupedFactor(np.zeros((3, 4)), part)
    W = GroupedFactor(np.zeros((4, 4)), part)
    assert lp0_objective(Z, W) == 0
    assert phi_objective(Z, W, CappedPhi()) == 0.0


def test_feasibility_residual(factors):
    X, Y = factors
    C = X.data @ Y.data.T
    assert feasibility_residual(X, Y, C) == pytest.approx(0.0, abs=1e-12)
    assert feasibility_residual(X.data, Y.data, C + 1.0) == pytest.approx(math.sqrt(C.size))


def test_exact_penalty_requires_positive_mu(factors):
    X, Y = factors
    P = SamplingProblem.from_matrix(np.zeros((5, 6)), np.arange(30))
    with pytest.raises(ValueError):
        exact_penalty_objective(X, Y, P, CappedPhi(), mu=0.0)


def test_exact_penalty_vanishes_inside_ball(factors):
    X, Y = factors
    M = X.data @ Y.data.T
    P = SamplingProblem.from_matrix(M, np.arange(M.size), sigma=0.1)
    phi = CappedPhi(PhiKind.CAPL1, nu=0.5)
    assert exact_penalty_objective(X, Y, P, phi, mu=10.0) == pytest.approx(phi_objective(X, Y, phi))


def test_augmented_lagrangian_value(factors, rng):
    X, Y = factors
    C = rng.standard_normal((5, 6))
    S = rng.standard_normal((5, 6))
    phi = CappedPhi()
    E = X.data @ Y.data.T - C

    expected = 2.0 * phi_objective(X, Y, phi) + np.sum(E * S) + 0.5 * 3.0 * np.sum(E * E)
    assert augmented_lagrangian(X, Y, C, S, 3.0, phi, reg_weight=2.0) == pytest.approx(expected)


def test_augmented_lagrangian_indicator(factors):
    X, Y = factors
    P = SamplingProblem.from_matrix(np.ones((5, 6)), np.arange(30))
    S = np.zeros((5, 6))
    assert augmented_lagrangian(X, Y, np.zeros((5, 6)), S, 1.0, CappedPhi(), P) == math.inf
    assert math.isfinite(augmented_lagrangian(X, Y, np.ones((5, 6)), S, 1.0, CappedPhi(), P))


def test_augmented_lagrangian_lower_bound(rng):
    part = make_partition(4, 2)
    phi = CappedPhi()
    for _ in range(50):
        X = GroupedFactor(rng.standard_normal((3, 4)), part)
        Y = GroupedFactor(rng.standard_normal((4, 4)), part)
        C = rng.standard_normal((3, 4)) * 3
        S = rng.standard_normal((3, 4)) * 5
        eta = float(rng.uniform(0.01, 10.0))
        bound = -np.sum(S * S) / (2.0 * eta)
        assert augmented_lagrangian(X, Y, C, S, eta, phi) >= bound - 1e-9


def test_stationarity_at_zero_with_zero_multiplier():
    part = make_partition(4, 2)
    X = GroupedFactor(np.zeros((3, 4)), part)
    Y = GroupedFactor(np.zeros((4, 4)), part)
    assert stationarity_residual(X, Y, np.zeros((3, 4)), CappedPhi()) == 0.0


def test_stationarity_capped_groups_only_see_coupling(rng):
    """キャップ領域のグループは正則化項の寄与が 0"""
    part = make_partition(2, 2)
    X = GroupedFactor(np.full((2, 2), 5.0), part)
    Y = GroupedFactor(np.full((2, 2), 5.0), part)
    multiplier = rng.standard_normal((2, 2))

    expected = math.sqrt(np.sum((multiplier @ Y.data) ** 2) + np.sum((multiplier.T @ X.data) ** 2))
    assert stationarity_residual(X, Y, multiplier, CappedPhi(), 1.0) == pytest.approx(expected)

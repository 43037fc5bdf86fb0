"""
ELAM 内部ソルバーのテスト
"""

import math

import numpy as np
import pytest

from app.core import elam
from app.core.data import generate_mask, synth_lowrank
from app.core.elam import (
    ElamConfig,
    ElamError,
    ElamState,
    NumericalFailureError,
    elam_solve,
    extrapolation_weight,
    prune_zero_groups,
    t_next,
    update_C,
    update_group_X,
    update_group_Y,
)
from app.core.grouping import GroupedFactor, make_partition
from app.core.iral import InitMethod, initialize
from app.core.linops import SamplingProblem
from app.core.objectives import augmented_lagrangian, feasibility_residual
from app.core.regularizer import CappedPhi, PhiKind, RegularizerError, block_prox


PHI = CappedPhi(PhiKind.CAPLOG, nu=1.0, theta=0.1)
CFG = ElamConfig()


def _state(rng, m=4, n=4, s=2, eta=1.0, reg_weight=1e-3, with_S=True):
    part = make_partition(n, s)
    X = GroupedFactor(rng.standard_normal((m, n)), part)
    Y = GroupedFactor(rng.standard_normal((n, n)), part)
    C = rng.standard_normal((m, n))
    S = rng.standard_normal((m, n)) if with_S else np.zeros((m, n))
    return ElamState.create(X, Y, C, S, eta, reg_weight)


class TestExtrapolation:

    def test_t_sequence(self):
        assert t_next(1.0) == pytest.approx((1 + math.sqrt(5)) / 2)
        assert t_next(1.6180) == pytest.approx(2.1524, abs=1e-4)

    def test_first_step_has_no_momentum(self):
        assert extrapolation_weight(1.0, t_next(1.0), 1.0, 1.0, CFG) == 0.0

    def test_safeguard_branch(self):
        cfg = ElamConfig(gamma=2.0, delta=0.99)
        t = 1e6
        assert extrapolation_weight(t, t_next(t), 3.0, 3.0, cfg) == pytest.approx(0.99 / 6)

    def test_weight_bounds(self, rng):
        for _ in range(100):
            t_prev = float(rng.uniform(1.0, 50.0))
            tau_prev, tau_cur = rng.uniform(1e-3, 10.0, size=2)
            w = extrapolation_weight(t_prev, t_next(t_prev), tau_prev, tau_cur, CFG)
            momentum = (t_prev - 1.0) / t_next(t_prev)
            assert 0.0 <= w <= max(momentum, 1.0) + 1e-15
            assert w <= momentum + 1e-15


class TestGroupUpdates:

    def test_update_X_matches_direct_evaluation(self, rng):
        state = _state(rng)
        X, Y, C, S, eta = state.X.data.copy(), state.Y.data.copy(), state.C, state.S, state.eta

        for i in range(state.partition.count):
            cols = state.partition.slice(i)
            Y_i = Y[:, cols]
            tau = max(CFG.gamma * np.linalg.norm(Y_i, 2) ** 2, CFG.eps_floor)
            arg = X[:, cols] - (X @ Y.T - C + S / eta) @ Y_i / tau
            n_i = cols.stop - cols.start
            expected = block_prox(PHI, state.reg_weight * n_i / (eta * tau), arg)

            got = update_group_X(i, state, PHI, eta, CFG)
            np.testing.assert_allclose(got, expected, atol=1e-12)
            X[:, cols] = expected

        np.testing.assert_allclose(state.R, state.fresh_residual(), atol=1e-12)

    def test_update_Y_uses_new_X(self, rng):
        state = _state(rng)
        update_group_X(0, state, PHI, state.eta, CFG)
        X, Y, C, S, eta = state.X.data, state.Y.data.copy(), state.C, state.S, state.eta

        cols = state.partition.slice(0)
        X_i = X[:, cols]
        tau = max(CFG.gamma * np.linalg.norm(X_i, 2) ** 2, CFG.eps_floor)
        arg = Y[:, cols] - (X @ Y.T - C + S / eta).T @ X_i / tau
        expected = block_prox(PHI, state.reg_weight * 2 / (eta * tau), arg)

        np.testing.assert_allclose(update_group_Y(0, state, PHI, eta, CFG), expected, atol=1e-12)
        np.testing.assert_allclose(state.R, state.fresh_residual(), atol=1e-12)

    def test_fully_observed_single_group(self, rng):
        M = rng.random((4, 4))
        P = SamplingProblem.from_matrix(M, np.arange(16))
        part = make_partition(4, 1)
        X0 = rng.random((4, 4))
        state = ElamState.create(
            GroupedFactor(X0, part), GroupedFactor(np.eye(4), part), M, np.zeros((4, 4)), 1.0, 1e-2
        )

        tau = CFG.gamma
        # Y = I のとき勾配ステップは X と観測値の凸結合
        arg = (1.0 - 1.0 / tau) * X0 + M / tau
        expected = block_prox(PHI, 1e-2 * 4 / tau, arg)
        np.testing.assert_allclose(update_group_X(0, state, PHI, 1.0, CFG), expected, atol=1e-12)
        assert P.residual_norm(M) == 0.0

    def test_stationary_group_unchanged(self, rng):
        part = make_partition(4, 2)
        X = GroupedFactor(rng.standard_normal((3, 4)) * 5, part)
        Y = GroupedFactor(rng.standard_normal((4, 4)) * 5, part)
        C = X.data @ Y.data.T
        state = ElamState.create(X, Y, C, np.zeros((3, 4)), 1.0, reg_weight=1e-10)

        before_X = X.data.copy()
        before_Y = Y.data.copy()
        for i in range(2):
            update_group_X(i, state, PHI, 1.0, CFG)
            update_group_Y(i, state, PHI, 1.0, CFG)

        np.testing.assert_allclose(state.X.data, before_X, atol=1e-12)
        np.testing.assert_allclose(state.Y.data, before_Y, atol=1e-12)

    def test_zero_partner_block_uses_step_floor(self, rng):
        state = _state(rng, with_S=False)
        state.Y.data[:, state.partition.slice(1)] = 0.0
        state.R = state.fresh_residual()
        state.X_prev.data[:, state.partition.slice(1)] = 0.0

        update_group_X(1, state, PHI, state.eta, CFG)
        assert state.tau_X[1] == CFG.eps_floor

    def test_zero_X_block_keeps_Y_argument(self, rng):
        state = _state(rng, reg_weight=1e-12)
        cols = state.partition.slice(0)
        state.X.data[:, cols] = 0.0
        state.R = state.fresh_residual()
        Y_before = state.Y.data[:, cols].copy()

        expected = block_prox(PHI, state.reg_weight * 2 / (state.eta * CFG.eps_floor), Y_before)
        np.testing.assert_allclose(update_group_Y(0, state, PHI, state.eta, CFG), expected, atol=1e-12)

    def test_nonpositive_eta_rejected(self, rng):
        state = _state(rng)
        with pytest.raises(ElamError):
            update_group_X(0, state, PHI, 0.0, CFG)
        with pytest.raises(ElamError):
            update_group_Y(0, state, PHI, -1.0, CFG)


class TestCUpdateAndPruning:

    def test_update_C_pins_full_observations(self, rng):
        state = _state(rng)
        M = rng.random((4, 4))
        P = SamplingProblem.from_matrix(M, np.arange(16))
        np.testing.assert_array_equal(update_C(state, P, state.eta, state.S), M)

    def test_update_C_matches_direct_projection(self, rng):
        state = _state(rng)
        mask = np.array([0, 3, 5, 6, 9, 14])
        b = rng.random(mask.size)
        P = SamplingProblem(4, 4, mask, b, sigma=0.2)

        Z = state.X.data @ state.Y.data.T + state.S / state.eta
        expected = Z.copy()
        r = Z.ravel()[mask] - b
        if np.linalg.norm(r) > 0.2:
            expected.ravel()[mask] = b + 0.2 * r / np.linalg.norm(r)

        np.testing.assert_allclose(update_C(state, P, state.eta, state.S), expected, atol=1e-14)
        np.testing.assert_allclose(state.R, state.fresh_residual(), atol=1e-12)

    def test_update_C_feasible_input_unchanged(self, rng):
        state = _state(rng)
        Z = state.X.data @ state.Y.data.T + state.S / state.eta
        P = SamplingProblem.from_matrix(Z, np.arange(16))
        np.testing.assert_allclose(update_C(state, P, state.eta, state.S), Z, atol=1e-14)

    def test_prune_nothing_below_tolerance(self, rng):
        state = _state(rng)
        X_before = state.X.data.copy()
        assert prune_zero_groups(state, CFG) == []
        np.testing.assert_array_equal(state.X.data, X_before)
        assert state.active.all()

    def test_prune_tiny_group(self, rng):
        state = _state(rng)
        cols = state.partition.slice(1)
        state.X.data[:, cols] = 1e-14
        state.Y.data[:, cols] = 1e-14
        state.R = state.fresh_residual()
        product_before = state.X.data @ state.Y.data.T

        assert prune_zero_groups(state, ElamConfig(prune_tol=1e-10)) == [1]
        assert not state.active[1]
        assert np.all(state.X.data[:, cols] == 0.0) and np.all(state.Y.data[:, cols] == 0.0)

        bound = 2 * 1e-10 * max(np.linalg.norm(state.X.data), np.linalg.norm(state.Y.data))
        assert np.linalg.norm(state.X.data @ state.Y.data.T - product_before) <= bound
        np.testing.assert_allclose(state.R, state.fresh_residual(), atol=1e-14)


class TestElamSolve:

    def test_zero_fixed_point(self):
        part = make_partition(5, 5)
        M = np.arange(20, dtype=float).reshape(4, 5) / 20
        P = SamplingProblem.from_matrix(M, np.arange(0, 20, 2))
        result = elam_solve(
            GroupedFactor(np.zeros((4, 5)), part),
            GroupedFactor(np.zeros((5, 5)), part),
            np.zeros((4, 5)), np.zeros((4, 5)), 1.0, PHI, P, CFG,
        )
        assert not result.X.data.any() and not result.Y.data.any()
        np.testing.assert_array_equal(result.C, P.project_theta(np.zeros((4, 5))))

    def test_fully_observed_rank_one(self, rng):
        u = rng.uniform(0.5, 1.0, 4)
        v = rng.uniform(0.5, 1.0, 4)
        M = np.outer(u, v)
        P = SamplingProblem.from_matrix(M, np.arange(16))
        part = make_partition(4, 4)
        X0 = GroupedFactor(M + 0.1 * rng.standard_normal((4, 4)), part)
        Y0 = GroupedFactor(np.eye(4), part)

        cfg = ElamConfig(max_inner=200, inner_tol=1e-13)
        result = elam_solve(X0, Y0, P.project_theta(X0.data), np.zeros((4, 4)), 1.0,
                            PHI, P, cfg, reg_weight=1e-8)

        np.testing.assert_array_equal(result.C, M)
        assert feasibility_residual(result.X, result.Y, result.C) < 1e-6
        assert result.sweeps <= 200

    def test_descent_inequality_every_sweep(self, small_problem):
        P = small_problem.problem
        X0, Y0, C0 = initialize(P, 5, InitMethod.SVD_BALANCED)
        S = np.random.default_rng(3).standard_normal(P.shape) * 0.01
        eta = 0.5
        records = []

        elam_solve(X0, Y0, C0, S, eta, PHI, P, ElamConfig(max_inner=60, inner_tol=1e-12),
                   reg_weight=1e-3, monitor=records.append)

        assert records
        for rec in records:
            slack = 1e-8 * (1.0 + abs(rec.lagrangian_before))
            assert rec.lagrangian_after - rec.lagrangian_before <= rec.descent_bound + slack
            assert rec.lagrangian_after >= -np.sum(S * S) / (2 * eta) - 1e-9
            assert rec.residual_drift <= 1e-8

    def test_iterate_changes_vanish(self):
        mask = generate_mask(12, 12, 0.9, seed=11)
        P = synth_lowrank(12, 12, 1, seed=12, mask=mask).problem
        X0, Y0, C0 = initialize(P, 12, InitMethod.SVD_BALANCED)
        records = []

        result = elam_solve(X0, Y0, C0, np.zeros(P.shape), 1.0, PHI, P,
                            ElamConfig(max_inner=500, inner_tol=1e-9),
                            reg_weight=9.0, monitor=records.append)

        assert result.final_change < 1e-6
        assert records[-1].change == result.final_change
        assert 1 <= int(result.active.sum()) < 12

    def test_non_finite_initial_point(self, rng):
        part = make_partition(3, 3)
        X0 = GroupedFactor(np.full((3, 3), np.nan), part)
        Y0 = GroupedFactor(np.eye(3), part)
        P = SamplingProblem.from_matrix(np.ones((3, 3)), np.arange(9))
        with pytest.raises(NumericalFailureError) as excinfo:
            elam_solve(X0, Y0, np.ones((3, 3)), np.zeros((3, 3)), 1.0, PHI, P, CFG)
        assert excinfo.value.sweep == 0

    def test_prox_failure_on_finite_iterate(self, small_problem, monkeypatch):
        def failing_prox(phi, lam, Z):
            raise RegularizerError(f"Invalid prox weight {lam}")

        monkeypatch.setattr(elam, "block_prox", failing_prox)
        P = small_problem.problem
        X0, Y0, C0 = initialize(P, 5, InitMethod.SVD_BALANCED)

        with pytest.raises(NumericalFailureError) as excinfo:
            elam_solve(X0, Y0, C0, np.zeros(P.shape), 1.0, PHI, P, CFG)
        assert excinfo.value.sweep == 1
        assert isinstance(excinfo.value.__cause__, RegularizerError)

    def test_partition_mismatch_rejected(self, rng):
        X0 = GroupedFactor(rng.random((3, 4)), make_partition(4, 2))
        Y0 = GroupedFactor(rng.random((4, 4)), make_partition(4, 4))
        P = SamplingProblem.from_matrix(np.ones((3, 4)), np.arange(12))
        with pytest.raises(ElamError):
            elam_solve(X0, Y0, np.ones((3, 4)), np.zeros((3, 4)), 1.0, PHI, P, CFG)


def test_lagrangian_matches_state_residual(rng):
    state = _state(rng)
    E = state.X.data @ state.Y.data.T - state.C
    direct = augmented_lagrangian(state.X, state.Y, state.C, state.S, state.eta, PHI,
                                  reg_weight=state.reg_weight)
    assert math.isfinite(direct)
    np.testing.assert_allclose(state.R, E + state.S / state.eta, atol=1e-14)

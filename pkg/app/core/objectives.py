"""
目的関数の評価

群スパース低ランク復元の各定式化（ℓ_{p,0} 版、φ 緩和版、厳密ペナルティ版）の
目的関数値、拡張ラグランジュ関数、実行可能性残差、KKT 停留性残差を評価します。
"""

import math
from typing import Optional, Union

import numpy as np

from app.core.grouping import (
    DEFAULT_ZERO_TOL,
    GroupedFactor,
    group_norms,
    lp0_norm,
    phi_penalty,
)
from app.core.linops import SamplingProblem
from app.core.regularizer import CappedPhi, phi_derivative


# 実行可能性判定の相対許容誤差
FEASIBILITY_RTOL = 1e-9

Factor = Union[GroupedFactor, np.ndarray]


def _matrix(F: Factor) -> np.ndarray:
    return F.data if isinstance(F, GroupedFactor) else np.asarray(F, dtype=float)


def lp0_objective(
    X: GroupedFactor,
    Y: GroupedFactor,
    p: float = 2.0,
    zero_tol: float = DEFAULT_ZERO_TOL
) -> int:
    """‖X‖_{p,0} + ‖Y‖_{p,0}"""
    return lp0_norm(X, p, zero_tol) + lp0_norm(Y, p, zero_tol)


def phi_objective(X: GroupedFactor, Y: GroupedFactor, phi: CappedPhi, p: float = 2.0) -> float:
    """Φ(X) + Φ̃(Y)"""
    return phi_penalty(X, phi, p) + phi_penalty(Y, phi, p)


def exact_penalty_objective(
    X: GroupedFactor,
    Y: GroupedFactor,
    P: SamplingProblem,
    phi: CappedPhi,
    mu: float,
    p: float = 2.0
) -> float:
    """
    厳密ペナルティ目的関数 Φ(X) + Φ̃(Y) + μ·max{‖𝒜(XYᵀ) − b‖² − σ², 0}

    Args:
        X, Y: 因子行列
        P: サンプリング問題
        phi: φ 関数
        mu: ペナルティ係数（正）
        p: 群ノルムの次数

    Returns:
        float: 目的関数値

    Raises:
        ValueError: μ ≤ 0 の場合
    """
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")

    misfit = P.residual_norm(X.data @ Y.data.T) ** 2 - P.sigma ** 2
    return phi_objective(X, Y, phi, p) + mu * max(misfit, 0.0)


def feasibility_residual(X: Factor, Y: Factor, C: np.ndarray) -> float:
    """‖XYᵀ − C‖_F"""
    return float(np.linalg.norm(_matrix(X) @ _matrix(Y).T - C))


def augmented_lagrangian(
    X: GroupedFactor,
    Y: GroupedFactor,
    C: np.ndarray,
    S: np.ndarray,
    eta: float,
    phi: CappedPhi,
    P: Optional[SamplingProblem] = None,
    reg_weight: float = 1.0
) -> float:
    """
    拡張ラグランジュ関数

    w·(Φ(X) + Φ̃(Y)) + ι_Θ(C) + ⟨XYᵀ − C, S⟩ + η/2 ‖XYᵀ − C‖²_F

    P を渡した場合、C が Θ の外にあれば +inf を返します。
    """
    if P is not None:
        slack = P.sigma * (1.0 + FEASIBILITY_RTOL) + FEASIBILITY_RTOL * (1.0 + np.linalg.norm(P.b))
        if P.residual_norm(C) > slack:
            return math.inf

    E = X.data @ Y.data.T - C
    return float(
        reg_weight * phi_objective(X, Y, phi)
        + np.sum(E * S)
        + 0.5 * eta * np.sum(E * E)
    )


def _group_residual_sq(
    F: GroupedFactor,
    G: np.ndarray,
    phi: CappedPhi,
    reg_weight: float,
    zero_tol: float
) -> float:
    """群ごとの停留性残差の二乗和（G は Λ Y または Λᵀ X）"""
    total = 0.0
    norms = group_norms(F)

    for i, cols in enumerate(F.partition.slices()):
        n_i = cols.stop - cols.start
        coupling = G[:, cols]
        norm = float(norms[i])

        if norm > zero_tol:
            grad = reg_weight * n_i * phi_derivative(phi, norm) * F.data[:, cols] / norm + coupling
            total += float(np.sum(grad * grad))
        else:
            radius = reg_weight * n_i * phi_derivative(phi, 0.0)
            total += max(float(np.linalg.norm(coupling)) - radius, 0.0) ** 2

    return total


def stationarity_residual(
    X: GroupedFactor,
    Y: GroupedFactor,
    multiplier: np.ndarray,
    phi: CappedPhi,
    reg_weight: float = 1.0,
    zero_tol: float = DEFAULT_ZERO_TOL
) -> float:
    """
    KKT 停留性残差

    非ゼログループでは w n_i φ'(‖X_i‖) X_i/‖X_i‖ + Λ Y_i のノルム、
    ゼログループでは −Λ Y_i から半径 w n_i φ'(0⁺) の球までの距離を用います
    （Y も Λᵀ X_i で同様）。

    Args:
        X, Y: 因子行列
        multiplier: 乗数推定値 Λ = S + η(XYᵀ − C)
        phi: φ 関数
        reg_weight: 正則化の重み w
        zero_tol: ゼログループ判定閾値

    Returns:
        float: 残差ノルム
    """
    total = _group_residual_sq(X, multiplier @ Y.data, phi, reg_weight, zero_tol)
    total += _group_residual_sq(Y, multiplier.T @ X.data, phi, reg_weight, zero_tol)
    return math.sqrt(total)

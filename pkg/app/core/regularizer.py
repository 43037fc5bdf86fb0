"""
キャップ付き折り畳み凹関数と近接作用素

このモジュールは、群スパース正則化で使用する φ 関数族（CapL1 / CapLog）と、
そのスカラー近接作用素・ブロック（群ノルム）近接作用素を提供します。
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import List

import numpy as np


class RegularizerError(ValueError):
    """正則化関数の定義域エラー"""
    pass


class PhiKind(str, Enum):
    """φ 関数の種類"""
    CAPL1 = "CapL1"
    CAPLOG = "CapLog"


# 候補値の目的関数差がこの値以内なら同点とみなし、小さい x を採用する
TIE_TOL = 1e-12


@dataclass(frozen=True)
class CappedPhi:
    """
    キャップ付き折り畳み凹関数

    φ(0) = 0 で非減少かつ凹、t ≥ ν で φ(t) = 1 となる関数。

    Attributes:
        kind: 関数の種類（CapL1 / CapLog）
        nu: キャップ閾値 ν（正の実数）
        theta: CapLog の形状パラメータ θ（CapL1 では未使用）

    Example:
        >>> phi = CappedPhi(PhiKind.CAPL1, nu=0.5)
        >>> phi(0.25)
        0.5
    """
    kind: PhiKind = PhiKind.CAPLOG
    nu: float = 1.0
    theta: float = 0.1

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", PhiKind(self.kind))
        except ValueError as e:
            raise RegularizerError(f"Unknown phi kind: {self.kind}") from e

        if not (math.isfinite(self.nu) and self.nu > 0):
            raise RegularizerError(f"nu must be positive and finite, got {self.nu}")
        if not (math.isfinite(self.theta) and self.theta > 0):
            raise RegularizerError(f"theta must be positive and finite, got {self.theta}")

    @property
    def log_scale(self) -> float:
        """CapLog の正規化定数 log(1 + ν/θ)"""
        return math.log1p(self.nu / self.theta)

    def __call__(self, t: float) -> float:
        return phi_eval(self, t)


def _check_nonnegative(name: str, value: float) -> None:
    if not value >= 0:
        raise RegularizerError(f"{name} must be nonnegative, got {value}")


def phi_eval(phi: CappedPhi, t: float) -> float:
    """
    φ(t) を評価

    Args:
        phi: φ 関数
        t: 評価点（非負）

    Returns:
        float: [0, 1] の値

    Raises:
        RegularizerError: t が負の場合

    Example:
        >>> phi_eval(CappedPhi(PhiKind.CAPL1, nu=0.5), 0.7)
        1.0
    """
    _check_nonnegative("t", t)

    if t >= phi.nu:
        return 1.0

    if phi.kind is PhiKind.CAPL1:
        return min(t / phi.nu, 1.0)

    return min(math.log1p(t / phi.theta) / phi.log_scale, 1.0)


def phi_derivative(phi: CappedPhi, t: float) -> float:
    """
    φ の右微分係数

    Args:
        phi: φ 関数
        t: 評価点（非負）

    Returns:
        float: φ'(t+)（キャップ領域 t ≥ ν では 0）
    """
    _check_nonnegative("t", t)

    if t >= phi.nu:
        return 0.0

    if phi.kind is PhiKind.CAPL1:
        return 1.0 / phi.nu

    return 1.0 / ((phi.theta + t) * phi.log_scale)


def phi_left_derivative_at_nu(phi: CappedPhi) -> float:
    """
    ν における左微分係数 φ'₋(ν)

    Args:
        phi: φ 関数

    Returns:
        float: 正の値

    Example:
        >>> phi_left_derivative_at_nu(CappedPhi(PhiKind.CAPL1, nu=2.0))
        0.5
    """
    if phi.kind is PhiKind.CAPL1:
        return 1.0 / phi.nu

    return 1.0 / ((phi.theta + phi.nu) * phi.log_scale)


def _stationary_points(phi: CappedPhi, lam: float, z: float) -> List[float]:
    """滑らかな分岐 (0, ν) 内の停留点を列挙"""
    points: List[float] = []

    if phi.kind is PhiKind.CAPL1:
        points.append(z - lam / phi.nu)
    else:
        # (x + θ)(x − z) + λ / log(1 + ν/θ) = 0
        disc = (z + phi.theta) ** 2 - 4.0 * lam / phi.log_scale
        if disc >= 0:
            root = math.sqrt(disc)
            points.append(0.5 * ((z - phi.theta) - root))
            points.append(0.5 * ((z - phi.theta) + root))

    return [x for x in points if 0.0 < x < phi.nu]


def scalar_prox(phi: CappedPhi, lam: float, z: float) -> float:
    """
    スカラー近接作用素 argmin_{x ≥ 0} λφ(x) + ½(x − z)²

    候補点（0、ν、z ≥ ν の場合は z、滑らかな分岐の停留点）を列挙し、
    目的関数値が最小のものを返します。

    Args:
        phi: φ 関数
        lam: 正則化係数 λ（正）
        z: 入力値（非負）

    Returns:
        float: 大域的最小解

    Raises:
        RegularizerError: λ ≤ 0 または z < 0 の場合

    Example:
        >>> scalar_prox(CappedPhi(PhiKind.CAPL1, nu=1.0), 0.5, 0.6)
        0.09999999999999998
    """
    if not lam > 0:
        raise RegularizerError(f"lambda must be positive, got {lam}")
    _check_nonnegative("z", z)

    candidates = [0.0, phi.nu]
    if z >= phi.nu:
        candidates.append(z)
    candidates.extend(_stationary_points(phi, lam, z))

    best_x = 0.0
    best_val = math.inf
    for x in sorted(candidates):
        val = lam * phi_eval(phi, x) + 0.5 * (x - z) ** 2
        if val < best_val - TIE_TOL:
            best_x, best_val = x, val

    return best_x


def block_prox(phi: CappedPhi, lam: float, Z: np.ndarray) -> np.ndarray:
    """
    群ノルムの近接作用素

    Z = 0 なら 0、それ以外は scalar_prox(φ, λ, ‖Z‖_F) · Z / ‖Z‖_F を返します。

    Args:
        phi: φ 関数
        lam: 正則化係数 λ（正）
        Z: 入力ブロック

    Returns:
        np.ndarray: Z の非負スカラー倍

    Raises:
        RegularizerError: λ ≤ 0 の場合
    """
    Z = np.asarray(Z, dtype=float)
    norm = np.linalg.norm(Z)

    if norm == 0.0:
        if not lam > 0:
            raise RegularizerError(f"lambda must be positive, got {lam}")
        return np.zeros_like(Z)

    return scalar_prox(phi, lam, float(norm)) * Z / norm

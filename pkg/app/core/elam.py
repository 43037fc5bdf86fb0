"""
ELAM 内部ソルバー

拡張ラグランジュ部分問題を、外挿付き線形化交互最小化で解きます。
各スイープでグループ i = 1..s の X_i, Y_i を順に近接勾配更新し、
ゼログループを除去した後、C を Θ へ射影します。

残差 R = XYᵀ − C + S/η はグループ更新ごとにランク n_i の補正で保守し、
C 更新時に一から再構築します。
"""

import math
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from app.core.grouping import GroupedFactor, GroupPartition
from app.core.linops import SamplingProblem
from app.core.objectives import augmented_lagrangian
from app.core.regularizer import CappedPhi, RegularizerError, block_prox


# 保守残差と再計算残差の相対ずれの警告閾値
DRIFT_TOL = 1e-8


class ElamError(Exception):
    """ELAM ソルバーのエラー"""
    pass


class NumericalFailureError(ElamError):
    """
    数値破綻（非有限値の発生、または近接ステップの失敗）

    Attributes:
        sweep: 発生したスイープ番号（1 始まり）
        outer: 発生した外部反復番号（IRAL から再送出された場合）
    """

    def __init__(self, message: str, sweep: Optional[int] = None, outer: Optional[int] = None):
        super().__init__(message)
        self.sweep = sweep
        self.outer = outer


class ElamConfig(BaseModel):
    """
    ELAM の設定

    Attributes:
        gamma: ステップ幅の拡大係数 γ（> 1）
        delta: 外挿の安全係数 δ（0 < δ < 1）
        eps_floor: ステップ幅の下限 ε
        max_inner: 最大スイープ数
        inner_tol: 反復変化量による停止閾値
        prune_tol: ゼログループ除去の閾値
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    gamma: float = Field(1.5, gt=1.0)
    delta: float = Field(0.99, gt=0.0, lt=1.0)
    eps_floor: float = Field(1e-6, gt=0.0)
    max_inner: int = Field(100, ge=1)
    inner_tol: float = Field(1e-5, gt=0.0)
    prune_tol: float = Field(1e-10, ge=0.0)


@dataclass
class ElamState:
    """
    ELAM の反復状態

    Attributes:
        X, X_prev: 現在と前スイープの X（m × n）
        Y, Y_prev: 現在と前スイープの Y（n × n）
        C: 現在の C
        R: 保守残差 XYᵀ − C + S/η
        S: 乗数
        eta: ペナルティ係数 η
        reg_weight: 正則化の重み
        tau_X, tau_Y: 前スイープのグループ別ステップ幅
        t_seq: 外挿系列の現在値 t_i
        t_before: 一つ前の値 t_{i−1}
        active: グループの有効フラグ
    """
    X: GroupedFactor
    X_prev: GroupedFactor
    Y: GroupedFactor
    Y_prev: GroupedFactor
    C: np.ndarray
    R: np.ndarray
    S: np.ndarray
    eta: float
    reg_weight: float = 1.0
    tau_X: Optional[np.ndarray] = None
    tau_Y: Optional[np.ndarray] = None
    t_seq: float = 1.0
    t_before: float = 1.0
    active: Optional[np.ndarray] = None

    def __post_init__(self):
        s = self.partition.count
        if self.tau_X is None:
            self.tau_X = np.ones(s)
        if self.tau_Y is None:
            self.tau_Y = np.ones(s)
        if self.active is None:
            self.active = np.ones(s, dtype=bool)

    @classmethod
    def create(
        cls,
        X0: GroupedFactor,
        Y0: GroupedFactor,
        C0: np.ndarray,
        S: np.ndarray,
        eta: float,
        reg_weight: float = 1.0,
        active: Optional[np.ndarray] = None
    ) -> "ElamState":
        """初期点から状態を生成（外挿履歴は初期点、ステップ幅は 1 で開始）"""
        if X0.partition != Y0.partition:
            raise ElamError("X and Y must share the same column partition")
        if not eta > 0:
            raise ElamError(f"eta must be positive, got {eta}")

        X = X0.copy()
        Y = Y0.copy()
        C = np.array(C0, dtype=float)
        S = np.asarray(S, dtype=float)
        if C.shape != (X.shape[0], Y.shape[0]) or S.shape != C.shape:
            raise ElamError(
                f"Inconsistent shapes: X {X.shape}, Y {Y.shape}, C {C.shape}, S {S.shape}"
            )

        state = cls(
            X=X,
            X_prev=X.copy(),
            Y=Y,
            Y_prev=Y.copy(),
            C=C,
            R=np.zeros_like(C),
            S=S,
            eta=float(eta),
            reg_weight=float(reg_weight),
            active=None if active is None else np.array(active, dtype=bool),
        )
        state.R = state.fresh_residual()
        return state

    @property
    def partition(self) -> GroupPartition:
        return self.X.partition

    def fresh_residual(self) -> np.ndarray:
        """XYᵀ − C + S/η を一から計算"""
        return self.X.data @ self.Y.data.T - self.C + self.S / self.eta

    def advance_t(self) -> None:
        """外挿系列を 1 ステップ進める"""
        self.t_before = self.t_seq
        self.t_seq = t_next(self.t_seq)


@dataclass
class SweepRecord:
    """
    スイープ診断情報（monitor コールバックに渡される）

    Attributes:
        sweep: スイープ番号（1 始まり）
        lagrangian_before: スイープ前の拡張ラグランジュ関数値
        lagrangian_after: スイープ後の値
        descent_bound: 降下不等式の右辺
        change: 正規化反復変化量
        residual_drift: 保守残差の相対ずれ
        active_groups: スイープ後の有効グループ数
    """
    sweep: int
    lagrangian_before: float
    lagrangian_after: float
    descent_bound: float
    change: float
    residual_drift: float
    active_groups: int


@dataclass
class ElamResult:
    """
    ELAM の結果

    Attributes:
        X, Y: 最終因子
        C: 最終 C
        sweeps: 実行スイープ数
        final_change: 最終スイープの正規化反復変化量
        active: グループの有効フラグ
    """
    X: GroupedFactor
    Y: GroupedFactor
    C: np.ndarray
    sweeps: int
    final_change: float
    active: np.ndarray


SweepMonitor = Callable[[SweepRecord], None]


def t_next(t_prev: float) -> float:
    """
    外挿系列の漸化式 ½(1 + √(1 + 4t²))

    Example:
        >>> round(t_next(1.0), 4)
        1.618
    """
    return 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_prev * t_prev))


def extrapolation_weight(
    t_prev: float,
    t_cur: float,
    tau_prev: float,
    tau_cur: float,
    cfg: ElamConfig
) -> float:
    """
    外挿重み min((t_{i−1} − 1)/t_i, δ(γ−1)/(2(γ+1))·√(τ_prev/τ_cur))
    """
    momentum = (t_prev - 1.0) / t_cur
    safeguard = cfg.delta * (cfg.gamma - 1.0) / (2.0 * (cfg.gamma + 1.0)) * math.sqrt(tau_prev / tau_cur)
    return max(min(momentum, safeguard), 0.0)


def _spectral_norm_sq(A: np.ndarray) -> float:
    if A.size == 0:
        return 0.0
    return float(np.linalg.norm(A, 2)) ** 2


def _prox_weight(state: ElamState, n_i: int, eta: float, tau: float) -> float:
    return state.reg_weight * n_i / (eta * tau)


def update_group_X(
    i: int,
    state: ElamState,
    phi: CappedPhi,
    eta: float,
    cfg: ElamConfig
) -> np.ndarray:
    """
    X のグループ i を外挿点での線形化近接ステップで更新

    Args:
        i: グループ番号
        state: 反復状態（X, X_prev, R, tau_X を更新）
        phi: φ 関数
        eta: ペナルティ係数 η（正）
        cfg: ELAM 設定

    Returns:
        np.ndarray: 更新後の X_i

    Raises:
        ElamError: η ≤ 0 の場合
    """
    if not eta > 0:
        raise ElamError(f"eta must be positive, got {eta}")

    cols = state.partition.slice(i)
    n_i = cols.stop - cols.start
    X_old = state.X.data[:, cols].copy()
    Y_i = state.Y.data[:, cols]

    tau = max(cfg.gamma * _spectral_norm_sq(Y_i), cfg.eps_floor)
    w = extrapolation_weight(state.t_before, state.t_seq, state.tau_X[i], tau, cfg)

    D = w * (X_old - state.X_prev.data[:, cols])
    grad = state.R @ Y_i + D @ (Y_i.T @ Y_i)
    X_new = block_prox(phi, _prox_weight(state, n_i, eta, tau), X_old + D - grad / tau)

    state.R += (X_new - X_old) @ Y_i.T
    state.X_prev.data[:, cols] = X_old
    state.X.data[:, cols] = X_new
    state.tau_X[i] = tau
    return X_new


def update_group_Y(
    i: int,
    state: ElamState,
    phi: CappedPhi,
    eta: float,
    cfg: ElamConfig
) -> np.ndarray:
    """
    Y のグループ i を更新（更新済みの X_i を使用）

    Returns:
        np.ndarray: 更新後の Y_i

    Raises:
        ElamError: η ≤ 0 の場合
    """
    if not eta > 0:
        raise ElamError(f"eta must be positive, got {eta}")

    cols = state.partition.slice(i)
    n_i = cols.stop - cols.start
    Y_old = state.Y.data[:, cols].copy()
    X_i = state.X.data[:, cols]

    tau = max(cfg.gamma * _spectral_norm_sq(X_i), cfg.eps_floor)
    w = extrapolation_weight(state.t_before, state.t_seq, state.tau_Y[i], tau, cfg)

    D = w * (Y_old - state.Y_prev.data[:, cols])
    grad = state.R.T @ X_i + D @ (X_i.T @ X_i)
    Y_new = block_prox(phi, _prox_weight(state, n_i, eta, tau), Y_old + D - grad / tau)

    state.R += X_i @ (Y_new - Y_old).T
    state.Y_prev.data[:, cols] = Y_old
    state.Y.data[:, cols] = Y_new
    state.tau_Y[i] = tau
    return Y_new


def prune_zero_groups(state: ElamState, cfg: ElamConfig) -> List[int]:
    """
    ノルムが prune_tol 以下のグループを 0 にして無効化

    行列の形状は変えず、X_i と Y_i を同時に 0 にします。

    Returns:
        List[int]: 今回無効化したグループ番号
    """
    pruned: List[int] = []

    for i in np.flatnonzero(state.active):
        cols = state.partition.slice(int(i))
        X_i = state.X.data[:, cols]
        Y_i = state.Y.data[:, cols]
        if max(np.linalg.norm(X_i), np.linalg.norm(Y_i)) <= cfg.prune_tol:
            state.R -= X_i @ Y_i.T
            X_i[...] = 0.0
            Y_i[...] = 0.0
            state.active[i] = False
            pruned.append(int(i))

    if pruned:
        logger.debug(f"Pruned groups {pruned}, active={int(state.active.sum())}")

    return pruned


def update_C(
    state: ElamState,
    P: SamplingProblem,
    eta: float,
    S: np.ndarray
) -> np.ndarray:
    """
    C ← Π_Θ(XYᵀ + S/η)、保守残差を一から再構築

    Returns:
        np.ndarray: 更新後の C
    """
    Z = state.X.data @ state.Y.data.T + S / eta
    C_new = P.project_theta(Z)
    state.C = C_new
    state.R = Z - C_new
    return C_new


def _is_finite(state: ElamState) -> bool:
    return bool(
        np.all(np.isfinite(state.X.data)) and np.all(np.isfinite(state.Y.data))
        and np.all(np.isfinite(state.C)) and np.all(np.isfinite(state.R))
    )


def _residual_drift(state: ElamState, S: np.ndarray, eta: float) -> float:
    """保守残差と再計算残差の相対ずれ"""
    exact = state.X.data @ state.Y.data.T - state.C + S / eta
    return float(np.linalg.norm(state.R - exact) / max(np.linalg.norm(exact), 1.0))


def _descent_bound(
    cfg: ElamConfig,
    eta: float,
    groups: np.ndarray,
    state: ElamState,
    start: dict,
    C_change: float
) -> float:
    """1 スイープ分の降下不等式の右辺"""
    coef = (cfg.gamma - 1.0) / (4.0 * cfg.gamma) * eta
    delta_sq = cfg.delta ** 2
    total = 0.0

    for i in groups:
        cols = state.partition.slice(int(i))
        for name, current in (("X", state.X.data), ("Y", state.Y.data)):
            now = start[name][:, cols]
            before = start[name + "_prev"][:, cols]
            history = np.sum((now - before) ** 2)
            step = np.sum((current[:, cols] - now) ** 2)
            tau_before = start["tau_" + name][i]
            tau_now = getattr(state, "tau_" + name)[i]
            total += tau_before * delta_sq * history - tau_now * step

    return -0.5 * eta * C_change ** 2 + coef * total


def elam_solve(
    X0: GroupedFactor,
    Y0: GroupedFactor,
    C0: np.ndarray,
    S: np.ndarray,
    eta: float,
    phi: CappedPhi,
    P: SamplingProblem,
    cfg: ElamConfig,
    reg_weight: float = 1.0,
    active: Optional[np.ndarray] = None,
    monitor: Optional[SweepMonitor] = None
) -> ElamResult:
    """
    ELAM で拡張ラグランジュ部分問題を解く

    正規化反復変化量 max(‖ΔX‖, ‖ΔY‖, ‖ΔC‖)/(1 + ‖C‖) が inner_tol 以下、
    または max_inner スイープに達するまで反復します。

    Args:
        X0, Y0: 初期因子（同じ列分割を共有）
        C0: 初期 C
        S: 乗数（固定）
        eta: ペナルティ係数 η
        phi: φ 関数
        P: サンプリング問題
        cfg: ELAM 設定
        reg_weight: 正則化の重み
        active: 有効グループのフラグ（None なら全グループ）
        monitor: スイープ診断のコールバック

    Returns:
        ElamResult: 最終反復と診断値

    Raises:
        ElamError: 形状不一致・η ≤ 0 の場合
        NumericalFailureError: 非有限値が発生した場合
    """
    state = ElamState.create(X0, Y0, C0, S, eta, reg_weight, active)
    S = state.S
    if not (_is_finite(state) and np.all(np.isfinite(S))):
        raise NumericalFailureError("Non-finite initial point", sweep=0)
    change = math.inf
    sweep = 0

    for sweep in range(1, cfg.max_inner + 1):
        groups = np.flatnonzero(state.active)
        start = {
            "X": state.X.data.copy(),
            "Y": state.Y.data.copy(),
            "C": state.C,
        }
        if monitor is not None:
            start.update({
                "X_prev": state.X_prev.data.copy(),
                "Y_prev": state.Y_prev.data.copy(),
                "tau_X": state.tau_X.copy(),
                "tau_Y": state.tau_Y.copy(),
            })
            lagrangian_before = augmented_lagrangian(
                state.X, state.Y, state.C, S, eta, phi, reg_weight=reg_weight
            )

        try:
            for i in groups:
                state.advance_t()
                update_group_X(int(i), state, phi, eta, cfg)
                update_group_Y(int(i), state, phi, eta, cfg)
        except RegularizerError as e:
            raise NumericalFailureError(f"Prox step failed at sweep {sweep}: {str(e)}", sweep=sweep) from e

        prune_zero_groups(state, cfg)

        drift = _residual_drift(state, S, eta)
        if drift > DRIFT_TOL:
            logger.warning(f"Residual drift {drift:.3e} at sweep {sweep}, rebuilding")
        update_C(state, P, eta, S)

        if not _is_finite(state):
            raise NumericalFailureError(f"Non-finite iterate at sweep {sweep}", sweep=sweep)

        C_change = float(np.linalg.norm(state.C - start["C"]))
        change = max(
            float(np.linalg.norm(state.X.data - start["X"])),
            float(np.linalg.norm(state.Y.data - start["Y"])),
            C_change,
        ) / (1.0 + float(np.linalg.norm(state.C)))

        if monitor is not None:
            monitor(SweepRecord(
                sweep=sweep,
                lagrangian_before=lagrangian_before,
                lagrangian_after=augmented_lagrangian(
                    state.X, state.Y, state.C, S, eta, phi, reg_weight=reg_weight
                ),
                descent_bound=_descent_bound(cfg, eta, groups, state, start, C_change),
                change=change,
                residual_drift=drift,
                active_groups=int(state.active.sum()),
            ))

        logger.debug(
            f"ELAM sweep {sweep}: change={change:.3e}, "
            f"active={int(state.active.sum())}/{state.partition.count}"
        )

        if change <= cfg.inner_tol:
            break

    return ElamResult(
        X=state.X,
        Y=state.Y,
        C=state.C,
        sweeps=sweep,
        final_change=change,
        active=state.active.copy(),
    )

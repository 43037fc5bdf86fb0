"""
IRAL 外部ループ

不正確・リスタート付き拡張ラグランジュ法で群スパース低ランク復元を解きます。
各外部反復で前回の (X, Y, C) から ELAM を再開し、実行可能性残差の減少に応じて
リスタート（S ← 0）かエスカレーション（乗数更新と η の増大）を選びます。
"""

import math
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Deque, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from app.core.elam import ElamConfig, NumericalFailureError, SweepMonitor, elam_solve
from app.core.grouping import GroupedFactor, make_partition
from app.core.linops import SamplingProblem
from app.core.objectives import stationarity_residual
from app.core.regularizer import CappedPhi, PhiKind


# 自動較正した正則化の重みの下限
MIN_REG_WEIGHT = 1e-12


class IralError(Exception):
    """IRAL ソルバーのエラー"""
    pass


class SolverLogicError(IralError):
    """制御フローの前提違反"""
    pass


class InitMethod(str, Enum):
    """初期化方法"""
    DATA_IDENTITY = "data_identity"
    SPECTRAL_WARM = "spectral_warm"
    SVD_BALANCED = "svd_balanced"


class Branch(str, Enum):
    """外部反復の分岐"""
    WARMUP = "a"
    RESTART = "b"
    ESCALATE = "c"


class PhiConfig(BaseModel):
    """φ 関数の設定"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: PhiKind = PhiKind.CAPLOG
    nu: float = Field(1.0, gt=0.0)
    theta: float = Field(0.1, gt=0.0)

    def build(self) -> CappedPhi:
        return CappedPhi(self.kind, self.nu, self.theta)


class IralConfig(BaseModel):
    """
    IRAL の設定（既定値は標準実験設定）

    Attributes:
        eta0: 初期ペナルティ係数 η⁰
        rho1, rho2, rho3: リスタート判定・η 増大・ε 縮小の係数（(0,1)）
        vartheta: ウォームアップ反復数と残差履歴の長さ ϑ
        eps0: 初期許容誤差 ε₀
        max_outer: 最大外部反復数
        outer_tol: 正規化実行可能性残差の停止閾値
        groups: 列グループ数 s
        elam: ELAM 設定
        phi: φ 関数の設定
        init: 初期化方法
        reg_weight: 正則化の重み（None なら自動較正）
        reg_scale: 自動較正で用いる閾値の倍率
        restart: False なら常にエスカレーション分岐を選ぶ
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    eta0: float = Field(1e-3, gt=0.0)
    rho1: float = Field(0.999, gt=0.0, lt=1.0)
    rho2: float = Field(0.5, gt=0.0, lt=1.0)
    rho3: float = Field(0.5, gt=0.0, lt=1.0)
    vartheta: int = Field(10, ge=1)
    eps0: float = Field(10.0, gt=0.0)
    max_outer: int = Field(200, ge=1)
    outer_tol: float = Field(1e-5, gt=0.0)
    groups: int = Field(32, ge=1)
    elam: ElamConfig = Field(default_factory=ElamConfig)
    phi: PhiConfig = Field(default_factory=PhiConfig)
    init: InitMethod = InitMethod.SVD_BALANCED
    reg_weight: Optional[float] = Field(None, gt=0.0)
    reg_scale: float = Field(0.7, gt=0.0)
    restart: bool = True


@dataclass
class RecoveryResult:
    """
    復元結果

    Attributes:
        C_hat: 復元行列（常に Θ への射影の出力）
        X, Y: 最終因子
        outer_iters: 外部反復数
        residual_history: 各外部反復の ‖XYᵀ − C‖_F
        restarts: リスタート分岐の回数
        wall_time: 経過時間（秒）
        branches: 各反復で選ばれた分岐
        final_residual: 最終の ‖XYᵀ − C‖_F
        eta: 最終のペナルティ係数
        reg_weight: 使用した正則化の重み
        stationarity: 返却点での KKT 停留性残差
        converged: outer_tol を満たして停止したか
    """
    C_hat: np.ndarray
    X: GroupedFactor
    Y: GroupedFactor
    outer_iters: int
    residual_history: List[float]
    restarts: int
    wall_time: float
    branches: List[Branch] = field(default_factory=list)
    final_residual: float = math.nan
    eta: float = math.nan
    reg_weight: float = math.nan
    stationarity: float = math.nan
    converged: bool = False


def restart_check(history: Sequence[float], new_residual: float, rho1: float) -> bool:
    """
    リスタート判定 new_residual ≤ ρ₁·min(history)

    Args:
        history: 直近 ϑ 回の残差
        new_residual: 新しい残差
        rho1: 係数 ρ₁

    Returns:
        bool: リスタート可能なら True

    Raises:
        SolverLogicError: 履歴が空の場合

    Example:
        >>> restart_check([1.0, 0.9, 0.8], 0.79, 0.999)
        True
    """
    if len(history) == 0:
        raise SolverLogicError("Restart check requires a nonempty residual history")
    return new_residual <= rho1 * min(history)


def update_multiplier(S: np.ndarray, eta: float, X, Y, C: np.ndarray) -> np.ndarray:
    """乗数更新 S + η(XYᵀ − C)"""
    X = X.data if isinstance(X, GroupedFactor) else np.asarray(X, dtype=float)
    Y = Y.data if isinstance(Y, GroupedFactor) else np.asarray(Y, dtype=float)
    return S + eta * (X @ Y.T - C)


@dataclass
class OuterSchedule:
    """
    外部反復の分岐とパラメータ更新

    Attributes:
        eta: 現在のペナルティ係数 η
        eps: 現在の許容誤差 ε
        rho1, rho2, rho3: 更新係数
        vartheta: ウォームアップ反復数と履歴長 ϑ
        restart_enabled: False なら常にエスカレーション
        history: 直近 ϑ 回の残差
        restarts: リスタート分岐の回数

    Example:
        >>> schedule = OuterSchedule.from_config(IralConfig())
        >>> branch = schedule.decide(0, 1.0)
        >>> schedule.apply(branch, 1.0)
    """
    eta: float
    eps: float
    rho1: float
    rho2: float
    rho3: float
    vartheta: int
    restart_enabled: bool = True
    history: Deque[float] = field(default_factory=deque)
    restarts: int = 0

    def __post_init__(self):
        self.history = deque(self.history, maxlen=self.vartheta)

    @classmethod
    def from_config(cls, cfg: IralConfig) -> "OuterSchedule":
        return cls(
            eta=cfg.eta0,
            eps=cfg.eps0,
            rho1=cfg.rho1,
            rho2=cfg.rho2,
            rho3=cfg.rho3,
            vartheta=cfg.vartheta,
            restart_enabled=cfg.restart,
        )

    def decide(self, k: int, residual: float) -> Branch:
        """反復 k の残差から分岐を決定（状態は変更しない）"""
        if not self.restart_enabled:
            return Branch.ESCALATE
        if k <= self.vartheta:
            return Branch.WARMUP
        if restart_check(self.history, residual, self.rho1):
            return Branch.RESTART
        return Branch.ESCALATE

    def apply(self, branch: Branch, residual: float) -> None:
        """分岐に応じて η・ε を更新し、残差を履歴に追加"""
        if branch is Branch.RESTART:
            self.eps *= math.sqrt(self.rho1)
            self.restarts += 1
        elif branch is Branch.ESCALATE:
            self.eta /= self.rho2
            self.eps *= self.rho3

        self.history.append(residual)


def initialize(
    P: SamplingProblem,
    s: int,
    init: InitMethod = InitMethod.DATA_IDENTITY
) -> Tuple[GroupedFactor, GroupedFactor, np.ndarray]:
    """
    初期点 (X0, Y0, C0) を構築

    - DATA_IDENTITY: X0 = M_Ω、Y0 = I
    - SPECTRAL_WARM: X0 = M_Ω/√‖M_Ω‖₂、Y0 = √‖M_Ω‖₂·I
    - SVD_BALANCED: 未観測要素を観測値の平均で埋めた M̄ = UΣVᵀ から
      X0 = UΣ^{1/2}、Y0 = VΣ^{1/2}（幅 n に 0 埋め）

    DATA_IDENTITY と SPECTRAL_WARM は X0 Y0ᵀ = M_Ω、C0 = Π_Θ(M_Ω)、
    SVD_BALANCED は X0 Y0ᵀ = M̄、C0 = Π_Θ(M̄) です。

    Args:
        P: サンプリング問題
        s: グループ数
        init: 初期化方法

    Returns:
        Tuple[GroupedFactor, GroupedFactor, np.ndarray]: (X0, Y0, C0)
    """
    m, n = P.shape
    partition = make_partition(n, s)
    M = P.observed_matrix()
    init = InitMethod(init)

    if init is InitMethod.DATA_IDENTITY:
        X0, Y0 = M.copy(), np.eye(n)

    elif init is InitMethod.SPECTRAL_WARM:
        scale = float(np.linalg.norm(M, 2)) if M.any() else 1.0
        root = math.sqrt(scale)
        X0, Y0 = M / root, np.eye(n) * root

    else:
        M = P.mean_filled_matrix()
        U, sv, Vt = np.linalg.svd(M, full_matrices=False)
        k = sv.size
        root = np.sqrt(sv)
        X0 = np.zeros((m, n))
        Y0 = np.zeros((n, n))
        X0[:, :k] = U * root
        Y0[:, :k] = Vt.T * root

    return GroupedFactor(X0, partition), GroupedFactor(Y0, partition), P.project_theta(M)


def calibrate_reg_weight(P: SamplingProblem, cfg: IralConfig) -> float:
    """
    正則化の重みを観測データから較正

    観測値の平均からの偏差 b − mean(b) について、ランダムマスクによる
    揺らぎのスペクトル水準 √(SR(1−SR))·rms(b − mean(b))·(√m + √n) に
    reg_scale を掛けた値を閾値とし、
    w = ½·η⁰·γ·閾値² とします。初回スイープでこの水準を下回るエネルギーの
    グループが除去されます。

    Returns:
        float: 正則化の重み（下限 MIN_REG_WEIGHT）
    """
    m, n = P.shape
    sr = P.sampling_rate
    spread = float(np.std(P.b)) if P.num_measurements else 0.0
    noise = math.sqrt(sr * (1.0 - sr)) * spread * (math.sqrt(m) + math.sqrt(n))
    threshold = cfg.reg_scale * noise
    return max(0.5 * cfg.eta0 * cfg.elam.gamma * threshold ** 2, MIN_REG_WEIGHT)


OuterMonitor = Callable[[int, Branch, float], None]


def iral_solve(
    P: SamplingProblem,
    cfg: IralConfig,
    sweep_monitor: Optional[SweepMonitor] = None,
    outer_monitor: Optional[OuterMonitor] = None
) -> RecoveryResult:
    """
    IRAL で低ランク行列を復元

    各外部反復で inner_tol = min(ε_k, elam.inner_tol) として ELAM を実行し、
    ‖XYᵀ − C‖_F/(1 + ‖C‖_F) ≤ outer_tol または max_outer で停止します。
    分岐は (a) k ≤ ϑ: S ← 0、(b) リスタート判定成立: S ← 0、ε ← √ρ₁ε、
    (c) それ以外: 乗数更新、η ← η/ρ₂、ε ← ρ₃ε です。

    Args:
        P: サンプリング問題（観測数 ≥ 1）
        cfg: IRAL 設定
        sweep_monitor: ELAM のスイープ診断コールバック
        outer_monitor: 外部反復ごとのコールバック (k, branch, residual)

    Returns:
        RecoveryResult: 復元結果

    Raises:
        IralError: 観測が空の場合
        NumericalFailureError: 非有限値（外部反復番号付き）
    """
    if P.num_measurements == 0:
        raise IralError("Sampling problem has no observed entries")

    start_time = time.perf_counter()
    phi = cfg.phi.build()
    X, Y, C = initialize(P, cfg.groups, cfg.init)
    reg_weight = cfg.reg_weight if cfg.reg_weight is not None else calibrate_reg_weight(P, cfg)
    schedule = OuterSchedule.from_config(cfg)
    S = np.zeros_like(C)
    active: Optional[np.ndarray] = None

    residuals: List[float] = []
    branches: List[Branch] = []
    converged = False
    eta_used, S_used = schedule.eta, S

    logger.info(
        f"IRAL started: {P.rows}x{P.cols}, p={P.num_measurements}, groups={cfg.groups}, "
        f"init={cfg.init.value}, reg_weight={reg_weight:.3e}, restart={cfg.restart}"
    )

    k = 0
    for k in range(cfg.max_outer):
        elam_cfg = cfg.elam.model_copy(update={"inner_tol": min(schedule.eps, cfg.elam.inner_tol)})
        eta_used, S_used = schedule.eta, S

        try:
            result = elam_solve(
                X, Y, C, S, schedule.eta, phi, P, elam_cfg,
                reg_weight=reg_weight, active=active, monitor=sweep_monitor,
            )
        except NumericalFailureError as e:
            raise NumericalFailureError(
                f"Numerical failure at outer iteration {k}, sweep {e.sweep}: {str(e)}",
                sweep=e.sweep,
                outer=k,
            ) from e

        X, Y, C, active = result.X, result.Y, result.C, result.active
        residual = float(np.linalg.norm(X.data @ Y.data.T - C))
        residuals.append(residual)
        normalized = residual / (1.0 + float(np.linalg.norm(C)))

        if k == 0 or k % 10 == 0:
            logger.info(
                f"IRAL outer {k}: residual={residual:.3e}, sweeps={result.sweeps}, "
                f"active={int(active.sum())}/{cfg.groups}, eta={schedule.eta:.3e}"
            )

        if normalized <= cfg.outer_tol:
            converged = True
            break

        branch = schedule.decide(k, residual)
        if branch is Branch.ESCALATE:
            S = update_multiplier(S, schedule.eta, X, Y, C)
        else:
            S = np.zeros_like(C)
        schedule.apply(branch, residual)
        branches.append(branch)

        if outer_monitor is not None:
            outer_monitor(k, branch, residual)

        if not math.isfinite(schedule.eta) or not np.all(np.isfinite(S)):
            raise NumericalFailureError(
                f"Non-finite penalty or multiplier after outer iteration {k} (eta={schedule.eta})",
                outer=k,
            )

    multiplier = S_used + eta_used * (X.data @ Y.data.T - C)
    stationarity = stationarity_residual(X, Y, multiplier, phi, reg_weight)
    wall_time = time.perf_counter() - start_time

    logger.info(
        f"IRAL finished: outer={k + 1}, residual={residuals[-1]:.3e}, restarts={schedule.restarts}, "
        f"converged={converged}, stationarity={stationarity:.3e}, elapsed={wall_time:.2f}s"
    )

    return RecoveryResult(
        C_hat=C,
        X=X,
        Y=Y,
        outer_iters=k + 1,
        residual_history=residuals,
        restarts=schedule.restarts,
        wall_time=wall_time,
        branches=branches,
        final_residual=residuals[-1],
        eta=schedule.eta,
        reg_weight=reg_weight,
        stationarity=stationarity,
        converged=converged,
    )

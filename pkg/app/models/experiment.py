"""
実験設定と実行記録のデータモデル

このモジュールは、YAML 設定から検証される ExperimentConfig と、
実行ごとに保存する RunManifest・results.csv の行 ResultRow を定義します。
"""

from dataclasses import asdict, dataclass, fields
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.data import DEFAULT_SIGMA_INFLATION, QUANTIZATION_SIGMA, UINT64_MASK
from app.core.iral import IralConfig


class ExperimentMode(str, Enum):
    """実験モード"""
    INPAINT = "inpaint"
    SYNTHETIC = "synthetic"
    ABLATE_GROUPS = "ablate_groups"
    ABLATE_RESTART = "ablate_restart"


class SyntheticSettings(BaseModel):
    """合成低ランク問題の設定"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    rows: int = Field(60, ge=11)
    cols: int = Field(60, ge=11)
    rank: int = Field(3, ge=1)
    noise_sigma: float = Field(0.0, ge=0.0)
    sigma_inflation: float = Field(DEFAULT_SIGMA_INFLATION, gt=0.0)

    @model_validator(mode="after")
    def _check_rank(self) -> "SyntheticSettings":
        if self.rank > min(self.rows, self.cols):
            raise ValueError(f"rank {self.rank} exceeds min(rows, cols) = {min(self.rows, self.cols)}")
        return self


class LoggingSettings(BaseModel):
    """ログ設定（log_dir が None ならコンソールのみ）"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    log_dir: Optional[str] = "./logs"
    level: str = "INFO"
    rotation: str = "10 MB"
    retention: str = "7 days"


class ExperimentSettings(BaseModel):
    """
    実験の設定

    Attributes:
        mode: 実験モード
        images: 入力画像のパス
        sr: サンプリング率
        seed: 基準シード（64 ビット符号なし）
        groups: グループ数のリスト（None なら solver.groups のみ）
        output_dir: 出力ディレクトリ
        max_workers: 並列実行数の上限
        image_noise_sigma: 画像の画素ごとの雑音水準（σ = image_noise_sigma·√p·1.05）
        synthetic: 合成問題の設定
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: ExperimentMode = ExperimentMode.SYNTHETIC
    images: List[str] = Field(default_factory=list)
    sr: float = Field(0.7, gt=0.0, le=1.0)
    seed: int = Field(20240101, ge=0, le=UINT64_MASK)
    groups: Optional[List[int]] = None
    output_dir: str = "./output"
    max_workers: int = Field(4, ge=1)
    image_noise_sigma: float = Field(QUANTIZATION_SIGMA, ge=0.0)
    synthetic: SyntheticSettings = Field(default_factory=SyntheticSettings)

    @model_validator(mode="after")
    def _check_groups(self) -> "ExperimentSettings":
        if self.groups is not None:
            if not self.groups:
                raise ValueError("groups must not be empty")
            if any(g < 1 for g in self.groups):
                raise ValueError(f"group counts must be positive, got {self.groups}")
        return self


class ExperimentConfig(BaseModel):
    """
    実験設定ファイル全体

    Example:
        >>> cfg = ExperimentConfig.model_validate({"experiment": {"mode": "synthetic"}})
        >>> cfg.solver.eta0
        0.001
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    version: str = "1.0.0"
    app_name: str = "FLGSR Recovery"
    logging: LoggingSettings = Field(default_factory=LoggingSettings)
    experiment: ExperimentSettings = Field(default_factory=ExperimentSettings)
    solver: IralConfig = Field(default_factory=IralConfig)

    def group_counts(self) -> List[int]:
        """実行するグループ数のリスト"""
        return list(self.experiment.groups or [self.solver.groups])


class RunManifest(BaseModel):
    """
    1 回の実行を再現するための記録

    Attributes:
        run_id: 実行名（出力ディレクトリ名）
        image: 画像キー
        config: 解決済みの設定全体
        solver: この実行で使用したソルバー設定
        seed: マスク生成に使用した導出シード
        mask_shape: 行列サイズ [m, n]
        mask: 観測位置 [row, col] の行優先リスト
        software_version: ソフトウェアバージョン
        metrics: 評価結果
        diagnostics: ソルバー診断値
    """
    run_id: str
    image: str
    config: Dict[str, Any]
    solver: Dict[str, Any]
    seed: int
    mask_shape: List[int]
    mask: List[List[int]]
    software_version: str
    metrics: Dict[str, Any]
    diagnostics: Dict[str, Any] = Field(default_factory=dict)


@dataclass
class ResultRow:
    """
    results.csv の 1 行

    Attributes:
        image: 画像キー
        mode: 実験モード
        groups: グループ数
        restart_on: リスタート分岐の有効/無効
        psnr_db, ssim, rel_err, wall_time_s: 評価結果
        outer_iters: 外部反復数
        restarts: リスタート回数
    """
    image: str
    mode: str
    groups: int
    restart_on: bool
    psnr_db: float
    ssim: float
    rel_err: float
    wall_time_s: float
    outer_iters: int
    restarts: int

    @classmethod
    def columns(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    def sort_key(self):
        return (self.image, self.groups, self.restart_on)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

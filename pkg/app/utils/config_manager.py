"""
設定管理ユーティリティ

このモジュールは、実験設定 YAML（または実行記録 manifest.json）の読み込み、
ドット記法による設定値の取得・更新、ExperimentConfig への検証を提供します。
"""

import copy
import json
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from loguru import logger
from pydantic import ValidationError

from app.models.experiment import ExperimentConfig, ExperimentMode, RunManifest


DEFAULT_CONFIG_PATH = "./config/config.yaml"


class ConfigError(Exception):
    """
    設定エラー

    Attributes:
        diagnostics: 違反内容のリスト（フィールド名を含む）
    """

    def __init__(self, message: str, diagnostics: Optional[List[str]] = None):
        self.diagnostics = list(diagnostics or [])
        detail = "; ".join(self.diagnostics)
        super().__init__(f"{message}: {detail}" if detail else message)


def format_validation_error(error: ValidationError) -> List[str]:
    """pydantic の検証エラーを "section.field: message" 形式に変換"""
    diagnostics = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "<root>"
        diagnostics.append(f"{location}: {item['msg']}")
    return diagnostics


class ConfigManager:
    """
    設定管理クラス

    実験設定の読み込みと設定値の取得・更新、検証済み設定の構築を管理します。
    manifest.json を渡した場合は、記録された解決済み設定を読み込みます。

    Attributes:
        config_path: 設定ファイルのパス
        config: 読み込まれた設定データ
        manifest: 実行記録から読み込んだ場合の RunManifest（それ以外は None）
        load_error: 直近の読み込みエラー（成功時は None）

    Example:
        >>> config = ConfigManager("./config/config.yaml")
        >>> config.get("solver.eta0")
        0.001
        >>> experiment = config.build_experiment_config()
    """

    def __init__(self, config_path: str = DEFAULT_CONFIG_PATH):
        """
        Args:
            config_path: 設定ファイルのパス（デフォルト: "./config/config.yaml"）
        """
        self.config_path = Path(config_path)
        self.config: Dict[str, Any] = {}
        self.manifest: Optional[RunManifest] = None
        self.load_error: Optional[str] = None

        self.load()

        logger.debug(f"ConfigManager initialized: {self.config_path}")

    def load(self) -> bool:
        """
        設定ファイルを読み込み

        ファイルが存在しない場合はデフォルト設定を使用します。
        拡張子 .json のファイルは JSON として読み込み、実行記録であれば
        その config ブロックを設定として使用します。
        構文エラーは load_error に記録されます。

        Returns:
            bool: 読み込みに成功した場合True

        Raises:
            OSError: ファイルが存在するが読み込めない場合
        """
        self.load_error = None
        self.manifest = None

        if not self.config_path.exists():
            logger.warning(
                f"Config file not found: {self.config_path}, "
                f"using default settings"
            )
            self.config = self._get_default_config()
            return False

        with open(self.config_path, 'r', encoding='utf-8') as f:
            text = f.read()

        is_json = self.config_path.suffix.lower() == ".json"
        try:
            loaded = json.loads(text) if is_json else yaml.safe_load(text)
        except (yaml.YAMLError, ValueError) as e:
            self.load_error = f"{'JSON' if is_json else 'YAML'} parse error: {e}"
            logger.error(f"Failed to parse config: {self.config_path} - {e}")
            self.config = {}
            return False

        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            self.load_error = f"Top level of the config must be a mapping, got {type(loaded).__name__}"
            logger.error(self.load_error)
            self.config = {}
            return False

        if "config" in loaded and "mask" in loaded:
            try:
                self.manifest = RunManifest.model_validate(loaded)
            except ValidationError as e:
                self.load_error = "Invalid manifest: " + "; ".join(format_validation_error(e))
                logger.error(self.load_error)
                self.config = {}
                return False
            loaded = copy.deepcopy(self.manifest.config)
            logger.info(f"Manifest loaded: {self.config_path} (run {self.manifest.run_id})")

        self.config = loaded
        logger.info(f"Config loaded: {self.config_path}")
        return True

    def get(self, key: str, default: Any = None) -> Any:
        """
        設定値を取得（ドット記法をサポート）

        Args:
            key: 設定キー（例: "solver.eta0", "experiment.sr"）
            default: デフォルト値

        Returns:
            Any: 設定値（存在しない場合はdefault）

        Example:
            >>> config.get("experiment.sr")
            0.7
        """
        value: Any = self.config
        for k in key.split("."):
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                logger.debug(f"Config key not found: {key}, using default")
                return default
        return value

    def set(self, key: str, value: Any) -> bool:
        """
        設定値を更新（ドット記法をサポート）

        Args:
            key: 設定キー（例: "experiment.output_dir"）
            value: 設定値

        Returns:
            bool: 更新に成功した場合True
        """
        keys = key.split(".")
        target = self.config

        for k in keys[:-1]:
            if k not in target or not isinstance(target[k], dict):
                target[k] = {}
            target = target[k]

        target[keys[-1]] = value
        logger.debug(f"Config updated: {key} = {value}")
        return True

    def expected_masks(self) -> Dict[str, List[List[int]]]:
        """実行記録に保存された観測マスク（画像キー → [row, col] のリスト）"""
        if self.manifest is None:
            return {}
        return {self.manifest.image: self.manifest.mask}

    def _get_default_config(self) -> Dict[str, Any]:
        """
        デフォルト設定を取得

        Returns:
            Dict[str, Any]: 同梱の config.yaml と同じ内容
        """
        return {
            "version": "1.0.0",
            "app_name": "FLGSR Recovery",
            "logging": {
                "log_dir": "./logs",
                "level": "INFO",
                "rotation": "10 MB",
                "retention": "7 days"
            },
            "experiment": {
                "mode": "synthetic",
                "images": [],
                "sr": 0.7,
                "seed": 20240101,
                "output_dir": "./output",
                "max_workers": 4,
                "synthetic": {
                    "rows": 60,
                    "cols": 60,
                    "rank": 3,
                    "noise_sigma": 0.0
                }
            },
            "solver": {}
        }

    # 検証

    def _raw_for_validation(self) -> Dict[str, Any]:
        raw = dict(self.config)
        # 空のセクション（"solver:" のみ）は既定値を意味する
        for section in ("logging", "experiment", "solver"):
            if section in raw and raw[section] is None:
                raw[section] = {}
        return raw

    def validate(self) -> List[str]:
        """
        設定を実行せずに検証

        スキーマ違反に加え、入力画像の存在とグループ数 ≤ 列数を確認します。

        Returns:
            List[str]: 違反内容（空なら実行可能）
        """
        if self.load_error:
            return [self.load_error]

        try:
            experiment = ExperimentConfig.model_validate(self._raw_for_validation())
        except ValidationError as e:
            return format_validation_error(e)

        return _check_inputs(experiment)

    def build_experiment_config(self) -> ExperimentConfig:
        """
        検証済みの ExperimentConfig を構築

        Returns:
            ExperimentConfig: 実験設定

        Raises:
            ConfigError: 違反がある場合（全違反を diagnostics に格納）
        """
        diagnostics = self.validate()
        if diagnostics:
            raise ConfigError(f"Invalid config {self.config_path}", diagnostics)
        return ExperimentConfig.model_validate(self._raw_for_validation())


def _image_columns(path: Path) -> int:
    from app.utils.image_io import load_image

    return load_image(path).cols


def _check_inputs(experiment: ExperimentConfig) -> List[str]:
    """入力ファイルの存在とグループ数の上限を確認（synthetic モードは images を使わない）"""
    settings = experiment.experiment
    diagnostics: List[str] = []
    column_counts: List[int] = []

    if settings.mode is ExperimentMode.INPAINT and not settings.images:
        diagnostics.append("experiment.images: inpaint mode needs at least one image")

    if settings.images and settings.mode is not ExperimentMode.SYNTHETIC:
        for i, image in enumerate(settings.images):
            path = Path(image)
            if not path.is_file():
                diagnostics.append(f"experiment.images[{i}]: file not found: {image}")
                continue
            try:
                column_counts.append(_image_columns(path))
            except (ValueError, OSError) as e:
                diagnostics.append(f"experiment.images[{i}]: {e}")
    else:
        column_counts.append(settings.synthetic.cols)

    field_name = "experiment.groups" if settings.groups else "solver.groups"
    for count in experiment.group_counts():
        for cols in column_counts:
            if count > cols:
                diagnostics.append(
                    f"{field_name}: group count {count} exceeds the {cols} columns of the input"
                )
                break

    return diagnostics


"""
実験ランナーとコマンドライン

このモジュールは、設定ファイルに従って復元実験（画像修復・合成問題・
グループ数アブレーション・リスタートアブレーション）を実行し、
results.csv、復元画像、manifest.json を出力します。

サブコマンド:
    run <config> [--out DIR]   実験を実行（config には manifest.json も指定可能）
    validate <config>          設定を検証（実行しない）
"""

import argparse
import asyncio
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from tqdm import tqdm

from app import __version__
from app.core.data import DataError, RunSeed, generate_mask, noise_radius, synth_lowrank
from app.core.elam import NumericalFailureError
from app.core.grouping import GroupingError
from app.core.iral import iral_solve
from app.core.linops import SamplingProblem
from app.core.metrics import MetricError, MetricReport, evaluate, psnr
from app.models.experiment import ExperimentConfig, ExperimentMode, ResultRow, RunManifest
from app.utils.config_manager import ConfigError, ConfigManager
from app.utils.file_manager import FileManager
from app.utils.image_io import GrayImage, ImageFormatError, load_image, save_image
from app.utils.logger import LoggerContext, setup_logger


EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_NUMERICAL_FAILURE = 2

THREADS_ENV = "FLGSR_THREADS"


@dataclass(frozen=True)
class RunEntry:
    """
    実験の 1 エントリー

    Attributes:
        image: 画像キー
        groups: グループ数
        restart_on: リスタート分岐の有効/無効
    """
    image: str
    groups: int
    restart_on: bool


@dataclass
class PreparedInput:
    """
    画像キーごとの参照行列と観測問題

    Attributes:
        reference: 参照行列（[0,1]）
        problem: 観測問題
        seed: マスク生成に使用した導出シード
    """
    reference: np.ndarray
    problem: SamplingProblem
    seed: RunSeed


def _json_number(value):
    """JSON に書けない非有限値を文字列に変換"""
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


def resolve_max_workers(cfg: ExperimentConfig) -> int:
    """設定値と環境変数 FLGSR_THREADS から並列数を決定"""
    workers = cfg.experiment.max_workers
    raw = os.getenv(THREADS_ENV)

    if raw:
        try:
            cap = int(raw)
            if cap < 1:
                raise ValueError(raw)
            workers = min(workers, cap)
        except ValueError:
            logger.warning(f"Ignoring invalid {THREADS_ENV}={raw!r}")

    return workers


class ExperimentRunner:
    """
    実験ランナー

    エントリーを並列に実行し、結果行を決定論的な順序で書き出します。
    各エントリーは独立した状態で解かれます。

    Attributes:
        config: 実験設定
        max_workers: 並列実行数
        files: 出力ファイル管理

    Example:
        >>> runner = ExperimentRunner(config, max_workers=2)
        >>> rows = runner.run()
    """

    def __init__(
        self,
        config: ExperimentConfig,
        max_workers: int = 1,
        expected_masks: Optional[Dict[str, List[List[int]]]] = None
    ):
        """
        Args:
            config: 検証済みの実験設定
            max_workers: 並列実行数
            expected_masks: 実行記録の観測マスク（画像キー → [row, col] のリスト）
        """
        self.config = config
        self.max_workers = max(1, max_workers)
        self.expected_masks = dict(expected_masks or {})
        self.files = FileManager(config.experiment.output_dir)
        self._inputs: Dict[str, PreparedInput] = {}
        self._sources: Dict[str, Optional[Path]] = {}

        logger.info(
            f"ExperimentRunner initialized: mode={config.experiment.mode.value}, "
            f"output={self.files.output_dir}, workers={self.max_workers}"
        )

    # エントリーの構築

    def _synthetic_key(self) -> str:
        syn = self.config.experiment.synthetic
        return f"synthetic_{syn.rows}x{syn.cols}_r{syn.rank}"

    def image_sources(self) -> Dict[str, Optional[Path]]:
        """画像キーと入力パス（合成問題は None）"""
        settings = self.config.experiment
        if settings.mode is ExperimentMode.SYNTHETIC or not settings.images:
            return {self._synthetic_key(): None}

        sources: Dict[str, Optional[Path]] = {}
        for image in settings.images:
            path = Path(image)
            key = path.stem
            if key in sources:
                key = f"{key}_{len(sources)}"
            sources[key] = path
        return sources

    def _check_expected_masks(self) -> None:
        for key, mask in self.expected_masks.items():
            prepared = self._inputs.get(key)
            if prepared is None:
                raise DataError(f"Manifest image {key} is not part of this experiment")
            if prepared.problem.mask_pairs() != mask:
                raise DataError(f"Mask of {key} does not match the manifest")
        if self.expected_masks:
            logger.info(f"Masks match the manifest: {sorted(self.expected_masks)}")

    def build_entries(self) -> List[RunEntry]:
        """モードに応じたエントリーを列挙"""
        restarts = (
            [True, False]
            if self.config.experiment.mode is ExperimentMode.ABLATE_RESTART
            else [self.config.solver.restart]
        )
        return [
            RunEntry(image=key, groups=groups, restart_on=restart)
            for key in self._sources
            for groups in self.config.group_counts()
            for restart in restarts
        ]

    def prepare_input(self, key: str, source: Optional[Path]) -> PreparedInput:
        """
        参照行列とマスクを準備

        マスクのシードは seed XOR stable_hash(画像キー) で、同じ画像の
        アブレーション点は同じマスクを共有します。
        画像の観測誤差半径は 8 ビット量子化を既定の雑音水準とします。
        """
        settings = self.config.experiment
        seed = RunSeed(settings.seed).derive(key)

        if source is None:
            syn = settings.synthetic
            mask = generate_mask(syn.rows, syn.cols, settings.sr, seed)
            instance = synth_lowrank(
                syn.rows, syn.cols, syn.rank, seed.derive("synthetic"),
                noise_sigma=syn.noise_sigma, mask=mask, sigma_inflation=syn.sigma_inflation,
            )
            return PreparedInput(instance.matrix, instance.problem, seed)

        image = load_image(source)
        mask = generate_mask(image.rows, image.cols, settings.sr, seed)
        sigma = noise_radius(settings.image_noise_sigma, mask.size)
        return PreparedInput(image.pixels, SamplingProblem.from_matrix(image.pixels, mask, sigma), seed)

    # 実行

    def run_entry(self, entry: RunEntry) -> ResultRow:
        """
        1 エントリーを実行して出力を書き出す

        Returns:
            ResultRow: 結果行

        Raises:
            NumericalFailureError: ソルバーの数値破綻
        """
        prepared = self._inputs[entry.image]
        mode = self.config.experiment.mode.value
        run_id = self.files.run_id(entry.image, mode, entry.groups, entry.restart_on)
        solver = self.config.solver.model_copy(
            update={"groups": entry.groups, "restart": entry.restart_on}
        )

        with LoggerContext(f"Recovering {run_id}"):
            result = iral_solve(prepared.problem, solver)

        recovered = np.clip(result.C_hat, 0.0, 1.0)
        report = evaluate(prepared.reference, recovered, wall_time_s=result.wall_time)
        baseline = psnr(prepared.reference, prepared.problem.observed_matrix())
        logger.info(
            f"{run_id}: psnr={report.psnr_db:.3f} dB (zero-filled {baseline:.3f} dB), "
            f"ssim={report.ssim:.4f}, rel_err={report.rel_err:.3e}"
        )

        save_image(GrayImage(recovered), self.files.recovered_path(run_id))
        self.files.write_manifest(self._manifest(run_id, entry, prepared, solver, report, result))

        return ResultRow(
            image=entry.image,
            mode=mode,
            groups=entry.groups,
            restart_on=entry.restart_on,
            psnr_db=report.psnr_db,
            ssim=report.ssim,
            rel_err=report.rel_err,
            wall_time_s=report.wall_time_s,
            outer_iters=result.outer_iters,
            restarts=result.restarts,
        )

    def _manifest(self, run_id, entry, prepared, solver, report: MetricReport, result) -> RunManifest:
        return RunManifest(
            run_id=run_id,
            image=entry.image,
            config=self.config.model_dump(mode="json"),
            solver=solver.model_dump(mode="json"),
            seed=prepared.seed.value,
            mask_shape=list(prepared.problem.shape),
            mask=prepared.problem.mask_pairs(),
            software_version=__version__,
            metrics={k: _json_number(v) for k, v in report.to_dict().items()},
            diagnostics={
                "final_residual": _json_number(result.final_residual),
                "stationarity": _json_number(result.stationarity),
                "reg_weight": result.reg_weight,
                "eta": result.eta,
                "converged": result.converged,
                "branches": [b.value for b in result.branches],
                "source": str(self._sources[entry.image]) if self._sources[entry.image] else None,
            },
        )

    async def _run_all(self, entries: List[RunEntry]) -> List[object]:
        semaphore = asyncio.Semaphore(self.max_workers)
        loop = asyncio.get_running_loop()

        with ThreadPoolExecutor(max_workers=self.max_workers) as executor, \
                tqdm(total=len(entries), desc="Runs", unit="run", disable=None) as progress:

            async def run_one(entry: RunEntry) -> ResultRow:
                async with semaphore:
                    try:
                        return await loop.run_in_executor(executor, self.run_entry, entry)
                    finally:
                        progress.update(1)

            return await asyncio.gather(*(run_one(e) for e in entries), return_exceptions=True)

    def run(self) -> List[ResultRow]:
        """
        全エントリーを実行し results.csv を書き出す

        Returns:
            List[ResultRow]: 整列済みの結果行

        Raises:
            NumericalFailureError: いずれかのエントリーが数値破綻した場合
            ImageFormatError, FileNotFoundError, DataError: 入力エラー
        """
        self._sources = self.image_sources()
        for key, source in self._sources.items():
            self._inputs[key] = self.prepare_input(key, source)
        self._check_expected_masks()

        entries = self.build_entries()
        logger.info(f"Starting experiment: {len(entries)} runs")

        outcomes = asyncio.run(self._run_all(entries))

        rows: List[ResultRow] = []
        failures: List[Tuple[RunEntry, BaseException]] = []
        for entry, outcome in zip(entries, outcomes):
            if isinstance(outcome, BaseException):
                logger.error(f"Run failed: {entry} - {outcome}")
                failures.append((entry, outcome))
            else:
                rows.append(outcome)

        rows.sort(key=ResultRow.sort_key)
        self.files.write_results(rows)

        logger.info(f"Experiment completed: {len(rows)}/{len(entries)} successful")

        if failures:
            numerical = [e for _, e in failures if isinstance(e, NumericalFailureError)]
            raise numerical[0] if numerical else failures[0][1]

        return rows


def _open_config(config_path: str) -> ConfigManager:
    path = Path(config_path)
    if not path.is_file():
        raise FileNotFoundError(f"Config file not found: {path}")
    return ConfigManager(str(path))


def validate(config_path: str) -> List[str]:
    """
    設定ファイルを検証

    Args:
        config_path: 設定ファイルのパス

    Returns:
        List[str]: 違反内容（空なら実行可能）

    Raises:
        OSError: ファイルが存在しない・読めない場合
    """
    return _open_config(config_path).validate()


def run(config_path: str, out_dir: Optional[str] = None) -> int:
    """
    設定ファイルに従って実験を実行

    manifest.json を渡すと記録された設定で実験全体を再実行し、
    記録された観測マスクと一致することを確認します。

    Args:
        config_path: 設定ファイルまたは manifest.json のパス
        out_dir: 出力ディレクトリ（設定値を上書き）

    Returns:
        int: 終了コード（0: 成功、1: 設定・入力エラー、2: 数値破綻）
    """
    try:
        manager = _open_config(config_path)
        if out_dir:
            manager.set("experiment.output_dir", str(out_dir))
        config = manager.build_experiment_config()
    except ConfigError as e:
        for diagnostic in e.diagnostics:
            logger.error(f"Config error: {diagnostic}")
        return EXIT_CONFIG_ERROR
    except OSError as e:
        logger.error(f"Failed to read config: {e}")
        return EXIT_CONFIG_ERROR

    log = config.logging
    setup_logger(log_dir=log.log_dir, log_level=log.level, rotation=log.rotation, retention=log.retention)

    try:
        ExperimentRunner(config, resolve_max_workers(config), manager.expected_masks()).run()
    except NumericalFailureError as e:
        logger.error(f"Numerical failure (outer={e.outer}, sweep={e.sweep}): {e}")
        return EXIT_NUMERICAL_FAILURE
    except (ImageFormatError, FileNotFoundError, DataError, GroupingError, MetricError) as e:
        logger.error(f"Input error: {e}")
        return EXIT_CONFIG_ERROR

    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    """コマンドライン引数のパーサーを構築"""
    parser = argparse.ArgumentParser(
        prog="flgsr",
        description="Low-rank matrix recovery and image inpainting with grouped capped regularization",
    )
    parser.add_argument("--log-level", default="INFO", help="console log level")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run_parser = subparsers.add_parser("run", help="run the experiment described by a config file")
    run_parser.add_argument("config", help="path to the YAML config or a run manifest.json")
    run_parser.add_argument("--out", default=None, help="override experiment.output_dir")

    validate_parser = subparsers.add_parser("validate", help="check a config file without running it")
    validate_parser.add_argument("config", help="path to the YAML config")

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    コマンドラインのエントリーポイント

    Args:
        argv: 引数（None なら sys.argv）

    Returns:
        int: 終了コード
    """
    args = build_parser().parse_args(argv)
    setup_logger(log_level=args.log_level)

    if args.command == "validate":
        try:
            diagnostics = validate(args.config)
        except OSError as e:
            logger.error(f"Failed to read config: {e}")
            return EXIT_CONFIG_ERROR

        for diagnostic in diagnostics:
            print(diagnostic)
        if diagnostics:
            logger.error(f"Config has {len(diagnostics)} problem(s): {args.config}")
            return EXIT_CONFIG_ERROR
        logger.info(f"Config is valid: {args.config}")
        return EXIT_OK

    return run(args.config, args.out)

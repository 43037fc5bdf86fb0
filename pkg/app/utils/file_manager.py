"""
出力ファイル管理ユーティリティ

このモジュールは、実験出力ディレクトリの構成、実行名の生成、
results.csv と manifest.json の書き出しを提供します。
"""

import csv
import json
import math
import re
from pathlib import Path
from typing import Iterable, List, Union

from loguru import logger

from app.models.experiment import ResultRow, RunManifest


RESULTS_FILENAME = "results.csv"
MANIFEST_FILENAME = "manifest.json"
RECOVERED_FILENAME = "recovered.pgm"
RUNS_DIRNAME = "runs"


class FileManager:
    """
    実験出力の管理クラス

    出力ディレクトリ配下に results.csv と、実行ごとの
    runs/<run_id>/{recovered.pgm, manifest.json} を配置します。

    Attributes:
        output_dir: 出力ディレクトリ

    Example:
        >>> fm = FileManager("./output")
        >>> fm.run_id("peppers", "inpaint", 32, True)
        'peppers_inpaint_g32_restart'
    """

    # 実行名に使用できない文字
    INVALID_CHARS = r'[^A-Za-z0-9._-]'

    def __init__(self, output_dir: Union[str, Path]):
        """
        Args:
            output_dir: 出力ディレクトリ
        """
        self.output_dir = Path(output_dir)
        logger.debug(f"FileManager initialized: {self.output_dir}")

    def sanitize_name(self, name: str, replacement: str = "_") -> str:
        """
        ファイル・ディレクトリ名として安全な文字列に変換

        Args:
            name: 元の名前
            replacement: 置換文字

        Returns:
            str: 英数字・ドット・ハイフン・アンダースコアのみの名前
        """
        safe = re.sub(self.INVALID_CHARS, replacement, name)
        safe = re.sub(f"{re.escape(replacement)}+", replacement, safe).strip(f".{replacement}")
        return safe or "unnamed"

    def run_id(self, image: str, mode: str, groups: int, restart_on: bool) -> str:
        """実行名 <image>_<mode>_g<groups>_<restart|norestart>"""
        suffix = "restart" if restart_on else "norestart"
        return self.sanitize_name(f"{image}_{mode}_g{groups}_{suffix}")

    def ensure_directory(self, directory: Union[str, Path]) -> Path:
        """ディレクトリが存在することを確認（存在しない場合は作成）"""
        dir_path = Path(directory)
        dir_path.mkdir(parents=True, exist_ok=True)
        return dir_path

    def run_dir(self, run_id: str) -> Path:
        """実行ごとの出力ディレクトリ"""
        return self.ensure_directory(self.output_dir / RUNS_DIRNAME / run_id)

    def recovered_path(self, run_id: str) -> Path:
        return self.run_dir(run_id) / RECOVERED_FILENAME

    def results_path(self) -> Path:
        return self.output_dir / RESULTS_FILENAME

    def write_manifest(self, manifest: RunManifest) -> Path:
        """
        manifest.json を書き出し

        Args:
            manifest: 実行記録

        Returns:
            Path: 書き出したファイルのパス
        """
        path = self.run_dir(manifest.run_id) / MANIFEST_FILENAME
        payload = manifest.model_dump(mode="json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, ensure_ascii=False, indent=2, default=_json_default)
        logger.debug(f"Manifest written: {path}")
        return path

    def write_results(self, rows: Iterable[ResultRow]) -> Path:
        """
        results.csv を書き出し（(image, groups, restart_on) 順に整列）

        Args:
            rows: 結果行

        Returns:
            Path: 書き出したファイルのパス
        """
        self.ensure_directory(self.output_dir)
        path = self.results_path()
        ordered: List[ResultRow] = sorted(rows, key=ResultRow.sort_key)

        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=ResultRow.columns())
            writer.writeheader()
            for row in ordered:
                writer.writerow({k: _format_cell(v) for k, v in row.to_dict().items()})

        logger.info(f"Results written: {path} ({len(ordered)} rows)")
        return path


def _format_cell(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return value


def _json_default(value):
    return str(value)


def read_results(path: Union[str, Path]) -> List[dict]:
    """results.csv を辞書のリストとして読み込む"""
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))

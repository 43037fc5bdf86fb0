"""
復元品質の評価指標

PSNR、SSIM（11×11 ガウス窓、σ = 1.5、有効領域のみ）、相対誤差を計算します。
"""

import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Tuple

import numpy as np
from skimage.metrics import structural_similarity


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class MetricError(ValueError):
    """評価指標の入力エラー"""
    pass


@dataclass
class MetricReport:
    """
    評価結果

    Attributes:
        psnr_db: PSNR（dB、完全一致なら +inf）
        ssim: SSIM（[-1, 1]）
        rel_err: 相対誤差 ‖X̂ − X‖_F / ‖X‖_F
        wall_time_s: 復元に要した時間（秒）
    """
    psnr_db: float
    ssim: float
    rel_err: float
    wall_time_s: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _pair(reference: np.ndarray, recovered: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    reference = np.asarray(reference, dtype=float)
    recovered = np.asarray(recovered, dtype=float)
    if reference.shape != recovered.shape:
        raise MetricError(f"Shape mismatch: {reference.shape} vs {recovered.shape}")
    return reference, recovered


def psnr(reference: np.ndarray, recovered: np.ndarray, peak: float = 1.0) -> float:
    """
    PSNR = 10·log10(peak² / MSE)

    Args:
        reference: 参照画像
        recovered: 復元画像
        peak: ピーク値

    Returns:
        float: PSNR（dB）、MSE = 0 なら +inf

    Raises:
        MetricError: 形状不一致、peak ≤ 0 の場合

    Example:
        >>> psnr(np.zeros((4, 4)), np.full((4, 4), 0.1))
        20.0
    """
    reference, recovered = _pair(reference, recovered)
    if not peak > 0:
        raise MetricError(f"peak must be positive, got {peak}")

    mse = float(np.mean((reference - recovered) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim(reference: np.ndarray, recovered: np.ndarray, peak: float = 1.0) -> float:
    """
    平均 SSIM

    11×11 ガウス窓（σ = 1.5）で局所統計量を計算し、窓が画像内に
    完全に収まる位置のみで平均します。C1 = (0.01·peak)²、C2 = (0.03·peak)²。

    Args:
        reference: 参照画像（[0, peak]）
        recovered: 復元画像（[0, peak]）
        peak: ピーク値

    Returns:
        float: 平均 SSIM

    Raises:
        MetricError: 形状不一致、または窓より小さい画像の場合
    """
    x, y = _pair(reference, recovered)
    if x.ndim != 2 or min(x.shape) < SSIM_WINDOW:
        raise MetricError(
            f"SSIM needs a 2-D image of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {x.shape}"
        )

    # sigma 1.5 で窓幅 11、統計量は窓が収まる内側のみで平均される
    return float(structural_similarity(
        x, y,
        data_range=peak,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        K1=SSIM_K1,
        K2=SSIM_K2,
    ))


def rel_error(reference: np.ndarray, recovered: np.ndarray) -> float:
    """
    相対誤差 ‖recovered − reference‖_F / ‖reference‖_F

    Raises:
        MetricError: 形状不一致、参照が 0 の場合
    """
    reference, recovered = _pair(reference, recovered)
    ref_norm = float(np.linalg.norm(reference))
    if ref_norm == 0.0:
        raise MetricError("Reference matrix is zero; relative error is undefined")
    return float(np.linalg.norm(recovered - reference)) / ref_norm


def evaluate(reference: np.ndarray, recovered: np.ndarray, wall_time_s: float = 0.0) -> MetricReport:
    """PSNR・SSIM・相対誤差をまとめて計算"""
    return MetricReport(
        psnr_db=psnr(reference, recovered),
        ssim=ssim(reference, recovered),
        rel_err=rel_error(reference, recovered),
        wall_time_s=wall_time_s,
    )

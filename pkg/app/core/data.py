"""
観測マスクと合成データの生成

このモジュールは、シード付きの観測マスク生成、合成低ランク行列の生成、
実験エントリーごとの決定論的なシード導出を提供します。
"""

import hashlib
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.core.linops import SamplingProblem


UINT64_MASK = (1 << 64) - 1

# σ = noise_sigma·√p·SIGMA_INFLATION
DEFAULT_SIGMA_INFLATION = 1.05

# 8 ビット量子化誤差（±1/510 の一様分布）の標準偏差
QUANTIZATION_SIGMA = 1.0 / (255.0 * math.sqrt(12.0))


class DataError(ValueError):
    """データ生成パラメータのエラー"""
    pass


def noise_radius(noise_sigma: float, p: int, sigma_inflation: float = DEFAULT_SIGMA_INFLATION) -> float:
    """
    要素ごとの雑音水準から観測誤差の半径 σ を計算

    Args:
        noise_sigma: 要素ごとの雑音の標準偏差
        p: 観測数
        sigma_inflation: σ の拡大係数

    Returns:
        float: σ = noise_sigma·√p·sigma_inflation

    Example:
        >>> noise_radius(0.1, 100, 1.0)
        1.0
    """
    if not noise_sigma >= 0:
        raise DataError(f"noise_sigma must be nonnegative, got {noise_sigma}")
    return noise_sigma * math.sqrt(p) * sigma_inflation


def stable_hash(key: str) -> int:
    """文字列キーの 64 ビット安定ハッシュ（blake2b 先頭 8 バイト）"""
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


@dataclass(frozen=True)
class RunSeed:
    """
    64 ビット符号なしシード

    同じシードとパラメータからは、ビット単位で同一のマスク・合成データが
    生成されます。

    Attributes:
        value: シード値（0 ≤ value < 2⁶⁴）

    Example:
        >>> seed = RunSeed(42).derive("peppers")
        >>> rng = seed.rng()
    """
    value: int

    def __post_init__(self):
        if not isinstance(self.value, (int, np.integer)) or not 0 <= int(self.value) <= UINT64_MASK:
            raise DataError(f"Seed must be a 64-bit unsigned integer, got {self.value!r}")
        object.__setattr__(self, "value", int(self.value))

    def derive(self, key: str) -> "RunSeed":
        """エントリーキーから独立したシードを導出（seed XOR stable_hash(key)）"""
        return RunSeed(self.value ^ stable_hash(key))

    def rng(self) -> np.random.Generator:
        """呼び出しごとに新しい乱数生成器を構築"""
        return np.random.default_rng(self.value)


def _as_seed(seed) -> RunSeed:
    return seed if isinstance(seed, RunSeed) else RunSeed(seed)


def generate_mask(m: int, n: int, sr: float, seed) -> np.ndarray:
    """
    観測マスクを生成

    m·n 個の位置から round(sr·m·n) 個を非復元一様抽出し、
    行優先のフラットインデックスとして昇順で返します。

    Args:
        m: 行数
        n: 列数
        sr: サンプリング率（0 < sr ≤ 1）
        seed: シード（int または RunSeed）

    Returns:
        np.ndarray: 観測位置のフラットインデックス（int64、昇順）

    Raises:
        DataError: sr が範囲外の場合

    Example:
        >>> generate_mask(100, 100, 0.7, seed=1).size
        7000
    """
    if m < 1 or n < 1:
        raise DataError(f"Matrix dimensions must be positive, got {m}x{n}")
    if not (0.0 < sr <= 1.0):
        raise DataError(f"Sampling rate must lie in (0, 1], got {sr}")

    total = m * n
    count = int(math.floor(sr * total + 0.5))
    if count == 0:
        raise DataError(f"Sampling rate {sr} observes no entry of a {m}x{n} matrix")

    # permutation はシャッフル（Fisher–Yates）で実装されている
    chosen = _as_seed(seed).rng().permutation(total)[:count]
    return np.sort(chosen).astype(np.int64)


@dataclass
class SyntheticInstance:
    """
    合成低ランク復元問題

    Attributes:
        matrix: 真の行列 M（[0,1] にスケーリング済み）
        problem: 観測問題（ノイズ付き観測値と σ）
        rank: 生成ランク r
    """
    matrix: np.ndarray
    problem: SamplingProblem
    rank: int


def synth_lowrank(
    m: int,
    n: int,
    r: int,
    seed,
    noise_sigma: float = 0.0,
    mask: Optional[np.ndarray] = None,
    sigma_inflation: float = DEFAULT_SIGMA_INFLATION
) -> SyntheticInstance:
    """
    ランク r の合成行列と観測問題を生成

    M = A·Bᵀ（A: m×(r−1)、B: n×(r−1) は標準正規乱数）を最小最大の
    アフィン変換で [0,1] に写します。アフィン変換のオフセットが
    ランク 1 成分を加えるため、M のランクは r になります。
    観測値はマスク位置の M に標準偏差 noise_sigma のガウスノイズを加えたもので、
    σ = noise_sigma·√p·sigma_inflation とします。

    Args:
        m, n: 行列サイズ
        r: ランク（1 ≤ r ≤ min(m, n)）
        seed: シード（int または RunSeed）
        noise_sigma: 観測ノイズの標準偏差
        mask: 観測位置（None なら全要素）
        sigma_inflation: σ の拡大係数

    Returns:
        SyntheticInstance: 真の行列と観測問題

    Raises:
        DataError: パラメータが範囲外の場合
    """
    if m < 1 or n < 1:
        raise DataError(f"Matrix dimensions must be positive, got {m}x{n}")
    if not 1 <= r <= min(m, n):
        raise DataError(f"Rank must satisfy 1 <= r <= {min(m, n)}, got {r}")
    if not noise_sigma >= 0:
        raise DataError(f"noise_sigma must be nonnegative, got {noise_sigma}")

    rng = _as_seed(seed).rng()
    A = rng.standard_normal((m, r - 1))
    B = rng.standard_normal((n, r - 1))
    raw = A @ B.T

    spread = float(raw.max() - raw.min())
    if spread > 0:
        M = (raw - raw.min()) / spread
    else:
        M = np.full((m, n), 0.5)

    indices = np.arange(m * n, dtype=np.int64) if mask is None else np.asarray(mask, dtype=np.int64)
    b = M.ravel()[indices]
    if noise_sigma > 0:
        b = b + noise_sigma * rng.standard_normal(indices.size)

    sigma = noise_radius(noise_sigma, indices.size, sigma_inflation)
    problem = SamplingProblem(m, n, indices, b, sigma)
    return SyntheticInstance(matrix=M, problem=problem, rank=r)

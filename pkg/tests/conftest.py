"""
共通フィクスチャ
"""

import sys
from pathlib import Path

import numpy as np
import pytest
from loguru import logger

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from app.core.data import generate_mask, synth_lowrank
from app.core.linops import SamplingProblem


@pytest.fixture(autouse=True)
def quiet_logger():
    """テスト中は WARNING 以上のみ出力し、終了時にシンクを閉じる"""
    logger.remove()
    logger.add(sys.stderr, level="WARNING")
    yield
    logger.remove()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def project_dir() -> Path:
    return project_root


@pytest.fixture
def small_problem():
    """20×20・ランク 2・SR 0.7 の合成問題"""
    mask = generate_mask(20, 20, 0.7, seed=7)
    return synth_lowrank(20, 20, 2, seed=8, mask=mask)


@pytest.fixture
def full_problem(rng):
    """全要素観測・σ = 0 のランク 2 問題"""
    A = rng.random((16, 2))
    B = rng.random((16, 2))
    M = A @ B.T / 2.0
    return M, SamplingProblem.from_matrix(M, np.arange(M.size))


@pytest.fixture
def smooth_image():
    """
    なめらかな低ランク画像を生成する関数

    定数 + 4 つの余弦・正弦の外積（ランク 5）で、値は [0.04, 0.96] に収まります。
    noise_sigma > 0 ならシード付きのガウスノイズを加えて [0,1] に丸めます。
    """
    def build(size: int, noise_sigma: float = 0.0, seed: int = 0) -> np.ndarray:
        t = np.linspace(0.0, 1.0, size)
        image = np.full((size, size), 0.5)
        for k, amplitude in enumerate((0.2, 0.12, 0.08, 0.06), start=1):
            image += amplitude * np.outer(np.cos(np.pi * k * t), np.sin(np.pi * (k + 0.5) * t))
        if noise_sigma > 0:
            image += noise_sigma * np.random.default_rng(seed).standard_normal(image.shape)
        return np.clip(image, 0.0, 1.0)

    return build

"""
線形観測作用素

このモジュールは、観測作用素 𝒜 の共通インターフェースと、
マスク付きサンプリング作用素（SamplingProblem）の適用・随伴・
実行可能集合 Θ = {C : ‖𝒜(C) − b‖₂ ≤ σ} への射影を提供します。
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Iterable, List, Tuple

import numpy as np


class LinearOperatorError(ValueError):
    """観測作用素の入力エラー"""
    pass


class MeasurementOperator(ABC):
    """
    観測作用素の抽象基底クラス

    apply / adjoint は全作用素で実装し、Θ への射影は
    閉形式が存在する作用素のみ実装します。
    """

    @property
    @abstractmethod
    def shape(self) -> Tuple[int, int]:
        """入力行列の形状 (m, n)"""

    @property
    @abstractmethod
    def num_measurements(self) -> int:
        """観測数 p"""

    @abstractmethod
    def apply(self, C: np.ndarray) -> np.ndarray:
        """𝒜(C)"""

    @abstractmethod
    def adjoint(self, v: np.ndarray) -> np.ndarray:
        """𝒜*(v)"""

    def project_theta(self, Z: np.ndarray) -> np.ndarray:
        """Θ への射影"""
        raise NotImplementedError(
            f"{type(self).__name__} does not provide a closed-form projection"
        )


@dataclass(frozen=True, eq=False)
class SamplingProblem(MeasurementOperator):
    """
    マスク付きサンプリング問題

    観測位置は行優先のフラットインデックスで昇順に保持し、
    観測値 b も同じ順序で格納します。

    Attributes:
        rows: 行数 m
        cols: 列数 n
        indices: 観測位置のフラットインデックス（昇順・重複なし）
        b: 観測値ベクトル（長さ p）
        sigma: ノイズレベル σ（非負）

    Example:
        >>> P = SamplingProblem.from_pairs(2, 2, [(0, 0)], [0.7])
        >>> P.apply(np.array([[0.7, 0.1], [0.2, 0.3]]))
        array([0.7])
    """
    rows: int
    cols: int
    indices: np.ndarray
    b: np.ndarray
    sigma: float = 0.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise LinearOperatorError(
                f"Matrix dimensions must be positive, got {self.rows}x{self.cols}"
            )

        indices = np.array(self.indices, dtype=np.int64).reshape(-1)
        b = np.array(self.b, dtype=float).reshape(-1)

        if indices.size > self.rows * self.cols:
            raise LinearOperatorError(
                f"Mask has {indices.size} entries for a {self.rows}x{self.cols} matrix"
            )
        if indices.size and (indices[0] < 0 or indices[-1] >= self.rows * self.cols):
            raise LinearOperatorError("Mask index out of bounds")
        if np.any(np.diff(indices) <= 0):
            raise LinearOperatorError("Mask indices must be strictly increasing (row-major, no duplicates)")
        if b.size != indices.size:
            raise LinearOperatorError(
                f"Observation length {b.size} does not match mask size {indices.size}"
            )
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise LinearOperatorError(f"sigma must be nonnegative, got {self.sigma}")

        indices.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "sigma", float(self.sigma))

    # 生成ヘルパー

    @classmethod
    def from_pairs(
        cls,
        rows: int,
        cols: int,
        pairs: Iterable[Tuple[int, int]],
        b: Iterable[float],
        sigma: float = 0.0
    ) -> "SamplingProblem":
        """
        (row, col) ペアと観測値から生成（任意順序を行優先に整列）

        Raises:
            LinearOperatorError: 範囲外・重複・長さ不一致の場合
        """
        pairs = np.array(list(pairs), dtype=np.int64).reshape(-1, 2)
        values = np.array(list(b), dtype=float).reshape(-1)

        if values.size != pairs.shape[0]:
            raise LinearOperatorError(
                f"Observation length {values.size} does not match {pairs.shape[0]} mask pairs"
            )
        if pairs.size and (
            pairs[:, 0].min() < 0 or pairs[:, 0].max() >= rows
            or pairs[:, 1].min() < 0 or pairs[:, 1].max() >= cols
        ):
            raise LinearOperatorError("Mask pair out of bounds")

        flat = pairs[:, 0] * cols + pairs[:, 1]
        order = np.argsort(flat, kind="stable")
        return cls(rows, cols, flat[order], values[order], sigma)

    @classmethod
    def from_matrix(
        cls,
        M: np.ndarray,
        indices: np.ndarray,
        sigma: float = 0.0
    ) -> "SamplingProblem":
        """行列 M のマスク位置の値を観測とする問題を生成"""
        M = np.asarray(M, dtype=float)
        if M.ndim != 2:
            raise LinearOperatorError(f"Expected a matrix, got ndim={M.ndim}")
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= M.size):
            raise LinearOperatorError("Mask index out of bounds")
        return cls(M.shape[0], M.shape[1], indices, M.ravel()[indices], sigma)

    # 属性

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def num_measurements(self) -> int:
        return int(self.indices.size)

    @property
    def sampling_rate(self) -> float:
        return self.num_measurements / (self.rows * self.cols)

    def mask_pairs(self) -> List[List[int]]:
        """行優先順の (row, col) リスト（マニフェスト用）"""
        r, c = np.divmod(self.indices, self.cols)
        return [[int(i), int(j)] for i, j in zip(r, c)]

    def mask_matrix(self) -> np.ndarray:
        """観測位置の真偽値行列"""
        mask = np.zeros(self.rows * self.cols, dtype=bool)
        mask[self.indices] = True
        return mask.reshape(self.rows, self.cols)

    def observed_matrix(self) -> np.ndarray:
        """未観測位置を 0 で埋めた観測行列 M_Ω"""
        return self.adjoint(self.b)

    def mean_filled_matrix(self) -> np.ndarray:
        """未観測位置を観測値の平均で埋めた行列 M̄"""
        fill = float(np.mean(self.b)) if self.num_measurements else 0.0
        M = np.full(self.shape, fill)
        M.ravel()[self.indices] = self.b
        return M

    # 作用素

    def _check_matrix(self, C: np.ndarray) -> np.ndarray:
        C = np.asarray(C, dtype=float)
        if C.shape != self.shape:
            raise LinearOperatorError(f"Expected shape {self.shape}, got {C.shape}")
        return C

    def apply(self, C: np.ndarray) -> np.ndarray:
        """
        𝒜(C): マスク位置の値を行優先順に取り出す

        Raises:
            LinearOperatorError: 形状不一致の場合
        """
        return np.ravel(self._check_matrix(C))[self.indices]

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        """
        𝒜*(v): v をマスク位置に散布（他は 0）

        Raises:
            LinearOperatorError: 長さ不一致の場合
        """
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.size != self.num_measurements:
            raise LinearOperatorError(
                f"Expected vector of length {self.num_measurements}, got {v.size}"
            )
        out = np.zeros(self.rows * self.cols)
        out[self.indices] = v
        return out.reshape(self.rows, self.cols)

    def residual_norm(self, C: np.ndarray) -> float:
        """‖𝒜(C) − b‖₂"""
        return float(np.linalg.norm(self.apply(C) - self.b))

    def project_theta(self, Z: np.ndarray) -> np.ndarray:
        """
        Θ = {C : ‖𝒜(C) − b‖₂ ≤ σ} へのユークリッド射影

        観測位置の残差 r が ‖r‖₂ ≤ σ なら Z をそのまま返し、
        そうでなければ観測位置を b + σ·r/‖r‖₂ に置き換えます。

        Args:
            Z: 入力行列（m × n）

        Returns:
            np.ndarray: 射影後の行列

        Raises:
            LinearOperatorError: 形状不一致の場合
        """
        Z = self._check_matrix(Z)
        out = Z.copy()
        flat = out.reshape(-1)

        r = flat[self.indices] - self.b
        norm = np.linalg.norm(r)
        if norm <= self.sigma:
            return out

        if self.sigma == 0.0:
            flat[self.indices] = self.b
        else:
            flat[self.indices] = self.b + self.sigma * r / norm
        return out

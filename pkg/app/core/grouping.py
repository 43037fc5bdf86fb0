"""
列グループ分割と群ペナルティ

このモジュールは、因子行列の列を連続する s 個のグループに分割する
GroupPartition と、群ノルム・ℓ_{p,0} ノルム・Φ ペナルティ・群サポートの
評価関数を提供します。
"""

from dataclasses import dataclass, field
from itertools import accumulate
from typing import List, Set, Tuple

import numpy as np

from app.core.regularizer import CappedPhi, phi_eval


DEFAULT_ZERO_TOL = 1e-10


class GroupingError(ValueError):
    """グループ分割・群ノルム評価のエラー"""
    pass


@dataclass(frozen=True)
class GroupPartition:
    """
    列の連続グループ分割

    Attributes:
        sizes: 各グループの列数 n_1..n_s
        offsets: 累積和（先頭 0、末尾 n）

    Example:
        >>> part = GroupPartition((3, 2, 2))
        >>> part.offsets
        (0, 3, 5, 7)
    """
    sizes: Tuple[int, ...]
    offsets: Tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sizes)
        if not sizes:
            raise GroupingError("Partition must contain at least one group")
        if any(n < 1 for n in sizes):
            raise GroupingError(f"Group sizes must be positive, got {sizes}")

        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "offsets", (0,) + tuple(accumulate(sizes)))

    @property
    def count(self) -> int:
        """グループ数 s"""
        return len(self.sizes)

    @property
    def total(self) -> int:
        """総列数 n"""
        return self.offsets[-1]

    def slice(self, i: int) -> slice:
        """グループ i の列スライス"""
        return slice(self.offsets[i], self.offsets[i + 1])

    def slices(self) -> List[slice]:
        return [self.slice(i) for i in range(self.count)]

    def __len__(self) -> int:
        return self.count


@dataclass
class GroupedFactor:
    """
    列グループ分割付きの因子行列

    Attributes:
        data: 実数行列（rows × n）
        partition: 列グループ分割（partition.total == n）
    """
    data: np.ndarray
    partition: GroupPartition

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise GroupingError(f"Factor must be a matrix, got ndim={self.data.ndim}")
        if self.data.shape[1] != self.partition.total:
            raise GroupingError(
                f"Column count {self.data.shape[1]} does not match "
                f"partition total {self.partition.total}"
            )

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    def block(self, i: int) -> np.ndarray:
        """グループ i のブロック（ビュー）"""
        return self.data[:, self.partition.slice(i)]

    def copy(self) -> "GroupedFactor":
        return GroupedFactor(self.data.copy(), self.partition)


def make_partition(n: int, s: int) -> GroupPartition:
    """
    n 列を s 個の連続グループに分割

    各グループは ⌊n/s⌋ 列で、先頭の (n mod s) グループが 1 列多くなります。

    Args:
        n: 総列数
        s: グループ数（1 ≤ s ≤ n）

    Returns:
        GroupPartition: 分割

    Raises:
        GroupingError: s が範囲外の場合

    Example:
        >>> make_partition(7, 3).sizes
        (3, 2, 2)
    """
    if n < 1:
        raise GroupingError(f"Column count must be positive, got {n}")
    if not 1 <= s <= n:
        raise GroupingError(f"Group count must satisfy 1 <= s <= n={n}, got s={s}")

    base, extra = divmod(n, s)
    return GroupPartition(tuple(base + 1 if i < extra else base for i in range(s)))


def group_norms(F: GroupedFactor, p: float = 2.0) -> np.ndarray:
    """
    各グループの要素ごと ℓ_p ノルム

    Args:
        F: 因子行列
        p: ノルムの次数（正、p = 2 はフロベニウスノルム）

    Returns:
        np.ndarray: 長さ s のノルムベクトル

    Raises:
        GroupingError: p ≤ 0 の場合
    """
    if not p > 0:
        raise GroupingError(f"p must be positive, got {p}")

    norms = np.empty(F.partition.count)
    for i, cols in enumerate(F.partition.slices()):
        block = F.data[:, cols]
        if p == 2.0:
            norms[i] = np.linalg.norm(block)
        else:
            norms[i] = np.sum(np.abs(block) ** p) ** (1.0 / p)

    return norms


def lp0_norm(F: GroupedFactor, p: float = 2.0, zero_tol: float = DEFAULT_ZERO_TOL) -> int:
    """
    ℓ_{p,0} ノルム Σ n_i ‖X_i‖_p⁰

    Args:
        F: 因子行列
        p: ノルムの次数
        zero_tol: これ以下のノルムを 0 とみなす閾値

    Returns:
        int: 非ゼログループの列数の合計
    """
    norms = group_norms(F, p)
    return int(sum(n for n, norm in zip(F.partition.sizes, norms) if norm > zero_tol))


def phi_penalty(F: GroupedFactor, phi: CappedPhi, p: float = 2.0) -> float:
    """
    Φ(X) = Σ n_i φ(‖X_i‖_p)

    Args:
        F: 因子行列
        phi: φ 関数
        p: ノルムの次数

    Returns:
        float: ペナルティ値
    """
    norms = group_norms(F, p)
    return float(sum(n * phi_eval(phi, float(norm)) for n, norm in zip(F.partition.sizes, norms)))


def group_support(
    F: GroupedFactor,
    p: float = 2.0,
    zero_tol: float = DEFAULT_ZERO_TOL
) -> Set[int]:
    """
    群サポート Γ(X) = { i | ‖X_i‖_p > zero_tol }
    """
    norms = group_norms(F, p)
    return {int(i) for i in np.flatnonzero(norms > zero_tol)}

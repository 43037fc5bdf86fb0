"""
グレースケール画像の入出力

このモジュールは、バイナリ PGM（P5、maxval 255）の読み書きと、
Pillow による PNG/TIFF/JPEG などの読み込みを提供します。
画素値は [0, 1] の実数で保持します。
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from loguru import logger


PGM_MAGIC = b"P5"
PGM_MAXVAL = 255
PGM_SUFFIXES = {".pgm", ".pnm"}
_WHITESPACE = b" \t\n\r\v\f"


class ImageFormatError(ValueError):
    """
    画像フォーマットのエラー

    Attributes:
        offset: エラーを検出したバイトオフセット
    """

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class GrayImage:
    """
    グレースケール画像

    Attributes:
        pixels: 画素値（rows × cols、[0, 1]、行優先）

    Example:
        >>> img = GrayImage(np.zeros((2, 2)))
        >>> img.shape
        (2, 2)
    """
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=float)
        if pixels.ndim != 2 or pixels.size == 0:
            raise ValueError(f"Image must be a nonempty 2-D array, got shape {pixels.shape}")
        self.pixels = pixels

    @property
    def rows(self) -> int:
        return self.pixels.shape[0]

    @property
    def cols(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pixels.shape

    def to_bytes(self) -> np.ndarray:
        """8 ビット量子化（round(v·255) を [0, 255] にクランプ）"""
        return np.clip(np.rint(self.pixels * PGM_MAXVAL), 0, PGM_MAXVAL).astype(np.uint8)


def _skip_whitespace(data: bytes, pos: int) -> int:
    """空白とコメント（# から行末まで）を読み飛ばす"""
    while pos < len(data):
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif data[pos:pos + 1] in (b" ", b"\t", b"\n", b"\r", b"\v", b"\f"):
            pos += 1
        else:
            break
    return pos


def _read_header_int(data: bytes, pos: int, field: str) -> Tuple[int, int]:
    pos = _skip_whitespace(data, pos)
    start = pos
    while pos < len(data) and data[pos:pos + 1].isdigit():
        pos += 1

    if pos == start:
        if pos >= len(data):
            raise ImageFormatError(f"Truncated PGM header while reading {field}", pos)
        raise ImageFormatError(f"Malformed PGM header: expected {field}", pos)

    value = int(data[start:pos])
    if value <= 0:
        raise ImageFormatError(f"Malformed PGM header: {field} must be positive", start)
    return value, pos


def parse_pgm(data: bytes) -> GrayImage:
    """
    P5 バイト列を解析

    Args:
        data: PGM ファイルの内容

    Returns:
        GrayImage: 画素値 v/255 の画像

    Raises:
        ImageFormatError: マジック不一致、ヘッダ不正、ペイロード不足の場合
    """
    if data[:2] != PGM_MAGIC:
        raise ImageFormatError(f"Wrong magic number {data[:2]!r}, expected {PGM_MAGIC!r}", 0)

    width, pos = _read_header_int(data, 2, "width")
    height, pos = _read_header_int(data, pos, "height")
    maxval, pos = _read_header_int(data, pos, "maxval")

    if maxval != PGM_MAXVAL:
        raise ImageFormatError(f"Unsupported maxval {maxval}, expected {PGM_MAXVAL}", pos)
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise ImageFormatError("Missing whitespace after PGM header", pos)
    pos += 1

    expected = width * height
    payload = data[pos:pos + expected]
    if len(payload) < expected:
        raise ImageFormatError(
            f"Truncated PGM payload: expected {expected} bytes, got {len(payload)}",
            pos + len(payload),
        )

    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return GrayImage(pixels.astype(float) / PGM_MAXVAL)


def encode_pgm(img: GrayImage) -> bytes:
    """画像を P5 バイト列に変換"""
    header = f"P5\n{img.cols} {img.rows}\n{PGM_MAXVAL}\n".encode("ascii")
    return header + img.to_bytes().tobytes()


def _load_with_pillow(path: Path) -> GrayImage:
    try:
        from PIL import Image
    except ImportError as e:
        raise ImageFormatError(f"Pillow is required to read {path.suffix} files", 0) from e

    try:
        with Image.open(path) as im:
            gray = np.asarray(im.convert("L"), dtype=float)
    except OSError as e:
        raise ImageFormatError(f"Failed to decode image {path}: {str(e)}", 0) from e

    return GrayImage(gray / PGM_MAXVAL)


def load_image(path: Union[str, Path]) -> GrayImage:
    """
    画像ファイルを読み込み

    PGM は自前のパーサーで読み、その他の形式は Pillow で 8 ビット
    グレースケールに変換して読み込みます。

    Args:
        path: 画像ファイルのパス

    Returns:
        GrayImage: [0, 1] の画像

    Raises:
        FileNotFoundError: ファイルが存在しない場合
        ImageFormatError: 解析に失敗した場合
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Image not found: {path}")

    if path.suffix.lower() in PGM_SUFFIXES:
        img = parse_pgm(path.read_bytes())
    else:
        img = _load_with_pillow(path)

    logger.debug(f"Image loaded: {path} ({img.rows}x{img.cols})")
    return img


def save_image(img: GrayImage, path: Union[str, Path]) -> Path:
    """
    画像を PGM（P5）で保存

    Args:
        img: 保存する画像
        path: 保存先パス

    Returns:
        Path: 保存先パス
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_pgm(img))
    logger.debug(f"Image saved: {path}")
    return path

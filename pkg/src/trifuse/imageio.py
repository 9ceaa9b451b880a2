"""8-bit PNG and little-endian float PFM image files."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import FormatError, TrifuseIOError


def quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img: np.ndarray) -> None:
    try:
        PILImage.fromarray(quantize(img), mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise TrifuseIOError(f"cannot write {path}: {exc}") from exc


def read_png(path) -> np.ndarray:
    try:
        with PILImage.open(path) as im:
            a = np.asarray(im.convert("RGB"), dtype=np.float32)
    except OSError as exc:
        raise TrifuseIOError(f"cannot read {path}: {exc}") from exc
    return a / np.float32(255.0)


def write_pfm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype="<f4")
    h, w = img.shape[:2]
    header = f"PF\n{w} {h}\n-1.0\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            # PFM stores rows bottom to top
            fh.write(np.ascontiguousarray(img[::-1]).tobytes())
    except OSError as exc:
        raise TrifuseIOError(f"cannot write {path}: {exc}") from exc


def read_pfm(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise TrifuseIOError(f"cannot read {path}: {exc}") from exc
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"PF":
        raise FormatError(f"{path}: not a color PFM file")
    w, h = (int(t) for t in parts[1].split())
    scale = float(parts[2])
    dtype = "<f4" if scale < 0 else ">f4"
    data = parts[3]
    if len(data) != 4 * 3 * w * h:
        raise FormatError(f"{path}: truncated PFM payload")
    img = np.frombuffer(data, dtype=dtype).reshape(h, w, 3)[::-1]
    return img.astype(np.float32)


def write_image(path, img: np.ndarray) -> None:
    (write_pfm if str(path).endswith(".pfm") else write_png)(path, img)


def read_image(path) -> np.ndarray:
    return (read_pfm if str(path).endswith(".pfm") else read_png)(path)

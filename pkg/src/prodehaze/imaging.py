"""Image value conventions, file I/O (8-bit PNG, binary PPM) and resampling.

Images are plain ``numpy`` arrays of shape ``(H, W, C)`` holding float64 values,
nominally in [0, 1]. Quantization to 8 bits happens only at file boundaries.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
from PIL import Image


class ImageIOError(Exception):
    """Base class for image file errors."""


class MissingFileError(ImageIOError, FileNotFoundError):
    pass


class UnsupportedFormatError(ImageIOError):
    pass


class CorruptHeaderError(ImageIOError):
    pass


class CorruptPayloadError(ImageIOError):
    pass


class UnwritablePathError(ImageIOError):
    pass


PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def as_image(data, channels=None) -> np.ndarray:
    """Coerce ``data`` to a finite float64 ``(H, W, C)`` array."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"expected an (H, W, C) array, got shape {arr.shape}")
    if channels is not None and arr.shape[2] != channels:
        raise ValueError(f"expected {channels} channels, got {arr.shape[2]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


def _read_ppm(raw: bytes) -> np.ndarray:
    # header: P6 <ws> width <ws> height <ws> maxval <single ws> payload; '#' comments allowed
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and raw[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise CorruptHeaderError("malformed PPM header")
        fields.append(int(raw[start:pos]))
    if pos >= len(raw) or not raw[pos : pos + 1].isspace():
        raise CorruptHeaderError("malformed PPM header")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1 or maxval != 255:
        raise CorruptHeaderError(f"unsupported PPM dimensions/maxval {fields}")
    need = width * height * 3
    payload = raw[pos : pos + need]
    if len(payload) < need:
        raise CorruptPayloadError(f"PPM payload truncated: {len(payload)} of {need} bytes")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)


def load_image(path) -> np.ndarray:
    """Load an 8-bit PNG or binary PPM (P6) as a 3-channel image in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such image file: {path}")
    raw = path.read_bytes()
    if raw[:2] == b"P6":
        u8 = _read_ppm(raw)
    elif raw[:8] == PNG_MAGIC:
        try:
            with Image.open(path) as im:
                im.load()
                if im.mode in ("I", "I;16", "I;16B", "F"):
                    raise UnsupportedFormatError(f"{path}: only 8-bit PNG is supported")
                u8 = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except UnsupportedFormatError:
            raise
        except (OSError, SyntaxError, ValueError) as exc:
            if len(raw) < 33:
                raise CorruptHeaderError(f"{path}: {exc}") from exc
            raise CorruptPayloadError(f"{path}: {exc}") from exc
    else:
        raise UnsupportedFormatError(f"{path}: not a PNG or P6 PPM file")
    return u8.astype(np.float64) / 255.0


def quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(img, path) -> None:
    """Write ``img`` (1 or 3 channels) as 8-bit PNG, or PPM when the suffix is .ppm."""
    img = as_image(img)
    if img.shape[2] not in (1, 3):
        raise ValueError(f"save_image supports 1 or 3 channels, got {img.shape[2]}")
    path = Path(path)
    u8 = quantize(img)
    try:
        if path.suffix.lower() == ".ppm":
            if u8.shape[2] == 1:
                u8 = np.repeat(u8, 3, axis=2)
            h, w, _ = u8.shape
            path.write_bytes(b"P6\n%d %d\n255\n" % (w, h) + u8.tobytes())
        else:
            mode = "L" if u8.shape[2] == 1 else "RGB"
            Image.fromarray(u8[:, :, 0] if mode == "L" else u8, mode=mode).save(path, format="PNG")
    except OSError as exc:
        raise UnwritablePathError(f"cannot write {path}: {exc}") from exc


def avg_pool(img, factor: int) -> np.ndarray:
    """Mean over non-overlapping ``factor x factor`` blocks."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, c = img.shape
    if factor < 1 or h % factor or w % factor:
        raise ValueError(f"factor {factor} does not divide image size {h}x{w}")
    if factor == 1:
        return img.copy()
    return img.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3))


def upsample_nearest(img: np.ndarray, factor: int) -> np.ndarray:
    return np.repeat(np.repeat(img, factor, axis=0), factor, axis=1)


def to_display(values: np.ndarray) -> np.ndarray:
    """Min-max normalize an unbounded feature map to [0, 1] for viewing."""
    lo, hi = float(values.min()), float(values.max())
    if hi - lo < 1e-12:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def write_raw(values, path) -> None:
    """Write a float64 tensor as ``<path>.bin`` plus a ``<path>.json`` header."""
    arr = np.ascontiguousarray(np.asarray(values, dtype="<f8"))
    if arr.ndim == 2:
        arr = arr[:, :, None]
    path = Path(path)
    header = {"h": arr.shape[0], "w": arr.shape[1], "c": arr.shape[2], "dtype": "f64"}
    if arr.ndim == 4:
        header["n"] = arr.shape[0]
        header.update(h=arr.shape[1], w=arr.shape[2], c=arr.shape[3])
    path.with_suffix(".bin").write_bytes(arr.tobytes())
    path.with_suffix(".json").write_text(json.dumps(header, sort_keys=True) + "\n")


def read_raw(path) -> np.ndarray:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    if header.get("dtype") != "f64":
        raise UnsupportedFormatError(f"unsupported sidecar dtype {header.get('dtype')!r}")
    shape = (header["h"], header["w"], header["c"])
    if "n" in header:
        shape = (header["n"],) + shape
    data = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    if data.size != int(np.prod(shape)):
        raise CorruptPayloadError(f"{path}: expected {np.prod(shape)} values, found {data.size}")
    return data.reshape(shape).astype(np.float64)


def list_images(directory) -> list[str]:
    return sorted(n for n in os.listdir(directory) if n.lower().endswith((".png", ".ppm")))

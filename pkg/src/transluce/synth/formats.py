"""PFM, PNG and checksum helpers.

PFM files are always written little-endian (scale -1.0) with rows stored
bottom-to-top, as the format prescribes. Rasters are float32 on disk, so a
float32 array survives a write/read round trip bit for bit.
"""

from __future__ import annotations

import zlib
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from ..core import Image
from ..errors import MissingFile, SchemaError


def write_pfm(path, image) -> None:
    a = image.data if isinstance(image, Image) else np.asarray(image)
    if a.ndim == 2:
        a = a[:, :, None]
    h, w, c = a.shape
    if c not in (1, 3):
        raise ValueError(f"PFM holds 1 or 3 channels, got {c}")
    tag = "PF" if c == 3 else "Pf"
    body = np.ascontiguousarray(a[::-1], dtype="<f4")
    with open(path, "wb") as f:
        f.write(f"{tag}\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(body.tobytes())


def _line(buf: bytes, pos: int):
    end = buf.index(b"\n", pos)
    return buf[pos:end].decode("ascii").strip(), end + 1


def read_pfm(path) -> Image:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    buf = path.read_bytes()
    try:
        tag, pos = _line(buf, 0)
        dims, pos = _line(buf, pos)
        scale, pos = _line(buf, pos)
        w, h = (int(x) for x in dims.split())
        scale = float(scale)
    except ValueError as e:
        raise SchemaError(f"{path}: malformed PFM header") from e
    if tag not in ("PF", "Pf"):
        raise SchemaError(f"{path}: not a PFM file (tag {tag!r})")
    c = 3 if tag == "PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * c
    if len(buf) - pos < 4 * n:
        raise SchemaError(f"{path}: truncated PFM payload")
    a = np.frombuffer(buf, dtype=dtype, count=n, offset=pos).reshape(h, w, c)
    return Image(a[::-1].astype(np.float32))


def write_png(path, data) -> None:
    """8-bit PNG from a [0, 1] raster (gray or RGB)."""
    a = np.asarray(data, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    q = np.clip(np.round(a * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(q).save(path, optimize=False)


def read_png(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    with PILImage.open(path) as im:
        return np.asarray(im, dtype=np.float64) / 255.0


def write_mask_png(path, mask: Image) -> None:
    write_png(path, mask.data[..., 0] > 0.5)


def read_mask_png(path) -> Image:
    a = read_png(path)
    if a.ndim == 3:
        a = a[..., 0]
    return Image((a > 0.5).astype(np.float32)[..., None])


def tonemap(image: Image, percentile: float = 95.0, gamma: float = 2.2) -> np.ndarray:
    """Exposure-normalize to the given percentile, then gamma encode."""
    a = np.asarray(image.data, dtype=np.float64)
    ref = np.percentile(a, percentile)
    if ref <= 0:
        ref = max(float(a.max()), 1e-12)
    return np.clip(a / ref, 0.0, 1.0) ** (1.0 / gamma)


def write_preview(path, image: Image) -> None:
    write_png(path, tonemap(image))


def crc32_file(path) -> str:
    crc = 0
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            crc = zlib.crc32(chunk, crc)
    return f"{crc & 0xFFFFFFFF:08x}"

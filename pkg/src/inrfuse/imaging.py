"""Grayscale image values, file I/O, coordinate grids and the discrete gradient.

Images are stored as ``height x width`` float64 arrays tagged with their value
domain: ``raw01`` for intensities in [0, 1] and ``norm11`` for the normalized
[-1, 1] range the network is trained on.
"""
from __future__ import annotations

import os
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, ShapeError, UsageError

RAW01 = "raw01"
NORM11 = "norm11"
_DOMAINS = {RAW01: (0.0, 1.0), NORM11: (-1.0, 1.0)}
_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_REC601 = (0.299, 0.587, 0.114)


@dataclass(frozen=True, eq=False)
class GrayImage:
    pixels: np.ndarray
    domain: str = RAW01

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ShapeError(f"image must be a non-empty 2-D array, got shape {px.shape}")
        if self.domain not in _DOMAINS:
            raise UsageError(f"unknown domain tag {self.domain!r}")
        if not np.all(np.isfinite(px)):
            raise UsageError("image contains non-finite values")
        lo, hi = _DOMAINS[self.domain]
        if px.min() < lo or px.max() > hi:
            raise UsageError(f"{self.domain} image has values outside [{lo}, {hi}]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.domain == other.domain and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class CoordGrid:
    width: int
    height: int
    coords: np.ndarray  # 2 x (height*width), row-major pixel order, rows are (x, y)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True)
class GradientField:
    dx: np.ndarray
    dy: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.dx.shape


# -- quantization and file I/O -----------------------------------------------

def quantize8(values) -> np.ndarray:
    """Clamp to [0, 1] and round half up to the nearest of 256 levels."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("truncated PGM header")
    return data[start:pos], pos


def _parse_pgm(data: bytes) -> np.ndarray:
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos)
        if not tok.isdigit():
            raise FormatError(f"malformed PGM header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1 or not 1 <= maxval <= 65535:
        raise FormatError(f"invalid PGM header: {width}x{height}, maxval {maxval}")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FormatError("truncated PGM header")
    pos += 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    if len(data) - pos < count * dtype.itemsize:
        raise FormatError(f"PGM raster truncated: need {count * dtype.itemsize} bytes, have {len(data) - pos}")
    raster = np.frombuffer(data, dtype, count, pos).reshape(height, width)
    return raster.astype(np.float64) / maxval


def _parse_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64)
                return arr / 65535.0
            if mode == "L":
                return np.asarray(im, dtype=np.float64) / 255.0
            if mode in ("1", "P", "LA", "RGBA", "RGB", "PA"):
                if mode in ("1", "LA"):
                    return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
                return rgb @ np.array(_REC601)
            raise FormatError(f"unsupported PNG pixel mode {mode}")
    except (OSError, SyntaxError, zlib.error) as exc:
        raise FormatError(f"cannot decode PNG {path}: {exc}") from exc


def load_image(path) -> GrayImage:
    """Read an 8-bit PGM (P5) or a grayscale/color PNG as a ``raw01`` image."""
    path = Path(path)
    data = path.read_bytes()
    if data[:2] == b"P5":
        px = _parse_pgm(data)
    elif data[:8] == _PNG_MAGIC:
        px = _parse_png(path)
    else:
        raise FormatError(f"unsupported image format in {path}: magic bytes {data[:8]!r}")
    return GrayImage(np.clip(px, 0.0, 1.0), RAW01)


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write via a temporary sibling file and rename, so failures leave no partial output."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_image(img: GrayImage, suffix: str) -> bytes:
    px = img.pixels if img.domain == RAW01 else denormalize(img).pixels
    q = quantize8(px)
    suffix = suffix.lower()
    if suffix == ".pgm":
        h, w = q.shape
        return f"P5\n{w} {h}\n255\n".encode("ascii") + q.tobytes()
    if suffix == ".png":
        import io

        buf = io.BytesIO()
        Image.fromarray(q, mode="L").save(buf, format="PNG")
        return buf.getvalue()
    raise FormatError(f"cannot infer output format from extension {suffix!r}")


def save_image(img: GrayImage, path) -> None:
    """Write an 8-bit PGM or PNG, chosen by extension."""
    path = Path(path)
    atomic_write_bytes(path, encode_image(img, path.suffix))


# -- value domains -----------------------------------------------------------

def normalize(img: GrayImage) -> GrayImage:
    if img.domain != RAW01:
        raise UsageError(f"normalize expects a raw01 image, got {img.domain}")
    return GrayImage((img.pixels - 0.5) / 0.5, NORM11)


def denormalize(img: GrayImage) -> GrayImage:
    if img.domain != NORM11:
        raise UsageError(f"denormalize expects a norm11 image, got {img.domain}")
    return GrayImage(img.pixels * 0.5 + 0.5, RAW01)


def norm11_from_values(values) -> GrayImage:
    """Wrap unclamped network output as a ``norm11`` image, clamping to [-1, 1]."""
    return GrayImage(np.clip(values, -1.0, 1.0), NORM11)


# -- coordinates -------------------------------------------------------------

def axis_coords(n: int) -> np.ndarray:
    if n < 1:
        raise UsageError(f"grid dimension must be >= 1, got {n}")
    if n == 1:
        return np.zeros(1)
    return -1.0 + 2.0 * np.arange(n) / (n - 1)


def make_coord_grid(width: int, height: int) -> CoordGrid:
    """Endpoint-inclusive grid over [-1, 1]^2; a singleton axis sits at 0."""
    xs = axis_coords(width)
    ys = axis_coords(height)
    coords = np.empty((2, height * width))
    coords[0] = np.tile(xs, height)
    coords[1] = np.repeat(ys, width)
    return CoordGrid(width, height, coords)


# -- discrete gradient -------------------------------------------------------

def _as_array(img) -> np.ndarray:
    if isinstance(img, GrayImage):
        return img.pixels
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got shape {arr.shape}")
    return arr


def spatial_gradient(img) -> GradientField:
    """Forward differences; the last column of ``dx`` and last row of ``dy`` are zero."""
    u = _as_array(img)
    dx = np.zeros_like(u)
    dy = np.zeros_like(u)
    dx[:, :-1] = u[:, 1:] - u[:, :-1]
    dy[:-1, :] = u[1:, :] - u[:-1, :]
    return GradientField(dx, dy)


def spatial_gradient_adjoint(field: GradientField) -> np.ndarray:
    """Exact adjoint of :func:`spatial_gradient` (negative divergence)."""
    px, py = field.dx, field.dy
    if px.shape != py.shape:
        raise ShapeError(f"dx {px.shape} and dy {py.shape} differ")
    out = np.zeros_like(px)
    out[:, :-1] -= px[:, :-1]
    out[:, 1:] += px[:, :-1]
    out[:-1, :] -= py[:-1, :]
    out[1:, :] += py[:-1, :]
    return out


# -- resampling --------------------------------------------------------------

def _interp_axis(n_src: int, n_dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if n_src == 1:
        z = np.zeros(n_dst, dtype=np.intp)
        return z, z, np.zeros(n_dst)
    # destination coordinate mapped to a continuous source pixel index
    if n_dst == 1:
        pos = np.array([0.5 * (n_src - 1)])
    else:
        pos = np.arange(n_dst) * (n_src - 1) / (n_dst - 1)
    lo = np.clip(np.floor(pos).astype(np.intp), 0, n_src - 2)
    frac = pos - lo
    return lo, lo + 1, frac


def bilinear_resample(img, new_width: int, new_height: int):
    """Bilinear interpolation sharing the [-1, 1] convention of :func:`make_coord_grid`.

    Accepts a :class:`GrayImage` (returned with the same domain tag) or a bare array.
    """
    if new_width < 1 or new_height < 1:
        raise UsageError(f"target size must be positive, got {new_width}x{new_height}")
    u = _as_array(img)
    h, w = u.shape
    y0, y1, fy = _interp_axis(h, new_height)
    x0, x1, fx = _interp_axis(w, new_width)
    top = u[y0][:, x0] * (1 - fx) + u[y0][:, x1] * fx
    bot = u[y1][:, x0] * (1 - fx) + u[y1][:, x1] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    if isinstance(img, GrayImage):
        lo, hi = _DOMAINS[img.domain]
        return GrayImage(np.clip(out, lo, hi), img.domain)
    return out

"""Reference-based and no-reference quality scores for a fused image.

Inputs are ``raw01`` images (or arrays in [0, 1]); every score works on the
intensities scaled to [0, 255] without quantization, except entropy, which
bins rounded 8-bit levels.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage, signal

from .errors import ShapeError, UsageError
from .imaging import NORM11, GrayImage, denormalize, quantize8

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
VIF_SIGMAS = (1.0, 2.0, 4.0, 8.0)
VIF_NOISE_VAR = 2.0
VIF_MIN_SIZE = 32
FIELDS = ("en", "sd", "cc", "scd", "ms_ssim", "vif")


@dataclass(frozen=True)
class MetricsReport:
    en: float
    sd: float
    cc: float
    scd: float
    ms_ssim: float
    vif: float

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict())

    def csv_row(self, precision: int = 6) -> list[str]:
        return [f"{getattr(self, k):.{precision}f}" for k in FIELDS]

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(FIELDS)
        w.writerow(self.csv_row())
        return buf.getvalue()


def _raw01(img) -> np.ndarray:
    if isinstance(img, GrayImage):
        if img.domain == NORM11:
            img = denormalize(img)
        px = img.pixels
    else:
        px = np.asarray(img, dtype=np.float64)
    if px.ndim != 2:
        raise ShapeError(f"expected a 2-D image, got shape {px.shape}")
    return px


def _scaled(img) -> np.ndarray:
    return _raw01(img) * 255.0


def _same_shape(*arrays) -> None:
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ShapeError(f"images must share a shape, got {sorted(shapes)}")


def entropy(img) -> float:
    """Shannon entropy in bits of the 256-bin histogram of 8-bit levels."""
    levels = quantize8(_raw01(img))
    counts = np.bincount(levels.ravel(), minlength=256)
    p = counts[counts > 0] / levels.size
    return float(-np.sum(p * np.log2(p))) + 0.0


def std_dev(img) -> float:
    return float(np.std(_scaled(img)))


def _corr(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    saa = np.sum(da * da)
    sbb = np.sum(db * db)
    if saa == 0 or sbb == 0:
        return 0.0
    r = float(np.sum(da * db) / math.sqrt(saa * sbb))
    return min(1.0, max(-1.0, r))


def corr_coeff(a, b) -> float:
    """Pearson correlation; zero when either input has zero variance."""
    x, y = _scaled(a), _scaled(b)
    _same_shape(x, y)
    return _corr(x, y)


def scd(f, a, b) -> float:
    """Sum of the correlations of differences: ``corr(f-a, b) + corr(f-b, a)``."""
    x, y, z = _scaled(f), _scaled(a), _scaled(b)
    _same_shape(x, y, z)
    return _corr(x - y, z) + _corr(x - z, y)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_maps(x: np.ndarray, y: np.ndarray, window: np.ndarray):
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    filt = lambda u: signal.correlate2d(u, window, mode="valid")
    mx, my = filt(x), filt(y)
    vx = filt(x * x) - mx * mx
    vy = filt(y * y) - my * my
    cxy = filt(x * y) - mx * my
    cs = (2.0 * cxy + c2) / (vx + vy + c2)
    lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1)
    return lum * cs, cs


def ssim(a, b, window: np.ndarray | None = None) -> float:
    """Mean SSIM over all fully contained windows (11x11 Gaussian, sigma 1.5 by default)."""
    window = gaussian_window() if window is None else np.asarray(window, dtype=np.float64)
    x, y = _scaled(a), _scaled(b)
    _same_shape(x, y)
    if x.shape[0] < window.shape[0] or x.shape[1] < window.shape[1]:
        raise UsageError(f"image {x.shape} is smaller than the {window.shape} window")
    return float(_ssim_maps(x, y, window)[0].mean())


def _halve(u: np.ndarray) -> np.ndarray:
    h, w = (u.shape[0] // 2) * 2, (u.shape[1] // 2) * 2
    u = u[:h, :w]
    return 0.25 * (u[0::2, 0::2] + u[1::2, 0::2] + u[0::2, 1::2] + u[1::2, 1::2])


def ms_ssim_scales(height: int, width: int, window: int = SSIM_WINDOW) -> int:
    """Number of dyadic scales (at most 5) whose coarsest level still holds one window."""
    side = min(height, width)
    if side < window:
        return 0
    n = 1
    while n < len(MS_SSIM_WEIGHTS) and side // 2**n >= window:
        n += 1
    return n


def ms_ssim(f, src) -> float:
    """Multi-scale SSIM with 2x2-mean dyadic downsampling.

    Scales that would be smaller than the window are dropped and the remaining
    weights renormalized. Per-scale factors are clipped at zero before the
    fractional powers.
    """
    x, y = _scaled(f), _scaled(src)
    _same_shape(x, y)
    n = ms_ssim_scales(*x.shape)
    if n == 0:
        raise UsageError(f"image {x.shape} is smaller than one {SSIM_WINDOW}x{SSIM_WINDOW} window")
    weights = np.array(MS_SSIM_WEIGHTS[:n])
    weights /= weights.sum()
    window = gaussian_window()
    value = 1.0
    for j in range(n):
        full, cs = _ssim_maps(x, y, window)
        factor = full.mean() if j == n - 1 else cs.mean()
        value *= max(float(factor), 0.0) ** weights[j]
        x, y = _halve(x), _halve(y)
    return float(value)


def _local_stats(x, y, sigma):
    # centering leaves the moments unchanged and limits cancellation
    x = x - x.mean()
    y = y - y.mean()
    filt = lambda u: ndimage.gaussian_filter(u, sigma, mode="reflect", truncate=2.0)
    mx, my = filt(x), filt(y)
    vx = filt(x * x) - mx * mx
    vy = filt(y * y) - my * my
    cxy = filt(x * y) - mx * my
    return vx, vy, cxy


def vif_terms(vx, vy, cxy, noise_var: float = VIF_NOISE_VAR, eps: float = 1e-10):
    """Per-pixel information terms given local reference/distorted statistics.

    Returns ``(distorted_info, reference_info)`` maps in log10 units.
    """
    vx = np.maximum(vx, 0.0)
    vy = np.maximum(vy, 0.0)
    g = cxy / (vx + eps)
    sv = vy - g * cxy
    flat_ref = vx < eps
    g = np.where(flat_ref, 0.0, g)
    sv = np.where(flat_ref, vy, sv)
    vx = np.where(flat_ref, 0.0, vx)
    flat_dist = vy < eps
    g = np.where(flat_dist, 0.0, g)
    sv = np.where(flat_dist, 0.0, sv)
    neg = g < 0
    sv = np.where(neg, vy, sv)
    g = np.where(neg, 0.0, g)
    sv = np.maximum(sv, eps)
    num = np.log10(1.0 + g * g * vx / (sv + noise_var))
    den = np.log10(1.0 + vx / noise_var)
    return num, den


def vif(ref, dist) -> float:
    """Pixel-domain visual information fidelity of ``dist`` with respect to ``ref``.

    Local statistics come from Gaussian windows with sigma 1, 2, 4 and 8 on the
    full-resolution images (reflect boundary, windows truncated at 2 sigma);
    the noise variance is 2.
    """
    x, y = _scaled(ref), _scaled(dist)
    _same_shape(x, y)
    if min(x.shape) < VIF_MIN_SIZE:
        raise UsageError(f"VIF needs at least {VIF_MIN_SIZE}x{VIF_MIN_SIZE} pixels, got {x.shape}")
    num = den = 0.0
    for sigma in VIF_SIGMAS:
        n, d = vif_terms(*_local_stats(x, y, sigma))
        num += float(n.sum())
        den += float(d.sum())
    if den == 0.0:
        return 1.0 if num == 0.0 else 0.0
    return num / den


def evaluate(f, ir, vis) -> MetricsReport:
    """Compute the six fusion scores for fused image ``f`` against both sources."""
    f01, a01, b01 = _raw01(f), _raw01(ir), _raw01(vis)
    _same_shape(f01, a01, b01)
    return MetricsReport(
        en=entropy(f01),
        sd=std_dev(f01),
        cc=0.5 * (corr_coeff(f01, a01) + corr_coeff(f01, b01)),
        scd=scd(f01, a01, b01),
        ms_ssim=0.5 * (ms_ssim(f01, a01) + ms_ssim(f01, b01)),
        vif=0.5 * (vif(a01, f01) + vif(b01, f01)),
    )

"""Bundled synthetic infrared/visible test pairs.

The scenes are analytic functions of continuous coordinates, so the same pair
can be rendered at any resolution. Thermal renders hold smooth warm regions and
hot targets; visible renders carry texture, edges and low-contrast targets.
Each pixel is a 4x4 box average of point samples.

The PNG files under ``inrfuse/data`` were written by :func:`write_bundled` and
are what tests load; regenerate them with ``python -m inrfuse.samples``.
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .imaging import RAW01, GrayImage, load_image, save_image

PAIRS = ("street", "field")
_SUPERSAMPLE = 4


def _lattice(seed: int, cells: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(-1.0, 1.0, size=(cells + 2, cells + 2))


def value_noise(x, y, seed: int, cells: int) -> np.ndarray:
    """Smoothly interpolated lattice noise on [-1, 1]^2 with ``cells`` cells per side."""
    lat = _lattice(seed, cells)
    gx = (x + 1.0) * 0.5 * cells
    gy = (y + 1.0) * 0.5 * cells
    ix = np.clip(np.floor(gx).astype(int), 0, cells)
    iy = np.clip(np.floor(gy).astype(int), 0, cells)
    fx = gx - ix
    fy = gy - iy
    sx = fx * fx * (3 - 2 * fx)
    sy = fy * fy * (3 - 2 * fy)
    top = lat[iy, ix] * (1 - sx) + lat[iy, ix + 1] * sx
    bot = lat[iy + 1, ix] * (1 - sx) + lat[iy + 1, ix + 1] * sx
    return top * (1 - sy) + bot * sy


def fractal(x, y, seed: int, base: int = 4, octaves: int = 3) -> np.ndarray:
    out = np.zeros_like(x)
    amp = 1.0
    for k in range(octaves):
        out += amp * value_noise(x, y, seed + 101 * k, base * 2**k)
        amp *= 0.5
    return out / (2.0 - 2.0 ** (1 - octaves))


def _soft(d, width=0.02):
    """Smooth indicator of ``d < 0``."""
    return 0.5 * (1.0 - np.tanh(d / width))


def _box(x, y, x0, x1, y0, y1):
    return _soft(x0 - x) * _soft(x - x1) * _soft(y0 - y) * _soft(y - y1)


def _ellipse(x, y, cx, cy, rx, ry):
    return _soft(np.sqrt(((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2) - 1.0, 0.05)


def _person(x, y, cx, cy, s):
    body = _ellipse(x, y, cx, cy, 0.045 * s, 0.14 * s)
    head = _ellipse(x, y, cx, cy - 0.19 * s, 0.04 * s, 0.045 * s)
    return np.maximum(body, head)


def _street(x, y):
    ground = _soft(-(y - 0.25))
    bld1 = _box(x, y, -0.95, -0.35, -0.55, 0.25)
    bld2 = _box(x, y, 0.2, 0.85, -0.75, 0.25)
    win = (np.sin(18 * np.pi * x) > 0.3) * (np.sin(14 * np.pi * y) > 0.2)
    tree = _ellipse(x, y, -0.1, -0.15, 0.22, 0.3)
    person = _person(x, y, 0.05, 0.5, 1.6)
    car = _box(x, y, -0.75, -0.25, 0.45, 0.7)
    tex = fractal(x, y, 7)
    sky = 0.75 - 0.25 * (y + 1.0)
    vis = sky * (1 - ground) + (0.45 + 0.08 * tex) * ground
    vis = vis * (1 - bld1) + (0.35 + 0.3 * win + 0.03 * tex) * bld1
    vis = vis * (1 - bld2) + (0.55 - 0.3 * win + 0.03 * tex) * bld2
    vis = vis * (1 - tree) + (0.25 + 0.2 * fractal(x, y, 11, base=8)) * tree
    vis = vis * (1 - car) + (0.2 + 0.05 * np.sin(30 * x)) * car
    vis = vis * (1 - person) + 0.38 * person
    ir = 0.2 + 0.05 * fractal(x, y, 3, base=2) + 0.08 * (y + 1.0)
    ir = ir * (1 - bld1) + 0.35 * bld1
    ir = ir * (1 - bld2) + (0.3 + 0.1 * win) * bld2
    ir = ir * (1 - tree) + 0.25 * tree
    engine = _ellipse(x, y, -0.35, 0.58, 0.12, 0.08)
    ir = ir * (1 - car) + 0.45 * car
    ir = ir * (1 - engine) + 0.8 * engine
    ir = ir * (1 - person) + 0.92 * person
    return np.clip(ir, 0, 1), np.clip(vis, 0, 1)


def _field(x, y):
    horizon = 0.1 * np.sin(2.5 * x) - 0.25
    ground = _soft(-(y - horizon), 0.03)
    road = _soft(np.abs(x - 0.4 * (y - horizon)) - (0.05 + 0.25 * (y - horizon)), 0.03) * ground
    grass = 0.35 + 0.18 * fractal(x, y, 21, base=8)
    stripes = 0.5 + 0.5 * np.sign(np.sin(25 * (y - horizon)))
    sky = 0.8 - 0.2 * fractal(x, y, 31, base=2) - 0.1 * (y + 1.0)
    vis = sky * (1 - ground) + grass * ground
    vis = vis * (1 - road) + (0.55 + 0.25 * stripes * _soft(np.abs(x - 0.4 * (y - horizon)) - 0.02)) * road
    deer = _ellipse(x, y, -0.5, 0.2, 0.16, 0.07)
    walker = _person(x, y, 0.55, 0.15, 1.3)
    post = _box(x, y, 0.75, 0.8, -0.45, 0.6)
    vis = vis * (1 - deer) + 0.33 * deer
    vis = vis * (1 - walker) + 0.3 * walker
    vis = vis * (1 - post) + 0.15 * post
    ir = 0.15 + 0.1 * ground + 0.04 * fractal(x, y, 41, base=2)
    ir = ir * (1 - road) + 0.4 * road
    ir = ir * (1 - post) + 0.2 * post
    ir = ir * (1 - deer) + 0.85 * deer
    ir = ir * (1 - walker) + 0.95 * walker
    return np.clip(ir, 0, 1), np.clip(vis, 0, 1)


_SCENES = {"street": _street, "field": _field}


def render_scene(name: str, width: int, height: int | None = None) -> tuple[GrayImage, GrayImage]:
    """Render the (ir, vis) pair of a named scene at the requested size."""
    height = height or width
    s = _SUPERSAMPLE
    # sample points are sub-pixel centers of a box filter over the [-1, 1] grid cells
    def axis(n):
        step = 2.0 / n
        return -1.0 + step * (np.arange(n * s) + 0.5) / s

    x, y = np.meshgrid(axis(width), axis(height))
    ir, vis = _SCENES[name](x, y)
    pool = lambda a: a.reshape(height, s, width, s).mean(axis=(1, 3))
    return GrayImage(pool(ir), RAW01), GrayImage(pool(vis), RAW01)


def _data_dir():
    return resources.files("inrfuse") / "data"


def bundled_pair(name: str, size: int = 64, vis_size: int | None = None) -> tuple[GrayImage, GrayImage]:
    """Load a bundled pair; ``vis_size`` selects the higher-resolution visible render."""
    vis_size = vis_size or size
    d = _data_dir()
    with resources.as_file(d / f"ir_{name}_{size}.png") as p:
        ir = load_image(p)
    with resources.as_file(d / f"vis_{name}_{vis_size}.png") as p:
        vis = load_image(p)
    return ir, vis


def write_bundled(directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name in PAIRS:
        for size in (64, 128):
            ir, vis = render_scene(name, size)
            for tag, img in (("ir", ir), ("vis", vis)):
                path = directory / f"{tag}_{name}_{size}.png"
                save_image(img, path)
                written.append(path)
    return written


if __name__ == "__main__":
    for p in write_bundled(Path(__file__).parent / "data"):
        print(p)

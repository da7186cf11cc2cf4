"""Fusion objective, per-pair training loop and resolution-free rendering.

The objective for a fused image ``F`` against sources ``IR`` and ``VIS`` is::

    mean (IR - F)^2 + mean (VIS - F)^2
    + mean (D IR - D F)^2 + mean (D VIS - D F)^2
    + lambda * mean sqrt((D F)^2 + eps^2)

where ``D`` stacks the forward differences ``dx`` and ``dy`` and the gradient
means run over both components. All images live in the normalized [-1, 1]
domain.
"""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, UsageError
from .imaging import (
    NORM11,
    CoordGrid,
    GradientField,
    GrayImage,
    make_coord_grid,
    normalize,
    spatial_gradient,
    spatial_gradient_adjoint,
)
from .nn import AdamState, adam_step
from .siren import SirenConfig, SirenNetwork

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "pixel_ir", "pixel_vis", "grad_ir", "grad_vis", "tv", "total")


@dataclass(frozen=True)
class FusionConfig:
    steps: int = 2000
    lr: float = 1e-3
    lam: float = 1.0
    tv_epsilon: float = 1e-6
    seed: int = 0
    log_every: int = 10
    adam_epsilon: float = 1e-8
    # plain Adam at lr 1e-3 re-inflates its steps once the fit converges
    amsgrad: bool = True

    def validate(self) -> None:
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lam}")
        if not self.tv_epsilon > 0:
            raise ConfigError(f"tv_epsilon must be positive, got {self.tv_epsilon}")
        if not self.adam_epsilon > 0:
            raise ConfigError(f"adam_epsilon must be positive, got {self.adam_epsilon}")
        if self.log_every < 1:
            raise ConfigError(f"log_every must be >= 1, got {self.log_every}")


@dataclass(frozen=True)
class LossBreakdown:
    pixel_ir: float
    pixel_vis: float
    grad_ir: float
    grad_vis: float
    tv: float
    total: float
    step: int = 0

    def row(self) -> list:
        return [self.step, self.pixel_ir, self.pixel_vis, self.grad_ir, self.grad_vis, self.tv, self.total]


@dataclass
class FusionResult:
    network: SirenNetwork
    fused: GrayImage
    loss_history: list = field(default_factory=list)
    wall_time: float = 0.0

    def totals(self) -> np.ndarray:
        return np.array([b.total for b in self.loss_history])

    def steps(self) -> np.ndarray:
        return np.array([b.step for b in self.loss_history])


def _values(img) -> np.ndarray:
    if isinstance(img, GrayImage):
        return img.pixels
    return np.asarray(img, dtype=np.float64)


def _as_norm11(img: GrayImage) -> GrayImage:
    return img if img.domain == NORM11 else normalize(img)


# -- objective ---------------------------------------------------------------

def _pixel_term(fused: np.ndarray, src: np.ndarray, grad: np.ndarray | None) -> float:
    r = fused - src
    if grad is not None:
        grad += (2.0 / r.size) * r
    return float(np.mean(r * r))


def _gradient_term(dfused: GradientField, dsrc: GradientField, acc: GradientField | None) -> float:
    rx = dfused.dx - dsrc.dx
    ry = dfused.dy - dsrc.dy
    n = 2 * rx.size
    if acc is not None:
        acc.dx[...] += (2.0 / n) * rx
        acc.dy[...] += (2.0 / n) * ry
    return float((np.sum(rx * rx) + np.sum(ry * ry)) / n)


def _tv_term(dfused: GradientField, eps: float, weight: float, acc: GradientField | None) -> float:
    cx = np.sqrt(dfused.dx * dfused.dx + eps * eps)
    cy = np.sqrt(dfused.dy * dfused.dy + eps * eps)
    n = 2 * cx.size
    if acc is not None and weight != 0:
        acc.dx[...] += (weight / n) * (dfused.dx / cx)
        acc.dy[...] += (weight / n) * (dfused.dy / cy)
    return float((np.sum(cx) + np.sum(cy)) / n)


def _partial_loss(fused, ir=None, vis=None, tv: bool = False, lam: float = 1.0, eps: float = 1e-6):
    """Terms of the objective that involve ``fused`` on one grid, with ``d/dfused``.

    Returns a dict of the evaluated terms and the gradient image.
    """
    grad = np.zeros_like(fused)
    acc = GradientField(np.zeros_like(fused), np.zeros_like(fused))
    dfused = spatial_gradient(fused)
    terms = {}
    for name, src in (("ir", ir), ("vis", vis)):
        if src is None:
            continue
        if src.shape != fused.shape:
            raise ShapeError(f"{name} image {src.shape} does not match fused image {fused.shape}")
        terms[f"pixel_{name}"] = _pixel_term(fused, src, grad)
        terms[f"grad_{name}"] = _gradient_term(dfused, spatial_gradient(src), acc)
    if tv:
        terms["tv"] = _tv_term(dfused, eps, lam, acc)
    grad += spatial_gradient_adjoint(acc)
    return terms, grad


def _breakdown(terms: dict, lam: float, step: int = 0) -> LossBreakdown:
    parts = {k: terms.get(k, 0.0) for k in ("pixel_ir", "pixel_vis", "grad_ir", "grad_vis", "tv")}
    total = parts["pixel_ir"] + parts["pixel_vis"] + parts["grad_ir"] + parts["grad_vis"] + lam * parts["tv"]
    return LossBreakdown(total=total, step=step, **parts)


def compute_loss(fused_values, ir, vis, lam: float = 1.0, tv_epsilon: float = 1e-6):
    """Evaluate the fusion objective on one shared grid.

    Returns ``(LossBreakdown, d_loss/d_fused)``; the derivative is exact for the
    smoothed objective.
    """
    f = _values(fused_values)
    a, b = _values(ir), _values(vis)
    if not (f.shape == a.shape == b.shape):
        raise ShapeError(f"fused {f.shape}, ir {a.shape} and vis {b.shape} must share a shape")
    terms, grad = _partial_loss(f, a, b, tv=True, lam=lam, eps=tv_epsilon)
    return _breakdown(terms, lam), grad


# -- rendering ---------------------------------------------------------------

def _check_render_net(net: SirenNetwork) -> None:
    if net.config.in_dim != 2 or net.config.out_dim != 1:
        raise ShapeError(f"rendering needs a 2-in/1-out network, got {net.config.in_dim}-in/{net.config.out_dim}-out")


def render_values(net: SirenNetwork, grid: CoordGrid) -> np.ndarray:
    """Raw (unclamped) network output on ``grid`` as a ``height x width`` array."""
    _check_render_net(net)
    return net(grid.coords).reshape(grid.height, grid.width)


def render(net: SirenNetwork, grid: CoordGrid) -> np.ndarray:
    """Evaluate the network at every grid coordinate, pixel order following the grid.

    The result is left unclamped; :func:`to_image` clamps it for export.
    """
    return render_values(net, grid)


def to_image(values) -> GrayImage:
    return GrayImage(np.clip(values, -1.0, 1.0), NORM11)


def superres_query(net: SirenNetwork, base_width: int, base_height: int, scale: float) -> GrayImage:
    """Render on a grid ``scale`` times denser than the base size, clamped to [-1, 1]."""
    if not scale > 0:
        raise UsageError(f"scale must be positive, got {scale}")
    w = int(round(scale * base_width))
    h = int(round(scale * base_height))
    if w < 1 or h < 1:
        raise UsageError(f"scale {scale} on {base_width}x{base_height} gives an empty {w}x{h} grid")
    return to_image(render_values(net, make_coord_grid(w, h)))


# -- training ----------------------------------------------------------------

class _SharedGrid:
    """Both sources on one grid: one render, one backward per step."""

    def __init__(self, ir: np.ndarray, vis: np.ndarray, cfg: FusionConfig):
        self.ir, self.vis, self.cfg = ir, vis, cfg
        self.grid = make_coord_grid(ir.shape[1], ir.shape[0])

    def __call__(self, net: SirenNetwork, need_grad: bool = True):
        out, cache = net.forward(self.grid.coords)
        f = out.reshape(self.grid.shape)
        terms, g = _partial_loss(f, self.ir, self.vis, tv=True, lam=self.cfg.lam, eps=self.cfg.tv_epsilon)
        grads = net.backward(cache, g.reshape(1, -1)).as_list() if need_grad else None
        return terms, grads

    @property
    def output_grid(self) -> CoordGrid:
        return self.grid


class _DualGrid:
    """Each source's terms on its own native grid; TV on the finer of the two."""

    def __init__(self, ir: np.ndarray, vis: np.ndarray, cfg: FusionConfig):
        self.ir, self.vis, self.cfg = ir, vis, cfg
        self.ir_grid = make_coord_grid(ir.shape[1], ir.shape[0])
        self.vis_grid = make_coord_grid(vis.shape[1], vis.shape[0])
        self.tv_on_vis = vis.size >= ir.size

    def __call__(self, net: SirenNetwork, need_grad: bool = True):
        terms = {}
        grads = None
        for grid, src, key in ((self.ir_grid, self.ir, "ir"), (self.vis_grid, self.vis, "vis")):
            out, cache = net.forward(grid.coords)
            f = out.reshape(grid.shape)
            tv = self.tv_on_vis == (key == "vis")
            t, g = _partial_loss(
                f, src if key == "ir" else None, src if key == "vis" else None,
                tv=tv, lam=self.cfg.lam, eps=self.cfg.tv_epsilon,
            )
            terms.update(t)
            if need_grad:
                part = net.backward(cache, g.reshape(1, -1)).as_list()
                grads = part if grads is None else [a + b for a, b in zip(grads, part)]
        return terms, grads

    @property
    def output_grid(self) -> CoordGrid:
        return self.vis_grid if self.tv_on_vis else self.ir_grid


def _train(objective, net_config: SirenConfig, cfg: FusionConfig, callback=None) -> FusionResult:
    cfg.validate()
    start = time.perf_counter()
    net = SirenNetwork.init(net_config)
    params = net.parameters()
    names = net.parameter_names()
    state = AdamState.for_params(params, lr=cfg.lr, epsilon=cfg.adam_epsilon, amsgrad=cfg.amsgrad)
    history = []
    for step in range(cfg.steps + 1):
        final = step == cfg.steps
        terms, grads = objective(net, need_grad=not final)
        loss = _breakdown(terms, cfg.lam, step)
        if not np.isfinite(loss.total):
            raise NumericError(f"loss became non-finite at step {step}")
        if step % cfg.log_every == 0 or final:
            history.append(loss)
            log.debug("step %d total %.6g", step, loss.total)
            if callback is not None:
                callback(loss)
        if final:
            break
        try:
            adam_step(params, grads, state, names)
        except NumericError as exc:
            raise NumericError(f"step {step}: {exc}") from exc
    fused = to_image(render_values(net, objective.output_grid))
    return FusionResult(net, fused, history, time.perf_counter() - start)


def _prepare(ir: GrayImage, vis: GrayImage) -> tuple[np.ndarray, np.ndarray]:
    a = _as_norm11(ir).pixels
    b = _as_norm11(vis).pixels
    for name, arr in (("ir", a), ("vis", b)):
        if arr.size < 2:
            raise UsageError(f"{name} image is degenerate ({arr.shape[1]}x{arr.shape[0]})")
    return a, b


def fuse(ir: GrayImage, vis: GrayImage, net_config: SirenConfig | None = None,
         cfg: FusionConfig | None = None, callback=None) -> FusionResult:
    """Fit a fresh network to one image pair and render the fused image.

    Sources of different sizes are handled by :func:`fuse_multires`.
    """
    net_config = net_config or SirenConfig()
    cfg = cfg or FusionConfig()
    a, b = _prepare(ir, vis)
    if a.shape != b.shape:
        return _train(_DualGrid(a, b, cfg), net_config, cfg, callback)
    return _train(_SharedGrid(a, b, cfg), net_config, cfg, callback)


def fuse_multires(ir: GrayImage, vis: GrayImage, net_config: SirenConfig | None = None,
                  cfg: FusionConfig | None = None, callback=None) -> FusionResult:
    """Fuse sources given on different grids without resampling either one.

    Each source is compared with a render on its own native grid; the TV term
    uses the finer grid and the output is rendered there. Equal sizes fall
    back to the shared-grid path.
    """
    return fuse(ir, vis, net_config, cfg, callback)


def fit_image(img: GrayImage, net_config: SirenConfig | None = None, steps: int = 2000,
              lr: float = 1e-3, amsgrad: bool = True) -> tuple[SirenNetwork, GrayImage, list]:
    """Plain regression of a single image (pixel mean-square loss only)."""
    net_config = net_config or SirenConfig()
    target = _as_norm11(img).pixels
    grid = make_coord_grid(target.shape[1], target.shape[0])
    net = SirenNetwork.init(net_config)
    params = net.parameters()
    state = AdamState.for_params(params, lr=lr, amsgrad=amsgrad)
    history = []
    for step in range(steps + 1):
        out, cache = net.forward(grid.coords)
        r = out.reshape(target.shape) - target
        history.append(float(np.mean(r * r)))
        if step == steps:
            break
        g = net.backward(cache, (2.0 / r.size) * r.reshape(1, -1))
        adam_step(params, g.as_list(), state, net.parameter_names())
    return net, to_image(render_values(net, grid)), history


# -- reporting ---------------------------------------------------------------

def loss_history_csv(history) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOSS_COLUMNS)
    for b in history:
        writer.writerow([b.step] + [repr(float(v)) for v in b.row()[1:]])
    return buf.getvalue()


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a, b = _values(a), _values(b)
    if a.shape != b.shape:
        raise ShapeError(f"cannot compare {a.shape} with {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)

"""Acceptance runs on the bundled data with default settings.

Each check logs a ``criterion N: PASS/FAIL`` line; the terminal summary
collects them. Training runs are shared through module-scoped fixtures.
Expect a couple of hours on a single CPU core.
"""
import time

import numpy as np
import pytest

from inrfuse.fusion import (
    FusionConfig,
    _SharedGrid,
    _breakdown,
    fit_image,
    fuse,
    fuse_multires,
    loss_history_csv,
    psnr,
    render,
    superres_query,
)
from inrfuse.imaging import bilinear_resample, denormalize, encode_image, spatial_gradient
from inrfuse.metrics import corr_coeff, entropy, evaluate, ms_ssim, scd, std_dev, vif
from inrfuse.nn import grad_check
from inrfuse.samples import bundled_pair, render_scene
from inrfuse.siren import SirenConfig, siren_init

from test_metrics import oracle_corr, oracle_ms_ssim, oracle_std, oracle_vif, smooth_random

pytestmark = pytest.mark.slow

PAIRS = ("street", "field")
DEFAULT = FusionConfig()


def raw01(img):
    return denormalize(img).pixels


def quantized(img):
    """Fused image as it is written to disk, back in [0, 1]."""
    return np.floor(raw01(img) * 255 + 0.5) / 255


@pytest.fixture(scope="module")
def pair_runs():
    return {name: fuse(*bundled_pair(name), SirenConfig(), DEFAULT) for name in PAIRS}


# 1 -----------------------------------------------------------------------------

def test_criterion_1_gradient_check(record):
    ir, vis = render_scene("street", 8)
    obj = _SharedGrid(ir.pixels * 2 - 1, vis.pixels * 2 - 1, DEFAULT)
    # central differences are only meaningful away from the smoothed-L1 kink,
    # so take the first seed whose fused differences all clear it
    for seed in range(100):
        net = siren_init(SirenConfig(hidden_width=8, num_layers=3, seed=seed))
        d = spatial_gradient(render(net, obj.grid))
        if min(np.abs(d.dx[:, :-1]).min(), np.abs(d.dy[:-1]).min()) > 1e-3:
            break

    def loss_and_grad(_):
        terms, grads = obj(net)
        return _breakdown(terms, DEFAULT.lam).total, grads

    start = time.perf_counter()
    err = grad_check(loss_and_grad, net.parameters(), h=1e-5)
    elapsed = time.perf_counter() - start
    ok = record(1, err < 1e-4 and elapsed < 30, f"seed {seed}: max rel err {err:.2e} (< 1e-4), {elapsed:.1f}s (< 30s)")
    assert ok


# 2 -----------------------------------------------------------------------------

def test_criterion_2_fitting_capacity(record):
    _, img = bundled_pair("street", 128)
    _, fitted, history = fit_image(img, SirenConfig(), steps=2000, lr=1e-3)
    value = psnr(raw01(fitted), img.pixels)
    ok = record(2, value >= 30, f"128x128 fit PSNR {value:.2f} dB (>= 30), final MSE {history[-1]:.3g}")
    assert ok


# 3 -----------------------------------------------------------------------------

@pytest.mark.parametrize("lam,threshold", [(0.0, 35.0), (1.0, 25.0)])
def test_criterion_3_self_fusion(record, lam, threshold):
    _, img = bundled_pair("street")
    res = fuse(img, img, SirenConfig(), FusionConfig(lam=lam))
    value = psnr(raw01(res.fused), img.pixels)
    ok = record(3, value >= threshold, f"lambda={lam:g}: PSNR {value:.2f} dB (>= {threshold:g})")
    assert ok


# 4 -----------------------------------------------------------------------------

def window_violation(steps, totals, window=200):
    """Largest relative rise of the loss over any earlier point at most ``window`` steps back."""
    worst = 0.0
    for i, (s, v) in enumerate(zip(steps, totals)):
        for j in range(i + 1, len(steps)):
            if steps[j] - s > window:
                break
            worst = max(worst, totals[j] / v - 1.0)
    return worst


@pytest.mark.parametrize("name", PAIRS)
def test_criterion_4_convergence(record, pair_runs, name):
    res = pair_runs[name]
    totals, steps = res.totals(), res.steps()
    assert steps[-1] == 2000
    ratio = totals[-1] / totals[0]
    rise = window_violation(steps, totals)
    ok_ratio = record(4, ratio < 0.1, f"{name}: loss {totals[0]:.4f} -> {totals[-1]:.4f}, ratio {ratio:.3f} (< 0.1)")
    ok_window = record(4, rise <= 0.05, f"{name}: worst rise within 200 steps {100 * rise:.2f}% (<= 5%)")
    assert ok_ratio and ok_window


# 5 -----------------------------------------------------------------------------

def test_criterion_5_metric_identities(record):
    rng = np.random.default_rng(5)
    x = smooth_random(50)
    a, b = smooth_random(51), smooth_random(52)
    levels = np.repeat(np.arange(256) / 255.0, 16).reshape(64, 64)
    checks = {
        "entropy(constant)=0": entropy(np.full((64, 64), 0.3)) == 0.0,
        "entropy(uniform 256)=8": abs(entropy(levels) - 8.0) <= 1e-9,
        "cc(x,x)=1": abs(corr_coeff(x, x) - 1.0) <= 1e-12,
        "ms_ssim(x,x)=1": abs(ms_ssim(x, x) - 1.0) <= 1e-9,
        "vif(x,x)=1": abs(vif(x, x) - 1.0) <= 1e-6,
        "scd(a+b,a,b)=2": abs(scd(a + b, a, b) - 2.0) <= 1e-9,
    }
    u, v = rng.uniform(size=(64, 64)), rng.uniform(size=(64, 64))
    oracle = {
        "std": abs(std_dev(u) - oracle_std(u)),
        "cc": abs(corr_coeff(u, v) - oracle_corr(u, v)),
        "scd": abs(scd(u, a, v) - (oracle_corr(u - v, a) + oracle_corr(u - a, v))),
        "ms_ssim": abs(ms_ssim(u, v) - oracle_ms_ssim(u, v)),
        "vif": abs(vif(u, v) - oracle_vif(u, v)),
    }
    failed = [k for k, ok in checks.items() if not ok] + [k for k, d in oracle.items() if d > 1e-8]
    worst = max(oracle.values())
    ok = record(5, not failed, f"{len(checks)} identities, {len(oracle)} oracle checks, worst oracle gap {worst:.1e}"
                + (f", failed: {failed}" if failed else ""))
    assert ok


# 6 -----------------------------------------------------------------------------

@pytest.mark.parametrize("name", PAIRS)
def test_criterion_6_trend_over_average(record, pair_runs, name):
    ir, vis = bundled_pair(name)
    fused = evaluate(quantized(pair_runs[name].fused), ir, vis)
    avg = evaluate(np.floor((ir.pixels + vis.pixels) / 2 * 255 + 0.5) / 255, ir, vis)
    ok_en = record(6, fused.en > avg.en, f"{name}: EN {fused.en:.4f} vs average {avg.en:.4f}")
    ok_scd = record(6, fused.scd > avg.scd, f"{name}: SCD {fused.scd:.4f} vs average {avg.scd:.4f}")
    assert ok_en and ok_scd


# 7 -----------------------------------------------------------------------------

def test_criterion_7_multires(record):
    ir, vis = bundled_pair("street", 64, 128)
    assert (ir.shape, vis.shape) == ((64, 64), (128, 128))
    res = fuse_multires(ir, vis, SirenConfig(), DEFAULT)
    ok_shape = record(7, res.fused.shape == (128, 128), f"output {res.fused.width}x{res.fused.height} (128x128)")
    down = bilinear_resample(raw01(res.fused), 64, 64)
    cc = corr_coeff(down, ir.pixels)
    ok_cc = record(7, cc > 0.5, f"CC(downsampled fused, IR) {cc:.4f} (> 0.5)")
    assert ok_shape and ok_cc


def test_criterion_7_equal_resolution(record, pair_runs):
    ir, vis = bundled_pair("street")
    a = pair_runs["street"].loss_history[-1].total
    b = fuse_multires(ir, vis, SirenConfig(), DEFAULT).loss_history[-1].total
    rel = abs(a - b) / abs(a)
    ok = record(7, rel <= 1e-9, f"equal sizes: final loss {b:.6g} vs fuse {a:.6g}, rel diff {rel:.1e} (<= 1e-9)")
    assert ok


# 8 -----------------------------------------------------------------------------

def test_criterion_8_superres(record, pair_runs):
    net = pair_runs["street"].network
    sizes = {s: superres_query(net, 64, 64, s).shape for s in (1.2, 2.1, 3.0)}
    ok_sizes = record(8, sizes == {1.2: (77, 77), 2.1: (134, 134), 3.0: (192, 192)},
                      "scales " + ", ".join(f"x{s:g} -> {h}x{w}" for s, (h, w) in sizes.items()))
    base = raw01(superres_query(net, 64, 64, 1.0))
    down = bilinear_resample(raw01(superres_query(net, 64, 64, 2.0)), 64, 64)
    value = psnr(down, base)
    ok_psnr = record(8, value >= 30, f"x2 render downsampled vs base PSNR {value:.2f} dB (>= 30)")
    assert ok_sizes and ok_psnr


# 9 -----------------------------------------------------------------------------

def test_criterion_9_determinism(record, pair_runs):
    first = pair_runs["street"]
    again = fuse(*bundled_pair("street"), SirenConfig(), DEFAULT)
    same_img = encode_image(denormalize(first.fused), ".png") == encode_image(denormalize(again.fused), ".png")
    same_csv = loss_history_csv(first.loss_history) == loss_history_csv(again.loss_history)
    ok = record(9, same_img and same_csv, f"fused PNG identical: {same_img}, loss CSV identical: {same_csv}")
    assert ok

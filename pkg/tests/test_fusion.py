import numpy as np
import pytest

from inrfuse.errors import ConfigError, NumericError, ShapeError, UsageError
from inrfuse.fusion import (
    FusionConfig,
    LOSS_COLUMNS,
    _DualGrid,
    _SharedGrid,
    _breakdown,
    compute_loss,
    fuse,
    fuse_multires,
    loss_history_csv,
    psnr,
    render,
    superres_query,
)
from inrfuse.imaging import GrayImage, NORM11, make_coord_grid, spatial_gradient
from inrfuse.nn import grad_check
from inrfuse.samples import bundled_pair, render_scene
from inrfuse.siren import SirenConfig, SirenNetwork, siren_init

TINY = SirenConfig(hidden_width=8, num_layers=3, seed=1)


def oracle_loss(f, a, b, lam, eps):
    """Direct evaluation of the objective with explicit loops over difference pairs."""
    h, w = f.shape
    n = h * w
    pix_a = sum((a[i, j] - f[i, j]) ** 2 for i in range(h) for j in range(w)) / n
    pix_b = sum((b[i, j] - f[i, j]) ** 2 for i in range(h) for j in range(w)) / n

    def diffs(u):
        out = []
        for i in range(h):
            for j in range(w):
                out.append(u[i, j + 1] - u[i, j] if j + 1 < w else 0.0)
                out.append(u[i + 1, j] - u[i, j] if i + 1 < h else 0.0)
        return np.array(out)

    df, da, db = diffs(f), diffs(a), diffs(b)
    grad_a = np.mean((da - df) ** 2)
    grad_b = np.mean((db - df) ** 2)
    tv = np.mean(np.sqrt(df**2 + eps**2))
    return pix_a + pix_b + grad_a + grad_b + lam * tv


def random_triple(seed, size=8):
    rng = np.random.default_rng(seed)
    return tuple(rng.uniform(-1, 1, size=(size, size)) for _ in range(3))


class TestComputeLoss:
    def test_perfect_fit(self):
        c = np.full((6, 6), 0.3)
        b, g = compute_loss(c, c, c, lam=1.0, tv_epsilon=1e-6)
        assert b.pixel_ir == b.pixel_vis == b.grad_ir == b.grad_vis == 0.0
        assert b.tv == pytest.approx(1e-6, rel=1e-12)
        assert not g.any()

    def test_constants(self):
        f, a = np.full((5, 4), 0.7), np.full((5, 4), -0.2)
        b, _ = compute_loss(f, a, a, lam=1.0)
        assert b.pixel_ir == pytest.approx(0.81, abs=1e-15)
        assert b.pixel_vis == pytest.approx(0.81, abs=1e-15)
        assert b.grad_ir == b.grad_vis == 0.0
        assert b.tv == pytest.approx(1e-6, rel=1e-12)

    @pytest.mark.parametrize("lam", [0.0, 1.0, 2.5])
    def test_total_is_weighted_sum(self, lam):
        f, a, b = random_triple(0)
        br, _ = compute_loss(f, a, b, lam=lam)
        assert abs(br.total - (br.pixel_ir + br.pixel_vis + br.grad_ir + br.grad_vis + lam * br.tv)) <= 1e-12

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_loop_oracle(self, seed):
        f, a, b = random_triple(seed)
        br, _ = compute_loss(f, a, b, lam=1.3, tv_epsilon=1e-3)
        assert br.total == pytest.approx(oracle_loss(f, a, b, 1.3, 1e-3), abs=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_derivative_matches_finite_differences(self, seed):
        f, a, b = random_triple(seed)
        _, g = compute_loss(f, a, b)

        def loss_and_grad(ps):
            br, gg = compute_loss(ps[0], a, b)
            return br.total, [gg]

        assert grad_check(loss_and_grad, [f.copy()], h=1e-6) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            compute_loss(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 5)))


def fusion_objective_instance(seed, scene="street", tv_epsilon=1e-6):
    ir, vis = render_scene(scene, 8)
    obj = _SharedGrid(ir.pixels * 2 - 1, vis.pixels * 2 - 1, FusionConfig(tv_epsilon=tv_epsilon))
    net = siren_init(SirenConfig(hidden_width=8, num_layers=3, seed=seed))
    return obj, net


def min_interior_gradient(net, obj):
    f = render(net, obj.grid)
    d = spatial_gradient(f)
    return min(np.abs(d.dx[:, :-1]).min(), np.abs(d.dy[:-1]).min())


class TestEndToEndGradient:
    @pytest.mark.parametrize("tv_epsilon", [1e-6, 1e-2])
    @pytest.mark.parametrize("scene", ["street", "field"])
    @pytest.mark.parametrize("seed", range(12))
    def test_parameter_gradient(self, scene, seed, tv_epsilon):
        obj, net = fusion_objective_instance(seed, scene, tv_epsilon)
        # with a sharp smoothed-L1 kink, central differences straddle it when a fused difference is near zero
        if tv_epsilon < 1e-3 and min_interior_gradient(net, obj) < 1e-3:
            pytest.skip("instance lies in the finite-difference-invalid region of the TV term")

        def loss_and_grad(_):
            terms, grads = obj(net)
            return _breakdown(terms, 1.0).total, grads

        assert grad_check(loss_and_grad, net.parameters(), h=1e-5) < 1e-4

    def test_dual_grid_gradient(self):
        ir, _ = render_scene("street", 6)
        _, vis = render_scene("street", 9)
        obj = _DualGrid(ir.pixels * 2 - 1, vis.pixels * 2 - 1, FusionConfig())
        net = siren_init(SirenConfig(hidden_width=6, num_layers=3, seed=3))

        def loss_and_grad(_):
            terms, grads = obj(net)
            return _breakdown(terms, 1.0).total, grads

        assert grad_check(loss_and_grad, net.parameters(), h=1e-6) < 1e-4

    def test_dual_grid_on_equal_sizes_matches_shared(self):
        ir, vis = render_scene("field", 8)
        a, b = ir.pixels * 2 - 1, vis.pixels * 2 - 1
        net = siren_init(SirenConfig(hidden_width=8, num_layers=3, seed=0))
        t1, g1 = _SharedGrid(a, b, FusionConfig())(net)
        t2, g2 = _DualGrid(a, b, FusionConfig())(net)
        assert _breakdown(t1, 1.0).total == pytest.approx(_breakdown(t2, 1.0).total, rel=1e-14)
        for x, y in zip(g1, g2):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-15)


class TestRender:
    def test_zero_network(self):
        net = SirenNetwork.zeros(SirenConfig(hidden_width=4, num_layers=3))
        assert not render(net, make_coord_grid(5, 4)).any()

    def test_pixel_order_and_shape(self):
        net = siren_init(TINY)
        grid = make_coord_grid(5, 3)
        img = render(net, grid)
        assert img.shape == (3, 5)
        np.testing.assert_array_equal(img.ravel(), net(grid.coords)[0])

    def test_deterministic(self):
        net = siren_init(TINY)
        grid = make_coord_grid(6, 6)
        assert render(net, grid).tobytes() == render(net, grid).tobytes()

    def test_wrong_io_dims(self):
        net = siren_init(SirenConfig(in_dim=3, hidden_width=4, num_layers=2))
        with pytest.raises(ShapeError):
            render(net, make_coord_grid(2, 2))


class TestSuperres:
    def test_unit_scale_equals_base_render(self):
        net = siren_init(TINY)
        img = superres_query(net, 7, 5, 1.0)
        np.testing.assert_array_equal(img.pixels, np.clip(render(net, make_coord_grid(7, 5)), -1, 1))

    @pytest.mark.parametrize("scale,size", [(2.0, (128, 128)), (1.2, (77, 77)), (2.1, (134, 134)), (3.0, (192, 192))])
    def test_dimension_rule(self, scale, size):
        img = superres_query(siren_init(TINY), 64, 64, scale)
        assert img.shape == size and img.domain == NORM11

    @pytest.mark.parametrize("scale", [0.0, -1.0, 0.001])
    def test_invalid_scale(self, scale):
        with pytest.raises(UsageError):
            superres_query(siren_init(TINY), 64, 64, scale)


class TestFuseLoop:
    def test_config_validation(self):
        with pytest.raises(ConfigError):
            fuse(*render_scene("street", 8), TINY, FusionConfig(steps=0))
        with pytest.raises(ConfigError):
            FusionConfig(lam=-1).validate()

    def test_degenerate_image(self):
        one = GrayImage(np.array([[0.5]]))
        with pytest.raises(UsageError):
            fuse(one, one, TINY, FusionConfig(steps=1))

    def test_history_and_shapes(self):
        ir, vis = render_scene("street", 12)
        res = fuse(ir, vis, TINY, FusionConfig(steps=25, log_every=10))
        assert [b.step for b in res.loss_history] == [0, 10, 20, 25]
        assert res.fused.shape == (12, 12)
        for b in res.loss_history:
            assert abs(b.total - (b.pixel_ir + b.pixel_vis + b.grad_ir + b.grad_vis + b.tv)) <= 1e-12
        assert res.loss_history[-1].total < res.loss_history[0].total

    def test_deterministic(self):
        ir, vis = render_scene("field", 10)
        cfg = FusionConfig(steps=15, log_every=1)
        a = fuse(ir, vis, TINY, cfg)
        b = fuse(ir, vis, TINY, cfg)
        assert loss_history_csv(a.loss_history) == loss_history_csv(b.loss_history)
        assert a.fused == b.fused

    def test_multires_output_grid(self):
        ir, _ = render_scene("street", 10)
        _, vis = render_scene("street", 16)
        res = fuse_multires(ir, vis, TINY, FusionConfig(steps=5))
        assert res.fused.shape == (16, 16)
        res = fuse_multires(vis, ir, TINY, FusionConfig(steps=5))
        assert res.fused.shape == (16, 16)

    def test_multires_equal_sizes_matches_fuse(self):
        ir, vis = render_scene("street", 10)
        cfg = FusionConfig(steps=20)
        a, b = fuse(ir, vis, TINY, cfg), fuse_multires(ir, vis, TINY, cfg)
        assert a.loss_history[-1].total == pytest.approx(b.loss_history[-1].total, rel=1e-9)

    def test_nonfinite_loss_reports_step(self, monkeypatch):
        import inrfuse.fusion as fusion_mod

        calls = {"n": 0}
        real = fusion_mod._partial_loss

        def flaky(*args, **kwargs):
            calls["n"] += 1
            terms, g = real(*args, **kwargs)
            if calls["n"] == 4:
                terms["pixel_ir"] = float("nan")
            return terms, g

        monkeypatch.setattr(fusion_mod, "_partial_loss", flaky)
        with pytest.raises(NumericError, match="step 3"):
            fuse(*render_scene("street", 8), TINY, FusionConfig(steps=10))

    def test_loss_csv_layout(self):
        res = fuse(*render_scene("street", 8), TINY, FusionConfig(steps=3, log_every=1))
        lines = loss_history_csv(res.loss_history).splitlines()
        assert lines[0] == ",".join(LOSS_COLUMNS)
        assert len(lines) == 5
        assert [int(l.split(",")[0]) for l in lines[1:]] == [0, 1, 2, 3]


def test_bundled_pairs_available():
    for name in ("street", "field"):
        ir, vis = bundled_pair(name)
        assert ir.shape == vis.shape == (64, 64)
        assert bundled_pair(name, 64, 128)[1].shape == (128, 128)


def test_psnr():
    a = np.zeros((4, 4))
    assert psnr(a, a) == float("inf")
    assert psnr(a, a + 0.1) == pytest.approx(20.0)

import numpy as np
import pytest

from headplan.tinynet import (
    ConvLayer,
    DilatedModule,
    Tensor,
    conv_backward,
    conv_forward,
    conv_output_shape,
    gradient_support,
    module_backward,
    module_forward,
    receptive_field_analytic,
    support_bbox_extent,
    support_offsets,
)

from reference_conv import ref_conv2d


def delta_kernel(c=1, k=3):
    w = np.zeros((c, c, k, k))
    for i in range(c):
        w[i, i, k // 2, k // 2] = 1.0
    return w


def fd_loss_grad(loss, arr, eps=1e-5):
    """Central differences, test-local (independent of package gradcheck)."""
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss()
        flat[i] = orig - eps
        down = loss()
        flat[i] = orig
        g.reshape(-1)[i] = (up - down) / (2 * eps)
    return g


def zero_module(c=8):
    q = c // 4
    return DilatedModule(
        ConvLayer(np.zeros((q, c, 3, 3)), dilation=1),
        ConvLayer(np.zeros((q, c, 3, 3)), dilation=4),
        ConvLayer(np.zeros((q, c, 3, 3)), dilation=8),
        ConvLayer(np.zeros((c, 3 * q, 1, 1))),
    )


class TestTensor:
    def test_rank_and_finiteness_enforced(self):
        with pytest.raises(ValueError):
            Tensor(np.zeros((2, 3)))
        bad = np.zeros((1, 1, 2, 2))
        bad[0, 0, 0, 0] = np.inf
        with pytest.raises(ValueError):
            Tensor(bad)

    def test_immutable_after_construction(self):
        t = Tensor(np.ones((1, 1, 2, 2)))
        with pytest.raises(ValueError):
            t.data[0, 0, 0, 0] = 5.0

    def test_construction_copies(self):
        src = np.ones((1, 1, 2, 2))
        t = Tensor(src)
        src[0, 0, 0, 0] = 9.0
        assert t.data[0, 0, 0, 0] == 1.0


class TestConvForward:
    def test_delta_kernel_identity(self):
        layer = ConvLayer(delta_kernel())
        x = Tensor(np.ones((1, 1, 3, 3)))
        assert conv_forward(layer, x).allclose(x)

    def test_zero_weights_annihilate(self):
        layer = ConvLayer(np.zeros((2, 3, 3, 3)))
        x = Tensor.from_rng(np.random.default_rng(0), (1, 3, 5, 5))
        out = conv_forward(layer, x)
        assert np.all(out.data == 0.0)

    def test_dilated_matches_reference_implementation(self):
        rng = np.random.default_rng(12)
        x = rng.uniform(-1, 1, (1, 2, 8, 8))
        w = rng.uniform(-1, 1, (3, 2, 3, 3))
        layer = ConvLayer(w, dilation=2)
        got = conv_forward(layer, Tensor(x)).data
        want = ref_conv2d(x, w, None, 1, 2)
        assert np.allclose(got, want, rtol=1e-12, atol=1e-14)

    def test_random_configs_match_reference(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            c_in, c_out = rng.integers(1, 4, 2)
            k = int(rng.choice([1, 3, 5]))
            s = int(rng.choice([1, 2]))
            d = int(rng.choice([1, 2, 3]))
            bias = bool(rng.integers(0, 2))
            x = rng.uniform(-1, 1, (2, c_in, 7, 7))
            w = rng.uniform(-1, 1, (c_out, c_in, k, k))
            b = rng.uniform(-1, 1, c_out) if bias else None
            layer = ConvLayer(w, b, stride=s, dilation=d)
            got = conv_forward(layer, Tensor(x)).data
            assert np.allclose(got, ref_conv2d(x, w, b, s, d), rtol=1e-12, atol=1e-12)

    def test_stride1_preserves_spatial_size(self):
        rng = np.random.default_rng(14)
        for k, d in [(1, 1), (3, 1), (3, 4), (5, 2), (3, 8)]:
            layer = ConvLayer.random(2, 2, k, rng, dilation=d)
            x = Tensor.from_rng(rng, (1, 2, 20, 20))
            assert conv_forward(layer, x).shape == x.shape

    def test_channel_mismatch_rejected(self):
        layer = ConvLayer(np.zeros((1, 2, 3, 3)))
        with pytest.raises(ValueError, match="channels"):
            conv_forward(layer, Tensor(np.zeros((1, 3, 4, 4))))

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            ConvLayer(np.zeros((1, 1, 4, 4)))


class TestConvBackward:
    def test_zero_grad_out_gives_zero_grads(self):
        rng = np.random.default_rng(15)
        layer = ConvLayer.random(2, 3, 3, rng, bias=True)
        x = Tensor.from_rng(rng, (1, 2, 5, 5))
        gx, gw, gb = conv_backward(layer, x, Tensor.zeros((1, 3, 5, 5)))
        assert np.all(gx.data == 0) and np.all(gw == 0) and np.all(gb == 0)

    def test_pointwise_scalar_chain_rule(self):
        w = np.array([[[[2.0]]]])
        layer = ConvLayer(w)
        x = Tensor(np.full((1, 1, 1, 1), 3.0))
        g = Tensor(np.full((1, 1, 1, 1), 5.0))
        gx, gw, gb = conv_backward(layer, x, g)
        assert gw[0, 0, 0, 0] == pytest.approx(3.0 * 5.0)
        assert gx.data[0, 0, 0, 0] == pytest.approx(2.0 * 5.0)
        assert gb is None

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(16)
        for _ in range(5):
            c_in, c_out = rng.integers(1, 4, 2)
            k = int(rng.choice([1, 3]))
            d = int(rng.choice([1, 2]))
            s = int(rng.choice([1, 2]))
            layer = ConvLayer.random(c_in, c_out, k, rng, stride=s, dilation=d, bias=True)
            x_arr = rng.uniform(-1, 1, (1, c_in, 6, 6))
            gshape = conv_output_shape(layer, x_arr.shape)
            g = rng.uniform(-1, 1, gshape)
            gx, gw, gb = conv_backward(layer, Tensor(x_arr), Tensor(g))

            num_gx = fd_loss_grad(
                lambda: float((conv_forward(layer, Tensor(x_arr)).data * g).sum()), x_arr)
            assert np.allclose(gx.data, num_gx, rtol=1e-6, atol=1e-8)

            w_arr = np.array(layer.weights)
            num_gw = fd_loss_grad(
                lambda: float((conv_forward(
                    ConvLayer(w_arr, layer.bias, s, d), Tensor(x_arr)).data * g).sum()),
                w_arr)
            assert np.allclose(gw, num_gw, rtol=1e-6, atol=1e-8)

            b_arr = np.array(layer.bias)
            num_gb = fd_loss_grad(
                lambda: float((conv_forward(
                    ConvLayer(layer.weights, b_arr, s, d), Tensor(x_arr)).data * g).sum()),
                b_arr)
            assert np.allclose(gb, num_gb, rtol=1e-6, atol=1e-8)

    def test_shape_mismatch_rejected(self):
        layer = ConvLayer(np.zeros((1, 1, 3, 3)))
        x = Tensor.zeros((1, 1, 4, 4))
        with pytest.raises(ValueError, match="grad_out"):
            conv_backward(layer, x, Tensor.zeros((1, 1, 5, 5)))


class TestDilatedModule:
    def test_zero_weights_reduce_to_shortcut(self):
        m = zero_module()
        x = Tensor.from_rng(np.random.default_rng(17), (1, 8, 12, 12))
        assert module_forward(m, x).allclose(x)

    def test_shape_preserved(self):
        rng = np.random.default_rng(18)
        m = DilatedModule.random(8, rng)
        for hw in ((9, 9), (17, 23), (32, 32)):
            x = Tensor.from_rng(rng, (2, 8) + hw)
            assert module_forward(m, x).shape == x.shape

    def test_matches_manual_composition(self):
        rng = np.random.default_rng(19)
        m = DilatedModule.random(8, rng)
        x = Tensor.from_rng(rng, (1, 8, 32, 32))
        got = module_forward(m, x)
        parts = [conv_forward(br, x).data for br in m.branches]
        fused = conv_forward(m.fuse, Tensor(np.concatenate(parts, axis=1)))
        assert got.allclose(Tensor(x.data + fused.data))

    def test_channel_divisibility_enforced(self):
        with pytest.raises(ValueError):
            DilatedModule.random(30, np.random.default_rng(0))

    def test_param_budget(self):
        rng = np.random.default_rng(20)
        assert DilatedModule.random(32, rng).n_params <= 20_000
        assert DilatedModule.random(64, rng).n_params <= 40_000

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        m = DilatedModule.random(4, rng)
        x_arr = rng.uniform(-1, 1, (1, 4, 9, 9))
        g = rng.uniform(-1, 1, x_arr.shape)
        gx, grads = module_backward(m, Tensor(x_arr), Tensor(g))
        num_gx = fd_loss_grad(
            lambda: float((module_forward(m, Tensor(x_arr)).data * g).sum()), x_arr)
        assert np.allclose(gx.data, num_gx, rtol=1e-6, atol=1e-8)


class TestReceptiveField:
    def test_single_layers(self):
        assert receptive_field_analytic(ConvLayer(np.zeros((1, 1, 3, 3)))) == 3
        assert receptive_field_analytic(
            ConvLayer(np.zeros((1, 1, 3, 3)), dilation=8)) == 17

    def test_chain_recurrence(self):
        chain = [ConvLayer(np.zeros((1, 1, 3, 3))),
                 ConvLayer(np.zeros((1, 1, 3, 3)), dilation=4)]
        assert receptive_field_analytic(chain) == 3 + 8
        strided = [ConvLayer(np.zeros((1, 1, 3, 3)), stride=2),
                   ConvLayer(np.zeros((1, 1, 3, 3)))]
        assert receptive_field_analytic(strided) == 3 + 2 * 2

    def test_module_extent_is_max_branch(self):
        m = DilatedModule.random(8, np.random.default_rng(22))
        assert receptive_field_analytic(m) == 17

    def test_empty_chain_rejected(self):
        with pytest.raises(ValueError):
            receptive_field_analytic([])


class TestGradientSupport:
    def test_single_dilated_branch_taps(self):
        rng = np.random.default_rng(23)
        layer = ConvLayer.random(1, 1, 3, rng, dilation=8, positive=True)
        mask = gradient_support(layer, (24, 24), (12, 12))
        offs = support_offsets(mask, (12, 12))
        assert offs == {(dy, dx) for dy in (-8, 0, 8) for dx in (-8, 0, 8)}

    def test_identity_map_single_position(self):
        layer = ConvLayer(delta_kernel(k=1))
        mask = gradient_support(layer, (5, 5), (2, 2))
        assert mask.sum() == 1 and mask[2, 2]

    def test_shortcut_only_module_single_position(self):
        # zero-weight branches leave exactly the identity path
        mask = gradient_support(zero_module(8), (24, 24), (12, 12))
        assert mask.sum() == 1 and mask[12, 12]

    def test_module_support_is_offset_union(self):
        rng = np.random.default_rng(24)
        m = DilatedModule.random(8, rng, positive=True)
        mask = gradient_support(m, (24, 24), (12, 12))
        offs = support_offsets(mask, (12, 12))
        expected = {(0, 0)}
        for step in (1, 4, 8):
            expected |= {(dy, dx) for dy in (-step, 0, step) for dx in (-step, 0, step)}
        assert offs == expected
        assert len(offs) == 25

    def test_support_bbox_equals_analytic_rf(self):
        rng = np.random.default_rng(25)
        cases = [
            ConvLayer.random(1, 2, 3, rng, positive=True),
            ConvLayer.random(1, 1, 3, rng, dilation=8, positive=True),
            [ConvLayer.random(1, 2, 3, rng, positive=True),
             ConvLayer.random(2, 1, 3, rng, dilation=4, positive=True)],
            DilatedModule.random(8, rng, positive=True),
        ]
        for net in cases:
            rf = receptive_field_analytic(net)
            size = rf + 5
            c = size // 2
            mask = gradient_support(net, (size, size), (c, c))
            assert support_bbox_extent(mask) == (rf, rf)

    def test_border_crossing_rejected(self):
        m = DilatedModule.random(8, np.random.default_rng(26), positive=True)
        with pytest.raises(ValueError, match="border"):
            gradient_support(m, (20, 20), (3, 3))

    def test_strided_chain_rejected(self):
        layer = ConvLayer(np.ones((1, 1, 3, 3)), stride=2)
        with pytest.raises(ValueError, match="stride-1"):
            gradient_support(layer, (10, 10), (5, 5))

    def test_deterministic_given_seed(self):
        masks = []
        for _ in range(2):
            m = DilatedModule.random(8, np.random.default_rng(27), positive=True)
            masks.append(gradient_support(m, (24, 24), (12, 12)))
        assert np.array_equal(masks[0], masks[1])

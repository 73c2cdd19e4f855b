import numpy as np
import pytest

from bimamba import autodiff as ad
from bimamba.errors import ShapeError


def check_op(build, params, tol=1e-6, num_coords=200, seed=0):
    err = ad.finite_diff_check(build, params, eps=1e-4, num_coords=num_coords, seed=seed)
    assert err < tol, f"finite-difference mismatch: {err}"


class TestBackwardBasics:
    def test_sum_gradient_is_ones(self):
        x = ad.Variable(np.arange(6.0).reshape(2, 3))
        with ad.Tape() as tape:
            loss = ad.sum_all(x)
        tape.backward(loss)
        assert np.array_equal(x.grad, np.ones((2, 3)))

    def test_quadratic_gradient_exact(self):
        x = ad.Variable(np.array([3.0, -1.0, 2.0]))
        with ad.Tape() as tape:
            loss = ad.sum_all(ad.mul(x, x))
        tape.backward(loss)
        assert np.array_equal(x.grad, 2.0 * x.value)

    def test_unreached_variable_gets_zero_grad(self):
        x = ad.Variable(np.ones(3))
        z = ad.Variable(np.ones(3))
        with ad.Tape() as tape:
            _dead = ad.mul(z, z)
            loss = ad.sum_all(x)
        tape.backward(loss)
        assert np.array_equal(z.grad, np.zeros(3))

    def test_reuse_accumulates(self):
        x = ad.Variable(np.array([2.0]))
        with ad.Tape() as tape:
            loss = ad.sum_all(ad.add(ad.mul(x, x), x))  # x^2 + x
        tape.backward(loss)
        assert np.allclose(x.grad, 2.0 * x.value + 1.0, atol=1e-15)

    def test_requires_scalar_loss(self):
        x = ad.Variable(np.ones(3))
        with ad.Tape() as tape:
            y = ad.mul(x, x)
        with pytest.raises(ShapeError):
            tape.backward(y)

    def test_replay_is_bit_exact(self):
        rng = np.random.default_rng(0)
        x = ad.Variable(rng.standard_normal((2, 5, 4)))
        w = ad.Variable(rng.standard_normal((4, 4)))
        with ad.Tape() as tape:
            h = ad.silu(ad.matmul(x, w))
            h = ad.layer_norm(h, ad.Variable(np.ones(4)), ad.Variable(np.zeros(4)))
            ad.sum_all(h)
        assert tape.replay_max_abs_diff() == 0.0

    def test_no_tape_records_nothing(self):
        x = ad.Variable(np.ones(3))
        y = ad.mul(x, x)
        assert isinstance(y, ad.Variable)
        with ad.Tape() as tape:
            pass
        assert tape.nodes == []


class TestPrimitiveGradients:
    def test_matmul(self):
        rng = np.random.default_rng(1)
        a = ad.Variable(rng.standard_normal((6, 7)))
        b = ad.Variable(rng.standard_normal((7, 5)))
        check_op(lambda: ad.sum_all(ad.silu(ad.matmul(a, b))), {"a": a, "b": b}, tol=1e-7)

    def test_matmul_batched(self):
        rng = np.random.default_rng(2)
        a = ad.Variable(rng.standard_normal((3, 4, 5)))
        b = ad.Variable(rng.standard_normal((3, 5, 2)))
        check_op(lambda: ad.sum_all(ad.mul(ad.matmul(a, b), ad.matmul(a, b))),
                 {"a": a, "b": b}, tol=1e-7)

    def test_elementwise_chain(self):
        rng = np.random.default_rng(3)
        x = ad.Variable(rng.standard_normal((8, 30)))
        check_op(lambda: ad.sum_all(ad.softplus(ad.softplus(x))), {"x": x}, tol=1e-6)
        check_op(lambda: ad.sum_all(ad.sigmoid(ad.scale(x, 1.7))), {"x": x}, tol=1e-7)
        check_op(lambda: ad.mean_all(ad.exp(ad.neg(ad.mul(x, x)))), {"x": x}, tol=1e-7)

    def test_relu_away_from_kink(self):
        rng = np.random.default_rng(4)
        vals = rng.standard_normal((10, 25))
        vals[np.abs(vals) < 0.05] += 0.1
        x = ad.Variable(vals)
        check_op(lambda: ad.sum_all(ad.relu(x)), {"x": x}, tol=1e-8)

    def test_add_sub_broadcast(self):
        rng = np.random.default_rng(5)
        x = ad.Variable(rng.standard_normal((4, 6, 8)))
        b = ad.Variable(rng.standard_normal((8,)))
        check_op(lambda: ad.sum_all(ad.mul(ad.add(x, b), ad.sub(x, b))),
                 {"x": x, "b": b}, tol=1e-7)

    def test_conv_causal(self):
        rng = np.random.default_rng(6)
        x = ad.Variable(rng.standard_normal((2, 12, 5)))
        w = ad.Variable(rng.standard_normal((5, 4)))
        b = ad.Variable(rng.standard_normal((5,)))
        check_op(
            lambda: ad.sum_all(ad.silu(ad.depthwise_conv1d(x, w, b, causal=True))),
            {"x": x, "w": w, "b": b},
            tol=1e-7,
        )

    def test_conv_noncausal(self):
        rng = np.random.default_rng(7)
        x = ad.Variable(rng.standard_normal((2, 10, 4)))
        w = ad.Variable(rng.standard_normal((4, 3)))
        check_op(
            lambda: ad.mean_all(ad.mul(ad.depthwise_conv1d(x, w, None, causal=False), x)),
            {"x": x, "w": w},
            tol=1e-7,
        )

    def test_layer_norm(self):
        rng = np.random.default_rng(8)
        x = ad.Variable(rng.standard_normal((3, 7, 10)))
        g = ad.Variable(rng.standard_normal((10,)))
        b = ad.Variable(rng.standard_normal((10,)))
        check_op(
            lambda: ad.sum_all(ad.silu(ad.layer_norm(x, g, b))),
            {"x": x, "g": g, "b": b},
            tol=1e-6,
        )

    def test_rms_norm(self):
        rng = np.random.default_rng(9)
        x = ad.Variable(rng.standard_normal((3, 7, 10)))
        g = ad.Variable(rng.standard_normal((10,)))
        check_op(
            lambda: ad.sum_all(ad.silu(ad.rms_norm(x, g))), {"x": x, "g": g}, tol=1e-6
        )

    def test_softmax(self):
        rng = np.random.default_rng(10)
        x = ad.Variable(rng.standard_normal((5, 9, 9)))
        w = ad.Variable(rng.standard_normal((9,)))
        check_op(
            lambda: ad.sum_all(ad.mul(ad.softmax(x), ad.mul(w, w))),
            {"x": x, "w": w},
            tol=1e-6,
        )

    def test_reverse_reshape_transpose_concat_slice(self):
        rng = np.random.default_rng(11)
        x = ad.Variable(rng.standard_normal((2, 6, 4)))
        y = ad.Variable(rng.standard_normal((2, 6, 4)))

        def build():
            r = ad.reverse_time(x)
            t = ad.transpose(y, (0, 2, 1))
            t = ad.transpose(t, (0, 2, 1))
            c = ad.concat([r, t], axis=2)
            s = ad.slice_last(c, 2, 7)
            return ad.mean_all(ad.mul(s, s))

        check_op(build, {"x": x, "y": y}, tol=1e-7)

    def test_glu(self):
        rng = np.random.default_rng(12)
        x = ad.Variable(rng.standard_normal((3, 5, 12)))
        check_op(lambda: ad.sum_all(ad.glu(x)), {"x": x}, tol=1e-7)

    def test_mean_axis(self):
        rng = np.random.default_rng(13)
        x = ad.Variable(rng.standard_normal((4, 7, 9)))
        check_op(lambda: ad.sum_all(ad.mul(ad.mean_axis(x, 1), 2.0)), {"x": x}, tol=1e-8)

    def test_power_compress(self):
        rng = np.random.default_rng(14)
        x = ad.Variable(rng.uniform(0.05, 2.0, (6, 40)))
        check_op(lambda: ad.sum_all(ad.power_compress(x, 0.3)), {"x": x}, tol=1e-6)

    def test_softmax_cross_entropy(self):
        rng = np.random.default_rng(15)
        logits = ad.Variable(rng.standard_normal((50, 4)))
        onehot = np.eye(4)[rng.integers(0, 4, 50)]
        check_op(lambda: ad.softmax_cross_entropy(logits, onehot), {"l": logits}, tol=1e-7)

    def test_dropout_mask_scaling(self):
        x = ad.Variable(np.ones((4, 100)))
        rng = np.random.default_rng(16)
        with ad.Tape() as tape:
            y = ad.dropout(x, 0.25, rng)
            loss = ad.sum_all(y)
        tape.backward(loss)
        kept = y.value != 0
        assert np.allclose(y.value[kept], 1.0 / 0.75, atol=1e-12)
        assert np.array_equal(x.grad != 0, kept)


class TestScanGradients:
    @staticmethod
    def scan_setup(seed=0, b=2, l=12, e=3, n=4):
        rng = np.random.default_rng(seed)
        return {
            "u": ad.Variable(rng.standard_normal((b, l, e))),
            "log_delta": ad.Variable(rng.uniform(-3.0, -0.5, (b, l, e))),
            "a_log": ad.Variable(rng.uniform(-1.0, 1.0, (e, n))),
            "bsel": ad.Variable(rng.standard_normal((b, l, n))),
            "csel": ad.Variable(rng.standard_normal((b, l, n))),
            "d": ad.Variable(rng.standard_normal(e)),
        }

    @staticmethod
    def scan_loss(p, impl, chunk=5):
        delta = ad.exp(p["log_delta"])
        a = ad.neg(ad.exp(p["a_log"]))
        y = ad.selective_scan(p["u"], delta, a, p["bsel"], p["csel"], p["d"],
                              impl=impl, chunk=chunk)
        return ad.sum_all(ad.mul(y, y))

    def test_sequential_finite_diff(self):
        p = self.scan_setup()
        check_op(lambda: self.scan_loss(p, "sequential"), p, tol=1e-5)

    def test_parallel_finite_diff(self):
        p = self.scan_setup(seed=1)
        check_op(lambda: self.scan_loss(p, "parallel"), p, tol=1e-5)

    def test_adjoint_agreement_between_implementations(self):
        p_seq = self.scan_setup(seed=2, l=33)
        p_par = {k: ad.Variable(v.value.copy()) for k, v in p_seq.items()}
        with ad.Tape() as tape:
            loss = self.scan_loss(p_seq, "sequential")
        tape.backward(loss)
        with ad.Tape() as tape:
            loss = self.scan_loss(p_par, "parallel", chunk=7)
        tape.backward(loss)
        for k in p_seq:
            diff = np.max(np.abs(p_seq[k].grad - p_par[k].grad))
            assert diff < 1e-9, f"{k}: {diff}"

    def test_long_sequence_gradient(self):
        p = self.scan_setup(seed=3, b=1, l=32, e=2, n=3)
        check_op(lambda: self.scan_loss(p, "sequential"), p, tol=1e-5, num_coords=150)

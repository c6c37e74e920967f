import numpy as np
import pytest

from hyperpolicy import autodiff as ad
from hyperpolicy.autodiff import AutodiffError, Tensor, backward, grad_check, tape


def rnd(shape, seed=0, lo=-2.0, hi=2.0):
    return np.random.default_rng(seed).uniform(lo, hi, shape)


class TestMatmul:
    def test_identity(self):
        out = ad.matmul(Tensor(np.eye(2)), Tensor(np.array([[3.0], [4.0]])))
        assert np.array_equal(out.data, [[3.0], [4.0]])

    def test_scalar_case(self):
        out = ad.matmul(Tensor([[2.0]]), Tensor([[5.0]]))
        assert out.data[0, 0] == 10.0

    def test_shape_mismatch(self):
        with pytest.raises(AutodiffError):
            ad.matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 2))))

    def test_gradient_vs_finite_differences(self):
        b = Tensor(rnd((4, 2), seed=1))
        err = grad_check(lambda t: ad.tsum(ad.mul(ad.matmul(t, b), ad.matmul(t, b))), Tensor(rnd((3, 4))))
        assert err < 1e-6

    def test_matvec_gradient(self):
        m = Tensor(rnd((3, 5), seed=2))
        err = grad_check(lambda v: ad.tsum(ad.exp(ad.mul(ad.matmul(m, v), 0.3))), Tensor(rnd(5, seed=3)))
        assert err < 1e-6


class TestElementwise:
    def test_relu_values(self):
        assert np.array_equal(ad.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_tanh_zero(self):
        assert ad.tanh(Tensor([0.0])).data[0] == 0.0

    def test_mul_gradient(self):
        other = Tensor(rnd(5, seed=5))
        err = grad_check(lambda t: ad.tsum(ad.mul(ad.mul(t, other), t)), Tensor(rnd(5, seed=4)))
        assert err < 1e-6

    def test_log_domain_error(self):
        with pytest.raises(AutodiffError):
            ad.log(Tensor([1.0, -1.0]))

    def test_incompatible_shapes(self):
        with pytest.raises(AutodiffError):
            ad.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))

    def test_scalar_broadcast(self):
        t = Tensor(np.ones(4), requires_grad=True)
        s = Tensor(2.0, requires_grad=True)
        with tape():
            backward(ad.tsum(ad.mul(t, s)))
        assert np.allclose(t.grad, 2.0)
        assert np.allclose(s.grad, 4.0)

    @pytest.mark.parametrize("op", [ad.tanh, ad.sigmoid, ad.exp, ad.relu])
    def test_unary_gradients(self, op):
        x = rnd(7, seed=11)
        x[np.abs(x) < 1e-2] += 0.05  # keep away from the relu kink
        err = grad_check(lambda t: ad.tsum(ad.mul(op(t), op(t))), Tensor(x))
        assert err < 1e-6


class TestSoftmaxOps:
    def test_uniform_logprob(self):
        out = ad.softmax_logprob(Tensor(np.zeros(4)), 2)
        assert out.item() == pytest.approx(np.log(0.25), abs=1e-12)

    def test_large_logit_stability(self):
        out = ad.softmax_logprob(Tensor([1000.0, 0.0]), 0)
        assert out.item() == pytest.approx(0.0, abs=1e-12)

    def test_action_out_of_range(self):
        with pytest.raises(AutodiffError):
            ad.softmax_logprob(Tensor(np.zeros(3)), 3)

    def test_logprob_gradient(self):
        err = grad_check(lambda t: ad.softmax_logprob(t, 4), Tensor(rnd(6, seed=7)))
        assert err < 1e-6

    def test_batched_logprob_matches_single(self):
        logits = rnd((3, 5), seed=8)
        acts = np.array([0, 3, 4])
        batched = ad.softmax_logprob(Tensor(logits), acts)
        for i in range(3):
            single = ad.softmax_logprob(Tensor(logits[i]), int(acts[i]))
            assert batched.data[i] == pytest.approx(single.item(), abs=1e-14)

    def test_entropy_uniform(self):
        assert ad.softmax_entropy(Tensor(np.zeros(5))).item() == pytest.approx(np.log(5.0), abs=1e-12)

    def test_entropy_gradient(self):
        err = grad_check(lambda t: ad.softmax_entropy(t), Tensor(rnd(6, seed=9)))
        assert err < 1e-6


class TestBackward:
    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        with tape():
            backward(ad.mul(x, x))
        assert x.grad == pytest.approx(6.0)

    def test_onehot_column_selection(self):
        w = Tensor(rnd((4, 3), seed=10), requires_grad=True)
        e = np.zeros(3)
        e[1] = 1.0
        with tape():
            backward(ad.tsum(ad.matmul(w, Tensor(e))))
        expected = np.zeros((4, 3))
        expected[:, 1] = 1.0
        assert np.array_equal(w.grad, expected)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with tape():
            y = ad.mul(x, x)
            with pytest.raises(AutodiffError):
                backward(y)

    def test_repeated_backward_accumulates_exactly(self):
        x = Tensor(rnd(4, seed=12), requires_grad=True)
        with tape():
            loss = ad.tsum(ad.mul(x, x))
            backward(loss)
            once = x.grad.copy()
            backward(loss)
        assert np.array_equal(x.grad, 2.0 * once)

    def test_three_layer_mlp_gradient(self):
        rng = np.random.default_rng(13)
        sizes = [(6, 5), (6,), (4, 6), (4,), (1, 4), (1,)]
        total = sum(int(np.prod(s)) for s in sizes)

        def f(flat):
            x = Tensor(rng_inputs)
            off = 0
            parts = []
            for s in sizes:
                n = int(np.prod(s))
                parts.append(ad.reshape(ad.narrow(flat, 0, off, n), s))
                off += n
            h = ad.tanh(ad.add(ad.matmul(parts[0], x), parts[1]))
            h = ad.tanh(ad.add(ad.matmul(parts[2], h), parts[3]))
            out = ad.add(ad.matmul(parts[4], h), parts[5])
            return ad.tsum(out)

        rng_inputs = rng.uniform(-2, 2, 5)
        err = grad_check(f, Tensor(rng.uniform(-1, 1, total)), h=1e-5)
        assert err < 1e-5

    def test_no_tape_means_no_recording(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = ad.mul(x, x)
        assert y._op is None


class TestGradCheckHarness:
    def test_sum_of_squares_tight(self):
        err = grad_check(lambda t: ad.tsum(ad.mul(t, t)), Tensor(rnd(10, seed=14)))
        assert err < 1e-8

    def test_deep_tanh_mlp(self):
        rng = np.random.default_rng(15)
        mats = [Tensor(rng.standard_normal((8, 8)) * 0.5) for _ in range(4)]

        def f(t):
            h = t
            for m in mats:
                h = ad.tanh(ad.matmul(m, h))
            return ad.tsum(h)

        assert grad_check(f, Tensor(rng.uniform(-2, 2, 8))) < 1e-5

    def test_detects_wrong_backward_rule(self):
        # tanh clone whose derivative drops the square: d/dx -> 1 - tanh(x)
        def bad_tanh(a):
            out_data = np.tanh(a.data)

            def bw(g, getbuf):
                ga = getbuf(a)
                if ga is not None:
                    ga += g * (1.0 - out_data)

            return ad._record(out_data, "bad_tanh", (a,), bw)

        err = grad_check(lambda t: ad.tsum(bad_tanh(t)), Tensor(rnd(6, seed=16)))
        assert err > 1e-2

    def test_rejects_nonscalar(self):
        with pytest.raises(AutodiffError):
            grad_check(lambda t: ad.mul(t, t), Tensor(rnd(3, seed=17)))


class TestShapeOps:
    def test_narrow_concat_roundtrip(self):
        x = Tensor(rnd(9, seed=18), requires_grad=True)
        with tape():
            parts = [ad.narrow(x, 0, i * 3, 3) for i in range(3)]
            back = ad.concat(parts, axis=0)
            backward(ad.tsum(ad.mul(back, back)))
        assert np.allclose(x.grad, 2.0 * x.data)
        assert np.array_equal(back.data, x.data)

    def test_bmm_matches_loop(self):
        a = rnd((4, 3, 2), seed=19)
        b = rnd((4, 2, 5), seed=20)
        out = ad.bmm(Tensor(a), Tensor(b))
        for i in range(4):
            assert np.allclose(out.data[i], a[i] @ b[i])

    def test_bmm_gradient(self):
        b = Tensor(rnd((3, 2, 4), seed=21))

        def f(t):
            prod = ad.bmm(ad.reshape(t, (3, 5, 2)), b)
            return ad.tsum(ad.mul(prod, prod))

        assert grad_check(f, Tensor(rnd(30, seed=22))) < 1e-6

    def test_expand_rows_backward_sums(self):
        x = Tensor(rnd(4, seed=23), requires_grad=True)
        with tape():
            backward(ad.tsum(ad.expand_rows(x, 5)))
        assert np.allclose(x.grad, 5.0)

    def test_mean_axis(self):
        x = Tensor(rnd((3, 4), seed=24), requires_grad=True)
        with tape():
            backward(ad.tsum(ad.tmean(x, axis=0)))
        assert np.allclose(x.grad, 1.0 / 3.0)


class TestInvariants:
    def test_nonfinite_rejected(self):
        with pytest.raises(AutodiffError):
            Tensor([1.0, np.inf])

    def test_deterministic_ops(self):
        a = rnd((6, 6), seed=25)
        one = ad.matmul(Tensor(a), Tensor(a)).data
        two = ad.matmul(Tensor(a), Tensor(a)).data
        assert np.array_equal(one, two)

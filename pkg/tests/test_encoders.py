import numpy as np
import pytest

from hyperpolicy import autodiff as ad
from hyperpolicy.autodiff import Tensor, grad_check
from hyperpolicy.encoders import GruEncoder, encode_onehot, gru_step_input


class TestOneHot:
    def test_basic(self):
        assert np.array_equal(encode_onehot(2, 4), [0.0, 0.0, 1.0, 0.0])

    def test_single(self):
        assert np.array_equal(encode_onehot(0, 1), [1.0])

    def test_sums_to_one(self):
        for n in (1, 3, 24):
            for i in range(n):
                assert encode_onehot(i, n).sum() == 1.0

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            encode_onehot(4, 4)
        with pytest.raises(ValueError):
            encode_onehot(-1, 4)


def make_encoder(seed=0, in_dim=6, hidden=8, e_dim=4, scale=0.4):
    rng = np.random.default_rng(seed)

    def leaf(shape):
        return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)

    return GruEncoder(
        w_x=leaf((3 * hidden, in_dim)),
        w_h=leaf((3 * hidden, hidden)),
        b=leaf((3 * hidden,)),
        proj_w=leaf((e_dim, hidden)),
        proj_b=leaf((e_dim,)),
    )


class TestGruEncoder:
    def test_empty_prefix_gives_initial_projection(self):
        enc = make_encoder()
        e = enc.encode([])
        expected = enc.proj_w.data @ np.zeros(enc.hidden_dim) + enc.proj_b.data
        assert np.array_equal(e.data, expected)

    def test_zero_recurrent_weights_constant_embedding(self):
        enc = make_encoder(seed=1)
        enc.w_x = Tensor(np.zeros_like(enc.w_x.data))
        enc.w_h = Tensor(np.zeros_like(enc.w_h.data))
        enc.b = Tensor(np.zeros_like(enc.b.data))
        rng = np.random.default_rng(2)
        prev = None
        h = enc.initial_hidden(None)
        for _ in range(5):
            h = enc.step(Tensor(rng.standard_normal(6)), h)
            e = enc.project(h).data
            if prev is not None:
                assert np.array_equal(e, prev)
            prev = e

    def test_deterministic(self):
        enc = make_encoder(seed=3)
        rng = np.random.default_rng(4)
        prefix = [rng.standard_normal(6) for _ in range(7)]
        a = enc.encode(prefix).data
        b = enc.encode([p.copy() for p in prefix]).data
        assert np.array_equal(a, b)

    def test_batched_matches_single(self):
        enc = make_encoder(seed=5)
        rng = np.random.default_rng(6)
        xs = rng.standard_normal((3, 2, 6))  # (T, B, in)
        h_b = enc.initial_hidden(2)
        for t in range(3):
            h_b = enc.step(Tensor(xs[t]), h_b)
        e_b = enc.project(h_b).data
        for b in range(2):
            h = enc.initial_hidden(None)
            for t in range(3):
                h = enc.step(Tensor(xs[t, b]), h)
            assert np.allclose(e_b[b], enc.project(h).data, atol=1e-12)

    def test_gradient_through_ten_steps(self):
        enc = make_encoder(seed=7, in_dim=3, hidden=5, e_dim=2)
        rng = np.random.default_rng(8)
        xs = rng.standard_normal((10, 3))
        shapes = [enc.w_x.data.shape, enc.w_h.data.shape, enc.b.data.shape,
                  enc.proj_w.data.shape, enc.proj_b.data.shape]
        flat0 = np.concatenate([p.data.reshape(-1) for p in (enc.w_x, enc.w_h, enc.b, enc.proj_w, enc.proj_b)])

        def f(flat):
            off = 0
            parts = []
            for s in shapes:
                n = int(np.prod(s))
                parts.append(ad.reshape(ad.narrow(flat, 0, off, n), s))
                off += n
            patched = GruEncoder(w_x=parts[0], w_h=parts[1], b=parts[2], proj_w=parts[3], proj_b=parts[4])
            e = patched.encode(list(xs))
            return ad.tsum(ad.mul(e, e))

        assert grad_check(f, Tensor(flat0)) < 1e-4

    def test_step_input_packing(self):
        x = gru_step_input(np.asarray([0.5, 0.25]), prev_action=1, n_actions=3, prev_reward=-0.1)
        assert np.array_equal(x, [0.5, 0.25, 0.0, 1.0, 0.0, -0.1])
        x0 = gru_step_input(np.asarray([0.5, 0.25]), prev_action=None, n_actions=3, prev_reward=0.0)
        assert np.array_equal(x0, [0.5, 0.25, 0.0, 0.0, 0.0, 0.0])

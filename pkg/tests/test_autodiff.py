"""Tensor engine tests: creation, op semantics, and gradient oracles.

Every differentiable op is checked against central finite differences
(h=1e-5, float64); conv2d additionally against a nested-loop reference.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from permaphys import autodiff as ad


RNG = lambda s=0: np.random.default_rng(s)


def rand_tensor(shape, rng, requires_grad=True):
    return ad.Tensor(rng.uniform(-1, 1, shape), requires_grad=requires_grad)


class TestCreate:
    def test_zeros(self):
        t = ad.zeros((2, 2))
        assert t.shape == (2, 2)
        assert np.all(t.data == 0.0)

    def test_constant(self):
        t = ad.full((3,), 1.5)
        assert np.array_equal(t.data, [1.5, 1.5, 1.5])

    def test_uniform_deterministic(self):
        a = ad.uniform((4,), -1, 1, 7)
        b = ad.uniform((4,), -1, 1, 7)
        assert a.data.tobytes() == b.data.tobytes()

    def test_uniform_bounds(self):
        t = ad.uniform((1000,), -0.25, 0.5, 3)
        assert t.data.min() >= -0.25 and t.data.max() < 0.5

    def test_bad_shape_rejected(self):
        with pytest.raises(ad.ShapeError):
            ad.zeros((0, 3))
        with pytest.raises(ad.ShapeError):
            ad.zeros((2, -1))
        with pytest.raises(ad.ShapeError):
            ad.uniform((2,), 1.0, 1.0, 0)

    def test_requires_grad_settable(self):
        assert ad.zeros((2,), requires_grad=True).requires_grad
        assert not ad.zeros((2,)).requires_grad


class TestElementwise:
    def test_relu(self):
        x = ad.Tensor([-1.0, 0.0, 2.0])
        assert np.array_equal(ad.relu(x).data, [0.0, 0.0, 2.0])

    def test_relu_grad(self):
        x = ad.Tensor([-2.0, 5.0], requires_grad=True)
        ad.reduce_sum(ad.relu(x)).backward()
        assert np.array_equal(x.grad, [0.0, 1.0])

    def test_square_grad_analytic(self):
        x = ad.Tensor([3.0], requires_grad=True)
        ad.reduce_sum(ad.square(x)).backward()
        assert np.allclose(x.grad, [6.0])

    def test_log_domain(self):
        with pytest.raises(ad.DomainError):
            ad.log(ad.Tensor([1.0, 0.0]))
        with pytest.raises(ad.DomainError):
            ad.log(ad.Tensor([-0.5]))

    def test_shape_mismatch(self):
        with pytest.raises(ad.ShapeError):
            ad.add(ad.zeros((2,)), ad.zeros((3,)))

    def test_scalar_broadcast(self):
        x = ad.Tensor([1.0, 2.0], requires_grad=True)
        y = ad.mul(x, 3.0)
        assert np.array_equal(y.data, [3.0, 6.0])
        lam = ad.Tensor(2.0, requires_grad=True)
        z = ad.reduce_sum(ad.mul(x, lam))
        z.backward()
        assert np.allclose(lam.grad, 3.0)

    @pytest.mark.parametrize("op", [ad.add, ad.sub, ad.mul])
    def test_binary_grads_fd(self, op):
        rng = RNG(11)
        a = rand_tensor((4, 3), rng)
        b = rand_tensor((4, 3), rng)
        err = ad.max_grad_error(lambda: ad.reduce_sum(ad.square(op(a, b))), [a, b], rng)
        assert err < 1e-4

    @pytest.mark.parametrize("op", [ad.exp, ad.square, ad.relu, ad.sigmoid])
    def test_unary_grads_fd(self, op):
        rng = RNG(13)
        x = rand_tensor((5, 2), rng)
        err = ad.max_grad_error(lambda: ad.reduce_sum(ad.square(op(x))), [x], rng)
        assert err < 1e-4

    def test_log_grad_fd(self):
        rng = RNG(17)
        x = ad.Tensor(rng.uniform(0.2, 2.0, (6,)), requires_grad=True)
        err = ad.max_grad_error(lambda: ad.reduce_sum(ad.square(ad.log(x))), [x], rng)
        assert err < 1e-4


class TestReductions:
    def test_mean_of_ones(self):
        assert ad.reduce_mean(ad.full((3, 3), 1.0)).item() == 1.0

    def test_sum_axis_grads(self):
        rng = RNG(5)
        x = rand_tensor((3, 4, 2), rng)
        err = ad.max_grad_error(
            lambda: ad.reduce_sum(ad.square(ad.sum_axis(x, 1))), [x], rng)
        assert err < 1e-4

    def test_softmax_uniform_for_equal_channels(self):
        x = ad.full((4, 3, 2, 2), 0.7)
        s = ad.softmax_over_channel(x, axis=1)
        assert np.allclose(s.data, 1.0 / 3.0)

    @given(st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=25, deadline=None)
    def test_softmax_rows_sum_to_one(self, channels, seed):
        x = ad.Tensor(RNG(seed).uniform(-5, 5, (2, channels, 3, 3)))
        s = ad.softmax_over_channel(x, axis=1)
        assert np.allclose(s.data.sum(axis=1), 1.0, atol=1e-9)

    def test_softmax_grad_fd(self):
        rng = RNG(23)
        x = rand_tensor((2, 4, 3, 3), rng)
        w = ad.constant(rng.uniform(-1, 1, (2, 4, 3, 3)))
        err = ad.max_grad_error(
            lambda: ad.reduce_sum(ad.mul(ad.softmax_over_channel(x, 1), w)), [x], rng)
        assert err < 1e-4


class TestLinear:
    def test_identity(self):
        x = ad.Tensor([[1.0, 2.0]])
        w = ad.Tensor(np.eye(2))
        b = ad.zeros((2,))
        assert np.array_equal(ad.linear(x, w, b).data, [[1.0, 2.0]])

    def test_basis_rows_extract_weights(self):
        w = ad.Tensor([[1.0, 2.0], [3.0, 4.0]])
        x = ad.Tensor(np.eye(2))
        y = ad.linear(x, w, ad.zeros((2,)))
        assert np.array_equal(y.data, w.data)

    def test_dim_mismatch(self):
        with pytest.raises(ad.ShapeError):
            ad.linear(ad.zeros((1, 3)), ad.zeros((2, 2)), ad.zeros((2,)))

    def test_grads_fd(self):
        rng = RNG(29)
        x = rand_tensor((3, 4), rng)
        w = rand_tensor((4, 5), rng)
        b = rand_tensor((5,), rng)
        err = ad.max_grad_error(
            lambda: ad.reduce_sum(ad.square(ad.linear(x, w, b))), [x, w, b], rng)
        assert err < 1e-5


def conv2d_reference(x, k, b):
    """Direct nested-loop same-padded cross-correlation."""
    B, C, H, W = x.shape
    F, _, kh, kw = k.shape
    pad = kh // 2
    xp = np.zeros((B, C, H + 2 * pad, W + 2 * pad))
    xp[:, :, pad : pad + H, pad : pad + W] = x
    out = np.zeros((B, F, H, W))
    for bi in range(B):
        for f in range(F):
            for i in range(H):
                for j in range(W):
                    acc = 0.0
                    for c in range(C):
                        for di in range(kh):
                            for dj in range(kw):
                                acc += xp[bi, c, i + di, j + dj] * k[f, c, di, dj]
                    out[bi, f, i, j] = acc + b[f]
    return out


class TestConv2d:
    def test_1x1_identity_kernel(self):
        rng = RNG(31)
        x = rand_tensor((2, 1, 5, 5), rng, requires_grad=False)
        k = ad.Tensor(np.ones((1, 1, 1, 1)))
        y = ad.conv2d(x, k, ad.zeros((1,)))
        assert np.allclose(y.data, x.data)

    def test_3x3_centered_delta(self):
        rng = RNG(37)
        x = rand_tensor((1, 2, 6, 6), rng, requires_grad=False)
        k = np.zeros((2, 2, 3, 3))
        k[0, 0, 1, 1] = 1.0
        k[1, 1, 1, 1] = 1.0
        y = ad.conv2d(x, ad.Tensor(k), ad.zeros((2,)))
        assert np.allclose(y.data, x.data)

    @pytest.mark.parametrize("ksize", [1, 3])
    def test_matches_loop_reference(self, ksize):
        rng = RNG(41 + ksize)
        x = rng.uniform(-1, 1, (2, 3, 7, 6))
        k = rng.uniform(-1, 1, (4, 3, ksize, ksize))
        b = rng.uniform(-1, 1, (4,))
        got = ad.conv2d(ad.Tensor(x), ad.Tensor(k), ad.Tensor(b)).data
        want = conv2d_reference(x, k, b)
        assert np.max(np.abs(got - want)) < 1e-9

    def test_unsupported_kernel(self):
        with pytest.raises(ad.UnsupportedOpError):
            ad.conv2d(ad.zeros((1, 1, 4, 4)), ad.zeros((1, 1, 5, 5)), ad.zeros((1,)))

    @pytest.mark.parametrize("ksize", [1, 3])
    def test_grads_fd(self, ksize):
        rng = RNG(43)
        x = rand_tensor((2, 2, 5, 4), rng)
        k = rand_tensor((3, 2, ksize, ksize), rng)
        b = rand_tensor((3,), rng)
        err = ad.max_grad_error(
            lambda: ad.reduce_sum(ad.square(ad.conv2d(x, k, b))), [x, k, b], rng)
        assert err < 1e-4


class TestUpsample:
    def test_constant_image(self):
        x = ad.full((1, 1, 3, 3), 0.4)
        y = ad.upsample2x(x)
        assert y.shape == (1, 1, 6, 6)
        assert np.allclose(y.data, 0.4)

    def test_monotone_1x2(self):
        x = ad.Tensor(np.array([0.0, 1.0]).reshape(1, 1, 1, 2))
        row = ad.upsample2x(x).data[0, 0, 0]
        assert row.shape == (4,)
        assert row[0] == 0.0 and row[-1] == 1.0
        assert np.all(np.diff(row) >= 0)

    def test_corners_aligned(self):
        rng = RNG(47)
        x = rand_tensor((1, 1, 4, 4), rng, requires_grad=False)
        y = ad.upsample2x(x).data
        assert np.isclose(y[0, 0, 0, 0], x.data[0, 0, 0, 0])
        assert np.isclose(y[0, 0, -1, -1], x.data[0, 0, -1, -1])

    def test_grads_fd(self):
        rng = RNG(53)
        x = rand_tensor((2, 2, 3, 4), rng)
        err = ad.max_grad_error(
            lambda: ad.reduce_sum(ad.square(ad.upsample2x(x))), [x], rng)
        assert err < 1e-5

    def test_avgpool_grads_fd(self):
        rng = RNG(59)
        x = rand_tensor((2, 2, 4, 6), rng)
        err = ad.max_grad_error(
            lambda: ad.reduce_sum(ad.square(ad.avgpool2x(x))), [x], rng)
        assert err < 1e-5


class TestStructural:
    def test_concat_narrow_roundtrip(self):
        rng = RNG(61)
        a = rand_tensor((2, 3), rng, requires_grad=False)
        b = rand_tensor((2, 2), rng, requires_grad=False)
        c = ad.concat([a, b], axis=1)
        assert np.allclose(ad.narrow(c, 1, 3, 2).data, b.data)

    @pytest.mark.parametrize("op_name", ["concat", "narrow", "reshape",
                                         "broadcast", "gather", "segsum"])
    def test_grads_fd(self, op_name):
        rng = RNG(67)
        x = rand_tensor((4, 3), rng)
        y = rand_tensor((2, 3), rng)
        if op_name == "concat":
            f = lambda: ad.reduce_sum(ad.square(ad.concat([x, y], axis=0)))
            ts = [x, y]
        elif op_name == "narrow":
            f = lambda: ad.reduce_sum(ad.square(ad.narrow(x, 0, 1, 2)))
            ts = [x]
        elif op_name == "reshape":
            f = lambda: ad.reduce_sum(ad.square(ad.reshape(x, (2, 6))))
            ts = [x]
        elif op_name == "broadcast":
            f = lambda: ad.reduce_sum(ad.square(ad.broadcast_spatial(x, 2, 3)))
            ts = [x]
        elif op_name == "gather":
            idx = np.array([0, 2, 2, 1])
            f = lambda: ad.reduce_sum(ad.square(ad.gather_rows(x, idx)))
            ts = [x]
        else:
            seg = np.array([0, 1, 0, 1])
            f = lambda: ad.reduce_sum(ad.square(ad.segment_sum(x, seg, 2)))
            ts = [x]
        assert ad.max_grad_error(f, ts, rng) < 1e-4


class TestBackward:
    def test_non_scalar_rejected(self):
        x = ad.zeros((2,), requires_grad=True)
        with pytest.raises(ad.ContractError):
            ad.add(x, x).backward()

    def test_accumulates_across_calls(self):
        x = ad.Tensor([3.0], requires_grad=True)
        ad.reduce_sum(ad.square(x)).backward()
        ad.reduce_sum(ad.square(x)).backward()
        assert np.allclose(x.grad, [12.0])

    def test_shared_subexpression(self):
        x = ad.Tensor([2.0], requires_grad=True)
        y = ad.square(x)
        ad.reduce_sum(ad.add(y, y)).backward()
        assert np.allclose(x.grad, [8.0])

    def test_deep_chain_no_recursion_limit(self):
        x = ad.Tensor([0.001], requires_grad=True)
        y = x
        for _ in range(5000):
            y = ad.add(y, x)
        ad.reduce_sum(y).backward()
        assert np.allclose(x.grad, [5001.0])


class TestAdam:
    def test_descends_quadratic(self):
        x = ad.Tensor([1.0], requires_grad=True)
        opt = ad.Adam({"x": x}, lr=0.1)
        opt.zero_grad()
        ad.reduce_sum(ad.square(x)).backward()
        opt.step()
        assert abs(x.data[0]) < 1.0

    def test_converges_on_bowl(self):
        rng = RNG(71)
        x = ad.Tensor(rng.uniform(-1, 1, (4,)), requires_grad=True)
        opt = ad.Adam({"x": x}, lr=0.05)
        for _ in range(500):
            opt.zero_grad()
            ad.reduce_sum(ad.square(x)).backward()
            opt.step()
        assert np.max(np.abs(x.data)) < 1e-3

    def test_missing_grad_raises(self):
        x = ad.zeros((2,), requires_grad=True)
        opt = ad.Adam({"x": x})
        with pytest.raises(ad.ContractError):
            opt.step()

    def test_plateau_divides_by_ten(self):
        x = ad.zeros((1,), requires_grad=True)
        opt = ad.Adam({"x": x}, lr=1e-3)
        sched = ad.PlateauScheduler(opt, patience=10)
        sched.update(1.0)
        for _ in range(10):
            sched.update(2.0)
        assert np.isclose(opt.lr, 1e-4)

    def test_plateau_resets_on_improvement(self):
        x = ad.zeros((1,), requires_grad=True)
        opt = ad.Adam({"x": x}, lr=1e-3)
        sched = ad.PlateauScheduler(opt, patience=10)
        sched.update(1.0)
        for _ in range(9):
            sched.update(2.0)
        sched.update(0.5)
        for _ in range(9):
            sched.update(2.0)
        assert opt.lr == 1e-3


class TestDeterminism:
    def test_forward_bitwise_identical(self):
        """Same seed and inputs give bitwise-equal results on one platform."""
        def run():
            rng = np.random.default_rng(12345)
            x = ad.Tensor(rng.uniform(-1, 1, (3, 4, 8, 8)))
            k = ad.Tensor(rng.uniform(-1, 1, (2, 4, 3, 3)))
            b = ad.Tensor(rng.uniform(-1, 1, (2,)))
            y = ad.softmax_over_channel(ad.upsample2x(ad.conv2d(x, k, b)), 1)
            return y.data.tobytes()

        assert run() == run()


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        rng = RNG(73)
        tensors = {"a": ad.Tensor(rng.uniform(-1, 1, (3, 2))),
                   "b": ad.Tensor(rng.uniform(-1, 1, (5,)))}
        meta = {"note": "x", "scale": 2.5}
        ad.save_checkpoint(tmp_path / "ck", tensors, meta)
        loaded, got_meta = ad.load_checkpoint(tmp_path / "ck")
        assert got_meta == meta
        for name, t in tensors.items():
            assert np.array_equal(loaded[name], t.data)

    def test_hash_stable(self, tmp_path):
        ad.save_checkpoint(tmp_path / "c1", {"a": ad.full((2,), 1.0)}, {})
        ad.save_checkpoint(tmp_path / "c2", {"a": ad.full((2,), 1.0)}, {})
        assert ad.checkpoint_hash(tmp_path / "c1") == ad.checkpoint_hash(tmp_path / "c2")

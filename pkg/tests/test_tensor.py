import io

import numpy as np
import pytest

import vqgrid.tensor as T
from vqgrid.errors import ContractError, NumericError, ShapeError
from vqgrid.tensor import Tensor, backward, grad_check


def fd_grad(f, x, h=1e-5):
    """Independent central-difference oracle on a raw numpy array."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal((a @ b).data, [[1, 2], [3, 4]])

    def test_1x2_by_2x1(self):
        out = Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])
        assert np.array_equal(out.data, [[11.0]])

    def test_grad_vs_finite_differences(self):
        # frozen from the central-difference oracle at h=1e-5
        a = Tensor(np.eye(2), requires_grad=True)
        b = Tensor([[2.0, 3.0], [4.0, 5.0]])
        backward((a @ b).sum())
        expected = fd_grad(lambda x: (x @ b.data).sum(), np.eye(2))
        assert np.allclose(expected, [[5.0, 9.0], [5.0, 9.0]])
        assert np.allclose(a.grad, [[5.0, 9.0], [5.0, 9.0]], atol=1e-9)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))

    def test_batched(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((3, 4, 5))
        b = rng.standard_normal((3, 5, 2))
        out = Tensor(a) @ Tensor(b)
        assert np.allclose(out.data, a @ b)

    def test_batched_grad(self):
        rng = np.random.default_rng(1)
        a = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
        bdat = rng.standard_normal((2, 4, 3))
        backward(((a @ Tensor(bdat)) ** 2.0).sum())
        num = fd_grad(lambda x: ((x @ bdat) ** 2).sum(), a.data.copy())
        assert np.allclose(a.grad, num, atol=1e-6)


class TestConv2d:
    def test_all_ones_full_overlap(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        k = Tensor(np.ones((1, 1, 3, 3)))
        out = T.conv2d(x, k, stride=1, pad=0)
        assert out.shape == (1, 1, 1, 1)
        assert out.data[0, 0, 0, 0] == 9.0

    def test_padded_overlap_counts(self):
        # hand enumeration: overlap of a 3x3 ones kernel on padded 3x3 ones
        x = Tensor(np.ones((1, 1, 3, 3)))
        k = Tensor(np.ones((1, 1, 3, 3)))
        out = T.conv2d(x, k, stride=1, pad=1).data[0, 0]
        assert np.array_equal(out, [[4, 6, 4], [6, 9, 6], [4, 6, 4]])

    def test_kernel_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(7)
        xd = rng.standard_normal((1, 2, 4, 4))
        kd = rng.standard_normal((3, 2, 2, 2))
        k = Tensor(kd.copy(), requires_grad=True)
        backward((T.conv2d(Tensor(xd), k, stride=1, pad=0) ** 2.0).sum())

        def loss(karr):
            win = np.lib.stride_tricks.sliding_window_view(xd, (2, 2), axis=(2, 3))
            out = np.einsum("bchwij,ocij->bohw", win, karr)
            return (out ** 2).sum()

        num = fd_grad(loss, kd.copy())
        denom = np.maximum(np.maximum(np.abs(k.grad), np.abs(num)), 1e-8)
        assert np.max(np.abs(k.grad - num) / denom) < 1e-4

    def test_input_gradient(self):
        rng = np.random.default_rng(8)
        xd = rng.standard_normal((2, 2, 5, 5))
        kd = rng.standard_normal((3, 2, 3, 3))
        x = Tensor(xd.copy(), requires_grad=True)
        backward((T.conv2d(x, Tensor(kd), stride=2, pad=1) ** 2.0).sum())

        def loss(xa):
            xp = np.pad(xa, ((0, 0), (0, 0), (1, 1), (1, 1)))
            win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::2, ::2]
            return (np.einsum("bchwij,ocij->bohw", win, kd) ** 2).sum()

        num = fd_grad(loss, xd.copy())
        denom = np.maximum(np.maximum(np.abs(x.grad), np.abs(num)), 1e-8)
        assert np.max(np.abs(x.grad - num) / denom) < 1e-4

    def test_one_by_one_identity(self):
        rng = np.random.default_rng(9)
        xd = rng.standard_normal((1, 1, 4, 4))
        out = T.conv2d(Tensor(xd), Tensor(np.ones((1, 1, 1, 1))), stride=1, pad=0)
        assert np.array_equal(out.data, xd)

    def test_oversized_kernel_rejected(self):
        with pytest.raises(ShapeError):
            T.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 5, 5))), 1, 0)

    def test_floor_division_output_size(self):
        out = T.conv2d(Tensor(np.ones((1, 1, 5, 5))), Tensor(np.ones((1, 1, 2, 2))), stride=2, pad=0)
        assert out.shape == (1, 1, 2, 2)


class TestSoftmax:
    def test_uniform(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0]), axis=0)
        assert np.allclose(out.data, [1 / 3] * 3)

    def test_closed_form(self):
        out = T.softmax(Tensor([np.log(1.0), np.log(2.0), np.log(3.0)]), axis=0)
        assert np.allclose(out.data, [1 / 6, 2 / 6, 3 / 6], atol=1e-12)

    def test_mask_sentinel_exact_zero(self):
        out = T.softmax(Tensor([5.0, -np.inf]), axis=0)
        assert np.array_equal(out.data, [1.0, 0.0])

    def test_all_masked_rejected(self):
        with pytest.raises(NumericError):
            T.softmax(Tensor([-np.inf, -np.inf]), axis=0)

    def test_sums_to_one(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((4, 7)) * 30)
        out = T.softmax(x, axis=1)
        assert np.all(np.abs(out.data.sum(axis=1) - 1.0) <= 1e-12)
        assert np.all(out.data > 0)

    def test_invalid_axis(self):
        with pytest.raises(ShapeError):
            T.softmax(Tensor([1.0, 2.0]), axis=3)


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        backward(x.sum())
        assert np.array_equal(x.grad, np.ones((2, 3)))

    def test_power_rule(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        backward((x ** 2.0).sum())
        assert np.allclose(x.grad, [2.0, 4.0, 6.0])

    def test_accumulation_doubles_without_zeroing(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        backward((x ** 2.0).sum())
        first = x.grad.copy()
        backward((x ** 2.0).sum())
        assert np.allclose(x.grad, 2 * first)

    def test_shared_subexpression(self):
        x = Tensor(np.ones(4), requires_grad=True)
        backward((x + x).sum())
        assert np.array_equal(x.grad, 2 * np.ones(4))

    def test_non_scalar_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ContractError):
            backward(x + 1.0)

    def test_tape_cleared_after_backward(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = (x * 2.0).sum()
        backward(loss)
        assert loss._backward is None and loss._parents == ()

    def test_retain_graph_allows_second_pass(self):
        x = Tensor([2.0], requires_grad=True)
        loss = (x ** 2.0).sum()
        backward(loss, retain_graph=True)
        backward(loss)
        assert np.allclose(x.grad, [8.0])

    def test_untracked_loss_rejected(self):
        with pytest.raises(ContractError):
            backward(Tensor([1.0]).sum())


class TestGradCheck:
    def test_quadratic_is_tight(self):
        x = Tensor(np.array([0.5, -1.2, 2.0]), requires_grad=True)
        assert grad_check(lambda t: (t ** 2.0).sum(), x) < 1e-6

    def test_softmax_cross_entropy(self):
        rng = np.random.default_rng(11)
        target = np.array([2, 0])
        x = Tensor(rng.standard_normal((2, 5)), requires_grad=True)

        def ce(t):
            return -T.take_along_last(T.log_softmax(t, axis=-1), target).mean()

        assert grad_check(ce, x) < 1e-4

    @pytest.mark.parametrize("seed", range(5))
    def test_every_primitive(self, seed):
        rng = np.random.default_rng(seed)
        mult = Tensor(rng.standard_normal((3, 4)))
        cases = [
            lambda t: (t * mult).sum(),
            lambda t: (t / 3.7).sum(),
            lambda t: T.exp(t).sum(),
            lambda t: T.log(t * t + 1.0).sum(),
            lambda t: T.sqrt(t * t + 0.5).sum(),
            lambda t: T.tanh(t).sum(),
            lambda t: T.sigmoid(t).sum(),
            lambda t: T.softplus(t).sum(),
            lambda t: T.silu(t).sum(),
            lambda t: (T.softmax(t, axis=-1) ** 2.0).sum(),
            lambda t: T.log_softmax(t, axis=-1).mean(),
            lambda t: (T.transpose(t) @ t).sum(),
            lambda t: (T.reshape(t, (-1,)) ** 3.0).sum(),
            lambda t: t.mean(axis=0).sum(),
        ]
        x = Tensor(rng.standard_normal((3, 4)) * 0.8 + 0.1, requires_grad=True)
        for f in cases:
            assert grad_check(f, x) < 1e-4

    def test_gather_and_pick(self):
        rng = np.random.default_rng(21)
        table = Tensor(rng.standard_normal((6, 3)), requires_grad=True)
        idx = np.array([0, 2, 2, 5])
        assert grad_check(lambda t: (T.gather_rows(t, idx) ** 2.0).sum(), table) < 1e-6
        x = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        pick = np.array([1, 0, 4, 2])
        assert grad_check(lambda t: T.take_along_last(t * t, pick).sum(), x) < 1e-5

    def test_upsample(self):
        x = Tensor(np.random.default_rng(5).standard_normal((1, 2, 3, 3)), requires_grad=True)
        assert grad_check(lambda t: (T.upsample_nearest2x(t) ** 2.0).sum(), x) < 1e-6


class TestStraightThrough:
    def test_forward_equals_quantized(self):
        z = Tensor(np.ones((2, 2)), requires_grad=True)
        q = Tensor([[5.0, 6.0], [7.0, 8.0]])
        out = T.straight_through(z, q)
        assert np.array_equal(out.data, q.data)

    def test_gradient_bypasses(self):
        z = Tensor(np.zeros(3), requires_grad=True)
        q = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        backward((T.straight_through(z, q) * Tensor([4.0, 5.0, 6.0])).sum())
        assert np.array_equal(z.grad, [4.0, 5.0, 6.0])
        assert q.grad is None

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            T.straight_through(Tensor(np.ones(2)), Tensor(np.ones(3)))


class TestNoGrad:
    def test_no_graph_recorded(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with T.no_grad():
            y = (x * 2.0).sum()
        assert not y.requires_grad


class TestSerialization:
    @pytest.mark.parametrize("arr", [
        np.arange(12.0).reshape(3, 4),
        np.float32(np.linspace(0, 1, 5)).reshape(5),
        np.array(3.5),
        np.arange(6, dtype=np.int64).reshape(2, 3),
    ])
    def test_round_trip(self, arr):
        buf = io.BytesIO()
        T.write_array(buf, arr)
        buf.seek(0)
        back = T.read_array(buf)
        assert back.dtype == arr.dtype
        assert np.array_equal(back, arr)

    def test_header_layout(self):
        buf = io.BytesIO()
        T.write_array(buf, np.zeros((2, 3)))
        raw = buf.getvalue()
        assert raw[:4] == b"TNSR"
        assert int.from_bytes(raw[4:8], "little") == 1      # version
        assert int.from_bytes(raw[8:12], "little") == 2     # rank
        assert int.from_bytes(raw[12:20], "little") == 2    # dim 0
        assert int.from_bytes(raw[20:28], "little") == 3    # dim 1
        assert raw[28] == 0                                 # float64 tag

    def test_bad_magic(self):
        with pytest.raises(ContractError):
            T.read_array(io.BytesIO(b"NOPE" + b"\x00" * 16))


def test_determinism_repeated_forward():
    rng = np.random.default_rng(33)
    a = rng.standard_normal((16, 16))
    b = rng.standard_normal((16, 16))
    r1 = (Tensor(a) @ Tensor(b)).data
    r2 = (Tensor(a) @ Tensor(b)).data
    assert np.array_equal(r1, r2)

"""Tensor-core ops against naive loop oracles, plus the PFT1 file format."""

import numpy as np
import pytest

from pricefusion.rng import Rng
from pricefusion.tensor import (
    ShapeError,
    Tensor,
    add,
    argmax_last,
    concat,
    conv2d,
    load_pft,
    matmul,
    maxpool2d,
    mul,
    row_mean,
    row_sum,
    save_pft,
    scalar_add,
    scalar_mul,
    transpose,
)


def matmul_oracle(a, b):
    n, k = a.shape
    _, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            for p in range(k):
                out[i, j] += float(a[i, p]) * float(b[p, j])
    return out


def conv_oracle(x, kernels, stride):
    h, w, c = x.shape
    k, _, _, f = kernels.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    out = np.zeros((ho, wo, f))
    for i in range(ho):
        for j in range(wo):
            for fi in range(f):
                for ki in range(k):
                    for kj in range(k):
                        for ci in range(c):
                            out[i, j, fi] += (
                                float(x[i * stride + ki, j * stride + kj, ci])
                                * float(kernels[ki, kj, ci, fi])
                            )
    return out


def maxpool_oracle(x, window, stride):
    h, w, c = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    out = np.zeros((ho, wo, c))
    for i in range(ho):
        for j in range(wo):
            for ci in range(c):
                out[i, j, ci] = x[
                    i * stride : i * stride + window,
                    j * stride : j * stride + window,
                    ci,
                ].max()
    return out


class TestMatmul:
    def test_identity(self):
        eye = Tensor(np.eye(2))
        assert matmul(eye, eye) == eye

    def test_hand_arithmetic(self):
        a = Tensor([[1, 2], [3, 4]])
        b = Tensor([[0], [1]])
        assert matmul(a, b).array.tolist() == [[2], [4]]

    def test_against_triple_loop(self, rng):
        a = rng.uniform(-1, 1, (7, 5))
        b = rng.uniform(-1, 1, (5, 3))
        got = matmul(Tensor(a), Tensor(b)).array
        np.testing.assert_allclose(got, matmul_oracle(a, b), atol=1e-6)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = Tensor(rng.uniform(0, 1, (4, 4, 1)))
        kernel = Tensor(np.ones((1, 1, 1, 1)))
        assert conv2d(x, kernel, 1) == x

    def test_sum_of_ones(self):
        x = Tensor(np.ones((3, 3, 1)))
        kernel = Tensor(np.ones((2, 2, 1, 1)))
        out = conv2d(x, kernel, 1)
        assert out.shape == (2, 2, 1)
        assert np.all(out.array == 4.0)

    def test_against_six_loop_oracle(self, rng):
        x = rng.uniform(-1, 1, (8, 8, 3))
        k = rng.uniform(-1, 1, (3, 3, 3, 4))
        got = conv2d(Tensor(x), Tensor(k), 1).array
        np.testing.assert_allclose(got, conv_oracle(x, k, 1), atol=1e-6)

    def test_kernel_larger_than_input(self):
        with pytest.raises(ShapeError, match="larger than input"):
            conv2d(Tensor(np.zeros((2, 2, 1))), Tensor(np.zeros((3, 3, 1, 1))), 1)


class TestMaxpool2d:
    def test_hand_picked_maxima(self):
        x = Tensor(np.arange(1, 17, dtype=np.float32).reshape(4, 4, 1))
        out, _ = maxpool2d(x, 2, 2)
        assert out.array[:, :, 0].tolist() == [[6, 8], [14, 16]]

    def test_tie_first_index_wins(self):
        x = Tensor(np.full((4, 4, 1), 3.0))
        out, arg = maxpool2d(x, 2, 2)
        assert np.all(out.array == 3.0)
        assert np.all(arg == 0)

    def test_against_loop_oracle(self, rng):
        x = rng.uniform(-1, 1, (10, 10, 2))
        got, _ = maxpool2d(Tensor(x), 2, 2)
        np.testing.assert_allclose(got.array, maxpool_oracle(x, 2, 2), atol=1e-6)

    def test_window_too_large(self):
        with pytest.raises(ShapeError):
            maxpool2d(Tensor(np.zeros((3, 3, 1))), 4, 1)


class TestConcat:
    def test_basic(self):
        out = concat([Tensor([1, 2]), Tensor([3])])
        assert out.array.tolist() == [1, 2, 3]

    def test_empty_part(self):
        x = Tensor([5.0, 6.0])
        assert concat([x, Tensor([])]) == x

    def test_embedding_widths(self, rng):
        out = concat([Tensor(rng.uniform(0, 1, 300)), Tensor(rng.uniform(0, 1, 2048))])
        assert out.shape == (2348,)

    def test_empty_list(self):
        with pytest.raises(ShapeError):
            concat([])

    def test_length_additivity(self, rng):
        for _ in range(20):
            parts = [
                Tensor(rng.uniform(0, 1, rng.integer(1, 30)))
                for _ in range(rng.integer(1, 5))
            ]
            assert concat(parts).shape[0] == sum(p.shape[0] for p in parts)


class TestOracleSweep:
    """Random-shape agreement with the naive loop oracles."""

    def test_hundred_random_draws(self):
        rng = Rng(99)
        for _ in range(34):
            n, k, m = (rng.integer(1, 8) for _ in range(3))
            a = rng.uniform(-1, 1, (n, k))
            b = rng.uniform(-1, 1, (k, m))
            np.testing.assert_allclose(
                matmul(Tensor(a), Tensor(b)).array, matmul_oracle(a, b), atol=1e-6
            )
        for _ in range(33):
            h, w = rng.integer(3, 9), rng.integer(3, 9)
            c, f = rng.integer(1, 4), rng.integer(1, 4)
            k = rng.integer(1, min(h, w) + 1)
            stride = rng.integer(1, 3)
            x = rng.uniform(-1, 1, (h, w, c))
            kern = rng.uniform(-1, 1, (k, k, c, f))
            np.testing.assert_allclose(
                conv2d(Tensor(x), Tensor(kern), stride).array,
                conv_oracle(x, kern, stride),
                atol=1e-6,
            )
        for _ in range(33):
            h, w = rng.integer(2, 11), rng.integer(2, 11)
            c = rng.integer(1, 4)
            window = rng.integer(1, min(h, w) + 1)
            stride = rng.integer(1, 3)
            x = rng.uniform(-1, 1, (h, w, c))
            got, _ = maxpool2d(Tensor(x), window, stride)
            np.testing.assert_allclose(
                got.array, maxpool_oracle(x, window, stride), atol=1e-6
            )


def test_reshape_round_trip(rng):
    x = Tensor(rng.uniform(-1, 1, (3, 4)))
    assert x.reshape((2, 6)).reshape((3, 4)) == x


def test_reshape_bad_product():
    with pytest.raises(ShapeError):
        Tensor(np.zeros(6)).reshape((4, 2))


def test_elementwise_and_scalar_ops(rng):
    a = rng.uniform(-1, 1, (3, 3))
    b = rng.uniform(-1, 1, (3, 3))
    np.testing.assert_allclose(add(Tensor(a), Tensor(b)).array, a + b)
    np.testing.assert_allclose(mul(Tensor(a), Tensor(b)).array, a * b)
    np.testing.assert_allclose(scalar_add(Tensor(a), 2.0).array, a + 2)
    np.testing.assert_allclose(scalar_mul(Tensor(a), -1.5).array, a * np.float32(-1.5))
    np.testing.assert_allclose(transpose(Tensor(a)).array, a.T)
    np.testing.assert_allclose(row_sum(Tensor(a)).array, a.sum(axis=1), rtol=1e-6)
    np.testing.assert_allclose(row_mean(Tensor(a)).array, a.mean(axis=1), rtol=1e-6)
    assert argmax_last(Tensor(a)).tolist() == a.argmax(axis=1).tolist()


def test_elementwise_shape_mismatch():
    with pytest.raises(ShapeError):
        add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


def test_pft_round_trip_bit_exact(tmp_path, rng):
    arr = rng.uniform(-5, 5, (3, 4, 2))
    path = tmp_path / "t.pft"
    save_pft(path, arr)
    back = load_pft(path)
    assert back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_pft_header_layout(tmp_path):
    path = tmp_path / "t.pft"
    save_pft(path, np.zeros((2, 3), dtype=np.float32))
    raw = path.read_bytes()
    assert raw[:4] == b"PFT1"
    assert int.from_bytes(raw[4:8], "little") == 2
    assert int.from_bytes(raw[8:12], "little") == 2
    assert int.from_bytes(raw[12:16], "little") == 3
    assert len(raw) == 16 + 6 * 4


def test_pft_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.pft"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError, match="not a PFT1 file"):
        load_pft(path)


def test_tensor_is_immutable(rng):
    x = Tensor(rng.uniform(0, 1, (2, 2)))
    with pytest.raises(ValueError):
        x.array[0, 0] = 7.0

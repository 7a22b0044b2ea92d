import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facetviz import tensor_core as tc
from facetviz.errors import FormatError, ShapeError
from oracles import central_fd, naive_conv, rel_err


class TestConv2d:
    def test_identity_kernel(self, rng):
        img = rng.normal(size=(5, 5, 1))
        out = tc.conv2d(img, np.ones((1, 1, 1, 1)))
        np.testing.assert_allclose(out, img.astype(np.float32))

    def test_counting_case(self):
        out = tc.conv2d(np.ones((3, 3, 1)), np.ones((3, 3, 1, 1)))
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 9

    def test_matches_naive_loops(self, rng):
        img = rng.normal(size=(8, 8, 2)).astype(np.float32)
        k = rng.normal(size=(3, 3, 2, 4))
        np.testing.assert_allclose(tc.conv2d(img, k), naive_conv(img, k), atol=1e-5)

    @pytest.mark.parametrize("stride,pad", [(1, 1), (2, 0), (2, 2), (3, 1)])
    def test_stride_and_padding(self, rng, stride, pad):
        img = rng.normal(size=(7, 9, 3)).astype(np.float32)
        k = rng.normal(size=(3, 2, 3, 2))
        np.testing.assert_allclose(tc.conv2d(img, k, stride, pad), naive_conv(img, k, stride, pad), atol=1e-5)

    def test_kernel_is_flipped(self):
        img = np.zeros((3, 3, 1))
        img[0, 0, 0] = 1.0
        k = np.arange(9.0).reshape(3, 3, 1, 1)
        # a single window: the top-left pixel meets the bottom-right kernel tap
        assert tc.conv2d(img, k)[0, 0, 0] == 8.0

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            tc.conv2d(np.zeros((4, 4, 2)), np.zeros((3, 3, 3, 1)))

    def test_kernel_too_large(self):
        with pytest.raises(ShapeError):
            tc.conv2d(np.zeros((2, 2, 1)), np.zeros((3, 3, 1, 1)))


class TestConv2dGrads:
    def test_zero_upstream(self, rng):
        img = rng.normal(size=(5, 5, 2))
        k = rng.normal(size=(3, 3, 2, 3))
        gi, gk = tc.conv2d_grads(img, k, np.zeros((3, 3, 3)))
        assert not gi.any() and not gk.any()

    def test_single_window_gives_flipped_kernel(self, rng):
        k = rng.normal(size=(3, 3, 2, 1)).astype(np.float32)
        gi, _ = tc.conv2d_grads(rng.normal(size=(3, 3, 2)), k, np.ones((1, 1, 1)))
        np.testing.assert_allclose(gi, k[::-1, ::-1, :, 0], rtol=1e-6)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
    def test_finite_differences(self, rng, stride, pad):
        img = rng.normal(size=(6, 5, 2))
        k = rng.normal(size=(3, 3, 2, 2))
        up = rng.normal(size=naive_conv(img, k, stride, pad).shape)
        gi, gk = tc.conv2d_grads(img, k, up, stride, pad)
        fi = central_fd(lambda x: float((naive_conv(x, k, stride, pad) * up).sum()), img)
        fk = central_fd(lambda w: float((naive_conv(img, w, stride, pad) * up).sum()), k)
        assert rel_err(gi, fi) < 1e-3
        assert rel_err(gk, fk) < 1e-3

    def test_upstream_shape_checked(self):
        with pytest.raises(ShapeError):
            tc.conv2d_grads(np.zeros((4, 4, 1)), np.zeros((3, 3, 1, 1)), np.zeros((3, 3, 1)))


class TestMaxpool:
    def test_forward_and_routing(self):
        x = np.arange(16.0).reshape(1, 4, 4, 1)
        out, arg = tc.maxpool_batch(x, 2)
        np.testing.assert_array_equal(out[0, :, :, 0], [[5, 7], [13, 15]])
        dx = tc.maxpool_backward_batch(x.shape, arg, np.ones_like(out), 2)
        expect = np.zeros((4, 4))
        expect[[1, 1, 3, 3], [1, 3, 1, 3]] = 1
        np.testing.assert_array_equal(dx[0, :, :, 0], expect)

    def test_odd_edge_dropped(self):
        out, _ = tc.maxpool_batch(np.zeros((1, 5, 5, 2)), 2)
        assert out.shape == (1, 2, 2, 2)


class TestGaussianBlur:
    def test_constant_image(self):
        img = np.full((9, 7, 3), 0.3)
        np.testing.assert_allclose(tc.gaussian_blur(img, 1.7), img, atol=1e-6)

    def test_sigma_zero_is_identity(self, rng):
        img = rng.normal(size=(6, 6, 2)).astype(np.float32)
        out = tc.gaussian_blur(img, 0)
        assert out.tobytes() == img.tobytes()

    def test_impulse_matches_gaussian(self):
        img = np.zeros((15, 15, 1))
        img[7, 7] = 1.0
        out = tc.gaussian_blur(img, 1.0)[..., 0]
        r = np.arange(-3, 4)
        g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / 2.0)
        g /= g.sum()
        np.testing.assert_allclose(out[4:11, 4:11], g, atol=1e-5)
        out[4:11, 4:11] = 0
        assert np.abs(out).max() < 1e-7

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            tc.gaussian_blur(np.zeros((3, 3, 1)), -1)


class TestResize:
    def test_constant(self):
        out = tc.resize_bilinear(np.full((4, 5, 2), 0.25), 9, 3)
        assert out.shape == (9, 3, 2)
        np.testing.assert_allclose(out, 0.25, atol=1e-7)

    def test_same_size(self, rng):
        img = rng.normal(size=(5, 6, 3)).astype(np.float32)
        np.testing.assert_allclose(tc.resize_bilinear(img, 5, 6), img, atol=1e-6)

    def test_hand_computed_2x2_to_3x3(self):
        img = np.array([[0.0, 1.0], [2.0, 3.0]])[..., None]
        out = tc.resize_bilinear(img, 3, 3)[..., 0]
        np.testing.assert_allclose(out, [[0, 0.5, 1], [1, 1.5, 2], [2, 2.5, 3]], atol=1e-6)


class TestLerp:
    def test_endpoints_exact(self, rng):
        a = rng.normal(size=(4, 4, 3)).astype(np.float32)
        b = rng.normal(size=(4, 4, 3)).astype(np.float32)
        assert tc.lerp_images(a, b, 0).tobytes() == a.tobytes()
        assert tc.lerp_images(a, b, 1).tobytes() == b.tobytes()

    def test_midpoint(self):
        a = np.array([[[0.0, 2.0]]])
        b = np.array([[[1.0, -2.0]]])
        np.testing.assert_allclose(tc.lerp_images(a, b, 0.5), [[[0.5, 0.0]]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            tc.lerp_images(np.zeros((2, 2, 1)), np.zeros((2, 3, 1)), 0.5)

    @given(st.floats(0, 1))
    def test_between_endpoints(self, t):
        a, b = np.zeros((2, 2, 1)), np.ones((2, 2, 1))
        out = tc.lerp_images(a, b, t)
        assert np.all((out >= 0) & (out <= 1))
        np.testing.assert_allclose(out, t, atol=1e-6)


class TestCheckImage:
    @pytest.mark.parametrize("shape", [(3, 3), (0, 3, 1), (2, 2, 2, 2)])
    def test_bad_shapes(self, shape):
        with pytest.raises(ShapeError):
            tc.check_image(np.zeros(shape))

    def test_nan_rejected(self):
        with pytest.raises(ShapeError):
            tc.check_image(np.full((2, 2, 1), np.nan))


class TestFlt1:
    def test_round_trip(self, tmp_path, rng):
        arr = rng.normal(size=(3, 4, 5)).astype(np.float32)
        tc.write_flt1(tmp_path / "a.flt1", arr)
        back = tc.read_flt1(tmp_path / "a.flt1")
        assert back.dtype == np.float32 and back.tobytes() == arr.tobytes()

    def test_truncated_names_missing_bytes(self, tmp_path):
        buf = tc.flt1_bytes(np.zeros((2, 3)))
        (tmp_path / "t.flt1").write_bytes(buf[:-5])
        with pytest.raises(FormatError, match="missing 5 bytes"):
            tc.read_flt1(tmp_path / "t.flt1")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "m.flt1").write_bytes(b"NOTMAGIC" + bytes(8))
        with pytest.raises(FormatError, match="magic"):
            tc.read_flt1(tmp_path / "m.flt1")

    def test_trailing_bytes(self, tmp_path):
        (tmp_path / "x.flt1").write_bytes(tc.flt1_bytes(np.ones(2)) + b"\0")
        with pytest.raises(FormatError, match="trailing"):
            tc.read_flt1(tmp_path / "x.flt1")

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.integers(0, 2**32 - 1))
    def test_any_shape_round_trips(self, shape, seed):
        arr = np.random.default_rng(seed).normal(size=shape).astype(np.float32)
        back, end = tc.parse_flt1(tc.flt1_bytes(arr))
        assert back.shape == arr.shape and np.array_equal(back, arr)
        assert end == 12 + 4 * len(shape) + 4 * arr.size


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 8), st.integers(3, 8), st.integers(1, 3), st.integers(0, 1000))
def test_conv_is_linear_in_input(h, w, c, seed):
    r = np.random.default_rng(seed)
    k = r.normal(size=(3, 3, c, 2))
    x, y = r.normal(size=(h, w, c)), r.normal(size=(h, w, c))
    lhs = tc.conv2d(x + 2 * y, k, pad=1)
    rhs = tc.conv2d(x, k, pad=1) + 2 * tc.conv2d(y, k, pad=1)
    np.testing.assert_allclose(lhs, rhs, atol=1e-4)

"""Forward-operator correctness: hand-derived values, dense-matrix
oracles built independently of the library's convolution path, adjoint
dot-tests, and linearity."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from physinv.operators import (
    adjoint_dot_test,
    as_image,
    blur_operator,
    compose,
    conv_same,
    convolve_2d,
    convolve_adjoint_2d,
    delta_psf,
    dense_matrix,
    diagonal_operator,
    downsample,
    downsample_adjoint,
    downsample_operator,
    fit_to_shape,
    forward_model,
    gaussian_psf,
    identity_operator,
    normalize_psf,
    upsample_nearest,
    validate_psf,
    LinearOperator,
)
from physinv.rng import stream


def dense_convolution_oracle(h, w, psf):
    """Explicit convolution matrix, expanded entry-by-entry from the
    definition (zero padding, centered kernel).  Deliberately naive."""
    k = psf.shape[0]
    c = k // 2
    mat = np.zeros((h * w, h * w))
    for i in range(h):
        for j in range(w):
            row = i * w + j
            for a in range(k):
                for b in range(k):
                    src_i = i - (a - c)
                    src_j = j - (b - c)
                    if 0 <= src_i < h and 0 <= src_j < w:
                        mat[row, src_i * w + src_j] += psf[a, b]
    return mat


def dense_downsampling_oracle(h, w, factor):
    """Explicit block-averaging matrix, one row per output pixel."""
    oh, ow = h // factor, w // factor
    mat = np.zeros((oh * ow, h * w))
    for i in range(oh):
        for j in range(ow):
            row = i * ow + j
            for di in range(factor):
                for dj in range(factor):
                    col = (i * factor + di) * w + (j * factor + dj)
                    mat[row, col] = 1.0 / factor**2
    return mat


class TestConvolution:
    def test_delta_kernel_is_identity(self):
        f = stream(1).standard_normal((8, 8))
        assert np.array_equal(convolve_2d(f, delta_psf(1)), f)
        assert np.array_equal(convolve_2d(f, delta_psf(3)), f)

    def test_uniform_kernel_on_ones(self):
        f = np.ones((3, 3))
        out = convolve_2d(f, np.full((3, 3), 1.0 / 9.0))
        expected = np.array(
            [
                [4 / 9, 6 / 9, 4 / 9],
                [6 / 9, 1.0, 6 / 9],
                [4 / 9, 6 / 9, 4 / 9],
            ]
        )
        np.testing.assert_allclose(out, expected, atol=1e-15)

    def test_matches_dense_oracle(self):
        psf = gaussian_psf(3, 1.0)
        f = stream(7).standard_normal((4, 4))
        mat = dense_convolution_oracle(4, 4, psf)
        np.testing.assert_allclose(
            convolve_2d(f, psf).ravel(), mat @ f.ravel(), atol=1e-12
        )

    def test_adjoint_matches_dense_transpose(self):
        psf = gaussian_psf(3, 1.0)
        g = stream(8).standard_normal((4, 4))
        mat = dense_convolution_oracle(4, 4, psf)
        np.testing.assert_allclose(
            convolve_adjoint_2d(g, psf).ravel(), mat.T @ g.ravel(), atol=1e-12
        )

    def test_symmetric_psf_is_self_adjoint(self):
        psf = gaussian_psf(3, 1.0)
        f = stream(9).standard_normal((6, 6))
        np.testing.assert_array_equal(
            convolve_adjoint_2d(f, psf), convolve_2d(f, psf)
        )

    def test_adjoint_dot_identity(self):
        psf = gaussian_psf(3, 1.0)
        rng = stream(10)
        x = rng.standard_normal((6, 6))
        y = rng.standard_normal((6, 6))
        lhs = np.vdot(convolve_2d(x, psf), y)
        rhs = np.vdot(x, convolve_adjoint_2d(y, psf))
        assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(x) * np.linalg.norm(y)

    def test_kernel_larger_than_image_rejected(self):
        with pytest.raises(ValueError, match="larger"):
            convolve_2d(np.ones((2, 2)), gaussian_psf(3, 1.0))

    def test_nonfinite_image_rejected(self):
        f = np.ones((4, 4))
        f[0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            convolve_2d(f, delta_psf(1))


class TestPsf:
    def test_gaussian_is_normalized_and_symmetric(self):
        psf = gaussian_psf(9, 2.0)
        assert abs(psf.sum() - 1.0) <= 1e-12
        np.testing.assert_array_equal(psf, psf[::-1, ::-1])

    def test_validate_rejects_even_size(self):
        with pytest.raises(ValueError, match="odd"):
            validate_psf(np.full((2, 2), 0.25))

    def test_validate_rejects_negative(self):
        kernel = np.array([[0.5, 0.75], [0.0, -0.25]])
        with pytest.raises(ValueError):
            validate_psf(kernel)

    def test_validate_rejects_unnormalized(self):
        with pytest.raises(ValueError, match="sum to 1"):
            validate_psf(np.full((3, 3), 1.0))

    def test_normalize(self):
        psf = normalize_psf(np.ones((3, 3)))
        np.testing.assert_allclose(psf, np.full((3, 3), 1 / 9), atol=1e-15)


class TestDownsampling:
    def test_factor_one_is_identity(self):
        f = stream(2).standard_normal((5, 5))
        assert np.array_equal(downsample(f, 1), f)
        assert np.array_equal(downsample_adjoint(f, 1), f)

    def test_two_by_two_mean(self):
        out = downsample(np.array([[1.0, 2.0], [3.0, 4.0]]), 2)
        np.testing.assert_array_equal(out, [[2.5]])

    def test_matches_dense_oracle(self):
        f = stream(3).standard_normal((4, 4))
        mat = dense_downsampling_oracle(4, 4, 2)
        np.testing.assert_allclose(
            downsample(f, 2).ravel(), mat @ f.ravel(), atol=1e-12
        )

    def test_adjoint_spreads_quarters(self):
        out = downsample_adjoint(np.array([[4.0]]), 2)
        np.testing.assert_array_equal(out, np.ones((2, 2)))

    def test_adjoint_dot(self):
        rng = stream(4)
        x = rng.standard_normal((8, 8))
        y = rng.standard_normal((4, 4))
        lhs = np.vdot(downsample(x, 2), y)
        rhs = np.vdot(x, downsample_adjoint(y, 2))
        assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(x) * np.linalg.norm(y)

    def test_non_divisible_shape_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            downsample(np.ones((5, 4)), 2)

    def test_adjoint_then_forward_on_constants(self):
        # block-average of the spread-out image recovers it exactly
        g = np.full((3, 3), 2.0)
        np.testing.assert_allclose(
            downsample(downsample_adjoint(g, 2), 2) * 4, g, atol=1e-15
        )


class TestUpsampling:
    def test_nearest_replicates(self):
        out = upsample_nearest(np.array([[1.0, 2.0]]), 2)
        np.testing.assert_array_equal(out, [[1, 1, 2, 2], [1, 1, 2, 2]])

    def test_fit_to_shape_identity(self):
        f = np.ones((4, 4))
        assert fit_to_shape(f, (4, 4)) is f

    def test_fit_to_shape_upsamples(self):
        out = fit_to_shape(np.array([[3.0]]), (2, 2))
        np.testing.assert_array_equal(out, np.full((2, 2), 3.0))

    def test_fit_to_shape_rejects_bad_ratio(self):
        with pytest.raises(ValueError, match="ratio"):
            fit_to_shape(np.ones((2, 2)), (3, 3))
        with pytest.raises(ValueError, match="ratio"):
            fit_to_shape(np.ones((2, 4)), (8, 8))


class TestOperators:
    def test_identity(self):
        op = identity_operator((4, 4))
        f = stream(5).standard_normal((4, 4))
        np.testing.assert_array_equal(op.apply(f), f)
        np.testing.assert_array_equal(op.adjoint(f), f)

    def test_shape_validation(self):
        op = blur_operator((4, 4), gaussian_psf(3, 1.0))
        with pytest.raises(ValueError, match="expects input"):
            op.apply(np.ones((3, 3)))
        with pytest.raises(ValueError, match="expects input"):
            op.adjoint(np.ones((5, 5)))

    def test_compose_identity_is_noop(self):
        op = blur_operator((6, 6), gaussian_psf(3, 1.0))
        both = compose(identity_operator((6, 6)), op)
        f = stream(6).standard_normal((6, 6))
        np.testing.assert_array_equal(both.apply(f), op.apply(f))

    def test_compose_equals_sequential(self):
        down = downsample_operator((8, 8), 2)
        blur = blur_operator((4, 4), gaussian_psf(3, 1.0))
        model = compose(blur, down)
        f = stream(11).standard_normal((8, 8))
        np.testing.assert_array_equal(model.apply(f), blur.apply(down.apply(f)))
        assert model.input_shape == (8, 8)
        assert model.output_shape == (4, 4)

    def test_compose_shape_mismatch_rejected(self):
        blur = blur_operator((8, 8), gaussian_psf(3, 1.0))
        down = downsample_operator((8, 8), 2)
        with pytest.raises(ValueError, match="compose"):
            compose(blur, down)

    def test_diagonal_operator_self_adjoint(self):
        weights = stream(12).uniform(0.5, 2.0, (5, 5))
        op = diagonal_operator(weights)
        assert adjoint_dot_test(op, trials=20, seed=3) <= 1e-12

    def test_forward_model_deblur_matches_blur(self):
        psf = gaussian_psf(3, 1.0)
        model = forward_model((6, 6), psf)
        f = stream(13).standard_normal((6, 6))
        np.testing.assert_array_equal(model.apply(f), convolve_2d(f, psf))

    def test_forward_model_superres_shapes(self):
        model = forward_model((8, 8), gaussian_psf(3, 1.0), factor=2)
        assert model.output_shape == (4, 4)

    def test_forward_model_with_transfer(self):
        weights = np.full((6, 6), 2.0)
        model = forward_model((6, 6), delta_psf(1), transfer=weights)
        f = stream(14).standard_normal((6, 6))
        np.testing.assert_allclose(model.apply(f), 2.0 * f, atol=1e-15)


class TestDenseOracle:
    """Matrix-free operators against explicit dense matrices on small grids."""

    @pytest.mark.parametrize("shape", [(4, 4), (6, 6), (8, 8)])
    def test_blur_matches_dense(self, shape):
        psf = gaussian_psf(3, 1.0)
        op = blur_operator(shape, psf)
        oracle = dense_convolution_oracle(shape[0], shape[1], psf)
        np.testing.assert_allclose(dense_matrix(op), oracle, atol=1e-12)

    def test_superres_matches_dense_product(self):
        psf = gaussian_psf(3, 1.0)
        op = forward_model((8, 8), psf, factor=2)
        oracle = dense_convolution_oracle(4, 4, psf) @ dense_downsampling_oracle(8, 8, 2)
        np.testing.assert_allclose(dense_matrix(op), oracle, atol=1e-12)

    def test_dense_guard(self):
        op = identity_operator((65, 65))
        with pytest.raises(ValueError, match="restricted"):
            dense_matrix(op)


class TestAdjointDotTest:
    def test_correct_operators_pass(self):
        ops = [
            blur_operator((8, 8), gaussian_psf(3, 1.0)),
            downsample_operator((8, 8), 2),
            forward_model((8, 8), gaussian_psf(3, 1.0), factor=2),
        ]
        for op in ops:
            assert adjoint_dot_test(op, trials=100, seed=42) <= 1e-10

    def test_broken_adjoint_detected(self):
        # deliberately wrong adjoint: the kernel flip is omitted
        kernel = normalize_psf(np.arange(9.0).reshape(3, 3))
        broken = LinearOperator(
            (6, 6),
            (6, 6),
            lambda x: conv_same(x, kernel),
            lambda y: conv_same(y, kernel),
        )
        assert adjoint_dot_test(broken, trials=10, seed=0) > 1e-3

    def test_zero_operator(self):
        op = LinearOperator(
            (4, 4), (4, 4), lambda x: np.zeros((4, 4)), lambda y: np.zeros((4, 4))
        )
        assert adjoint_dot_test(op, trials=5, seed=1) == 0.0

    def test_trials_validated(self):
        with pytest.raises(ValueError, match="trials"):
            adjoint_dot_test(identity_operator((2, 2)), trials=0)


@settings(max_examples=50, deadline=None)
@given(
    alpha=st.floats(-10, 10),
    beta=st.floats(-10, 10),
    seed=st.integers(0, 2**31),
)
def test_linearity(alpha, beta, seed):
    op = forward_model((8, 8), gaussian_psf(3, 1.2), factor=2)
    rng = stream(seed)
    x = rng.standard_normal((8, 8))
    y = rng.standard_normal((8, 8))
    combined = op.apply(alpha * x + beta * y)
    separate = alpha * op.apply(x) + beta * op.apply(y)
    np.testing.assert_allclose(combined, separate, atol=1e-12)


def test_as_image_validation():
    with pytest.raises(ValueError, match="2D"):
        as_image(np.ones(4))
    with pytest.raises(ValueError, match="non-empty"):
        as_image(np.ones((0, 3)))
    arr = as_image([[1, 2], [3, 4]])
    assert arr.dtype == np.float64

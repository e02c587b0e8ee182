"""Matrix-free linear operators on 2D image grids.

Images are finite 2D float64 arrays (row-major); operators are immutable
apply/adjoint closure pairs satisfying ``<A x, y> == <x, A' y>`` to
1e-10 relative, verified by :func:`adjoint_dot_test`.  The observation
models built here are

    deblurring:        g = H f            (zero-padded "same" PSF convolution)
    super-resolution:  g = H D f          (block-average downsampling, then blur)

with an optional pointwise transfer map (a diagonal operator) applied to
f first; it defaults to identity, in which case both models are the
plain linear case handled by the analytic posterior.
"""

import numpy as np

from .rng import stream

# Explicit dense matrices are a test/oracle device only; cap them at
# 64x64 grids so nobody materializes a 16384^2 operator by accident.
DENSE_MATRIX_PIXEL_LIMIT = 64 * 64

PSF_NORMALIZATION_TOL = 1e-12


def as_image(values):
    """Coerce to a finite, non-empty 2D float64 array."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"image must be 2D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("image must be non-empty")
    if not np.isfinite(arr).all():
        raise ValueError("image contains non-finite values")
    return arr


def validate_psf(psf):
    """Check PSF invariants: square, odd size, nonnegative, unit sum."""
    arr = np.ascontiguousarray(psf, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"PSF must be square, got shape {arr.shape}")
    if arr.shape[0] % 2 == 0:
        raise ValueError(f"PSF size must be odd, got {arr.shape[0]}")
    if not np.isfinite(arr).all():
        raise ValueError("PSF contains non-finite weights")
    if (arr < 0).any():
        raise ValueError("PSF weights must be nonnegative")
    if abs(arr.sum() - 1.0) > PSF_NORMALIZATION_TOL:
        raise ValueError(f"PSF weights must sum to 1 within 1e-12, got {arr.sum()!r}")
    return arr


def normalize_psf(weights):
    """Rescale nonnegative weights to unit sum and validate."""
    arr = np.ascontiguousarray(weights, dtype=np.float64)
    total = arr.sum()
    if not np.isfinite(total) or total <= 0:
        raise ValueError("PSF weights must have a positive finite sum")
    return validate_psf(arr / total)


def gaussian_psf(size=9, sigma=2.0):
    """Isotropic Gaussian blur kernel with unit sum."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"PSF size must be odd and positive, got {size}")
    if sigma <= 0:
        raise ValueError(f"PSF sigma must be positive, got {sigma}")
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    sq = ax[:, None] ** 2 + ax[None, :] ** 2
    return normalize_psf(np.exp(-sq / (2.0 * sigma**2)))


def delta_psf(size=1):
    """Kernel with all mass at the center; convolving with it is identity."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"PSF size must be odd and positive, got {size}")
    kernel = np.zeros((size, size))
    kernel[size // 2, size // 2] = 1.0
    return kernel


def conv_same(f, kernel):
    """Zero-padded "same" 2D convolution; the kernel need not be normalized.

    out[i, j] = sum_{a, b} kernel[a, b] * f[i - (a - c), j - (b - c)],
    c = size // 2, with f taken as zero outside its support.
    """
    h, w = f.shape
    k = kernel.shape[0]
    c = k // 2
    padded = np.pad(f, c)
    out = np.zeros_like(f)
    for a in range(k):
        for b in range(k):
            weight = kernel[a, b]
            if weight == 0.0:
                continue
            out += weight * padded[2 * c - a : 2 * c - a + h, 2 * c - b : 2 * c - b + w]
    return out


def _check_kernel_fits(f, kernel):
    if kernel.shape[0] > f.shape[0] or kernel.shape[1] > f.shape[1]:
        raise ValueError(
            f"PSF {kernel.shape} is larger than the image {f.shape} in some dimension"
        )


def convolve_2d(f, psf):
    """Blur an image with a PSF (zero-padded "same" convolution)."""
    f = as_image(f)
    kernel = validate_psf(psf)
    _check_kernel_fits(f, kernel)
    return conv_same(f, kernel)


def convolve_adjoint_2d(g, psf):
    """Exact adjoint of :func:`convolve_2d`: correlation with the PSF,
    i.e. convolution with the 180-degree-flipped kernel."""
    g = as_image(g)
    kernel = validate_psf(psf)
    _check_kernel_fits(g, kernel)
    return conv_same(g, kernel[::-1, ::-1])


def downsample(f, factor):
    """Block-average decimation: each output pixel is the mean of its
    factor x factor block.  Shape must be divisible by the factor."""
    f = as_image(f)
    factor = _check_factor(factor)
    h, w = f.shape
    if h % factor or w % factor:
        raise ValueError(f"shape {f.shape} is not divisible by factor {factor}")
    return f.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def downsample_adjoint(g, factor):
    """Exact adjoint of :func:`downsample`: spread each value over its
    factor x factor block, scaled by 1/factor^2."""
    g = as_image(g)
    factor = _check_factor(factor)
    return np.repeat(np.repeat(g, factor, axis=0), factor, axis=1) / float(factor**2)


def upsample_nearest(g, factor):
    """Nearest-neighbour replication.  This is input prep for networks fed
    low-resolution observations, not the adjoint of downsampling."""
    g = as_image(g)
    factor = _check_factor(factor)
    return np.repeat(np.repeat(g, factor, axis=0), factor, axis=1)


def fit_to_shape(g, shape):
    """Return ``g`` resized to ``shape`` by nearest-neighbour upsampling.

    Identity when the shapes already match; the target must otherwise be
    an integer multiple of the source in both dimensions (same factor).
    """
    g = as_image(g)
    shape = (int(shape[0]), int(shape[1]))
    if g.shape == shape:
        return g
    if shape[0] % g.shape[0] or shape[1] % g.shape[1]:
        raise ValueError(f"cannot upsample {g.shape} to {shape}: non-integer ratio")
    fy, fx = shape[0] // g.shape[0], shape[1] // g.shape[1]
    if fy != fx:
        raise ValueError(f"cannot upsample {g.shape} to {shape}: anisotropic ratio")
    return upsample_nearest(g, fy)


def _check_factor(factor):
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor}")
    return factor


class LinearOperator:
    """Immutable linear map between image grids.

    ``apply`` accepts exactly ``input_shape`` and produces exactly
    ``output_shape``; ``adjoint`` is the reverse.  Both are pure and safe
    to call from multiple threads.
    """

    def __init__(self, input_shape, output_shape, apply_fn, adjoint_fn):
        self.input_shape = _check_shape(input_shape)
        self.output_shape = _check_shape(output_shape)
        self._apply = apply_fn
        self._adjoint = adjoint_fn

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.input_shape:
            raise ValueError(f"operator expects input {self.input_shape}, got {x.shape}")
        out = self._apply(x)
        if out.shape != self.output_shape:
            raise ValueError(
                f"operator produced {out.shape}, declared {self.output_shape}"
            )
        return out

    def adjoint(self, y):
        y = np.asarray(y, dtype=np.float64)
        if y.shape != self.output_shape:
            raise ValueError(f"adjoint expects input {self.output_shape}, got {y.shape}")
        out = self._adjoint(y)
        if out.shape != self.input_shape:
            raise ValueError(
                f"adjoint produced {out.shape}, declared {self.input_shape}"
            )
        return out

    def __repr__(self):
        return f"LinearOperator({self.input_shape} -> {self.output_shape})"


def _check_shape(shape):
    shape = tuple(int(n) for n in shape)
    if len(shape) != 2 or shape[0] < 1 or shape[1] < 1:
        raise ValueError(f"shape must be a positive (height, width) pair, got {shape}")
    return shape


def identity_operator(shape):
    return LinearOperator(shape, shape, lambda x: x.copy(), lambda y: y.copy())


def blur_operator(shape, psf):
    """PSF convolution as an operator; the kernel is validated once here."""
    shape = _check_shape(shape)
    kernel = validate_psf(psf)
    _check_kernel_fits(np.empty(shape), kernel)
    flipped = kernel[::-1, ::-1].copy()
    return LinearOperator(
        shape,
        shape,
        lambda x: conv_same(x, kernel),
        lambda y: conv_same(y, flipped),
    )


def downsample_operator(shape, factor):
    shape = _check_shape(shape)
    factor = _check_factor(factor)
    if shape[0] % factor or shape[1] % factor:
        raise ValueError(f"shape {shape} is not divisible by factor {factor}")
    out_shape = (shape[0] // factor, shape[1] // factor)
    return LinearOperator(
        shape,
        out_shape,
        lambda x: x.reshape(out_shape[0], factor, out_shape[1], factor).mean(axis=(1, 3)),
        lambda y: np.repeat(np.repeat(y, factor, 0), factor, 1) / float(factor**2),
    )


def diagonal_operator(weights):
    """Pointwise scaling by a fixed weight image (self-adjoint).

    This is the linearized point-transfer hook for deblurring models;
    the identity (all-ones weights) recovers the plain linear case.
    """
    w = as_image(weights)
    return LinearOperator(w.shape, w.shape, lambda x: x * w, lambda y: y * w)


def compose(outer, inner):
    """Operator composition ``outer o inner`` with the adjoint reversed."""
    if inner.output_shape != outer.input_shape:
        raise ValueError(
            f"cannot compose: inner produces {inner.output_shape}, "
            f"outer expects {outer.input_shape}"
        )
    return LinearOperator(
        inner.input_shape,
        outer.output_shape,
        lambda x: outer.apply(inner.apply(x)),
        lambda y: inner.adjoint(outer.adjoint(y)),
    )


def forward_model(input_shape, psf, factor=1, transfer=None):
    """Observation operator for both imaging tasks.

    Applies the optional pointwise transfer map, then block-average
    downsampling when ``factor > 1``, then PSF blur at the observed
    scale: g = H D (transfer * f).  With ``factor == 1`` and no transfer
    this is plain deblurring, g = H f.
    """
    input_shape = _check_shape(input_shape)
    op = None
    if transfer is not None:
        op = diagonal_operator(transfer)
        if op.input_shape != input_shape:
            raise ValueError(
                f"transfer map shape {op.input_shape} does not match input {input_shape}"
            )
    current = input_shape
    factor = _check_factor(factor)
    if factor > 1:
        down = downsample_operator(current, factor)
        op = down if op is None else compose(down, op)
        current = down.output_shape
    blur = blur_operator(current, psf)
    return blur if op is None else compose(blur, op)


def dense_matrix(op):
    """Explicit dense matrix of a small operator, built column-by-column.

    Only available up to 64x64 grids; meant for exact variance
    computations and oracle checks, never production solves.
    """
    n_in = op.input_shape[0] * op.input_shape[1]
    n_out = op.output_shape[0] * op.output_shape[1]
    if n_in > DENSE_MATRIX_PIXEL_LIMIT or n_out > DENSE_MATRIX_PIXEL_LIMIT:
        raise ValueError(
            f"dense matrix restricted to {DENSE_MATRIX_PIXEL_LIMIT} pixels per side, "
            f"got {n_in} -> {n_out}"
        )
    mat = np.zeros((n_out, n_in))
    basis = np.zeros(n_in)
    for j in range(n_in):
        basis[j] = 1.0
        mat[:, j] = op.apply(basis.reshape(op.input_shape)).ravel()
        basis[j] = 0.0
    return mat


def adjoint_dot_test(op, trials=100, seed=0):
    """Max over seeded Gaussian trials of |<Ax,y> - <x,A'y>| / (|x||y|)."""
    trials = int(trials)
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    worst = 0.0
    for t in range(trials):
        rng = stream(seed, t)
        x = rng.standard_normal(op.input_shape)
        y = rng.standard_normal(op.output_shape)
        lhs = float(np.dot(op.apply(x).ravel(), y.ravel()))
        rhs = float(np.dot(x.ravel(), op.adjoint(y).ravel()))
        denom = float(np.linalg.norm(x) * np.linalg.norm(y))
        resid = abs(lhs - rhs) / denom if denom > 0 else abs(lhs - rhs)
        worst = max(worst, resid)
    return worst

"""Inference with Monte Carlo dropout uncertainty.

The predictive mean and pixelwise variance come from T stochastic
forward passes with dropout active; pass t draws its masks under
child_seed(seed, t).  Moments accumulate in a streaming Welford
recursion, in pass-index order, with the unbiased (T - 1) variance
divisor, so nothing stores T full images and results are bit-stable.

No claim is made that the dropout variance equals the analytic
posterior variance; :func:`compare_with_analytic` reports how the two
maps relate (MSE between means, Pearson correlation between variances).
"""

from dataclasses import dataclass

import numpy as np

from .network import EvalMode, forward
from .operators import as_image, fit_to_shape
from .rng import child_seed


@dataclass(frozen=True)
class UqResult:
    """Predictive mean and pixelwise variance from T dropout passes.

    ``degenerate`` flags a network with no positive dropout rate, whose
    variance map is identically zero.
    """

    mean: np.ndarray
    variance: np.ndarray
    passes: int
    seed: int
    degenerate: bool = False

    def __post_init__(self):
        if (np.asarray(self.variance) < 0).any():
            raise ValueError("variance map must be nonnegative")
        if self.passes < 2:
            raise ValueError("a populated variance needs passes >= 2")


class RunningMoments:
    """Welford streaming mean/variance over equally-shaped arrays."""

    def __init__(self):
        self.count = 0
        self.mean = None
        self._m2 = None

    def push(self, value):
        value = np.asarray(value, dtype=np.float64)
        self.count += 1
        if self.mean is None:
            self.mean = value.copy()
            self._m2 = np.zeros_like(value)
            return
        delta = value - self.mean
        self.mean += delta / self.count
        self._m2 += delta * (value - self.mean)

    def variance(self):
        """Unbiased sample variance (divisor count - 1)."""
        if self.count < 2:
            raise ValueError("variance needs at least two observations")
        return self._m2 / (self.count - 1)


def _has_active_dropout(layers):
    return any(spec.kind == "dropout" and spec.rate > 0.0 for spec in layers)


def _check_input(g):
    g = np.asarray(g, dtype=np.float64)
    if not np.isfinite(g).all():
        raise ValueError("network input contains non-finite values")
    return g


def point_estimate(layers, params, g, target_shape=None):
    """Deterministic-mode prediction (no dropout, no scaling)."""
    g = _check_input(g)
    net_in = g if target_shape is None else fit_to_shape(as_image(g), target_shape)
    output, _ = forward(layers, params, net_in, EvalMode.deterministic())
    return output


def mc_dropout_predict(layers, params, g, passes, seed, target_shape=None):
    """T stochastic passes; returns their streaming mean and unbiased
    pixelwise variance as a :class:`UqResult`."""
    passes = int(passes)
    if passes < 2:
        raise ValueError(f"passes must be >= 2, got {passes}")
    g = _check_input(g)
    net_in = g if target_shape is None else fit_to_shape(as_image(g), target_shape)
    moments = RunningMoments()
    for t in range(passes):
        mode = EvalMode.stochastic(child_seed(seed, t))
        output, _ = forward(layers, params, net_in, mode)
        moments.push(output)
    variance = moments.variance()
    # exact zeros for rate-0 networks, not accumulation dust
    degenerate = not _has_active_dropout(layers)
    if degenerate:
        variance = np.zeros_like(variance)
    return UqResult(
        mean=moments.mean,
        variance=np.maximum(variance, 0.0),
        passes=passes,
        seed=int(seed),
        degenerate=degenerate,
    )


@dataclass(frozen=True)
class ComparisonReport:
    """Surrogate-vs-analytic posterior summary.

    ``variance_correlation`` is None (an explicit undefined sentinel)
    when either variance map is constant.
    """

    mse_mean_vs_analytic: float
    mse_mean_vs_truth: float | None
    variance_correlation: float | None


def compare_with_analytic(uq, analytic, truth=None):
    """Compare a dropout UQ result with the exact Gaussian posterior."""
    mean_nn = as_image(uq.mean)
    mean_exact = as_image(analytic.mean)
    if mean_nn.shape != mean_exact.shape:
        raise ValueError(
            f"mean shapes differ: {mean_nn.shape} vs {mean_exact.shape}"
        )
    mse_analytic = float(np.mean((mean_nn - mean_exact) ** 2))
    mse_truth = None
    if truth is not None:
        truth = as_image(truth)
        if truth.shape != mean_nn.shape:
            raise ValueError("truth shape does not match the mean")
        mse_truth = float(np.mean((mean_nn - truth) ** 2))
    var_nn = np.asarray(uq.variance, dtype=np.float64).ravel()
    var_exact = np.asarray(analytic.variance, dtype=np.float64).ravel()
    if var_nn.shape != var_exact.shape:
        raise ValueError("variance shapes differ")
    correlation = None
    if var_nn.std() > 0 and var_exact.std() > 0:
        correlation = float(np.corrcoef(var_nn, var_exact)[0, 1])
    return ComparisonReport(
        mse_mean_vs_analytic=mse_analytic,
        mse_mean_vs_truth=mse_truth,
        variance_correlation=correlation,
    )

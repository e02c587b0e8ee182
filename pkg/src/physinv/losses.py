"""Training criteria for the inversion network, with exact gradients.

Supervised loss over labeled pairs (g, f), summed per sample:

    |f - net(g)|^2 / v_label  +  |g - A net(g)|^2 / v_noise
                              +  |prior_mean - net(g)|^2 / v_prior
                              +  strength * sum_j |w_j|^power

The middle term is the physics residual: it pushes the network output
through the observation operator and back via the adjoint.  The
unsupervised loss drops the label and prior-pull terms and keeps the
physics residual plus an L1 weight penalty, which is what lets the
network train from observations alone.

Conventions: no 1/2 factors anywhere (a pure rescaling); dropout is
active during loss evaluation (train mode) with per-sample mask seeds
derived as child_seed(seed, sample_index); the sign of the L1
subgradient at exactly 0 is 0.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericFailure
from .network import EvalMode, NetworkParams, backward, forward
from .operators import as_image, fit_to_shape
from .rng import child_seed


@dataclass(frozen=True)
class LossWeights:
    """Variance hyperparameters (inverse weights) of the loss terms plus
    the weight-penalty strength and exponent (1 = lasso, 2 = ridge)."""

    label_variance: float = 1.0
    noise_variance: float = 1.0
    prior_variance: float = 1.0
    weight_strength: float = 0.0
    weight_power: float = 2.0

    def __post_init__(self):
        for name in ("label_variance", "noise_variance", "prior_variance"):
            if not (getattr(self, name) > 0):
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.weight_strength < 0:
            raise ValueError(f"weight_strength must be >= 0, got {self.weight_strength}")
        if self.weight_power not in (1.0, 2.0):
            raise ValueError(f"weight_power must be 1 or 2, got {self.weight_power}")


@dataclass(frozen=True)
class LossBreakdown:
    """Loss value split into its nonnegative parts; total is their sum."""

    total: float
    label_fit: float
    physics_fit: float
    prior_fit: float
    weight_penalty: float

    @classmethod
    def build(cls, label_fit, physics_fit, prior_fit, weight_penalty):
        return cls(
            total=label_fit + physics_fit + prior_fit + weight_penalty,
            label_fit=label_fit,
            physics_fit=physics_fit,
            prior_fit=prior_fit,
            weight_penalty=weight_penalty,
        )

    def scaled(self, factor):
        return LossBreakdown(
            self.total * factor,
            self.label_fit * factor,
            self.physics_fit * factor,
            self.prior_fit * factor,
            self.weight_penalty * factor,
        )


def weight_prior(params, strength, power):
    """Penalty strength * sum |w|^power and its (sub)gradient."""
    if power not in (1.0, 2.0):
        raise ValueError(f"weight_power must be 1 or 2, got {power}")
    if strength < 0:
        raise ValueError(f"weight_strength must be >= 0, got {strength}")
    grads = NetworkParams(params.layers)
    w = params.flat
    if power == 1.0:
        value = strength * float(np.abs(w).sum())
        grads.flat[:] = strength * np.sign(w)
    else:
        value = strength * float(np.dot(w, w))
        grads.flat[:] = 2.0 * strength * w
    return value, grads


def _sqnorm(arr):
    flat = arr.ravel()
    return float(np.dot(flat, flat))


def _net_output_as_image(output, shape, sample):
    if output.size != shape[0] * shape[1]:
        raise ValueError(
            f"network output size {output.size} does not match the "
            f"unknown's shape {shape} (sample {sample})"
        )
    return output.reshape(shape)


def loss_supervised(layers, params, batch, op, prior_mean, weights, seed):
    """Supervised physics-informed loss over a batch of (g, f) pairs.

    Returns (LossBreakdown, gradient NetworkParams).  ``prior_mean``
    defaults to the zero image.  Observations smaller than the unknown
    (super-resolution) are upsampled to the operator's input shape
    before entering the network.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    prior_img = np.zeros(op.input_shape) if prior_mean is None else as_image(prior_mean)
    if prior_img.shape != op.input_shape:
        raise ValueError(f"prior mean shape {prior_img.shape} != {op.input_shape}")
    grads = NetworkParams(tuple(layers))
    label_fit = physics_fit = prior_fit = 0.0
    for i, (g_obs, f_label) in enumerate(batch):
        g_obs = as_image(g_obs)
        f_label = as_image(f_label)
        if g_obs.shape != op.output_shape:
            raise ValueError(f"sample {i}: observation shape {g_obs.shape} != {op.output_shape}")
        if f_label.shape != op.input_shape:
            raise ValueError(f"sample {i}: label shape {f_label.shape} != {op.input_shape}")
        net_in = fit_to_shape(g_obs, op.input_shape)
        mode = EvalMode.train(child_seed(seed, i))
        output, tape = forward(layers, params, net_in, mode)
        f_net = _net_output_as_image(output, op.input_shape, i)

        r_label = f_net - f_label
        r_physics = op.apply(f_net) - g_obs
        r_prior = f_net - prior_img
        label_fit += _sqnorm(r_label) / weights.label_variance
        physics_fit += _sqnorm(r_physics) / weights.noise_variance
        prior_fit += _sqnorm(r_prior) / weights.prior_variance

        grad_img = (
            (2.0 / weights.label_variance) * r_label
            + (2.0 / weights.noise_variance) * op.adjoint(r_physics)
            + (2.0 / weights.prior_variance) * r_prior
        )
        sample_grads, _ = backward(
            layers, params, tape, grad_img.reshape(tape.output_shape)
        )
        grads.flat += sample_grads.flat
    penalty, penalty_grads = weight_prior(
        params, weights.weight_strength, weights.weight_power
    )
    grads.flat += penalty_grads.flat
    breakdown = LossBreakdown.build(label_fit, physics_fit, prior_fit, penalty)
    _check_loss_finite(breakdown, grads)
    return breakdown, grads


def loss_unsupervised(layers, params, batch, op, weights, seed):
    """Physics-only loss over a batch of observations g (no labels):
    sum |g - A net(g)|^2 / v_noise plus an L1 weight penalty."""
    if not batch:
        raise ValueError("batch must be nonempty")
    grads = NetworkParams(tuple(layers))
    physics_fit = 0.0
    for i, g_obs in enumerate(batch):
        g_obs = as_image(g_obs)
        if g_obs.shape != op.output_shape:
            raise ValueError(f"sample {i}: observation shape {g_obs.shape} != {op.output_shape}")
        net_in = fit_to_shape(g_obs, op.input_shape)
        mode = EvalMode.train(child_seed(seed, i))
        output, tape = forward(layers, params, net_in, mode)
        f_net = _net_output_as_image(output, op.input_shape, i)

        r_physics = op.apply(f_net) - g_obs
        physics_fit += _sqnorm(r_physics) / weights.noise_variance
        grad_img = (2.0 / weights.noise_variance) * op.adjoint(r_physics)
        sample_grads, _ = backward(
            layers, params, tape, grad_img.reshape(tape.output_shape)
        )
        grads.flat += sample_grads.flat
    penalty, penalty_grads = weight_prior(params, weights.weight_strength, 1.0)
    grads.flat += penalty_grads.flat
    breakdown = LossBreakdown.build(0.0, physics_fit, 0.0, penalty)
    _check_loss_finite(breakdown, grads)
    return breakdown, grads


def _check_loss_finite(breakdown, grads):
    if not np.isfinite(breakdown.total):
        raise NumericFailure(f"non-finite loss value {breakdown.total}")
    if not np.isfinite(grads.flat).all():
        raise NumericFailure("non-finite loss gradient")

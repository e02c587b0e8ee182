"""Closed-form Gaussian posteriors for linear observation models.

For g = A f + noise with iid Gaussian noise of variance v_eps and a
Gaussian prior N(prior_mean, v_f I) on f, the posterior is Gaussian with

    mean:        (A'A + lam I) fhat = A'g + lam * prior_mean,   lam = v_eps / v_f
    covariance:  v_eps (A'A + lam I)^{-1}

The mean solve is matrix-free conjugate gradients on the normal
operator; the covariance diagonal comes either from explicit inversion
(small grids) or a Hutchinson-style stochastic estimator with Rademacher
probes, one CG solve per probe.  These posteriors double as the exact
reference that the neural surrogate and its dropout uncertainty are
compared against.
"""

from dataclasses import dataclass

import numpy as np

from .operators import as_image, dense_matrix
from .rng import stream

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 2000

# Explicit inversion of the normal matrix is exact but cubic; cap it at
# 64x64 grids (4096 unknowns) and use probing beyond that.
DENSE_VARIANCE_PIXEL_LIMIT = 64 * 64


@dataclass(frozen=True)
class GaussianPrior:
    """Homoscedastic observation-noise variance plus a Gaussian prior on
    the unknown image (one scalar variance, one mean image)."""

    noise_variance: float
    prior_variance: float
    prior_mean: np.ndarray

    def __post_init__(self):
        if not (self.noise_variance > 0):
            raise ValueError(f"noise_variance must be > 0, got {self.noise_variance}")
        if not (self.prior_variance > 0):
            raise ValueError(f"prior_variance must be > 0, got {self.prior_variance}")
        object.__setattr__(self, "prior_mean", as_image(self.prior_mean))

    @property
    def lam(self):
        """Noise-to-prior variance ratio, the regularization strength."""
        return self.noise_variance / self.prior_variance


@dataclass(frozen=True)
class CgReport:
    """Outcome of a conjugate-gradient solve.

    ``residual`` is the recomputed relative residual |b - A x| / |b|
    (absolute when b = 0); ``converged`` means residual <= tol.
    """

    iterations: int
    residual: float
    converged: bool


@dataclass(frozen=True)
class PosteriorEstimate:
    """Posterior mean image, pixelwise variances (the covariance
    diagonal), and the regularization ratio lam = v_eps / v_f used."""

    mean: np.ndarray
    variance: np.ndarray
    lam: float

    def __post_init__(self):
        if (np.asarray(self.variance) < 0).any():
            raise ValueError("posterior variances must be nonnegative")


def cg_solve(matvec, b, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, x0=None):
    """Conjugate gradients for symmetric positive-definite ``matvec``.

    Operates on flat float64 vectors; stops once the recursive residual
    satisfies |r| <= tol * |b|.  The returned report always carries the
    recomputed true residual, so ``report.residual`` is trustworthy even
    on early exit.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    b = np.asarray(b, dtype=np.float64).ravel()
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64).ravel()
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros_like(b), CgReport(iterations=0, residual=0.0, converged=True)
    r = b - matvec(x) if x.any() else b.copy()
    p = r.copy()
    rs = float(np.dot(r, r))
    iterations = 0
    threshold = (tol * b_norm) ** 2
    for iterations in range(1, int(max_iter) + 1):
        if rs <= threshold:
            iterations -= 1
            break
        ap = matvec(p)
        alpha = rs / float(np.dot(p, ap))
        x += alpha * p
        r -= alpha * ap
        rs_next = float(np.dot(r, r))
        p = r + (rs_next / rs) * p
        rs = rs_next
    true_residual = float(np.linalg.norm(b - matvec(x))) / b_norm
    return x, CgReport(
        iterations=iterations,
        residual=true_residual,
        converged=true_residual <= tol,
    )


def normal_matvec(op, lam):
    """Matrix-free x -> (A'A + lam I) x on flat vectors."""
    shape = op.input_shape

    def matvec(x):
        img = x.reshape(shape)
        return (op.adjoint(op.apply(img)) + lam * img).ravel()

    return matvec


def posterior_mean(op, g, prior, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """MAP/posterior-mean image for the linear Gaussian model.

    Solves (A'A + lam I) fhat = A'g + lam * prior_mean by CG.  This is
    the minimizer of |g - A f|^2 / (2 v_eps) + |f - prior_mean|^2 / (2 v_f).
    Non-convergence is reported, not raised; the caller decides.
    """
    g = as_image(g)
    if g.shape != op.output_shape:
        raise ValueError(f"observation shape {g.shape} != operator output {op.output_shape}")
    if prior.prior_mean.shape != op.input_shape:
        raise ValueError(
            f"prior mean shape {prior.prior_mean.shape} != operator input {op.input_shape}"
        )
    lam = prior.lam
    if lam <= 0:
        raise ValueError(f"lam must be positive, got {lam}")
    rhs = (op.adjoint(g) + lam * prior.prior_mean).ravel()
    x, report = cg_solve(normal_matvec(op, lam), rhs, tol=tol, max_iter=max_iter)
    return x.reshape(op.input_shape), report


def posterior_variance_diag(
    op,
    prior,
    method="dense",
    probes=64,
    seed=0,
    tol=DEFAULT_TOL,
    max_iter=DEFAULT_MAX_ITER,
):
    """Pixelwise posterior variances diag(v_eps (A'A + lam I)^{-1}).

    ``method="dense"`` inverts the explicit normal matrix (exact, small
    grids only).  ``method="hutchinson"`` averages z * solve(A'A+lam I, z)
    over Rademacher probes z, an unbiased diagonal estimator; each probe
    solve uses CG and the worst probe solve is reported.  Probe sums are
    Kahan-compensated so the result does not depend on reduction order.
    """
    lam = prior.lam
    n = op.input_shape[0] * op.input_shape[1]
    if method == "dense":
        if n > DENSE_VARIANCE_PIXEL_LIMIT:
            raise ValueError(
                f"dense variance restricted to {DENSE_VARIANCE_PIXEL_LIMIT} pixels, got {n}"
            )
        a = dense_matrix(op)
        normal = a.T @ a + lam * np.eye(n)
        diag = np.diag(np.linalg.inv(normal)).copy()
        variance = (prior.noise_variance * diag).reshape(op.input_shape)
        return variance, CgReport(iterations=0, residual=0.0, converged=True)
    if method != "hutchinson":
        raise ValueError(f"unknown variance method {method!r}")
    probes = int(probes)
    if probes < 1:
        raise ValueError(f"probes must be >= 1, got {probes}")
    matvec = normal_matvec(op, lam)
    total = np.zeros(n)
    comp = np.zeros(n)  # Kahan compensation
    worst = CgReport(iterations=0, residual=0.0, converged=True)
    for m in range(probes):
        z = stream(seed, m).integers(0, 2, size=n) * 2.0 - 1.0
        x, report = cg_solve(matvec, z, tol=tol, max_iter=max_iter)
        if report.residual > worst.residual:
            worst = report
        term = z * x - comp
        new_total = total + term
        comp = (new_total - total) - term
        total = new_total
    variance = (prior.noise_variance / probes) * total
    # the exact diagonal is positive; clamp stray negative estimates
    variance = np.maximum(variance, 0.0)
    return variance.reshape(op.input_shape), worst


def supervised_posterior(
    op,
    g_obs,
    f_label,
    noise_variance,
    label_variance,
    prior,
    tol=DEFAULT_TOL,
    max_iter=DEFAULT_MAX_ITER,
    variance_method=None,
    probes=64,
    seed=0,
):
    """Posterior fusing an observation, a direct noisy label, and the prior.

    Minimizes

        |g - A f|^2 / (2 v_eps) + |f_label - f|^2 / (2 v_label)
                                + |f - prior_mean|^2 / (2 v_0)

    (v_0 = prior.prior_variance).  The label and prior terms fuse into a
    single Gaussian with precision 1/v_label + 1/v_0, so the solve is
    the standard normal system with an effective lam; ``prior.noise_variance``
    is ignored in favor of the explicit ``noise_variance`` argument.
    """
    g_obs = as_image(g_obs)
    f_label = as_image(f_label)
    if not (noise_variance > 0) or not (label_variance > 0):
        raise ValueError("noise_variance and label_variance must be > 0")
    if g_obs.shape != op.output_shape:
        raise ValueError(f"observation shape {g_obs.shape} != operator output {op.output_shape}")
    if f_label.shape != op.input_shape:
        raise ValueError(f"label shape {f_label.shape} != operator input {op.input_shape}")
    if prior.prior_mean.shape != op.input_shape:
        raise ValueError("prior mean shape does not match the operator input")
    v0 = prior.prior_variance
    fused_precision = 1.0 / label_variance + 1.0 / v0
    lam_eff = noise_variance * fused_precision
    rhs = (
        op.adjoint(g_obs)
        + noise_variance * (f_label / label_variance + prior.prior_mean / v0)
    ).ravel()
    x, report = cg_solve(normal_matvec(op, lam_eff), rhs, tol=tol, max_iter=max_iter)
    fused = GaussianPrior(
        noise_variance=noise_variance,
        prior_variance=1.0 / fused_precision,
        prior_mean=prior.prior_mean,
    )
    if variance_method is None:
        n = op.input_shape[0] * op.input_shape[1]
        variance_method = "dense" if n <= DENSE_VARIANCE_PIXEL_LIMIT else "hutchinson"
    variance, var_report = posterior_variance_diag(
        op, fused, method=variance_method, probes=probes, seed=seed,
        tol=tol, max_iter=max_iter,
    )
    estimate = PosteriorEstimate(mean=x.reshape(op.input_shape), variance=variance, lam=lam_eff)
    worst = report if report.residual >= var_report.residual else var_report
    return estimate, worst

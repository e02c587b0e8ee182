"""Physics-informed neural inversion for imaging.

Building blocks for linear image inverse problems (deblurring,
super-resolution): matrix-free forward operators, conjugate-gradient
Gaussian posteriors, a small from-scratch neural network trained with
physics-informed losses, Monte Carlo dropout uncertainty, synthetic
dataset generation, and a batch CLI tying them together.
"""

__version__ = "0.1.0"

from .bayes import (
    CgReport,
    GaussianPrior,
    PosteriorEstimate,
    cg_solve,
    posterior_mean,
    posterior_variance_diag,
    supervised_posterior,
)
from .datagen import (
    Dataset,
    Sample,
    SceneConfig,
    dataset_operator,
    generate_dataset,
    generate_source_image,
    load_dataset,
    save_dataset,
    simulate_observation,
)
from .losses import (
    LossBreakdown,
    LossWeights,
    loss_supervised,
    loss_unsupervised,
    weight_prior,
)
from .metrics import MetricsReport, compute_metrics
from .network import (
    EvalMode,
    LayerSpec,
    NetworkParams,
    backward,
    conv2d,
    dense,
    dropout,
    forward,
    init_params,
    load_checkpoint,
    relu,
    save_checkpoint,
)
from .operators import (
    LinearOperator,
    adjoint_dot_test,
    blur_operator,
    compose,
    convolve_2d,
    convolve_adjoint_2d,
    delta_psf,
    dense_matrix,
    diagonal_operator,
    downsample,
    downsample_adjoint,
    downsample_operator,
    forward_model,
    gaussian_psf,
    identity_operator,
    upsample_nearest,
)
from .training import (
    TrainConfig,
    TrainHistory,
    evaluate,
    optimizer_step,
    split_dataset,
    train,
)
from .uq import UqResult, compare_with_analytic, mc_dropout_predict, point_estimate

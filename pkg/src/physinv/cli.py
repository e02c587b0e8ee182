"""Batch command-line interface.

Commands: gen-data, train, infer, analytic-solve, check, metrics.  All
parameters come from a config file (see physinv.config) plus explicit
paths and seeds; reruns with the same inputs produce byte-identical
artifacts.  Data-producing commands also render PNG figures next to
their outputs unless --no-figures is given.

Exit codes (stable contract):
    0  success
    1  check failure (failed numerical check, non-converged solve)
    2  config/argument error
    3  I/O error (unreadable, corrupt, or unwritable data files)
    4  divergence or numerical failure during training
    5  checkpoint corruption
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bayes import GaussianPrior, posterior_mean, posterior_variance_diag
from .config import (
    network_from_config,
    parse_config,
    psf_from_config,
    scene_from_config,
    train_config_from_config,
)
from .datagen import dataset_operator, generate_dataset, load_dataset, save_dataset
from .errors import (
    ConfigError,
    DivergenceError,
    FileFormatError,
    NumericFailure,
)
from .images import read_image, write_image
from .losses import LossWeights, loss_supervised
from .metrics import METRIC_COLUMNS, compute_metrics
from .network import init_params, load_checkpoint
from .operators import (
    LinearOperator,
    adjoint_dot_test,
    blur_operator,
    compose,
    conv_same,
    downsample_operator,
    forward_model,
    gaussian_psf,
    normalize_psf,
)
from .rng import stream
from .training import save_checkpoint, split_dataset, train
from .uq import mc_dropout_predict

ADJOINT_THRESHOLD = 1e-10
GRADIENT_THRESHOLD = 1e-5


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"invalid arguments: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 4
    except NumericFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except FileFormatError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


def build_parser():
    parser = argparse.ArgumentParser(
        prog="physinv",
        description="Physics-informed neural inversion for image deblurring "
        "and super-resolution.",
    )
    parser.add_argument("--version", action="version", version=f"physinv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    p.add_argument("config", help="run config with [dataset] and [scene] sections")
    p.add_argument("-o", "--output", required=True, help="dataset file to write (.bpds)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", help="train the inversion network on a dataset")
    p.add_argument("config", help="run config with a [train] section")
    p.add_argument("dataset", help="dataset file (.bpds)")
    p.add_argument("-o", "--output", required=True, help="checkpoint file to write (.bpnn)")
    p.add_argument("--history", help="history table path (default: <output>.history.tsv)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("infer", help="reconstruct an image with dropout uncertainty")
    p.add_argument("checkpoint", help="trained checkpoint (.bpnn)")
    p.add_argument("input", help="observed image (.bpim or .pgm)")
    p.add_argument("-o", "--outdir", required=True, help="directory for outputs")
    p.add_argument("--passes", type=int, default=50, help="dropout passes (default 50)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--upsample", type=int, default=1,
                   help="nearest-neighbour input upsampling factor (super-resolution)")
    p.add_argument("--truth", help="ground-truth image for metrics")
    p.add_argument("--peak", type=float, default=1.0, help="PSNR peak value")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("analytic-solve", help="exact Gaussian posterior for an image")
    p.add_argument("config", help="run config with [analytic] (and [psf]) sections")
    p.add_argument("input", help="observed image (.bpim or .pgm)")
    p.add_argument("-o", "--outdir", required=True, help="directory for outputs")
    p.add_argument("--prior-mean", help="prior mean image (default: zeros)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(handler=cmd_analytic)

    p = sub.add_parser("check", help="run the standing numerical self-checks")
    p.add_argument("what", choices=["adjoint", "grad", "all"])
    p.add_argument("--break-adjoint", action="store_true",
                   help="deliberately corrupt one adjoint to demonstrate detection")
    p.set_defaults(handler=cmd_check)

    p = sub.add_parser("metrics", help="compare a reconstruction with ground truth")
    p.add_argument("estimate", help="reconstructed image")
    p.add_argument("truth", help="ground-truth image")
    p.add_argument("--peak", type=float, default=1.0)
    p.set_defaults(handler=cmd_metrics)
    return parser


def cmd_gen_data(args):
    cfg = parse_config(args.config).require("dataset", "scene")
    scene = scene_from_config(cfg)
    psf = psf_from_config(cfg)
    values = cfg["dataset"]
    ds = generate_dataset(
        scene,
        values["task"],
        psf,
        values["downsample_factor"],
        values["noise_variance"],
        values["count"],
        values["supervised"],
        values["seed"],
    )
    out = Path(args.output)
    save_dataset(ds, out)
    h, w = ds.unknown_shape
    print(
        f"wrote {len(ds)} samples  task={ds.task}  unknown={h}x{w}  "
        f"supervised={ds.supervised}  seed={ds.generator_seed}  -> {out}"
    )
    if not args.no_figures:
        from .figures import save_dataset_montage

        save_dataset_montage(out.with_suffix(".samples.png"), ds)
    return 0


def cmd_train(args):
    cfg = parse_config(args.config).require("train")
    config = train_config_from_config(cfg)
    ds = load_dataset(args.dataset)
    op = dataset_operator(ds)
    layers = network_from_config(cfg)
    train_ds, val_ds = split_dataset(ds, config.split_fraction, config.seed)
    params, history = train(layers, config, train_ds, op, val=val_ds)
    out = Path(args.output)
    save_checkpoint(out, layers, params)
    history_path = Path(args.history) if args.history else Path(f"{out}.history.tsv")
    history_path.write_text(history.to_table())
    final = history.records[-1].train_loss if history.records else None
    if final is not None:
        print(
            f"trained {config.epochs} epochs on {len(train_ds)} samples  "
            f"final total={final.total:.6g}  physics={final.physics_fit:.6g}  "
            f"label={final.label_fit:.6g}"
        )
    else:
        print("trained 0 epochs (checkpoint holds the initialization)")
    print(f"checkpoint -> {out}")
    print(f"history    -> {history_path}")
    if not args.no_figures and history.records:
        from .figures import save_history_curves

        save_history_curves(Path(f"{out}.history.png"), history)
    return 0


def cmd_infer(args):
    try:
        layers, params = load_checkpoint(args.checkpoint)
    except FileFormatError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 5
    g = read_image(args.input)
    target = None
    if args.upsample > 1:
        target = (g.shape[0] * args.upsample, g.shape[1] * args.upsample)
    result = mc_dropout_predict(
        layers, params, g, passes=args.passes, seed=args.seed, target_shape=target
    )
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    mean_path = outdir / f"{stem}_mean.bpim"
    var_path = outdir / f"{stem}_var.bpim"
    write_image(result.mean, mean_path)
    write_image(result.variance, var_path)
    write_image(result.mean, outdir / f"{stem}_mean.pgm", format="pgm16")
    write_image(result.variance, outdir / f"{stem}_var.pgm", format="pgm16")
    print(f"mean     -> {mean_path}")
    print(f"variance -> {var_path}")
    if result.degenerate:
        print("note: no positive dropout rate in this network; variance is zero")
    panels = [("observed", g), ("mean", result.mean), ("std", np.sqrt(result.variance))]
    if args.truth:
        truth = read_image(args.truth)
        report = compute_metrics(result.mean, truth, peak=args.peak)
        print("\t".join(METRIC_COLUMNS))
        print(report.as_row())
        panels.insert(0, ("truth", truth))
    if not args.no_figures:
        from .figures import save_image_panel

        save_image_panel(outdir / f"{stem}_panel.png", panels,
                         suptitle=f"{result.passes} dropout passes")
    return 0


def cmd_analytic(args):
    cfg = parse_config(args.config).require("analytic")
    values = cfg["analytic"]
    g = read_image(args.input)
    psf = psf_from_config(cfg)
    task = cfg["dataset"]["task"] if cfg.has("dataset") else "deblur"
    factor = cfg["dataset"]["downsample_factor"] if cfg.has("dataset") else 1
    if task == "superres":
        shape = (g.shape[0] * factor, g.shape[1] * factor)
        op = compose(blur_operator(g.shape, psf), downsample_operator(shape, factor))
    else:
        op = blur_operator(g.shape, psf)
    if args.prior_mean:
        prior_mean = read_image(args.prior_mean)
    else:
        prior_mean = np.zeros(op.input_shape)
    prior = GaussianPrior(values["noise_variance"], values["prior_variance"], prior_mean)
    mean, report = posterior_mean(
        op, g, prior, tol=values["tol"], max_iter=values["max_iter"]
    )
    variance, var_report = posterior_variance_diag(
        op,
        prior,
        method=values["variance_method"],
        probes=values["probes"],
        seed=values["seed"],
        tol=values["tol"],
        max_iter=values["max_iter"],
    )
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    mean_path = outdir / f"{stem}_posterior_mean.bpim"
    var_path = outdir / f"{stem}_posterior_var.bpim"
    write_image(mean, mean_path)
    write_image(variance, var_path)
    write_image(mean, outdir / f"{stem}_posterior_mean.pgm", format="pgm16")
    print(f"lam={prior.lam:.6g}  cg_iterations={report.iterations}  "
          f"cg_residual={report.residual:.3e}  converged={report.converged}")
    print(f"mean     -> {mean_path}")
    print(f"variance -> {var_path}")
    if not args.no_figures:
        from .figures import save_image_panel

        save_image_panel(
            outdir / f"{stem}_posterior_panel.png",
            [("observed", g), ("posterior mean", mean), ("posterior std", np.sqrt(variance))],
        )
    if not (report.converged and var_report.converged):
        print("CG did not converge within max_iter", file=sys.stderr)
        return 1
    return 0


def cmd_check(args):
    failed = False
    if args.what in ("adjoint", "all"):
        failed |= not _check_adjoints(args.break_adjoint)
    if args.what in ("grad", "all"):
        failed |= not _check_gradients()
    print("FAIL" if failed else "OK")
    return 1 if failed else 0


def _check_adjoints(break_adjoint):
    psf = gaussian_psf(3, 1.0)
    cases = {
        "convolution": blur_operator((8, 8), psf),
        "downsampling": downsample_operator((8, 8), 2),
        "composition": forward_model((8, 8), psf, factor=2),
    }
    if break_adjoint:
        # an asymmetric kernel whose adjoint "forgets" the 180-degree flip
        kernel = normalize_psf(np.arange(9.0).reshape(3, 3))
        cases["broken (intentional)"] = LinearOperator(
            (8, 8), (8, 8),
            lambda x: conv_same(x, kernel),
            lambda y: conv_same(y, kernel),
        )
    ok = True
    for name, op in cases.items():
        residual = adjoint_dot_test(op, trials=100, seed=0)
        passed = residual <= ADJOINT_THRESHOLD
        ok &= passed
        print(f"adjoint {name:22s} max residual {residual:.3e}  "
              f"{'pass' if passed else 'FAIL'}")
    return ok


def _check_gradients():
    from .network import conv2d, dropout, relu

    layers = [conv2d(1, 2, 3), relu(), dropout(0.2), conv2d(2, 1, 3)]
    params = init_params(layers, seed=0)
    # keep pre-activations off the ReLU kink, where central differences
    # are one-sided
    for bias in params.biases:
        if bias is not None:
            bias[...] = 0.05
    op = blur_operator((6, 6), gaussian_psf(3, 1.0))
    rng = stream(1)
    batch = [(rng.standard_normal((6, 6)), rng.standard_normal((6, 6)))]
    weights = LossWeights(1.0, 0.1, 10.0, 1e-3, 2.0)
    _, grads = loss_supervised(layers, params, batch, op, None, weights, seed=2)
    numeric = np.zeros(params.size)
    h = 1e-5
    for j in range(params.size):
        orig = params.flat[j]
        params.flat[j] = orig + h
        plus, _ = loss_supervised(layers, params, batch, op, None, weights, seed=2)
        params.flat[j] = orig - h
        minus, _ = loss_supervised(layers, params, batch, op, None, weights, seed=2)
        params.flat[j] = orig
        numeric[j] = (plus.total - minus.total) / (2 * h)
    scale = np.maximum(np.maximum(np.abs(grads.flat), np.abs(numeric)), 1e-4)
    error = float(np.max(np.abs(grads.flat - numeric) / scale))
    passed = error <= GRADIENT_THRESHOLD
    print(f"gradient check ({params.size} parameters) max relative error "
          f"{error:.3e}  {'pass' if passed else 'FAIL'}")
    return passed


def cmd_metrics(args):
    estimate = read_image(args.estimate)
    truth = read_image(args.truth)
    report = compute_metrics(estimate, truth, peak=args.peak)
    print("\t".join(METRIC_COLUMNS))
    print(report.as_row())
    return 0


if __name__ == "__main__":
    sys.exit(main())

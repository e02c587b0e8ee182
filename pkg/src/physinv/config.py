"""Run configuration files.

One INI-style text file (sections of key = value pairs, # comments)
drives every CLI command, so paper-scale runs are reproducible from a
checked-in config.  Every key is validated against the schema below;
unknown sections or keys and out-of-range values raise ConfigError
naming the offending entry as "section.key".

Sections (all optional at parse time; each command requires its own):

    [dataset]   task, count, supervised, noise_variance, seed, downsample_factor
    [scene]     height, width, blob_count_min/max, amplitude_min/max,
                sigma_min/max, background
    [psf]       size, sigma
    [network]   channels (space-separated), kernel_size, dropout_rate
    [train]     mode, optimizer, learning_rate, epochs, batch_size, seed,
                split_fraction
    [loss]      label_variance, noise_variance, prior_variance,
                weight_strength, weight_power
    [analytic]  noise_variance, prior_variance, tol, max_iter,
                variance_method, probes, seed
"""

import configparser
from dataclasses import dataclass

from .datagen import SceneConfig
from .errors import ConfigError
from .losses import LossWeights
from .network import conv2d, dropout, relu
from .operators import gaussian_psf
from .training import TrainConfig

_MISSING = object()


def _int(raw):
    return int(raw, 0)


def _float(raw):
    return float(raw)


def _bool(raw):
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _int_list(raw):
    return tuple(int(tok) for tok in raw.split())


def _choice(*options):
    def parse(raw):
        value = raw.strip()
        if value not in options:
            raise ValueError(f"must be one of {options}, got {raw!r}")
        return value

    return parse


# section -> key -> (parser, default); _MISSING marks required keys
SCHEMA = {
    "dataset": {
        "task": (_choice("deblur", "superres"), "deblur"),
        "count": (_int, _MISSING),
        "supervised": (_bool, True),
        "noise_variance": (_float, 1e-4),
        "seed": (_int, 0),
        "downsample_factor": (_int, 1),
    },
    "scene": {
        "height": (_int, _MISSING),
        "width": (_int, _MISSING),
        "blob_count_min": (_int, 2),
        "blob_count_max": (_int, 6),
        "amplitude_min": (_float, 0.5),
        "amplitude_max": (_float, 1.0),
        "sigma_min": (_float, 2.0),
        "sigma_max": (_float, 10.0),
        "background": (_float, 0.0),
    },
    "psf": {
        "size": (_int, 9),
        "sigma": (_float, 2.0),
    },
    "network": {
        "channels": (_int_list, (16, 32, 16)),
        "kernel_size": (_int, 3),
        "dropout_rate": (_float, 0.1),
    },
    "train": {
        "mode": (_choice("supervised", "unsupervised"), _MISSING),
        "optimizer": (_choice("sgd", "adam"), "adam"),
        "learning_rate": (_float, 1e-3),
        "epochs": (_int, 50),
        "batch_size": (_int, 8),
        "seed": (_int, 0),
        "split_fraction": (_float, 0.8),
    },
    "loss": {
        "label_variance": (_float, 1.0),
        "noise_variance": (_float, 1.0),
        "prior_variance": (_float, 1.0),
        "weight_strength": (_float, 0.0),
        "weight_power": (_float, 2.0),
    },
    "analytic": {
        "noise_variance": (_float, _MISSING),
        "prior_variance": (_float, _MISSING),
        "tol": (_float, 1e-8),
        "max_iter": (_int, 2000),
        "variance_method": (_choice("dense", "hutchinson"), "dense"),
        "probes": (_int, 64),
        "seed": (_int, 0),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Validated config values, one dict per present section."""

    sections: dict
    path: str

    def has(self, section):
        return section in self.sections

    def require(self, *names):
        for name in names:
            if name not in self.sections:
                raise ConfigError(
                    f"config {self.path} is missing the required [{name}] section",
                    key=name,
                )
        return self

    def __getitem__(self, section):
        return self.sections[section]


def parse_config(path):
    """Read and validate a config file into a :class:`RunConfig`."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       inline_comment_prefixes=("#",))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc

    sections = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", key=section)
        schema = SCHEMA[section]
        values = {}
        for key, raw in parser.items(section):
            if key not in schema:
                raise ConfigError("unknown key", key=f"{section}.{key}")
            parse, _ = schema[key]
            try:
                values[key] = parse(raw)
            except ValueError as exc:
                raise ConfigError(str(exc), key=f"{section}.{key}") from exc
        for key, (_, default) in schema.items():
            if key in values:
                continue
            if default is _MISSING:
                raise ConfigError("required key is missing", key=f"{section}.{key}")
            values[key] = default
        sections[section] = values
    return RunConfig(sections=sections, path=str(path))


def _wrap(section, exc):
    raise ConfigError(str(exc), key=section) from exc


def scene_from_config(cfg):
    values = cfg["scene"]
    try:
        return SceneConfig(
            height=values["height"],
            width=values["width"],
            blob_count_range=(values["blob_count_min"], values["blob_count_max"]),
            amplitude_range=(values["amplitude_min"], values["amplitude_max"]),
            blob_sigma_range=(values["sigma_min"], values["sigma_max"]),
            background_level=values["background"],
        )
    except ValueError as exc:
        _wrap("scene", exc)


def psf_from_config(cfg):
    values = cfg["psf"] if cfg.has("psf") else {"size": 9, "sigma": 2.0}
    try:
        return gaussian_psf(values["size"], values["sigma"])
    except ValueError as exc:
        _wrap("psf", exc)


def network_from_config(cfg):
    """Build the layer list: one input conv, hidden convs with ReLU,
    dropout after every hidden layer except the first, linear conv head."""
    values = cfg["network"] if cfg.has("network") else {
        "channels": (16, 32, 16), "kernel_size": 3, "dropout_rate": 0.1,
    }
    channels = values["channels"]
    if not channels:
        raise ConfigError("needs at least one hidden layer", key="network.channels")
    k = values["kernel_size"]
    rate = values["dropout_rate"]
    layers = []
    previous = 1
    try:
        for i, width in enumerate(channels):
            layers.append(conv2d(previous, width, k))
            layers.append(relu())
            if i > 0 and rate > 0:
                layers.append(dropout(rate))
            previous = width
        layers.append(conv2d(previous, 1, k))
    except ValueError as exc:
        _wrap("network", exc)
    return layers


def loss_weights_from_config(cfg):
    values = cfg["loss"] if cfg.has("loss") else {}
    try:
        return LossWeights(**values) if values else LossWeights()
    except ValueError as exc:
        _wrap("loss", exc)


def train_config_from_config(cfg):
    values = cfg["train"]
    try:
        return TrainConfig(
            mode=values["mode"],
            optimizer=values["optimizer"],
            learning_rate=values["learning_rate"],
            epochs=values["epochs"],
            batch_size=values["batch_size"],
            loss_weights=loss_weights_from_config(cfg),
            seed=values["seed"],
            split_fraction=values["split_fraction"],
        )
    except ValueError as exc:
        _wrap("train", exc)

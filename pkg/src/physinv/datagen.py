"""Synthetic infrared-style scenes and simulated observations.

A source image is a constant background plus a few isotropic Gaussian
hot spots; an observation is the forward model applied to it plus iid
Gaussian noise.  Sample i of a dataset draws its scene from the stream
path (i, 0) and its noise from (i, 1), so samples are independent and
individually reproducible from the master seed.

Within one scene, the draw order from its stream is: blob count
(integers, inclusive range), then per blob center row, center column,
amplitude, sigma (all uniform).  Tests replay this order to pin values.
"""

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    StructureError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .operators import as_image, blur_operator, compose, downsample_operator, validate_psf
from .rng import child_seed, stream

TASKS = ("deblur", "superres")


@dataclass(frozen=True)
class SceneConfig:
    """Ranges for the random scene generator (all ranges inclusive)."""

    height: int
    width: int
    blob_count_range: tuple = (2, 6)
    amplitude_range: tuple = (0.5, 1.0)
    blob_sigma_range: tuple = (2.0, 10.0)
    background_level: float = 0.0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"scene size must be positive, got {self.height}x{self.width}")
        for name in ("blob_count_range", "amplitude_range", "blob_sigma_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: ({lo}, {hi})")
        if self.blob_count_range[0] < 0:
            raise ValueError("blob counts must be nonnegative")
        if self.amplitude_range[0] < 0:
            raise ValueError("amplitudes must be nonnegative")
        if self.blob_sigma_range[0] <= 0:
            raise ValueError("blob sigmas must be positive")
        if not np.isfinite(self.background_level):
            raise ValueError("background level must be finite")


@dataclass(frozen=True)
class Sample:
    g: np.ndarray
    f: np.ndarray | None = None


@dataclass(frozen=True)
class Dataset:
    """Observation samples plus everything needed to rebuild the forward
    model that produced them."""

    samples: tuple
    task: str
    noise_variance: float
    psf: np.ndarray
    downsample_factor: int
    generator_seed: int

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "deblur" and self.downsample_factor != 1:
            raise ValueError("deblur datasets must have downsample_factor 1")
        if self.task == "superres" and self.downsample_factor < 2:
            raise ValueError("superres datasets need downsample_factor >= 2")
        object.__setattr__(self, "samples", tuple(self.samples))
        labeled = [s.f is not None for s in self.samples]
        if any(labeled) and not all(labeled):
            raise ValueError("datasets must be fully labeled or fully unlabeled")
        for i, s in enumerate(self.samples):
            if s.f is not None:
                expected = (
                    s.f.shape[0] // self.downsample_factor,
                    s.f.shape[1] // self.downsample_factor,
                )
                if s.g.shape != expected:
                    raise ValueError(
                        f"sample {i}: observation shape {s.g.shape} inconsistent "
                        f"with label {s.f.shape} and factor {self.downsample_factor}"
                    )

    def __len__(self):
        return len(self.samples)

    @property
    def supervised(self):
        return bool(self.samples) and self.samples[0].f is not None

    @property
    def observation_shape(self):
        return self.samples[0].g.shape

    @property
    def unknown_shape(self):
        h, w = self.observation_shape
        return (h * self.downsample_factor, w * self.downsample_factor)


def dataset_operator(ds):
    """Forward model matching the dataset's metadata."""
    if ds.task == "deblur":
        return blur_operator(ds.unknown_shape, ds.psf)
    return compose(
        blur_operator(ds.observation_shape, ds.psf),
        downsample_operator(ds.unknown_shape, ds.downsample_factor),
    )


def generate_source_image(cfg, seed):
    """Background plus k isotropic Gaussian blobs, fully seeded."""
    rng = stream(seed)
    count = int(rng.integers(cfg.blob_count_range[0], cfg.blob_count_range[1] + 1))
    rows = np.arange(cfg.height, dtype=np.float64)[:, np.newaxis]
    cols = np.arange(cfg.width, dtype=np.float64)[np.newaxis, :]
    img = np.full((cfg.height, cfg.width), float(cfg.background_level))
    for _ in range(count):
        cy = rng.uniform(0.0, cfg.height - 1.0)
        cx = rng.uniform(0.0, cfg.width - 1.0)
        amplitude = rng.uniform(*cfg.amplitude_range)
        sigma = rng.uniform(*cfg.blob_sigma_range)
        img += amplitude * np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2 * sigma**2))
    return img


def simulate_observation(f, op, noise_variance, seed):
    """g = A f + noise, with iid zero-mean Gaussian noise of the given
    variance drawn from stream(seed)."""
    if noise_variance < 0:
        raise ValueError(f"noise_variance must be >= 0, got {noise_variance}")
    clean = op.apply(as_image(f))
    if noise_variance == 0:
        return clean
    noise = stream(seed).standard_normal(clean.shape) * np.sqrt(noise_variance)
    return clean + noise


def generate_dataset(scene, task, psf, factor, noise_variance, count, supervised, seed):
    """Generate ``count`` independent samples under the task's forward model."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    psf = validate_psf(psf)
    factor = 1 if task == "deblur" else int(factor)
    shape = (scene.height, scene.width)
    if task == "superres":
        op = compose(
            blur_operator((shape[0] // factor, shape[1] // factor), psf),
            downsample_operator(shape, factor),
        )
    else:
        op = blur_operator(shape, psf)
    samples = []
    for i in range(count):
        f = generate_source_image(scene, child_seed(seed, i, 0))
        g = simulate_observation(f, op, noise_variance, child_seed(seed, i, 1))
        samples.append(Sample(g=g, f=f if supervised else None))
    return Dataset(
        samples=tuple(samples),
        task=task,
        noise_variance=float(noise_variance),
        psf=psf,
        downsample_factor=factor,
        generator_seed=int(seed),
    )


# --------------------------------------------------------------------------
# Dataset file format "BPDS" (documented in README.md):
#   magic "BPDS" | version u32 | task u32 (0 deblur, 1 superres)
#   | supervised u32 | sample_count u32 | f_height u32 | f_width u32
#   | g_height u32 | g_width u32 | downsample_factor u32
#   | noise_variance f64 | generator_seed i64 | psf_size u32
#   | psf f64s | per sample (f f64s when supervised, then g f64s)
#   | CRC-32 u32
# All integers little-endian, floats little-endian IEEE 754 doubles.
# The CRC covers everything after the version field and before itself.
# --------------------------------------------------------------------------

DATASET_MAGIC = b"BPDS"
DATASET_VERSION = 1
_TASK_CODES = {"deblur": 0, "superres": 1}
_CODE_TASKS = {v: k for k, v in _TASK_CODES.items()}
_FIXED_HEADER_BYTES = 4 + 4 + 4 * 8 + 8 + 8 + 4  # magic through psf_size


def _u32(value):
    return int(value).to_bytes(4, "little")


def save_dataset(ds, path):
    f_shape = ds.unknown_shape
    g_shape = ds.observation_shape
    body = _u32(DATASET_VERSION)
    body += _u32(_TASK_CODES[ds.task])
    body += _u32(1 if ds.supervised else 0)
    body += _u32(len(ds))
    body += _u32(f_shape[0]) + _u32(f_shape[1])
    body += _u32(g_shape[0]) + _u32(g_shape[1])
    body += _u32(ds.downsample_factor)
    body += np.float64(ds.noise_variance).tobytes()
    body += int(ds.generator_seed).to_bytes(8, "little", signed=True)
    body += _u32(ds.psf.shape[0])
    body += np.ascontiguousarray(ds.psf, dtype="<f8").tobytes()
    for sample in ds.samples:
        if sample.f is not None:
            body += np.ascontiguousarray(sample.f, dtype="<f8").tobytes()
        body += np.ascontiguousarray(sample.g, dtype="<f8").tobytes()
    crc = zlib.crc32(body[4:])
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC + body + _u32(crc))


def load_dataset(path):
    """Read a dataset file, verifying magic, version, size, checksum and
    structure, each failure with its own named error."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4:
        raise TruncatedFileError("file shorter than the magic bytes")
    if data[:4] != DATASET_MAGIC:
        raise BadMagicError(f"not a dataset file: bad magic {data[:4]!r}")
    if len(data) < _FIXED_HEADER_BYTES:
        raise TruncatedFileError("file ends inside the fixed header")
    version = int.from_bytes(data[4:8], "little")
    if version != DATASET_VERSION:
        raise UnsupportedVersionError(
            f"dataset version {version} unsupported (expected {DATASET_VERSION})"
        )
    pos = 8
    fields = []
    for _ in range(7):
        fields.append(int.from_bytes(data[pos : pos + 4], "little"))
        pos += 4
    task_code, supervised_flag, count, f_h, f_w, g_h, g_w = fields
    factor = int.from_bytes(data[pos : pos + 4], "little")
    pos += 4
    noise_variance = float(np.frombuffer(data[pos : pos + 8], dtype="<f8")[0])
    pos += 8
    generator_seed = int.from_bytes(data[pos : pos + 8], "little", signed=True)
    pos += 8
    psf_size = int.from_bytes(data[pos : pos + 4], "little")
    pos += 4

    sample_floats = (f_h * f_w if supervised_flag else 0) + g_h * g_w
    expected = pos + 8 * (psf_size * psf_size + count * sample_floats) + 4
    if len(data) < expected:
        raise TruncatedFileError(
            f"file has {len(data)} bytes but the header declares {expected}"
        )
    if len(data) > expected:
        raise StructureError(
            f"file has {len(data) - expected} bytes beyond the declared payload"
        )
    stored_crc = int.from_bytes(data[-4:], "little")
    actual_crc = zlib.crc32(data[8:-4])
    if stored_crc != actual_crc:
        raise ChecksumError(
            f"dataset CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )
    if task_code not in _CODE_TASKS:
        raise StructureError(f"unknown task code {task_code}")
    if factor < 1 or f_h != g_h * factor or f_w != g_w * factor:
        raise StructureError(
            f"declared shapes {f_h}x{f_w} -> {g_h}x{g_w} do not match factor {factor}"
        )
    psf_bytes = 8 * psf_size * psf_size
    psf = np.frombuffer(data[pos : pos + psf_bytes], dtype="<f8").reshape(psf_size, psf_size)
    pos += psf_bytes
    samples = []
    for _ in range(count):
        f_img = None
        if supervised_flag:
            n = 8 * f_h * f_w
            f_img = np.frombuffer(data[pos : pos + n], dtype="<f8").reshape(f_h, f_w).copy()
            pos += n
        n = 8 * g_h * g_w
        g_img = np.frombuffer(data[pos : pos + n], dtype="<f8").reshape(g_h, g_w).copy()
        pos += n
        samples.append(Sample(g=g_img, f=f_img))
    try:
        return Dataset(
            samples=tuple(samples),
            task=_CODE_TASKS[task_code],
            noise_variance=noise_variance,
            psf=validate_psf(psf.copy()),
            downsample_factor=factor,
            generator_seed=generator_seed,
        )
    except ValueError as exc:
        raise StructureError(f"dataset contents are inconsistent: {exc}") from exc

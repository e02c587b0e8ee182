"""Small feed-forward networks with exact reverse-mode gradients.

Layer kinds: dense, 2D convolution (zero-padded "same", true convolution
matching physinv.operators), ReLU, and inverted dropout.  Everything is
float64 numpy; no framework.

Parameters for all layers live in one flat vector; the per-layer weight
and bias arrays are numpy views into it, so an optimizer updating the
flat vector is immediately visible through the structured views and
vice versa.

Dropout is the only source of randomness.  In ``train`` and
``stochastic`` modes, dropout layer L of a pass seeded s keeps each unit
where ``stream(s, L).random(shape) >= rate`` (float64 draws, C order)
and scales survivors by 1/(1 - rate), so the deterministic mode (no
mask, no scaling) matches the mask expectation for a linear tail.
Masks are recorded on the forward tape and replayed exactly in backward.
ReLU's derivative at exactly 0 is defined as 0.
"""

import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    NumericFailure,
    StructureError,
    UnsupportedVersionError,
)
from .rng import stream

LAYER_KINDS = ("dense", "conv2d", "relu", "dropout")


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a network; only the fields for its kind are meaningful."""

    kind: str
    in_dim: int = 0
    out_dim: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 0
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dense" and (self.in_dim < 1 or self.out_dim < 1):
            raise ValueError(f"dense layer needs positive dims, got {self.in_dim}x{self.out_dim}")
        if self.kind == "conv2d":
            if self.in_channels < 1 or self.out_channels < 1:
                raise ValueError("conv2d layer needs positive channel counts")
            if self.kernel_size < 1 or self.kernel_size % 2 == 0:
                raise ValueError(f"conv2d kernel size must be odd, got {self.kernel_size}")
        if self.kind == "dropout" and not (0.0 <= self.rate < 1.0):
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")


def dense(in_dim, out_dim):
    return LayerSpec("dense", in_dim=int(in_dim), out_dim=int(out_dim))


def conv2d(in_channels, out_channels, kernel_size=3):
    return LayerSpec(
        "conv2d",
        in_channels=int(in_channels),
        out_channels=int(out_channels),
        kernel_size=int(kernel_size),
    )


def relu():
    return LayerSpec("relu")


def dropout(rate):
    return LayerSpec("dropout", rate=float(rate))


@dataclass(frozen=True)
class EvalMode:
    """Forward-pass mode: dropout masks are drawn iff kind is "train" or
    "stochastic"; "deterministic" applies no masks and no scaling."""

    kind: str
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("train", "deterministic", "stochastic"):
            raise ValueError(f"unknown eval mode {self.kind!r}")

    @classmethod
    def train(cls, seed):
        return cls("train", int(seed))

    @classmethod
    def deterministic(cls):
        return cls("deterministic")

    @classmethod
    def stochastic(cls, seed):
        return cls("stochastic", int(seed))

    @property
    def dropout_active(self):
        return self.kind != "deterministic"


def _param_shapes(spec):
    """(weight_shape, bias_shape) for a layer, or None for param-free kinds."""
    if spec.kind == "dense":
        return (spec.out_dim, spec.in_dim), (spec.out_dim,)
    if spec.kind == "conv2d":
        return (
            (spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size),
            (spec.out_channels,),
        )
    return None


class NetworkParams:
    """All network parameters in one flat float64 vector.

    ``weights[i]`` and ``biases[i]`` are views into ``flat`` (None for
    param-free layers); layer order is weights then biases, which is also
    the declaration order of the checkpoint payload.
    """

    def __init__(self, layers):
        self.layers = tuple(layers)
        total = 0
        for spec in self.layers:
            shapes = _param_shapes(spec)
            if shapes is not None:
                total += int(np.prod(shapes[0])) + int(np.prod(shapes[1]))
        self.flat = np.zeros(total, dtype=np.float64)
        self.weights = []
        self.biases = []
        offset = 0
        for spec in self.layers:
            shapes = _param_shapes(spec)
            if shapes is None:
                self.weights.append(None)
                self.biases.append(None)
                continue
            w_shape, b_shape = shapes
            w_size = int(np.prod(w_shape))
            b_size = int(np.prod(b_shape))
            self.weights.append(self.flat[offset : offset + w_size].reshape(w_shape))
            offset += w_size
            self.biases.append(self.flat[offset : offset + b_size].reshape(b_shape))
            offset += b_size

    @property
    def size(self):
        return self.flat.size

    def copy(self):
        out = NetworkParams(self.layers)
        out.flat[:] = self.flat
        return out

    def check_finite(self):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            for arr in (w, b):
                if arr is not None and not np.isfinite(arr).all():
                    raise NumericFailure("non-finite parameter", layer=i)


def init_params(layers, seed):
    """He initialization: weights drawn layer by layer from one Philox
    stream as zero-mean Gaussians with variance 2/fan_in; biases zero."""
    params = NetworkParams(layers)
    rng = stream(seed)
    for i, spec in enumerate(params.layers):
        w = params.weights[i]
        if w is None:
            continue
        if spec.kind == "dense":
            fan_in = spec.in_dim
        else:
            fan_in = spec.in_channels * spec.kernel_size**2
        w[...] = rng.standard_normal(w.shape) * np.sqrt(2.0 / fan_in)
    return params


@dataclass
class ForwardTape:
    """Per-layer activations and dropout masks from one forward pass."""

    layers: tuple
    mode: EvalMode
    inputs: list = field(default_factory=list)
    masks: dict = field(default_factory=dict)
    raw_output_shape: tuple = ()
    output_shape: tuple = ()


def _im2col(x, k):
    """Patches of a zero-padded (c, h, w) activation as a (c*k*k, h*w)
    matrix; column p holds the patch centered at pixel p."""
    c, h, w = x.shape
    pad = k // 2
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(1, 2))
    return windows.transpose(0, 3, 4, 1, 2).reshape(c * k * k, h * w)


def _col2im(cols, c, h, w, k):
    """Adjoint of _im2col: scatter-add patch gradients back to the grid."""
    pad = k // 2
    out = np.zeros((c, h + 2 * pad, w + 2 * pad))
    cols = cols.reshape(c, k, k, h, w)
    for a in range(k):
        for b in range(k):
            out[:, a : a + h, b : b + w] += cols[:, a, b]
    return out[:, pad : pad + h, pad : pad + w]


def _conv_layer_forward(spec, w, b, x):
    if x.ndim == 2:
        x = x[np.newaxis]
    if x.ndim != 3 or x.shape[0] != spec.in_channels:
        raise ValueError(
            f"conv2d expects {spec.in_channels} input channels, got shape {x.shape}"
        )
    k = spec.kernel_size
    cols = _im2col(x, k)
    # flip to compute true convolution via correlation patches
    w_mat = w[:, :, ::-1, ::-1].reshape(spec.out_channels, -1)
    out = w_mat @ cols + b[:, np.newaxis]
    return out.reshape(spec.out_channels, x.shape[1], x.shape[2])


def _conv_layer_backward(spec, w, x, grad_out):
    if x.ndim == 2:
        x = x[np.newaxis]
    k = spec.kernel_size
    _, h, wd = x.shape
    cols = _im2col(x, k)
    grad_flat = grad_out.reshape(spec.out_channels, h * wd)
    grad_w_mat = grad_flat @ cols.T
    grad_w = grad_w_mat.reshape(spec.out_channels, spec.in_channels, k, k)[:, :, ::-1, ::-1]
    grad_b = grad_flat.sum(axis=1)
    w_mat = w[:, :, ::-1, ::-1].reshape(spec.out_channels, -1)
    grad_x = _col2im(w_mat.T @ grad_flat, spec.in_channels, h, wd, k)
    return np.ascontiguousarray(grad_w), grad_b, grad_x


def forward(layers, params, x, mode):
    """Run the network; returns (output, tape).

    A trailing single-channel 3D activation (1, h, w) is squeezed to
    (h, w) so image-to-image networks hand back plain images; the tape
    remembers the raw shape so backward can undo the squeeze.
    """
    layers = tuple(layers)
    if params.layers != layers:
        raise ValueError("params were built for a different layer list")
    act = np.asarray(x, dtype=np.float64)
    if act.ndim not in (1, 2, 3):
        raise ValueError(f"network input must be 1D-3D, got shape {act.shape}")
    tape = ForwardTape(layers=layers, mode=mode)
    for idx, spec in enumerate(layers):
        tape.inputs.append(act)
        if spec.kind == "dense":
            flat = act.ravel()
            if flat.size != spec.in_dim:
                raise ValueError(
                    f"dense layer {idx} expects {spec.in_dim} inputs, got {flat.size}"
                )
            act = params.weights[idx] @ flat + params.biases[idx]
        elif spec.kind == "conv2d":
            act = _conv_layer_forward(spec, params.weights[idx], params.biases[idx], act)
        elif spec.kind == "relu":
            act = np.maximum(act, 0.0)
        else:  # dropout
            if mode.dropout_active and spec.rate > 0.0:
                rng = stream(mode.seed, idx)
                mask = (rng.random(act.shape) >= spec.rate) / (1.0 - spec.rate)
                tape.masks[idx] = mask
                act = act * mask
        if not np.isfinite(act).all():
            raise NumericFailure("non-finite activation", layer=idx)
    tape.raw_output_shape = act.shape
    if act.ndim == 3 and act.shape[0] == 1:
        act = act[0]
    tape.output_shape = act.shape
    return act, tape


def backward(layers, params, tape, grad_output):
    """Exact gradients of <grad_output, network(x)> w.r.t. params and input.

    The tape must come from a matching ``forward`` call; dropout masks
    are replayed from it, never redrawn.
    """
    layers = tuple(layers)
    if params.layers != layers or tape.layers != layers:
        raise ValueError("tape/params do not match the layer list")
    if len(tape.inputs) != len(layers):
        raise ValueError("tape is incomplete for this network")
    grad = np.asarray(grad_output, dtype=np.float64)
    if grad.shape != tape.output_shape:
        raise ValueError(
            f"grad_output shape {grad.shape} != forward output {tape.output_shape}"
        )
    grad = grad.reshape(tape.raw_output_shape)
    grads = NetworkParams(layers)
    for idx in range(len(layers) - 1, -1, -1):
        spec = layers[idx]
        x = tape.inputs[idx]
        if spec.kind == "dense":
            grads.weights[idx][...] = np.outer(grad, x.ravel())
            grads.biases[idx][...] = grad
            grad = (params.weights[idx].T @ grad).reshape(x.shape)
        elif spec.kind == "conv2d":
            grad_w, grad_b, grad_x = _conv_layer_backward(spec, params.weights[idx], x, grad)
            grads.weights[idx][...] = grad_w
            grads.biases[idx][...] = grad_b
            grad = grad_x if x.ndim == 3 else grad_x[0]
        elif spec.kind == "relu":
            grad = grad * (x > 0.0)
        else:  # dropout
            mask = tape.masks.get(idx)
            if mask is not None:
                grad = grad * mask
    return grads, grad


# --------------------------------------------------------------------------
# Checkpoint format "BPNN" (documented in README.md):
#   magic "BPNN" | version u32 | layer_count u32 | per-layer headers
#   | parameter float64s in declaration order | CRC-32 u32
# All integers little-endian.  The CRC covers every byte after the
# version field and before the checksum, so payload corruption and
# truncation both surface as checksum errors, while a bumped version
# byte is reported as a version error.
# --------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"BPNN"
CHECKPOINT_VERSION = 1
_KIND_CODES = {"dense": 0, "conv2d": 1, "relu": 2, "dropout": 3}
_CODE_KINDS = {code: kind for kind, code in _KIND_CODES.items()}


def _u32(value):
    return int(value).to_bytes(4, "little")


def _layer_header(spec):
    header = _u32(_KIND_CODES[spec.kind])
    if spec.kind == "dense":
        header += _u32(spec.in_dim) + _u32(spec.out_dim)
    elif spec.kind == "conv2d":
        header += _u32(spec.in_channels) + _u32(spec.out_channels) + _u32(spec.kernel_size)
    elif spec.kind == "dropout":
        header += np.float64(spec.rate).tobytes()
    return header


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise StructureError(f"checkpoint ended while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return int.from_bytes(self.take(4, what), "little")


def save_checkpoint(path, layers, params):
    """Write layer specs and parameters to the binary checkpoint format."""
    layers = tuple(layers)
    if params.layers != layers:
        raise ValueError("params do not match the layer list")
    body = _u32(CHECKPOINT_VERSION) + _u32(len(layers))
    for spec in layers:
        body += _layer_header(spec)
    body += np.ascontiguousarray(params.flat, dtype="<f8").tobytes()
    crc = zlib.crc32(body[4:])
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + body + _u32(crc))


def load_checkpoint(path):
    """Read a checkpoint; returns (layers, params).

    Verification order: magic, version, checksum, then structure, each
    with its own named error.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"not a checkpoint file: bad magic {data[:4]!r}")
    if len(data) < 12:
        raise StructureError("checkpoint too short for header and checksum")
    version = int.from_bytes(data[4:8], "little")
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(
            f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )
    stored_crc = int.from_bytes(data[-4:], "little")
    actual_crc = zlib.crc32(data[8:-4])
    if stored_crc != actual_crc:
        raise ChecksumError(
            f"checkpoint CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )
    reader = _Reader(data[8:-4])
    layer_count = reader.u32("layer count")
    layers = []
    try:
        for i in range(layer_count):
            code = reader.u32(f"layer {i} kind")
            kind = _CODE_KINDS.get(code)
            if kind is None:
                raise StructureError(f"layer {i} has unknown kind code {code}")
            if kind == "dense":
                layers.append(dense(reader.u32("in_dim"), reader.u32("out_dim")))
            elif kind == "conv2d":
                layers.append(
                    conv2d(
                        reader.u32("in_channels"),
                        reader.u32("out_channels"),
                        reader.u32("kernel_size"),
                    )
                )
            elif kind == "dropout":
                rate = np.frombuffer(reader.take(8, "dropout rate"), dtype="<f8")[0]
                layers.append(dropout(float(rate)))
            else:
                layers.append(relu())
    except ValueError as exc:
        raise StructureError(f"checkpoint declares an invalid layer: {exc}") from exc
    params = NetworkParams(layers)
    payload = reader.take(params.size * 8, "parameter payload")
    if reader.pos != len(reader.data):
        raise StructureError(
            f"checkpoint has {len(reader.data) - reader.pos} unexpected trailing bytes"
        )
    params.flat[:] = np.frombuffer(payload, dtype="<f8")
    return list(layers), params

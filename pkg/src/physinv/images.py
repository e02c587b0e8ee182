"""Image file I/O: a lossless raw float64 format and 16-bit PGM.

rawf64 format "BPIM" (documented in README.md):
    magic "BPIM" | version u32 | height u32 | width u32
    | height*width float64 (row-major) | CRC-32 u32
All integers little-endian; the CRC covers everything after the version
field and before itself.  Round-trips are bit-exact for any finite image.

pgm16 is for visualization only: binary PGM ("P5", maxval 65535,
big-endian samples per the PGM spec) holding
round((v - min) / (max - min) * 65535); a constant image maps to all
zeros.  The min/max are recorded in a sidecar text file "<path>.meta"
(two lines, "min <repr>" and "max <repr>") so reading inverts the
mapping up to quantization.

Malformed files raise ParseError carrying the byte offset of the
problem.
"""

import zlib
from pathlib import Path

import numpy as np

from .errors import ParseError
from .operators import as_image

RAW_MAGIC = b"BPIM"
RAW_VERSION = 1
PGM_MAXVAL = 65535

FORMATS = ("rawf64", "pgm16")


def write_image(grid, path, format="rawf64"):
    grid = as_image(grid)
    if format == "rawf64":
        _write_raw(grid, path)
    elif format == "pgm16":
        _write_pgm(grid, path)
    else:
        raise ValueError(f"unknown image format {format!r}")


def read_image(path):
    """Read either format back as a float64 image (sniffed by magic)."""
    data = Path(path).read_bytes()
    if data[:4] == RAW_MAGIC:
        return _read_raw(data)
    if data[:2] == b"P5":
        return _read_pgm(data, path)
    raise ParseError(f"unrecognized image magic {data[:4]!r}", offset=0)


def _u32(value):
    return int(value).to_bytes(4, "little")


def _write_raw(grid, path):
    h, w = grid.shape
    body = _u32(RAW_VERSION) + _u32(h) + _u32(w)
    body += np.ascontiguousarray(grid, dtype="<f8").tobytes()
    crc = zlib.crc32(body[4:])
    Path(path).write_bytes(RAW_MAGIC + body + _u32(crc))


def _read_raw(data):
    if len(data) < 16:
        raise ParseError("rawf64 file shorter than its header", offset=len(data))
    version = int.from_bytes(data[4:8], "little")
    if version != RAW_VERSION:
        raise ParseError(f"unsupported rawf64 version {version}", offset=4)
    h = int.from_bytes(data[8:12], "little")
    w = int.from_bytes(data[12:16], "little")
    expected = 16 + 8 * h * w + 4
    if len(data) != expected:
        raise ParseError(
            f"rawf64 declares {h}x{w} pixels ({expected} bytes) but file has {len(data)}",
            offset=min(len(data), expected) - 1 if len(data) < expected else expected,
        )
    stored = int.from_bytes(data[-4:], "little")
    actual = zlib.crc32(data[8:-4])
    if stored != actual:
        raise ParseError(
            f"rawf64 checksum mismatch: stored {stored:#010x}, computed {actual:#010x}",
            offset=len(data) - 4,
        )
    return np.frombuffer(data[16:-4], dtype="<f8").reshape(h, w).copy()


def _write_pgm(grid, path):
    lo = float(grid.min())
    hi = float(grid.max())
    if hi > lo:
        scaled = np.rint((grid - lo) / (hi - lo) * PGM_MAXVAL)
    else:
        scaled = np.zeros_like(grid)
    header = f"P5\n{grid.shape[1]} {grid.shape[0]}\n{PGM_MAXVAL}\n"
    Path(path).write_bytes(header.encode("ascii") + scaled.astype(">u2").tobytes())
    Path(f"{path}.meta").write_text(f"min {lo!r}\nmax {hi!r}\n")


class _PgmScanner:
    """Whitespace/comment-aware token scanner that tracks byte offsets."""

    def __init__(self, data):
        self.data = data
        self.pos = 0

    def skip_separators(self):
        while self.pos < len(self.data):
            byte = self.data[self.pos : self.pos + 1]
            if byte.isspace():
                self.pos += 1
            elif byte == b"#":
                while self.pos < len(self.data) and self.data[self.pos : self.pos + 1] != b"\n":
                    self.pos += 1
            else:
                return

    def token(self, what):
        self.skip_separators()
        start = self.pos
        while self.pos < len(self.data) and not self.data[self.pos : self.pos + 1].isspace():
            self.pos += 1
        if start == self.pos:
            raise ParseError(f"missing {what} token", offset=start)
        return self.data[start : self.pos], start

    def integer(self, what):
        raw, start = self.token(what)
        try:
            return int(raw)
        except ValueError:
            raise ParseError(f"{what} is not an integer: {raw!r}", offset=start) from None


def _read_pgm(data, path):
    scanner = _PgmScanner(data)
    magic, offset = scanner.token("magic")
    if magic != b"P5":
        raise ParseError(f"not a binary PGM: magic {magic!r}", offset=offset)
    width = scanner.integer("width")
    height = scanner.integer("height")
    maxval = scanner.integer("maxval")
    if maxval != PGM_MAXVAL:
        raise ParseError(f"expected 16-bit PGM (maxval {PGM_MAXVAL}), got {maxval}",
                         offset=scanner.pos)
    scanner.pos += 1  # the single whitespace byte after maxval
    expected = scanner.pos + 2 * width * height
    if len(data) != expected:
        raise ParseError(
            f"PGM declares {width}x{height} samples ({expected} bytes) "
            f"but file has {len(data)}",
            offset=min(len(data), expected),
        )
    raw = np.frombuffer(data[scanner.pos :], dtype=">u2").reshape(height, width)
    values = raw.astype(np.float64)
    meta = Path(f"{path}.meta")
    if meta.exists():
        lo, hi = _read_sidecar(meta)
        values = lo + values / PGM_MAXVAL * (hi - lo)
    return values


def _read_sidecar(meta_path):
    fields = {}
    for line in meta_path.read_text().splitlines():
        parts = line.split(None, 1)
        if len(parts) == 2 and parts[0] in ("min", "max"):
            fields[parts[0]] = float(parts[1])
    if "min" not in fields or "max" not in fields:
        raise ParseError(f"sidecar {meta_path} lacks min/max lines", offset=0)
    return fields["min"], fields["max"]

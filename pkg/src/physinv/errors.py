"""Exception types shared across the package.

Invalid arguments raise plain ``ValueError``; everything with a more
specific failure mode gets a named class here so callers (and the CLI's
exit-code mapping) can tell the cases apart.
"""


class PhysinvError(Exception):
    """Base class for package-specific failures."""


class NumericFailure(PhysinvError):
    """A computation produced non-finite values.

    Carries the layer index and/or batch sample index where the failure
    was first observed, when known.
    """

    def __init__(self, message, layer=None, sample=None):
        parts = [message]
        if layer is not None:
            parts.append(f"(layer {layer})")
        if sample is not None:
            parts.append(f"(sample {sample})")
        super().__init__(" ".join(parts))
        self.layer = layer
        self.sample = sample


class DivergenceError(PhysinvError):
    """Training aborted because the epoch loss exploded."""

    def __init__(self, epoch, loss, initial_loss):
        super().__init__(
            f"training diverged at epoch {epoch}: mean loss {loss:.6g} "
            f"exceeds 10x the initial epoch loss {initial_loss:.6g}"
        )
        self.epoch = epoch
        self.loss = loss
        self.initial_loss = initial_loss


class ConfigError(PhysinvError):
    """A run configuration file is missing, malformed, or invalid.

    ``key`` names the offending entry as ``section.key`` when applicable.
    """

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class FileFormatError(PhysinvError):
    """Base class for binary/text file format violations."""


class BadMagicError(FileFormatError):
    """The file does not start with the expected magic bytes."""


class UnsupportedVersionError(FileFormatError):
    """The file declares a format version this build cannot read."""


class ChecksumError(FileFormatError):
    """The trailing CRC-32 does not match the file contents."""


class TruncatedFileError(FileFormatError):
    """The file ends before the declared payload does."""


class StructureError(FileFormatError):
    """Internally inconsistent file contents (counts, shapes, tags)."""


class ParseError(FileFormatError):
    """Malformed image file; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset

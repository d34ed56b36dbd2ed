"""Exception hierarchy shared by every NestFuse module.

Each exception carries the process exit code the CLI reports for it:
0 success, 2 user error, 3 numerical abort.
"""


class NestFuseError(Exception):
    """Base class for all NestFuse errors"""
    exit_code = 2


class ConfigurationError(NestFuseError):
    """Custom exception for configuration errors"""
    pass


class SizeError(NestFuseError):
    """Image or feature dimensions violate a size precondition"""
    pass


class TopologyError(NestFuseError):
    """Tensor channel counts or shapes disagree with the network plan"""
    pass


class ImageDecodeError(NestFuseError):
    """An image file could not be read or decoded"""

    def __init__(self, path, reason=""):
        self.path = str(path)
        message = f"Cannot decode image '{self.path}'"
        if reason:
            message += f": {reason}"
        super().__init__(message)


class CorpusError(NestFuseError):
    """An image collection (training corpus or test pairs) is missing, empty or too small"""
    pass


class MetricError(NestFuseError):
    """A quality metric failed for one image pair"""

    def __init__(self, pair_id, reason):
        self.pair_id = pair_id
        super().__init__(f"[{pair_id}] {reason}")


class NumericalError(NestFuseError):
    """Non-finite values or failed linear algebra"""
    exit_code = 3


class CheckpointError(NestFuseError):
    """Base class for checkpoint load failures"""
    code = "E_CHECKPOINT"


class BadMagicError(CheckpointError):
    code = "E_BAD_MAGIC"


class VersionMismatchError(CheckpointError):
    code = "E_VERSION"


class ChecksumError(CheckpointError):
    code = "E_CHECKSUM"


class TopologyMismatchError(CheckpointError):
    code = "E_TOPOLOGY"

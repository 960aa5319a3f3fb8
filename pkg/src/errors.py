#!/usr/bin/env python3
"""
Exception hierarchy for the NZip codec.

Every failure the codec reports on purpose is an NzipError, so the CLI can
map it to an exit code without catching unrelated bugs.
"""


class NzipError(Exception):
    """Base class for all codec errors"""


class DimensionError(NzipError, ValueError):
    """Tensor shapes or channel counts do not line up"""


class ParameterError(NzipError, ValueError):
    """A parameter violates its domain (e.g. non-positive GDN beta)"""


class ContractError(NzipError):
    """A caller broke an operation's precondition"""


class QuantizationRangeError(NzipError):
    """A latent value is too large to be represented as a 32-bit integer"""


class SymbolOutOfRangeError(ContractError):
    """A symbol handed to the range coder lies outside its table window"""


class DecodeError(NzipError):
    """Coded data could not be decoded"""


class TruncatedStreamError(DecodeError):
    """The coded stream ended before all symbols were read"""


class ContainerFormatError(DecodeError):
    """The .nzip container is malformed (bad magic, lengths disagree, ...)"""


class VersionMismatchError(DecodeError):
    """The container or weight file was written by an unsupported version"""


class DigestMismatchError(DecodeError):
    """The container was produced by a different model than the one loaded"""


class WeightFormatError(NzipError):
    """The .nzwt weight file is malformed or does not match the model"""


class UnknownTaskError(NzipError, KeyError):
    """A task id was used that has no registered head"""


class DivergenceError(NzipError):
    """Training produced a non-finite loss"""


class FrozenParameterError(ContractError):
    """A parameter that must stay frozen received a gradient or update"""


class ConfigError(NzipError, ValueError):
    """A configuration file or preset override is invalid"""


class ImageFormatError(NzipError):
    """An image file could not be read or has an unsupported layout"""

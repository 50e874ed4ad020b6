"""
Exception hierarchy shared by the odor services
"""
from typing import Iterable, Optional, Tuple


class OdorError(Exception):
    """Base class for every error raised by the odor services"""


class ConfigError(OdorError):
    """Invalid or unknown configuration value"""


class SmilesParseError(OdorError):
    """SMILES text could not be turned into a molecular graph"""

    def __init__(self, message: str, offset: Optional[int] = None, kind: str = 'syntax'):
        self.offset = offset
        self.kind = kind
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)


class SmartsParseError(OdorError):
    """SMARTS text is malformed or outside the supported dialect"""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)


class ShapeError(OdorError):
    """Operand shapes are incompatible for a tensor primitive"""

    def __init__(self, primitive: str, *shapes: Tuple[int, ...], detail: str = ''):
        self.primitive = primitive
        self.shapes = shapes
        rendered = ' vs '.join(str(tuple(s)) for s in shapes)
        message = f"{primitive}: incompatible shapes {rendered}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class GradientError(OdorError):
    """Reverse-mode differentiation was requested in an invalid state"""


class NumericError(OdorError):
    """A non-finite value appeared in a loss or a gradient"""


class DatasetError(OdorError):
    """Dataset file is unreadable, malformed or unusable"""


class VocabularyError(DatasetError):
    """Labels in the data are missing from a checkpoint's vocabulary"""

    def __init__(self, unknown: Iterable[str]):
        self.unknown = sorted(set(unknown))
        super().__init__(f"Labels absent from the checkpoint vocabulary: {', '.join(self.unknown)}")


class CheckpointError(OdorError):
    """Checkpoint file is missing, truncated or of an unknown format"""

"""
Exception types shared by the sketchlab modules.

Each error also derives from the closest builtin so callers that only
know about ValueError / IndexError / RuntimeError keep working.
"""


class SketchLabError(Exception):
    """Base class for every error raised by sketchlab"""


class SegmentRangeError(SketchLabError, IndexError):
    """Stroke-segment index outside the segment table"""


class ArgumentError(SketchLabError, ValueError):
    """Invalid argument value"""


class DimensionError(SketchLabError, ValueError):
    """Tensor shapes do not line up"""


class FormatError(SketchLabError, ValueError):
    """Malformed file content (NDJSON, PGM, checkpoint)"""


class RecordError(FormatError):
    """One bad record inside a line-oriented file"""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number
        self.message = message


class CorpusError(SketchLabError, ValueError):
    """Corpus cannot be built from the given data"""


class ToySpecError(SketchLabError, ValueError):
    """Invalid toy generator specification"""


class ResetError(SketchLabError, ValueError):
    """Environment cannot start an episode on this sketch"""


class ConfigError(SketchLabError, ValueError):
    """Unknown or badly typed configuration key"""


class ProtocolError(SketchLabError, RuntimeError):
    """Environment used out of order (step after done)"""


class DivergenceError(SketchLabError, RuntimeError):
    """Training produced a non-finite loss"""

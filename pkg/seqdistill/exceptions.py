"""Exceptions raised by seqdistill"""

from typing import Optional


class Error(Exception):
    """Base class for all seqdistill errors"""


class ConfigError(Error, ValueError):
    """An invalid configuration file, setting or override"""


class SchemaError(Error, ValueError):
    """A malformed column schema"""


class DatasetError(Error, ValueError):
    """Input files that do not form a valid dataset"""

    def __init__(self, message: str, *, row: Optional[int] = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


class MissingScoreError(DatasetError):
    """A user with events has no teacher score"""


class UnknownColumnError(DatasetError):
    """The events file references a column the schema does not declare"""


class VocabularyError(DatasetError):
    """A categorical value outside its column's vocabulary"""


class NonFiniteError(DatasetError):
    """A numerical value or score that is NaN, infinite or unparsable"""


class SplitError(Error, ValueError):
    """Split sizes that cannot be satisfied"""


class ChainParseError(Error, ValueError):
    """Text that does not follow the statistic DSL"""

    def __init__(self, message: str, *, text: str, position: int):
        self.text = text
        self.position = position
        super().__init__(f"{message} at position {position} in {text!r}")


class ShapeError(Error, ValueError):
    """Arrays whose lengths or column counts do not line up"""


class FixtureError(Error, ValueError):
    """An unknown synthetic fixture"""


class ArtifactError(Error, ValueError):
    """An artifact file that is unreadable or of an unsupported format"""


class MetricError(Error, ValueError):
    """Inputs a metric is undefined for, such as labels of a single class"""


class SearchExhaustedError(Error):
    """No valid statistic remains that is not excluded"""


class StageError(Error):
    """An error raised inside a pipeline stage, tagged with the stage name"""

    def __init__(self, stage: str, error: BaseException):
        self.stage = stage
        self.error = error
        super().__init__(f"[{stage}] {type(error).__name__}: {error}")

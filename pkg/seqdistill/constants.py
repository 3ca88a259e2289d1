import enum
import math


class Default(enum.Enum):
    token = 0


class Unset(enum.Enum):
    token = 0


DEFAULT = Default.token
"""
For setting a configuration value back to its default value
"""

UNSET = Unset.token
"""
Marks an argument that was not supplied, so the configured setting applies
"""

OPERATOR_PERCENTILES = (5, 10, 25, 50, 75, 90, 95)
"""The k values available to the Percentile aggregation"""

BINARIZE_PERCENTILES = (0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100)
"""Percentiles at which continuous statistics are thresholded into literals"""

LSTSQ_CUTOFF = 1e-8
"""Singular values below this fraction of the largest are treated as zero in least squares"""

EXPLORATION = 1 / math.sqrt(2)
"""Default UCT exploration constant"""

TOP_ROWS = 5
"""Number of rows kept by the Top5 transformation"""

RESERVED_CHARS = frozenset("[]=,>∘\n\r\t")
"""Characters that may not appear in column names or categories"""

STATISTICS_FORMAT = "seqdistill-statistics"
VALUES_FORMAT = "seqdistill-values"
SPLITS_FORMAT = "seqdistill-splits"
THRESHOLDS_FORMAT = "seqdistill-thresholds"
LITERALS_FORMAT = "seqdistill-literals"
CHECKPOINT_FORMAT = "seqdistill-checkpoint"
RULES_FORMAT = "seqdistill-rules"
REPORT_FORMAT = "seqdistill-report"
MANIFEST_FORMAT = "seqdistill-manifest"
FORMAT_VERSION = 1

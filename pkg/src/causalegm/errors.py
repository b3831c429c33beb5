"""Exception hierarchy.

Each class carries a short ``category`` used by the command line to print a
single machine-parsable error line.
"""


class CausalEGMError(Exception):
    category = "error"


class ConfigError(CausalEGMError, ValueError):
    category = "config"


class ShapeError(CausalEGMError, ValueError):
    category = "shape"


class ContractError(CausalEGMError, ValueError):
    category = "contract"


class DataError(CausalEGMError, ValueError):
    category = "data"


class FormatError(CausalEGMError, ValueError):
    category = "format"


class TrainingError(CausalEGMError, RuntimeError):
    category = "training"


class RankDeficientError(CausalEGMError, ValueError):
    category = "rank"

"""Encoding generative modeling for causal effect estimation.

Importing the package enables 64-bit support in JAX; every array the package
creates carries an explicit dtype, so training still runs in float32.
"""

import jax

jax.config.update("jax_enable_x64", True)

from causalegm.errors import (  # noqa: E402
    CausalEGMError,
    ConfigError,
    ContractError,
    DataError,
    FormatError,
    RankDeficientError,
    ShapeError,
    TrainingError,
)
from causalegm.model import (  # noqa: E402
    CausalEGMModel,
    LatentPartition,
    ModelConfig,
    TrainingTrace,
    build,
    encode,
    train,
)
from causalegm.estimators import (  # noqa: E402
    AdrfEstimate,
    BinaryEffects,
    estimate_adrf,
    estimate_binary_effects,
)
from causalegm.persist import load, save  # noqa: E402

__all__ = [
    "AdrfEstimate",
    "BinaryEffects",
    "CausalEGMError",
    "CausalEGMModel",
    "ConfigError",
    "ContractError",
    "DataError",
    "FormatError",
    "LatentPartition",
    "ModelConfig",
    "RankDeficientError",
    "ShapeError",
    "TrainingError",
    "TrainingTrace",
    "build",
    "encode",
    "estimate_adrf",
    "estimate_binary_effects",
    "load",
    "save",
    "train",
]

__version__ = "0.1.0"

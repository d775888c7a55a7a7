# SPDX-License-Identifier: Apache-2.0
"""Python bindings for the naepro core library."""

from ._core import (
    ConfigError,
    DimensionError,
    Error,
    FitResult,
    IoError,
    Model,
    ModelConfig,
    NumericError,
    ParseError,
    Record,
    TrainConfig,
    ValidationError,
    anneal_fraction,
    bench,
    certify_equivariance,
    column_identity,
    evaluate,
    fit,
    initial_coordinates,
    kabsch_rmsd,
    load_records,
    mine_fragments,
    parse_records,
    save_records,
    synthetic_dataset,
)

VARIANTS = ("default", "wo-gate", "wo-knn", "wo-mffn", "wo-mcffn")

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"

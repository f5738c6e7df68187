"""Python bindings for the mednli C++ core."""

from ._mednli import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    Error,
    Model,
    NumericError,
    ParseError,
    agreement_partition,
    assign_listwise,
    expand,
    expand_with_table_file,
    generate_corpus,
    load_dataset,
    run_cli,
    save_dataset,
    tokenize,
)

LABELS = ("entailment", "contradiction", "neutral")

__all__ = [
    "LABELS",
    "ConfigError",
    "ContractError",
    "DataError",
    "DimensionError",
    "Error",
    "Model",
    "NumericError",
    "ParseError",
    "agreement_partition",
    "assign_listwise",
    "expand",
    "expand_with_table_file",
    "generate_corpus",
    "load_dataset",
    "run_cli",
    "save_dataset",
    "tokenize",
]

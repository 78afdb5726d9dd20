"""Calibrated post-training quantization with closed-form low-rank adapter init."""

from ._core import (
    ConfigError,
    DataError,
    NumericError,
    __version__,
    damp,
    discrepancy,
    fit_grid,
    gram,
    layer_init,
    lowrank_init,
    magr,
    ptq_optq,
    ptq_rtn,
    quantize_rtn,
    read_bundle,
    truncated_lr,
    weighted_objective,
    write_bundle,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "__version__",
    "damp",
    "discrepancy",
    "fit_grid",
    "gram",
    "layer_init",
    "lowrank_init",
    "magr",
    "ptq_optq",
    "ptq_rtn",
    "quantize_rtn",
    "read_bundle",
    "truncated_lr",
    "weighted_objective",
    "write_bundle",
]

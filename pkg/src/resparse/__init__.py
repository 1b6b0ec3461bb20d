"""Spectral graph sparsification by resparsification.

Semi-streaming and spanner-based parallel sparsifiers, plus an executable
form of the weighted-row sampling game that underpins their analysis.
"""

from .graphs import (
    GraphFormatError,
    RowStream,
    WeightedGraph,
    generate,
    is_connected,
    read_edge_list,
    rows_of,
    write_edge_list,
)
from .linalg import (
    ConvergenceError,
    KernelMismatchError,
    LeverageEstimates,
    SizeCapError,
    exact_leverage,
    laplacian,
    pinv_apply,
    quadratic_form,
    rayleigh_epsilon,
    sketched_leverage_upper,
    spectral_epsilon,
)

__version__ = "0.1.0"

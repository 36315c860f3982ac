"""Soft-output MMSE detection for massive-MIMO SC-FDMA uplinks.

Exact (Cholesky) and truncated Neumann-series inversion of the regularized
Gram matrix, NPI/SINR estimation, max-log demapping, a fixed-point datapath
model, convergence analysis and operation counting.
"""

__version__ = "0.1.0"

from .analysis import (
    BoundQuery,
    SweepRecord,
    ber_sweep,
    empirical_norm_prob,
    instrumented_count,
    moment_mc,
    multiplication_count,
    residual_bound_check,
    theorem1_bound,
)
from .counting import OpCountLedger, count_ops
from .detector import DetectorConfig, LlrFrame, PostEqStats, detect_frame
from .fxp import FixedFormat, FxpPipelineConfig, fxp_detect_frame, quantize, reciprocal_lut
from .linalg import (
    DiagSplit,
    cholesky_decompose,
    convergence_norm,
    diag_split,
    gram_matrix,
    invert_via_cholesky,
    neumann_inverse,
    regularized_gram,
    solve_backward,
    solve_forward,
    unitary_transform,
)
from .txchain import SimConfig, UplinkFrame, generate_frame, map_gray_qam, snr_to_n0

"""Preconditioned block encodings of banded linear systems.

Builds classical preconditioners (diagonal scaling, SPAI, TPAI, CLAI), block
encoding circuits for matrices and their products, a statevector emulator to
check them, and circuit trimming by value binning.
"""
from .bencode import (
    BlockEncoding,
    encode_banded,
    encode_clai_product,
    encode_toeplitz,
    multiply_encodings,
)
from .circuit import CircuitIR
from .emu import extract_block, verify_encoding
from .matcore import (
    BandedMatrix,
    MatrixSource,
    banded_multiply,
    diagonal_scale,
    generate_test_matrix,
    spectral_metrics,
)
from .precond import PreconditionerSpec, build_preconditioner
from .trim import collapse_rotations, filter_matrix, trimming_metrics

__version__ = "0.1.0"

__all__ = [
    "BandedMatrix", "BlockEncoding", "CircuitIR", "MatrixSource", "PreconditionerSpec",
    "banded_multiply", "build_preconditioner", "collapse_rotations", "diagonal_scale",
    "encode_banded", "encode_clai_product", "encode_toeplitz", "extract_block",
    "filter_matrix", "generate_test_matrix", "multiply_encodings", "spectral_metrics",
    "trimming_metrics", "verify_encoding",
]

"""FRSZ2 block floating-point compression and compressed-basis GMRES."""

from .basis import KrylovBasis, StorageFormat
from .codec import CompressedVector, Frsz2Params, compress, decompress, storage_bytes
from .solver import GmresConfig, SolveResult, gmres_solve
from .sparsela import CsrMatrix, gen_convdiff, generate_problem, read_matrix_market

__all__ = [
    "CompressedVector",
    "CsrMatrix",
    "Frsz2Params",
    "GmresConfig",
    "KrylovBasis",
    "SolveResult",
    "StorageFormat",
    "compress",
    "decompress",
    "gen_convdiff",
    "generate_problem",
    "gmres_solve",
    "read_matrix_market",
    "storage_bytes",
]

__version__ = "0.1.0"

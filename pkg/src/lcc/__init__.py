"""Lossy checkpoint compression for SGD-style training.

Delta tracking against a decoder-reproducible shadow state, exponent/sign
bucket quantization with x-bit priority promotion, canonical Huffman
coding, a bit-exact chunk/chain container, and a desk-scale simulation lab
for convergence and rework-cost experiments.
"""

from .errors import (
    ChainError,
    CorruptionError,
    DomainError,
    EncodingError,
    LccError,
    PipelineError,
    ShapeError,
    StorageError,
)
from .expquant import (
    BucketTable,
    FloatDecomposition,
    QuantizedDelta,
    decompose,
    dequantize,
    promote,
    quantize,
    quantized_size_bits,
    raw_compression_rate,
)
from .huffman import (
    BitStream,
    CodeTable,
    CodeTableCache,
    build_code_table,
    cache_lookup_or_build,
    decode,
    encode,
)
from .pipeline import CheckpointEncoder, PipelineBudget, Ticket, async_encode_submit
from .rd import RDConfig, RDPartition, rd_partition_dp, rd_quantize, sample_then_partition
from .state import (
    DeltaVector,
    ModelState,
    apply_delta,
    compute_delta,
    reconstruct,
)
from .store import (
    ChainStore,
    merge_chunks,
    read_chunk,
    read_state_chunk,
    write_chunk,
    write_state_chunk,
)

__version__ = "0.1.0"

__all__ = [
    "BitStream",
    "BucketTable",
    "ChainError",
    "ChainStore",
    "CheckpointEncoder",
    "CodeTable",
    "CodeTableCache",
    "CorruptionError",
    "DeltaVector",
    "DomainError",
    "EncodingError",
    "FloatDecomposition",
    "LccError",
    "ModelState",
    "PipelineBudget",
    "PipelineError",
    "QuantizedDelta",
    "RDConfig",
    "RDPartition",
    "ShapeError",
    "StorageError",
    "Ticket",
    "apply_delta",
    "async_encode_submit",
    "build_code_table",
    "cache_lookup_or_build",
    "compute_delta",
    "decode",
    "decompose",
    "dequantize",
    "encode",
    "merge_chunks",
    "promote",
    "quantize",
    "quantized_size_bits",
    "raw_compression_rate",
    "rd_partition_dp",
    "rd_quantize",
    "read_chunk",
    "read_state_chunk",
    "reconstruct",
    "sample_then_partition",
    "write_chunk",
    "write_state_chunk",
]

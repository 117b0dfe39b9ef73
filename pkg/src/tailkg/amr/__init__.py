"""AMR graphs, PENMAN I/O and the AMR-aware relation scorer."""
from tailkg.amr.graph import AmrGraph, GraphError, ReifiedGraph, isomorphic, reify, unreify
from tailkg.amr.model import (
    DimensionMismatch,
    ErpInput,
    Hyper,
    RankerModel,
    ama_forward,
    encode_pairs,
    gat_forward,
    score_pairs,
    tokenize,
)
from tailkg.amr.penman import ParseError, iter_penman_blocks, parse_penman, serialize_penman
from tailkg.amr.train import (
    DegenerateData,
    TrainConfig,
    TrainingSample,
    grad_check,
    grad_check_report,
    train,
)

__all__ = [
    "AmrGraph", "GraphError", "ReifiedGraph", "isomorphic", "reify", "unreify",
    "DimensionMismatch", "ErpInput", "Hyper", "RankerModel", "ama_forward", "encode_pairs",
    "gat_forward", "score_pairs", "tokenize", "ParseError", "iter_penman_blocks",
    "parse_penman", "serialize_penman", "DegenerateData", "TrainConfig", "TrainingSample",
    "grad_check", "grad_check_report", "train",
]

"""Python bindings for the oisa C++ core."""

from ._core import (
    ConfigError,
    DataError,
    NumericError,
    Model,
    boundary_f,
    decode_rle,
    default_tolerance,
    encode_rle,
    evaluate,
    infer,
    meteor,
    porter_stem,
    region_j,
    sample_frames,
    synth,
    train,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "Model",
    "boundary_f",
    "decode_rle",
    "default_tolerance",
    "encode_rle",
    "evaluate",
    "infer",
    "meteor",
    "porter_stem",
    "region_j",
    "sample_frames",
    "synth",
    "train",
]

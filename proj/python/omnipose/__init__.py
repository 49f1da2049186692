"""Python bindings for the OmniPose core."""

import json

from ._core import (
    ConfigError,
    IoError,
    Model,
    SchemaError,
    ShapeError,
    avg_pool_global,
    conv2d,
    decode,
    encode,
    modulate,
    oks,
    oks_ap,
    pckh,
    read_tensor,
    selftest,
    transposed_conv2d,
    write_tensor,
)
from . import _core


def evaluate(predictions, ground_truth, metric="pckh", alpha=0.5, oks_config=None):
    """Evaluate two keypoint files; returns the report as a dict."""
    return json.loads(_core.evaluate_files(predictions, ground_truth, metric, alpha, oks_config))


def count(config, input_size=None):
    """Parameter and FLOP counts for a model config or layer list file."""
    return json.loads(_core.count_file(config, input_size))


__all__ = [
    "ConfigError",
    "IoError",
    "Model",
    "SchemaError",
    "ShapeError",
    "avg_pool_global",
    "conv2d",
    "count",
    "decode",
    "encode",
    "evaluate",
    "modulate",
    "oks",
    "oks_ap",
    "pckh",
    "read_tensor",
    "selftest",
    "transposed_conv2d",
    "write_tensor",
]

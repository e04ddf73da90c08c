"""Python access to the msts C++ core."""

import json

from . import _core
from ._core import (
    ConfigError,
    Model,
    attention_flops,
    bench,
    check_grad,
    config_text,
    inter_scale_attention,
    intra_scale_attention,
    random_sample,
    solve_assignment,
    video_iou,
)

__all__ = [
    "ConfigError",
    "Model",
    "attention_flops",
    "bench",
    "check_grad",
    "compute_ap",
    "config_text",
    "inter_scale_attention",
    "intra_scale_attention",
    "make_benchmark",
    "random_sample",
    "solve_assignment",
    "train",
    "video_iou",
]


def compute_ap(videos):
    """Metrics dict for a list of {"predictions": [...], "ground_truth": [...]} videos."""
    return json.loads(_core.compute_ap(videos))


def make_benchmark(spec):
    """Manifest dict for a benchmark spec dict."""
    return json.loads(_core.make_benchmark(json.dumps(spec)))


def train(config_text, out_dir, data_dir=""):
    """Runs training and returns the validation metrics dict."""
    return json.loads(_core.train(config_text, str(out_dir), str(data_dir)))

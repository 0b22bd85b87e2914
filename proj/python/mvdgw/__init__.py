"""Multi-view attention consistency via directed Gromov-Wasserstein."""

import json as _json

from ._core import (
    BoundsError,
    ConfigError,
    Error,
    FormatError,
    NumericalError,
    ValidationError,
    cosine_loss,
    cross_entropy,
    dgw,
    flatten_index,
    normalize_attention,
    pose_from_angle,
    read_tensor,
    render,
    sinkhorn,
    solve_gw,
    write_tensor,
)
from ._core import run_pipeline as _run_pipeline
from ._core import synth_scene as _synth_scene

__version__ = "0.1.0"


def synth_scene(spec=None, beta=0.0):
    """Synthetic video (T, H, W, 3) and a blob-visibility flag."""
    return _synth_scene(_json.dumps(spec or {}), beta)


def run_pipeline(config=None, beta1=-10.0, beta2=10.0, label=0, seed=0, threads=1):
    """Two-view consistency run; returns the report as a dict."""
    text = _run_pipeline(_json.dumps(config or {}), beta1, beta2, label, seed, threads)
    return _json.loads(text)


__all__ = [
    "BoundsError",
    "ConfigError",
    "Error",
    "FormatError",
    "NumericalError",
    "ValidationError",
    "cosine_loss",
    "cross_entropy",
    "dgw",
    "flatten_index",
    "normalize_attention",
    "pose_from_angle",
    "read_tensor",
    "render",
    "run_pipeline",
    "sinkhorn",
    "solve_gw",
    "synth_scene",
    "write_tensor",
]

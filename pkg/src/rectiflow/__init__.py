"""Exact ReLU constructions for approximating Lipschitz functions and generating rectifiable measures."""

from .relu_net import (
    AffineLayer,
    ReluNetwork,
    compose_with_relu,
    evaluate,
    identity_net,
    metrics,
    pad_depth,
    parallelize,
)
from .spike import spike, spike_network

__all__ = [
    "AffineLayer",
    "ReluNetwork",
    "compose_with_relu",
    "evaluate",
    "identity_net",
    "metrics",
    "pad_depth",
    "parallelize",
    "spike",
    "spike_network",
]

"""Pairwise relational stage: class embedding from all unique example pairs."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .graph import ACTIVATIONS, Graph, NodeRef, ShapeError

G_PREFIX = "g"

# Test hook for the verification suite's negative control; see cli `verify --break`.
_REDUCTION = {"mode": "mean"}


class ClassTooSmallError(ValueError):
    pass


@dataclass
class ClassSet:
    features: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("class features must be an n x s_v matrix")
        if self.features.shape[0] < 2:
            raise ClassTooSmallError("class too small for relational stage (need n >= 2)")
        if self.features.shape[1] < 1:
            raise ValueError("feature dimension must be >= 1")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("class features must be finite")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def s_v(self) -> int:
        return self.features.shape[1]


@dataclass
class GArch:
    hidden_sizes: list[int] = field(default_factory=lambda: [64])
    embed_dim: int = 32
    activation: str = "relu"
    symmetrize: bool = True

    def __post_init__(self):
        self.hidden_sizes = [int(h) for h in self.hidden_sizes]
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ValueError("hidden_sizes must be non-empty positive widths")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")


def unique_pairs(n: int) -> list[tuple[int, int]]:
    """All (i, j) with i < j, in lexicographic order."""
    if n < 2:
        raise ClassTooSmallError("class too small for relational stage (need n >= 2)")
    return list(itertools.combinations(range(n), 2))


def mlp(graph: Graph, x: NodeRef, prefix: str, widths: list[int], activation: str) -> NodeRef:
    """Dense layers ``prefix/layerK/{W,b}``; activation on all but the last."""
    h = x
    fan_in = x.shape[-1]
    last = len(widths) - 1
    for k, width in enumerate(widths):
        w = graph.parameter(f"{prefix}/layer{k}/W", [fan_in, width])
        b = graph.parameter(f"{prefix}/layer{k}/b", [width], _zeros)
        h = graph.add_bias(graph.matmul(h, w), b)
        if k != last:
            h = graph.activation(h, activation)
        fan_in = width
    return h


def _zeros(shape, rng):
    return np.zeros(shape)


def build_g(graph: Graph, left: NodeRef, right: NodeRef, arch: GArch) -> NodeRef:
    """One instance of the pair network over shared ``g/`` parameters."""
    if len(left.shape) != 1 or left.shape != right.shape:
        raise ShapeError(f"build_g needs two equal-length vectors: {left!r}, {right!r}")
    widths = arch.hidden_sizes + [arch.embed_dim]
    out = mlp(graph, graph.concat([left, right]), G_PREFIX, widths, arch.activation)
    if arch.symmetrize:
        swapped = mlp(graph, graph.concat([right, left]), G_PREFIX, widths, arch.activation)
        out = graph.mean_of([out, swapped])
    return graph.tag(out, "g")


def build_relational(graph: Graph, class_input: NodeRef, n: int, arch: GArch) -> NodeRef:
    """Class embedding: element-wise average of g over every unique pair of rows."""
    if class_input.shape[:1] != (n,) or len(class_input.shape) != 2:
        raise ShapeError(f"class input {class_input!r} is not [{n}, s_v]")
    pairs = unique_pairs(n)
    rows = [graph.slice_row(class_input, i) for i in range(n)]
    v = [build_g(graph, rows[i], rows[j], arch) for i, j in pairs]
    if _REDUCTION["mode"] == "sum":
        return graph.mean_of(v, _scale=1.0)
    return graph.mean_of(v)

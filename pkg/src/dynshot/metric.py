"""Metric stage: two membership logits from (query, class embedding)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import ACTIVATIONS, Graph, NodeRef, ShapeError
from .relational import mlp

F_PREFIX = "f"
NON_MEMBER, MEMBER = 0, 1


@dataclass
class FArch:
    hidden_sizes: list[int] = field(default_factory=lambda: [64])
    activation: str = "relu"

    output_width = 2

    def __post_init__(self):
        self.hidden_sizes = [int(h) for h in self.hidden_sizes]
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ValueError("hidden_sizes must be non-empty positive widths")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")


def build_metric(graph: Graph, query_input: NodeRef, class_embedding: NodeRef,
                 arch: FArch) -> NodeRef:
    if len(query_input.shape) != 1 or len(class_embedding.shape) != 1:
        raise ShapeError(f"build_metric needs vectors: {query_input!r}, {class_embedding!r}")
    x = graph.concat([query_input, class_embedding])
    return mlp(graph, x, F_PREFIX, arch.hidden_sizes + [FArch.output_width], arch.activation)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def predict_prob(model, class_set, query) -> float:
    """Membership probability p(query in class) from an assembled model."""
    from .assembly import SizeMismatchError

    features = class_set.features if hasattr(class_set, "features") else np.asarray(class_set)
    if features.shape[0] != model.n:
        raise SizeMismatchError(
            f"class has n={features.shape[0]} but model was assembled for n={model.n}; "
            "wrong assembled model; consult cache")
    logits = model.logits_for(features, query)
    return float(softmax(logits)[MEMBER])

"""Per-size model assembly over shared weights, the size-indexed cache, and batch routing."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .graph import Graph, NodeRef, ParamRegistry
from .metric import FArch, build_metric
from .relational import ClassTooSmallError, GArch, build_relational


class SizeMismatchError(ValueError):
    pass


@dataclass(eq=False)
class AssembledModel:
    n: int
    input_c: NodeRef
    input_q: NodeRef
    label: NodeRef
    embedding: NodeRef
    logits: NodeRef
    loss: NodeRef
    graph: Graph

    def feeds(self, support: np.ndarray, query: np.ndarray, labels=None) -> dict:
        support = np.asarray(support, dtype=np.float64)
        if support.shape[-2] != self.n:
            raise SizeMismatchError(
                f"support has n={support.shape[-2]} but model was assembled for "
                f"n={self.n}; wrong assembled model; consult cache")
        feeds = {self.input_c: support, self.input_q: query}
        if labels is not None:
            feeds[self.label] = labels
        elif support.ndim == 3:
            feeds[self.label] = np.zeros(support.shape[0])
        else:
            feeds[self.label] = np.zeros(())
        return feeds

    def logits_for(self, support, query) -> np.ndarray:
        values = self.graph.forward(self.feeds(support, query), upto=self.logits)
        return values[self.logits]

    def embed(self, support) -> np.ndarray:
        support = np.asarray(support, dtype=np.float64)
        query = np.zeros(support.shape[:-2] + (self.input_q.shape[0],))
        values = self.graph.forward(self.feeds(support, query), upto=self.embedding)
        return values[self.embedding]


def assemble(registry: ParamRegistry, n: int, s_v: int, arch_g: GArch, arch_f: FArch) -> AssembledModel:
    """Build the static graph for class size ``n`` over ``registry``.

    Pair loop over unique index pairs creates one g instance each; their
    element-wise average feeds f alongside the query. The returned graph is
    frozen.
    """
    if n < 2:
        raise ClassTooSmallError("class too small for relational stage (need n >= 2)")
    if s_v < 1:
        raise ValueError("feature dimension must be >= 1")
    graph = Graph(registry)
    input_c = graph.input([n, s_v], name="class")
    input_q = graph.input([s_v], name="query")
    label = graph.input([], name="label")
    avg_v = build_relational(graph, input_c, n, arch_g)
    logits = build_metric(graph, input_q, avg_v, arch_f)
    loss = graph.softmax_xent(logits, label)
    graph.freeze()
    return AssembledModel(n, input_c, input_q, label, avg_v, logits, loss, graph)


@dataclass
class ModelCache:
    """In-memory lookup table from class size to its assembled model.

    No eviction: one entry per distinct size ever requested.
    """

    s_v: int
    arch_g: GArch = field(default_factory=GArch)
    arch_f: FArch = field(default_factory=FArch)
    registry: ParamRegistry = field(default_factory=ParamRegistry)
    max_n: int = 32
    by_size: dict = field(default_factory=dict)

    def get_or_assemble(self, n: int) -> AssembledModel:
        model = self.by_size.get(n)
        if model is not None:
            return model
        if n < 2:
            raise ClassTooSmallError("class too small for relational stage (need n >= 2)")
        if n > self.max_n:
            raise ValueError(f"class size {n} exceeds max_n={self.max_n}")
        model = assemble(self.registry, n, self.s_v, self.arch_g, self.arch_f)
        self.by_size[n] = model
        return model

    def __contains__(self, n: int) -> bool:
        return n in self.by_size

    def sizes(self) -> list[int]:
        return sorted(self.by_size)


def get_or_assemble(cache: ModelCache, n: int) -> AssembledModel:
    return cache.get_or_assemble(n)


@dataclass
class SizedBatch:
    """Episodes that share one class size, stored stacked.

    ``support`` is ``[B, n, s_v]``, ``query`` ``[B, s_v]``, ``labels`` ``[B]``.
    """

    n: int
    support: np.ndarray
    query: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.labels) == 0:
            raise ValueError("empty batch")
        if self.support.shape[1] != self.n:
            raise ValueError("batch is not homogeneous in n")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def episodes(self) -> list:
        from .trainer import Episode
        return [Episode(self.support[k], self.query[k], int(self.labels[k]))
                for k in range(len(self))]

    @classmethod
    def from_episodes(cls, episodes) -> "SizedBatch":
        episodes = list(episodes)
        if not episodes:
            raise ValueError("empty batch")
        return cls(episodes[0].n,
                   np.stack([e.support for e in episodes]),
                   np.stack([e.query for e in episodes]),
                   np.array([e.label for e in episodes], dtype=np.int64))


def route_batches(episodes) -> list[SizedBatch]:
    """Stable partition of episodes by class size (groups in first-seen order)."""
    groups: dict[int, list] = {}
    for ep in episodes:
        if ep.n < 2:
            raise ClassTooSmallError("class too small for relational stage (need n >= 2)")
        groups.setdefault(ep.n, []).append(ep)
    return [SizedBatch.from_episodes(g) for g in groups.values()]


def assembly_census(model: AssembledModel) -> dict:
    return {
        "g_instances": model.graph.count(tag="g"),
        "param_count": model.graph.registry.size,
        "node_count": len(model.graph.nodes),
    }


def bench_assembly(sizes, s_v: int, arch_g: GArch | None = None,
                   arch_f: FArch | None = None, seed: int = 0) -> list[dict]:
    """Assemble each size over one registry; census plus wall time in microseconds."""
    arch_g = arch_g or GArch()
    arch_f = arch_f or FArch()
    registry = ParamRegistry(seed)
    rows = []
    for n in sizes:
        t0 = time.perf_counter()
        model = assemble(registry, n, s_v, arch_g, arch_f)
        micros = (time.perf_counter() - t0) * 1e6
        row = {"n": n, **assembly_census(model), "assemble_micros": round(micros, 1)}
        assert row["g_instances"] == math.comb(n, 2)
        rows.append(row)
    return rows

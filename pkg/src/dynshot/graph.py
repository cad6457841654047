"""Static dataflow graph with a shared, named parameter registry.

Nodes carry a static per-example shape. ``Graph.forward`` accepts feeds either
at exactly that shape or with one extra leading batch axis; in the batched
case every non-parameter value gets the batch axis and parameters broadcast.
A scalar loss evaluated over a batch is reduced by its mean, so gradients
written by ``backward`` are gradients of the mean episode loss.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

OP_KINDS = (
    "input",
    "parameter",
    "matmul",
    "add_bias",
    "activation",
    "concat",
    "mean_of",
    "softmax_xent",
    "slice_row",
)
ACTIVATIONS = ("relu", "tanh")


class GraphError(Exception):
    """Base class for graph construction and evaluation errors."""


class FrozenGraphError(GraphError):
    pass


class ShapeError(GraphError):
    pass


class UnfedInputError(GraphError):
    pass


@dataclass(frozen=True, eq=False)
class NodeRef:
    id: int
    op_kind: str
    input_ids: tuple[int, ...]
    shape: tuple[int, ...]
    batched: bool
    attrs: Mapping = field(default_factory=dict)

    def __repr__(self) -> str:
        return f"NodeRef(#{self.id} {self.op_kind} {list(self.shape)})"


@dataclass
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


def glorot_uniform(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    if len(shape) >= 2:
        fan_in, fan_out = shape[-2], shape[-1]
    elif len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        fan_in = fan_out = 1
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def zeros_init(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    return np.zeros(shape)


Initializer = Callable[[tuple, np.random.Generator], np.ndarray]


class ParamRegistry:
    """Named parameter storage shared by every graph built over it.

    Each parameter's initial value is drawn from a generator seeded by
    ``(seed, crc32(name))``, so values do not depend on creation order.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._params: dict[str, Parameter] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    @property
    def size(self) -> int:
        """Total number of scalar entries."""
        return sum(p.value.size for p in self._params.values())

    def get_or_create(self, name: str, shape: Sequence[int],
                      initializer: Initializer | None = None,
                      seed: int | None = None) -> Parameter:
        shape = tuple(int(s) for s in shape)
        if name in self._params:
            p = self._params[name]
            if p.shape != shape:
                raise ShapeError(
                    f"parameter {name!r} registered with shape {list(p.shape)}, "
                    f"requested {list(shape)}")
            return p
        init = initializer or glorot_uniform
        base = self.seed if seed is None else seed
        rng = np.random.default_rng([base, zlib.crc32(name.encode("utf-8"))])
        value = np.array(init(shape, rng), dtype=np.float64).reshape(shape)
        p = Parameter(name, value, np.zeros(shape))
        self._params[name] = p
        return p

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad[...] = 0.0

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.value.copy() for n, p in self._params.items()}

    def load_state(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        if strict and set(state) != set(self._params) and self._params:
            missing = sorted(set(self._params) - set(state))
            extra = sorted(set(state) - set(self._params))
            raise GraphError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, value in state.items():
            value = np.asarray(value, dtype=np.float64)
            if name in self._params:
                p = self._params[name]
                if p.shape != value.shape:
                    raise ShapeError(f"parameter {name!r}: checkpoint shape "
                                     f"{list(value.shape)} != {list(p.shape)}")
                p.value[...] = value
            else:
                self._params[name] = Parameter(name, value.copy(), np.zeros(value.shape))


class Values(dict):
    """Forward results keyed by node id; ``probs`` holds softmax outputs of loss nodes."""

    def __init__(self, batch: int | None):
        super().__init__()
        self.batch = batch
        self.probs: dict[int, np.ndarray] = {}

    def __getitem__(self, node):
        key = node.id if isinstance(node, NodeRef) else node
        return super().__getitem__(key)

    def __contains__(self, node):
        key = node.id if isinstance(node, NodeRef) else node
        return super().__contains__(key)


class Graph:
    """Append-only computation graph.

    Parameters are looked up in ``registry`` by name, so several graphs (or
    several uses within one graph) share storage for the same name.
    """

    def __init__(self, registry: ParamRegistry | None = None):
        self.registry = registry if registry is not None else ParamRegistry()
        self.nodes: list[NodeRef] = []
        self.frozen = False
        self._param_nodes: dict[str, NodeRef] = {}
        self.tags: dict[int, str] = {}

    # construction -------------------------------------------------------

    def _add(self, op_kind, inputs, shape, attrs=None, batched=None) -> NodeRef:
        if self.frozen:
            raise FrozenGraphError("graph is frozen; no nodes may be added")
        for x in inputs:
            if not (0 <= x.id < len(self.nodes)) or self.nodes[x.id] is not x:
                raise GraphError(f"{x!r} does not belong to this graph")
        if batched is None:
            batched = any(x.batched for x in inputs)
        node = NodeRef(len(self.nodes), op_kind, tuple(x.id for x in inputs),
                       tuple(shape), batched, dict(attrs or {}))
        self.nodes.append(node)
        return node

    def freeze(self) -> None:
        self.frozen = True

    def input(self, shape: Sequence[int], name: str | None = None) -> NodeRef:
        shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in shape):
            raise ShapeError(f"input extents must be >= 1, got {list(shape)}")
        return self._add("input", [], shape, {"name": name}, batched=True)

    def parameter(self, name: str, shape: Sequence[int],
                  initializer: Initializer | None = None,
                  seed: int | None = None) -> NodeRef:
        if self.frozen:
            raise FrozenGraphError("graph is frozen; no nodes may be added")
        p = self.registry.get_or_create(name, shape, initializer, seed)
        node = self._param_nodes.get(name)
        if node is None:
            node = self._add("parameter", [], p.shape, {"name": name}, batched=False)
            self._param_nodes[name] = node
        return node

    def matmul(self, a: NodeRef, b: NodeRef) -> NodeRef:
        if len(a.shape) not in (1, 2) or len(b.shape) != 2:
            raise ShapeError(f"matmul needs a rank 1/2 and b rank 2: {a!r} @ {b!r}")
        if a.shape[-1] != b.shape[0]:
            raise ShapeError(f"matmul inner extents differ: {a!r} @ {b!r}")
        return self._add("matmul", [a, b], a.shape[:-1] + b.shape[1:])

    def add_bias(self, x: NodeRef, b: NodeRef) -> NodeRef:
        if len(b.shape) != 1 or not x.shape or x.shape[-1] != b.shape[0]:
            raise ShapeError(f"bias {b!r} does not match trailing extent of {x!r}")
        return self._add("add_bias", [x, b], x.shape)

    def activation(self, x: NodeRef, kind: str = "relu") -> NodeRef:
        if kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")
        return self._add("activation", [x], x.shape, {"kind": kind})

    def concat(self, parts: Sequence[NodeRef]) -> NodeRef:
        parts = list(parts)
        if not parts:
            raise ShapeError("concat of zero parts")
        lead = parts[0].shape[:-1]
        for p in parts:
            if not p.shape or p.shape[:-1] != lead:
                raise ShapeError(f"concat part {p!r} incompatible with {parts[0]!r}")
        width = sum(p.shape[-1] for p in parts)
        return self._add("concat", parts, lead + (width,))

    def mean_of(self, parts: Sequence[NodeRef], _scale: float | None = None) -> NodeRef:
        parts = list(parts)
        if not parts:
            raise ShapeError("mean_of of zero parts")
        for p in parts:
            if p.shape != parts[0].shape:
                raise ShapeError(f"mean_of part {p!r} differs from {parts[0]!r}")
        scale = 1.0 / len(parts) if _scale is None else float(_scale)
        return self._add("mean_of", parts, parts[0].shape, {"scale": scale})

    def slice_row(self, x: NodeRef, i: int) -> NodeRef:
        if len(x.shape) != 2:
            raise ShapeError(f"slice_row needs a rank-2 node, got {x!r}")
        if not 0 <= i < x.shape[0]:
            raise ShapeError(f"row {i} out of range for {x!r}")
        return self._add("slice_row", [x], x.shape[1:], {"row": int(i)})

    def softmax_xent(self, logits: NodeRef, label: NodeRef | int) -> NodeRef:
        """Scalar loss ``-log softmax(logits)[label]`` for two-unit logits.

        ``label`` is a constant 0/1 or a scalar input node fed with labels.
        """
        if logits.shape != (2,):
            raise ShapeError(f"softmax_xent expects 2 logits, got {logits!r}")
        if isinstance(label, NodeRef):
            if label.shape != ():
                raise ShapeError(f"label node must be scalar, got {label!r}")
            return self._add("softmax_xent", [logits, label], ())
        if label not in (0, 1):
            raise ValueError(f"label {label!r} out of range; expected 0 or 1")
        return self._add("softmax_xent", [logits], (), {"label": int(label)})

    # evaluation ---------------------------------------------------------

    def _check_feeds(self, feeds: Mapping[NodeRef, np.ndarray]):
        batch = None
        arrays = {}
        for node, value in feeds.items():
            if node.op_kind != "input" or self.nodes[node.id] is not node:
                raise GraphError(f"{node!r} is not an input of this graph")
            arr = np.asarray(value, dtype=np.float64)
            if arr.shape == node.shape:
                b = None
            elif arr.shape[1:] == node.shape and arr.ndim == len(node.shape) + 1:
                b = arr.shape[0]
            else:
                raise ShapeError(f"feed for {node!r} has shape {list(arr.shape)}")
            if arrays and b != batch:
                raise ShapeError("feeds mix batched and unbatched shapes or batch sizes")
            batch = b
            arrays[node.id] = arr
        return batch, arrays

    def forward(self, feeds: Mapping[NodeRef, np.ndarray],
                upto: NodeRef | None = None) -> Values:
        """Evaluate every node up to ``upto`` (default: all).

        Pure with respect to the graph: results live in the returned mapping,
        so concurrent forwards over read-only parameters are safe.
        """
        batch, arrays = self._check_feeds(feeds)
        stop = len(self.nodes) if upto is None else upto.id + 1
        vals: list = [None] * stop
        probs = {}
        reg = self.registry
        for node in self.nodes[:stop]:
            op = node.op_kind
            ins = [vals[i] for i in node.input_ids]
            if op == "input":
                if node.id not in arrays:
                    raise UnfedInputError(f"unfed input {node!r}")
                a = arrays[node.id]
                out = a if batch is not None else a[None]
            elif op == "parameter":
                out = reg[node.attrs["name"]].value
            elif op == "matmul":
                a, b = ins
                a_node = self.nodes[node.input_ids[0]]
                if len(a_node.shape) == 1:
                    out = np.matmul(a[..., None, :], b)[..., 0, :]
                else:
                    out = np.matmul(a, b)
            elif op == "add_bias":
                out = ins[0] + ins[1]
            elif op == "activation":
                if node.attrs["kind"] == "relu":
                    out = np.maximum(ins[0], 0.0)
                else:
                    out = np.tanh(ins[0])
            elif op == "concat":
                parts = ins
                if node.batched:
                    rows = 1 if batch is None else batch
                    parts = [x if self.nodes[i].batched else np.broadcast_to(x, (rows,) + x.shape)
                             for x, i in zip(ins, node.input_ids)]
                out = np.concatenate(parts, axis=-1)
            elif op == "mean_of":
                total = ins[0]
                for x in ins[1:]:
                    total = total + x
                out = total * node.attrs["scale"]
                if node.attrs["scale"] == 1.0 / len(ins) and len(ins) > 2:
                    # elements where every part agrees are returned unrounded
                    same = np.ones(out.shape, dtype=bool)
                    for x in ins[1:]:
                        same &= x == ins[0]
                    out = np.where(same, ins[0], out)
            elif op == "slice_row":
                out = ins[0][..., node.attrs["row"], :]
            elif op == "softmax_xent":
                z = ins[0]
                m = np.max(z, axis=-1, keepdims=True)
                e = np.exp(z - m)
                s = np.sum(e, axis=-1, keepdims=True)
                p = e / s
                lse = (m + np.log(s))[..., 0]
                label = self._labels(node, ins, z)
                picked = np.take_along_axis(z, label[..., None], axis=-1)[..., 0]
                out = lse - picked
                probs[node.id] = p
            else:  # pragma: no cover
                raise GraphError(f"unknown op {op!r}")
            vals[node.id] = out
        result = Values(batch)
        for node in self.nodes[:stop]:
            v = vals[node.id]
            if batch is None and node.batched:
                v = v[0]
                if node.id in probs:
                    result.probs[node.id] = probs[node.id][0]
            elif node.id in probs:
                result.probs[node.id] = probs[node.id]
            dict.__setitem__(result, node.id, v)
        result._raw = vals
        return result

    @staticmethod
    def _labels(node, ins, z):
        if len(ins) == 2:
            lab = ins[1]
            if not np.all((lab == 0) | (lab == 1)):
                raise ValueError("label out of range; expected 0 or 1")
            return np.asarray(lab, dtype=np.intp)
        return np.full(z.shape[:-1], node.attrs["label"], dtype=np.intp)

    def backward(self, loss: NodeRef, values: Values) -> None:
        """Write d(mean loss)/d(param) into the registry's grads.

        Every registry grad is zeroed first; contributions from all uses of
        a shared parameter are summed.
        """
        if loss.shape not in ((), (1,)):
            raise ShapeError(f"backward needs a scalar loss, got {loss!r}")
        vals = values._raw
        if len(vals) <= loss.id or vals[loss.id] is None:
            raise GraphError("forward has not been run through the loss node")
        self.registry.zero_grad()
        adj: list = [None] * (loss.id + 1)
        lv = vals[loss.id]
        if loss.batched:
            adj[loss.id] = np.full(lv.shape, 1.0 / lv.shape[0])
        else:
            adj[loss.id] = np.ones(lv.shape)

        def push(i, g):
            adj[i] = g if adj[i] is None else adj[i] + g

        nodes = self.nodes
        for node in reversed(nodes[:loss.id + 1]):
            g = adj[node.id]
            if g is None:
                continue
            adj[node.id] = None
            op = node.op_kind
            ids = node.input_ids
            if op == "input":
                continue
            if op == "parameter":
                self.registry[node.attrs["name"]].grad += g
                continue
            ins = [vals[i] for i in ids]
            if op == "matmul":
                a, b = ins
                an, bn = nodes[ids[0]], nodes[ids[1]]
                if len(an.shape) == 1:
                    ga = np.matmul(g[..., None, :], np.swapaxes(b, -1, -2))[..., 0, :]
                    gb = a[..., :, None] * g[..., None, :]
                else:
                    ga = np.matmul(g, np.swapaxes(b, -1, -2))
                    gb = np.matmul(np.swapaxes(a, -1, -2), g)
                push(ids[0], _unbatch(ga, an.batched, node.batched))
                push(ids[1], _unbatch(gb, bn.batched, node.batched))
            elif op == "add_bias":
                push(ids[0], _unbatch(g, nodes[ids[0]].batched, node.batched))
                gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if g.ndim > 1 else g
                push(ids[1], gb)
            elif op == "activation":
                if node.attrs["kind"] == "relu":
                    push(ids[0], g * (ins[0] > 0.0))
                else:
                    push(ids[0], g * (1.0 - vals[node.id] ** 2))
            elif op == "concat":
                start = 0
                for i in ids:
                    w = nodes[i].shape[-1]
                    push(i, _unbatch(g[..., start:start + w], nodes[i].batched, node.batched))
                    start += w
            elif op == "mean_of":
                gs = g * node.attrs["scale"]
                for i in ids:
                    push(i, _unbatch(gs, nodes[i].batched, node.batched))
            elif op == "slice_row":
                src = nodes[ids[0]]
                full = np.zeros(ins[0].shape)
                full[..., node.attrs["row"], :] = g
                push(ids[0], _unbatch(full, src.batched, node.batched))
            elif op == "softmax_xent":
                p = values.probs[node.id]
                if values.batch is None and node.batched:
                    p = p[None]
                label = self._labels(node, ins, ins[0])
                onehot = np.zeros_like(p)
                np.put_along_axis(onehot, label[..., None], 1.0, axis=-1)
                push(ids[0], g[..., None] * (p - onehot))
            else:  # pragma: no cover
                raise GraphError(f"unknown op {op!r}")

    # inspection ---------------------------------------------------------

    def count(self, op_kind: str | None = None, tag: str | None = None) -> int:
        return sum(1 for n in self.nodes
                   if (op_kind is None or n.op_kind == op_kind)
                   and (tag is None or self.tags.get(n.id) == tag))

    def tag(self, node: NodeRef, tag: str) -> NodeRef:
        """Label ``node`` for census queries such as ``count(tag="g")``."""
        if self.frozen:
            raise FrozenGraphError("graph is frozen")
        self.tags[node.id] = tag
        return node


def _unbatch(g: np.ndarray, input_batched: bool, output_batched: bool) -> np.ndarray:
    if output_batched and not input_batched:
        return g.sum(axis=0)
    return g


def grad_check(graph: Graph, loss: NodeRef, feeds: Mapping[NodeRef, np.ndarray],
               epsilon: float = 1e-5, names: Sequence[str] | None = None) -> float:
    """Max relative error between backward grads and central differences.

    Checks every entry of every registry parameter (or only ``names``).
    Relative error is ``|a - n| / max(1e-12, |a| + |n|)``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")

    def loss_value() -> float:
        v = graph.forward(feeds, upto=loss)[loss]
        return float(np.mean(v))

    values = graph.forward(feeds, upto=loss)
    graph.backward(loss, values)
    worst = 0.0
    params = [graph.registry[n] for n in (names or graph.registry.names())]
    for p in params:
        analytic = p.grad.copy()
        flat = p.value.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            up = loss_value()
            flat[k] = orig - epsilon
            down = loss_value()
            flat[k] = orig
            numeric = (up - down) / (2.0 * epsilon)
            a = analytic.reshape(-1)[k]
            err = abs(a - numeric) / max(1e-12, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst

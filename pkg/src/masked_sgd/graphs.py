"""Dense computation graphs with reverse-mode gradients.

Networks are small DAGs over a fixed node vocabulary (affine, low-rank
affine, tanh/relu, softmax cross-entropy, mean squared error). All
parameters live in one flat float64 vector addressed through a
:class:`ParamLayout`, so optimizers can treat a whole network as a point
in R^d. Batches are column-major: an input matrix has shape
``(features, samples)``.

Everything here is deterministic and pure: the same (params, batch,
targets) always produces bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericError

Array = np.ndarray

LINEAR_KINDS = ("affine", "lowrank")
ACTIVATION_KINDS = ("tanh", "relu")
LOSS_KINDS = ("mse", "softmax_ce")
NODE_KINDS = ("input", "add") + LINEAR_KINDS + ACTIVATION_KINDS + LOSS_KINDS


def as_f64(a) -> Array:
    return np.asarray(a, dtype=np.float64)


@dataclass(frozen=True)
class ParamLayout:
    """Bijection between named tensors and slices of a flat vector.

    ``entries`` is an ordered tuple of ``(name, shape)``; offsets are
    assigned contiguously in that order, so the layout fully determines
    how a flat vector of length ``dim`` splits into tensors.
    """

    names: tuple[str, ...]
    shapes: tuple[tuple[int, ...], ...]
    offsets: tuple[int, ...]
    dim: int

    @classmethod
    def build(cls, entries: Sequence[tuple[str, tuple[int, ...]]]) -> "ParamLayout":
        names, shapes, offsets = [], [], []
        off = 0
        for name, shape in entries:
            if name in names:
                raise ContractError(f"duplicate tensor name {name!r}")
            size = int(np.prod(shape, dtype=np.int64)) if shape else 1
            if size <= 0:
                raise ContractError(f"tensor {name!r} has empty shape {shape}")
            names.append(name)
            shapes.append(tuple(int(s) for s in shape))
            offsets.append(off)
            off += size
        return cls(tuple(names), tuple(shapes), tuple(offsets), off)

    def _index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ContractError(f"unknown tensor name {name!r}") from None

    def shape_of(self, name: str) -> tuple[int, ...]:
        return self.shapes[self._index(name)]

    def slice_of(self, name: str) -> slice:
        i = self._index(name)
        size = int(np.prod(self.shapes[i], dtype=np.int64))
        return slice(self.offsets[i], self.offsets[i] + size)

    def view(self, vec: Array, name: str) -> Array:
        """Reshaped view of ``name``'s block inside ``vec`` (no copy)."""
        i = self._index(name)
        return vec[self.slice_of(name)].reshape(self.shapes[i])

    def coords(self, name: str) -> Array:
        s = self.slice_of(name)
        return np.arange(s.start, s.stop)

    def pack(self, tensors: dict[str, Array]) -> Array:
        vec = np.zeros(self.dim)
        for name in self.names:
            if name not in tensors:
                raise ContractError(f"missing tensor {name!r}")
            t = as_f64(tensors[name])
            if t.shape != self.shape_of(name):
                raise ContractError(
                    f"tensor {name!r} has shape {t.shape}, layout expects {self.shape_of(name)}"
                )
            vec[self.slice_of(name)] = t.ravel()
        return vec

    def unpack(self, vec: Array) -> dict[str, Array]:
        vec = as_f64(vec)
        if vec.shape != (self.dim,):
            raise ContractError(f"parameter vector has shape {vec.shape}, expected ({self.dim},)")
        return {name: self.view(vec, name).copy() for name in self.names}


@dataclass(frozen=True)
class Node:
    """One operation in a computation graph.

    ``inputs`` are indices of earlier nodes (the graph is topologically
    ordered by construction, hence acyclic). ``params`` names this
    node's tensors: ``("w",)`` or ``("w", "b")`` for affine,
    ``("u", "v")`` or ``("u", "v", "w")`` for lowrank (the three-tensor
    form computes ``(V U + W) X``, the two-tensor form drops W).
    """

    kind: str
    inputs: tuple[int, ...] = ()
    params: tuple[str, ...] = ()


_PARAM_ARITY = {"affine": (1, 2), "lowrank": (2, 3)}


@dataclass(frozen=True)
class CompGraph:
    nodes: tuple[Node, ...]
    layout: ParamLayout

    def __post_init__(self):
        if not self.nodes:
            raise ContractError("graph has no nodes")
        if self.nodes[0].kind != "input":
            raise ContractError("node 0 must be the input node")
        if self.nodes[-1].kind not in LOSS_KINDS:
            raise ContractError("last node must be a loss node")
        seen_params: set[str] = set()
        for i, node in enumerate(self.nodes):
            if node.kind not in NODE_KINDS:
                raise ContractError(f"node {i}: unknown kind {node.kind!r}")
            if any(j >= i for j in node.inputs):
                raise ContractError(f"node {i}: input indices must precede the node")
            arity = {"input": (0,), "add": (2,), "mse": (1,), "softmax_ce": (1,)}.get(
                node.kind, (1,)
            )
            if len(node.inputs) not in arity:
                raise ContractError(f"node {i} ({node.kind}): bad input count {len(node.inputs)}")
            if node.kind in _PARAM_ARITY:
                if len(node.params) not in _PARAM_ARITY[node.kind]:
                    raise ContractError(f"node {i} ({node.kind}): bad param count")
            elif node.params:
                raise ContractError(f"node {i} ({node.kind}): takes no parameters")
            for name in node.params:
                if name in seen_params:
                    raise ContractError(f"tensor {name!r} referenced by more than one node")
                seen_params.add(name)
                self.layout.shape_of(name)  # raises on unknown names

    @property
    def loss_kind(self) -> str:
        return self.nodes[-1].kind


def _check_inputs(graph: CompGraph, params: Array, batch: Array, targets: Array):
    params = as_f64(params)
    batch = as_f64(batch)
    targets = as_f64(targets)
    if params.shape != (graph.layout.dim,):
        raise ContractError(
            f"parameter vector has shape {params.shape}, expected ({graph.layout.dim},)"
        )
    if batch.ndim != 2 or targets.ndim != 2:
        raise ContractError("batch and targets must be 2-D (features, samples)")
    if batch.shape[1] == 0:
        raise ContractError("empty batch")
    if targets.shape[1] != batch.shape[1]:
        raise ContractError(
            f"batch has {batch.shape[1]} samples but targets have {targets.shape[1]}"
        )
    return params, batch, targets


def _node_forward(graph, params, batch, targets):
    """Forward pass; returns (per-node outputs, per-node caches)."""
    layout = graph.layout
    outs: list[Array] = []
    n = batch.shape[1]
    for i, node in enumerate(graph.nodes):
        if node.kind == "input":
            out = batch
        elif node.kind == "affine":
            w = layout.view(params, node.params[0])
            x = outs[node.inputs[0]]
            if x.shape[0] != w.shape[1]:
                raise ContractError(f"node {i}: affine expects {w.shape[1]} features, got {x.shape[0]}")
            out = w @ x
            if len(node.params) == 2:
                out = out + layout.view(params, node.params[1])[:, None]
        elif node.kind == "lowrank":
            u = layout.view(params, node.params[0])
            v = layout.view(params, node.params[1])
            x = outs[node.inputs[0]]
            if x.shape[0] != u.shape[1]:
                raise ContractError(f"node {i}: lowrank expects {u.shape[1]} features, got {x.shape[0]}")
            out = v @ (u @ x)
            if len(node.params) == 3:
                out = out + layout.view(params, node.params[2]) @ x
        elif node.kind == "tanh":
            out = np.tanh(outs[node.inputs[0]])
        elif node.kind == "relu":
            out = np.maximum(outs[node.inputs[0]], 0.0)
        elif node.kind == "add":
            a, b = outs[node.inputs[0]], outs[node.inputs[1]]
            if a.shape != b.shape:
                raise ContractError(f"node {i}: add inputs have shapes {a.shape} vs {b.shape}")
            out = a + b
        elif node.kind == "mse":
            pred = outs[node.inputs[0]]
            if pred.shape != targets.shape:
                raise ContractError(
                    f"node {i}: prediction shape {pred.shape} vs target shape {targets.shape}"
                )
            diff = pred - targets
            out = 0.5 * float(np.sum(diff * diff)) / n
        elif node.kind == "softmax_ce":
            pred = outs[node.inputs[0]]
            if pred.shape != targets.shape:
                raise ContractError(
                    f"node {i}: prediction shape {pred.shape} vs target shape {targets.shape}"
                )
            shifted = pred - pred.max(axis=0, keepdims=True)
            logz = np.log(np.sum(np.exp(shifted), axis=0, keepdims=True))
            out = -float(np.sum(targets * (shifted - logz))) / n
        else:  # pragma: no cover - guarded by CompGraph validation
            raise ContractError(f"node {i}: unknown kind {node.kind!r}")
        if not np.all(np.isfinite(out)):
            raise NumericError(f"non-finite value at node {i} ({node.kind})", node=i)
        outs.append(out)
    return outs


def forward(graph: CompGraph, params: Array, batch: Array, targets: Array) -> float:
    """Loss of the graph at ``params`` on one batch."""
    params, batch, targets = _check_inputs(graph, params, batch, targets)
    return float(_node_forward(graph, params, batch, targets)[-1])


def value_and_grad(
    graph: CompGraph, params: Array, batch: Array, targets: Array
) -> tuple[float, Array]:
    """Loss and its gradient with respect to the flat parameter vector."""
    params, batch, targets = _check_inputs(graph, params, batch, targets)
    layout = graph.layout
    outs = _node_forward(graph, params, batch, targets)
    n = batch.shape[1]
    grad = np.zeros(layout.dim)
    # Adjoints of node outputs, accumulated in reverse topological order.
    adj: list = [None] * len(graph.nodes)

    loss_node = graph.nodes[-1]
    pred = outs[loss_node.inputs[0]]
    if loss_node.kind == "mse":
        adj[loss_node.inputs[0]] = (pred - targets) / n
    else:  # softmax_ce
        shifted = pred - pred.max(axis=0, keepdims=True)
        e = np.exp(shifted)
        adj[loss_node.inputs[0]] = (e / e.sum(axis=0, keepdims=True) - targets) / n

    for i in range(len(graph.nodes) - 2, 0, -1):
        g = adj[i]
        if g is None:
            continue
        node = graph.nodes[i]
        x = outs[node.inputs[0]] if node.inputs else None

        def send(j, value):
            adj[j] = value if adj[j] is None else adj[j] + value

        if node.kind == "affine":
            w = layout.view(params, node.params[0])
            grad[layout.slice_of(node.params[0])] += (g @ x.T).ravel()
            if len(node.params) == 2:
                grad[layout.slice_of(node.params[1])] += g.sum(axis=1)
            send(node.inputs[0], w.T @ g)
        elif node.kind == "lowrank":
            u = layout.view(params, node.params[0])
            v = layout.view(params, node.params[1])
            vt_g = v.T @ g
            grad[layout.slice_of(node.params[0])] += (vt_g @ x.T).ravel()
            grad[layout.slice_of(node.params[1])] += (g @ (u @ x).T).ravel()
            back = u.T @ vt_g
            if len(node.params) == 3:
                w = layout.view(params, node.params[2])
                grad[layout.slice_of(node.params[2])] += (g @ x.T).ravel()
                back = back + w.T @ g
            send(node.inputs[0], back)
        elif node.kind == "tanh":
            y = outs[i]
            send(node.inputs[0], g * (1.0 - y * y))
        elif node.kind == "relu":
            send(node.inputs[0], g * (x > 0.0))
        elif node.kind == "add":
            send(node.inputs[0], g)
            send(node.inputs[1], g)
        # input: nothing to do

    return float(outs[-1]), grad


def gradient(graph: CompGraph, params: Array, batch: Array, targets: Array) -> Array:
    return value_and_grad(graph, params, batch, targets)[1]


def finite_diff_gradient(f: Callable[[Array], float], x: Array, h: float = 1e-5) -> Array:
    """Central-difference gradient, one coordinate at a time.

    Independent of the reverse-mode engine by construction; used as the
    oracle in gradient checks.
    """
    if h <= 0:
        raise ContractError("finite-difference step must be positive")
    x = as_f64(x)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def max_rel_err(a: Array, b: Array, floor: float = 1e-8) -> float:
    """Largest per-coordinate relative error, max(|a|,|b|,floor) denominator."""
    a = as_f64(a)
    b = as_f64(b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0

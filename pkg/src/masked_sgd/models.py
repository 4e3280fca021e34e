"""Model zoo: plain MLPs, low-rank composites, and width-slimmed subnets.

The joint-training constructions pair a small core network with a
containing super-network. Two composite shapes are supported:

* layer-wise additive low-rank: every linear layer computes
  ``(V U + W) X``; the core is the rank-k path ``{U, V}`` of each layer
  plus every tensor that is not part of a low-rank layer.
* two-branch output sum: core branch and extension branch run in
  parallel on the same input and their outputs are added.

Width slimming instead selects a sub-MLP of an ordinary MLP by keeping a
fraction of each hidden layer's neurons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .graphs import Array, CompGraph, Node, ParamLayout, as_f64
from .masks import Mask, mlp_layers

NONLINEARITIES = ("tanh", "relu")
LOSSES = ("mse", "softmax_ce")


@dataclass(frozen=True)
class LowRankSpec:
    """Shape of one low-rank layer: rank k = max(1, floor(ratio * min(f_in, f_out)))."""

    f_in: int
    f_out: int
    ratio: float

    def __post_init__(self):
        if self.f_in < 1 or self.f_out < 1:
            raise ContractError("layer widths must be positive")
        if not 0.0 < self.ratio <= 1.0:
            raise ContractError("rank ratio must be in (0, 1]")

    @property
    def k(self) -> int:
        return max(1, math.floor(self.ratio * min(self.f_in, self.f_out)))


@dataclass(frozen=True)
class CompositeSpec:
    """Declares which tensors of a super-network belong to the core."""

    core_tensors: frozenset[str]
    kind: str = "lowrank"  # "lowrank" | "two_branch"

    def __post_init__(self):
        if not self.core_tensors:
            raise ContractError("core tensor set must not be empty")


def _check_widths(widths):
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise ContractError("need at least input and output widths")
    if any(w < 1 for w in widths):
        raise ContractError("widths must be positive")
    return widths


def _check_options(nonlinearity, loss):
    if nonlinearity not in NONLINEARITIES:
        raise ContractError(f"unknown nonlinearity {nonlinearity!r}")
    if loss not in LOSSES:
        raise ContractError(f"unknown loss {loss!r}")


def _init_params(layout: ParamLayout, fan_ins: dict[str, int], seed: int) -> Array:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per tensor, in layout order."""
    rng = np.random.default_rng(seed)
    vec = np.zeros(layout.dim)
    for name in layout.names:
        bound = 1.0 / math.sqrt(fan_ins[name])
        s = layout.slice_of(name)
        vec[s] = rng.uniform(-bound, bound, s.stop - s.start)
    return vec


def _mlp_nodes(widths, nonlinearity, loss, prefix="", start_node=0, input_node=0):
    """Affine/activation node chain; returns (nodes, entries, fan_ins, out_index)."""
    nodes, entries, fan_ins = [], [], {}
    prev = input_node
    idx = start_node
    for layer in range(len(widths) - 1):
        w, b = f"{prefix}w{layer}", f"{prefix}b{layer}"
        entries += [(w, (widths[layer + 1], widths[layer])), (b, (widths[layer + 1],))]
        fan_ins[w] = fan_ins[b] = widths[layer]
        nodes.append(Node("affine", (prev,), (w, b)))
        prev = idx
        idx += 1
        if layer < len(widths) - 2:
            nodes.append(Node(nonlinearity, (prev,)))
            prev = idx
            idx += 1
    return nodes, entries, fan_ins, prev


def build_mlp(widths, nonlinearity="tanh", loss="mse", seed=0):
    """Fully connected net with biases; returns (layout, params, graph)."""
    widths = _check_widths(widths)
    _check_options(nonlinearity, loss)
    nodes, entries, fan_ins, out = _mlp_nodes(widths, nonlinearity, loss, start_node=1)
    layout = ParamLayout.build(entries)
    graph = CompGraph(tuple([Node("input")] + nodes + [Node(loss, (out,))]), layout)
    return layout, _init_params(layout, fan_ins, seed), graph


def low_rank_forward(U: Array, V: Array, W: Array, X: Array) -> Array:
    """``(V U + W) X`` with shape validation."""
    U, V, W, X = map(as_f64, (U, V, W, X))
    if U.ndim != 2 or V.ndim != 2 or W.ndim != 2:
        raise ContractError("U, V, W must be matrices")
    k, f_in = U.shape
    f_out = V.shape[0]
    if V.shape != (f_out, k) or W.shape != (f_out, f_in):
        raise ContractError(
            f"inconsistent shapes: U {U.shape}, V {V.shape}, W {W.shape}"
        )
    if X.shape[0] != f_in:
        raise ContractError(f"input has {X.shape[0]} features, layer expects {f_in}")
    return (V @ U + W) @ X


def collapse_low_rank(U: Array, V: Array, W: Array) -> Array:
    """Materialize the equivalent dense weight ``V U + W``."""
    U, V, W = map(as_f64, (U, V, W))
    if U.shape[0] != V.shape[1] or W.shape != (V.shape[0], U.shape[1]):
        raise ContractError(
            f"inconsistent shapes: U {U.shape}, V {V.shape}, W {W.shape}"
        )
    return V @ U + W


def build_low_rank_mlp(widths, ratio, nonlinearity="tanh", loss="mse", seed=0,
                       affine_head=False):
    """Super-network whose linear layers are low-rank-plus-dense.

    Every layer computes ``(V U + W) X`` (no biases); with
    ``affine_head`` the final layer stays a plain affine layer with
    bias, shared between core and super-network. Returns
    ``(layout, params, graph, composite)`` where the composite's core is
    the ``{U, V}`` pair of every low-rank layer plus all tensors outside
    low-rank layers.
    """
    widths = _check_widths(widths)
    _check_options(nonlinearity, loss)
    nodes, entries, fan_ins = [], [], {}
    core: set[str] = set()
    n_layers = len(widths) - 1
    prev, idx = 0, 1
    for layer in range(n_layers):
        f_in, f_out = widths[layer], widths[layer + 1]
        last = layer == n_layers - 1
        if last and affine_head:
            w, b = f"w{layer}", f"b{layer}"
            entries += [(w, (f_out, f_in)), (b, (f_out,))]
            fan_ins[w] = fan_ins[b] = f_in
            core |= {w, b}
            nodes.append(Node("affine", (prev,), (w, b)))
        else:
            spec = LowRankSpec(f_in, f_out, ratio)
            u, v, w = f"u{layer}", f"v{layer}", f"w{layer}"
            entries += [(u, (spec.k, f_in)), (v, (f_out, spec.k)), (w, (f_out, f_in))]
            fan_ins[u] = f_in
            fan_ins[v] = spec.k
            fan_ins[w] = f_in
            core |= {u, v}
            nodes.append(Node("lowrank", (prev,), (u, v, w)))
        prev = idx
        idx += 1
        if not last:
            nodes.append(Node(nonlinearity, (prev,)))
            prev = idx
            idx += 1
    layout = ParamLayout.build(entries)
    graph = CompGraph(tuple([Node("input")] + nodes + [Node(loss, (prev,))]), layout)
    composite = CompositeSpec(frozenset(core), kind="lowrank")
    return layout, _init_params(layout, fan_ins, seed), graph, composite


def build_two_branch(core_widths, ext_widths, nonlinearity="tanh", loss="mse", seed=0):
    """Two networks on the same input with summed outputs.

    The first branch is the core; both branches must agree on input and
    output widths. Returns ``(layout, params, graph, composite)``.
    """
    core_widths = _check_widths(core_widths)
    ext_widths = _check_widths(ext_widths)
    _check_options(nonlinearity, loss)
    if core_widths[0] != ext_widths[0] or core_widths[-1] != ext_widths[-1]:
        raise ContractError("branches must share input and output widths")
    core_nodes, core_entries, core_fans, core_out = _mlp_nodes(
        core_widths, nonlinearity, loss, prefix="core_", start_node=1
    )
    ext_nodes, ext_entries, ext_fans, ext_out = _mlp_nodes(
        ext_widths, nonlinearity, loss, prefix="ext_", start_node=1 + len(core_nodes)
    )
    nodes = [Node("input")] + core_nodes + ext_nodes
    nodes.append(Node("add", (core_out, ext_out)))
    nodes.append(Node(loss, (len(nodes) - 1,)))
    layout = ParamLayout.build(core_entries + ext_entries)
    graph = CompGraph(tuple(nodes), layout)
    params = _init_params(layout, {**core_fans, **ext_fans}, seed)
    composite = CompositeSpec(frozenset(n for n, _ in core_entries), kind="two_branch")
    return layout, params, graph, composite


def core_mask(layout: ParamLayout, composite: CompositeSpec) -> Mask:
    """Mask selecting exactly the coordinates of the core's tensors."""
    values = np.zeros(layout.dim)
    for name in sorted(composite.core_tensors):
        values[layout.slice_of(name)] = 1.0  # raises on unknown names
    return Mask(values, granularity="tensor")


def slim_width_mask(layout: ParamLayout, keep_ratio: float) -> Mask:
    """Mask of the sub-MLP keeping a fraction of each hidden layer.

    Each hidden layer keeps its ``max(1, floor(keep_ratio * width))``
    lowest-index neurons; all weights and biases incident to a dropped
    neuron are masked out. Input and output layers are untouched.
    """
    if not 0.0 < keep_ratio <= 1.0:
        raise ContractError("keep ratio must be in (0, 1]")
    layers = mlp_layers(layout)
    values = np.ones(layout.dim)
    kept_prev: Array | None = None  # kept neuron flags of the previous layer
    for li, (w_name, b_name, out_width, in_width) in enumerate(layers):
        hidden = li < len(layers) - 1
        keep = max(1, math.floor(keep_ratio * out_width)) if hidden else out_width
        kept = np.zeros(out_width, dtype=bool)
        kept[:keep] = True
        w = values[layout.slice_of(w_name)].reshape(out_width, in_width)
        w[~kept, :] = 0.0
        if kept_prev is not None:
            w[:, ~kept_prev] = 0.0
        if b_name is not None:
            values[layout.slice_of(b_name)][~kept] = 0.0
        kept_prev = kept
    return Mask(values, granularity="neuron")


def slim_widths(widths, keep_ratio: float) -> list[int]:
    if not 0.0 < keep_ratio <= 1.0:
        raise ContractError("keep ratio must be in (0, 1]")
    widths = _check_widths(widths)
    return (
        [widths[0]]
        + [max(1, math.floor(keep_ratio * w)) for w in widths[1:-1]]
        + [widths[-1]]
    )


def extract_slim_core(layout: ParamLayout, params: Array, keep_ratio: float,
                      nonlinearity="tanh", loss="mse"):
    """Standalone copy of the slim sub-MLP selected by ``slim_width_mask``.

    Returns ``(core_layout, core_params, core_graph)``; forward passes of
    the core match the super-network with the mask's complement zeroed.
    """
    params = as_f64(params)
    layers = mlp_layers(layout)
    widths = [layers[0][3]] + [l[2] for l in layers]
    core_w = slim_widths(widths, keep_ratio)
    core_layout, _, core_graph = build_mlp(core_w, nonlinearity, loss, seed=0)
    core_params = np.zeros(core_layout.dim)
    for li, (w_name, b_name, _, _) in enumerate(layers):
        w = layout.view(params, w_name)
        core_layout.view(core_params, w_name)[:] = w[: core_w[li + 1], : core_w[li]]
        if b_name is not None:
            b = layout.view(params, b_name)
            core_layout.view(core_params, b_name)[:] = b[: core_w[li + 1]]
    return core_layout, core_params, core_graph


def extract_low_rank_core(layout: ParamLayout, params: Array, graph: CompGraph,
                          composite: CompositeSpec):
    """Standalone low-rank core: each ``(V U + W) X`` layer becomes ``(V U) X``.

    Tensors outside low-rank layers are copied as-is (they are shared
    with the core). Returns ``(core_layout, core_params, core_graph)``.
    """
    if composite.kind != "lowrank":
        raise ContractError("not a low-rank composite")
    params = as_f64(params)
    entries, nodes = [], []
    for node in graph.nodes:
        if node.kind == "lowrank" and len(node.params) == 3:
            nodes.append(Node("lowrank", node.inputs, node.params[:2]))
            for name in node.params[:2]:
                entries.append((name, layout.shape_of(name)))
        else:
            nodes.append(node)
            for name in node.params:
                entries.append((name, layout.shape_of(name)))
    core_layout = ParamLayout.build(entries)
    core_params = np.zeros(core_layout.dim)
    for name in core_layout.names:
        core_layout.view(core_params, name)[:] = layout.view(params, name)
    return core_layout, core_params, CompGraph(tuple(nodes), core_layout)


def collapse_network(layout: ParamLayout, params: Array, graph: CompGraph):
    """Replace every low-rank layer with its collapsed dense weight.

    Returns ``(dense_layout, dense_params, dense_graph)`` computing the
    same function up to floating-point reassociation.
    """
    params = as_f64(params)
    entries, nodes = [], []
    collapsed: dict[str, Array] = {}
    for node in graph.nodes:
        if node.kind == "lowrank":
            u = layout.view(params, node.params[0])
            v = layout.view(params, node.params[1])
            w = layout.view(params, node.params[2]) if len(node.params) == 3 else 0.0
            name = f"dense_{node.params[0]}"
            dense = v @ u + w
            collapsed[name] = dense
            entries.append((name, dense.shape))
            nodes.append(Node("affine", node.inputs, (name,)))
        else:
            nodes.append(node)
            for p in node.params:
                entries.append((p, layout.shape_of(p)))
    dense_layout = ParamLayout.build(entries)
    dense_params = np.zeros(dense_layout.dim)
    for name in dense_layout.names:
        src = collapsed[name] if name in collapsed else layout.view(params, name)
        dense_layout.view(dense_params, name)[:] = src
    return dense_layout, dense_params, CompGraph(tuple(nodes), dense_layout)

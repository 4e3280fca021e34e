"""Binary masks over flat parameter vectors and per-step selection strategies.

A mask ``p`` multiplies gradients elementwise, so ``p * v`` zeroes the
coordinates outside the selected subnetwork. Strategies produce the mask
for step ``t``: the constant all-ones mask (vanilla SGD), a frozen mask,
Bernoulli dropout per weight or per neuron group, the top-k coordinates
of the current gradient, a cyclic list of masks, or a disjoint partition
of neurons across simulated workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DegenerateMaskError
from .graphs import Array, ParamLayout, as_f64


@dataclass(frozen=True, eq=False)
class Mask:
    """Immutable 0/1 vector with optional group structure."""

    values: Array
    granularity: str = "weight"  # "weight" | "neuron" | "tensor"
    groups: Array | None = None  # int group id per coordinate, -1 = ungrouped

    def __post_init__(self):
        v = as_f64(self.values)
        if v.ndim != 1:
            raise ContractError("mask must be a 1-D vector")
        if not np.all((v == 0.0) | (v == 1.0)):
            raise ContractError("mask entries must be 0 or 1")
        if not np.any(v == 1.0):
            raise ContractError("mask has no active coordinates")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        if self.groups is not None:
            g = np.asarray(self.groups)
            if g.shape != v.shape:
                raise ContractError("group map must match mask length")
            for gid in np.unique(g[g >= 0]):
                vals = v[g == gid]
                if not np.all(vals == vals[0]):
                    raise ContractError(f"mask not constant within group {gid}")

    @classmethod
    def ones(cls, dim: int) -> "Mask":
        return cls(np.ones(dim))

    @classmethod
    def from_indices(cls, dim: int, indices, granularity: str = "weight") -> "Mask":
        v = np.zeros(dim)
        v[np.asarray(indices, dtype=int)] = 1.0
        return cls(v, granularity=granularity)

    @property
    def dim(self) -> int:
        return self.values.size

    @property
    def active(self) -> int:
        return int(self.values.sum())

    @property
    def density(self) -> float:
        return self.active / self.dim

    def apply(self, v: Array) -> Array:
        return self.values * v

    def complement_values(self) -> Array:
        return 1.0 - self.values

    def is_all_ones(self) -> bool:
        return self.active == self.dim


def mask_overlap_ratio(mask: Mask, grad: Array) -> float:
    """``||g||^2 / ||p * g||^2``; >= 1, and 1 iff the mask loses nothing."""
    grad = as_f64(grad)
    masked_sq = float(np.dot(mask.apply(grad), mask.apply(grad)))
    if masked_sq == 0.0:
        raise DegenerateMaskError("mask zeroes the entire gradient")
    return float(np.dot(grad, grad)) / masked_sq


class MaskStrategy:
    """Base class; subclasses implement ``next_mask``."""

    needs_grad = False

    def next_mask(self, t: int, grad: Array | None = None, rng=None) -> Mask:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": type(self).__name__}


class AllOnes(MaskStrategy):
    def __init__(self, dim: int):
        self.mask = Mask.ones(dim)

    def next_mask(self, t, grad=None, rng=None):
        return self.mask


class FixedMask(MaskStrategy):
    def __init__(self, mask: Mask):
        self.mask = mask

    def next_mask(self, t, grad=None, rng=None):
        return self.mask

    def describe(self):
        return {"kind": "FixedMask", "active": self.mask.active}


class BernoulliDropout(MaskStrategy):
    """Keep each weight (or neuron group) independently with probability mu."""

    def __init__(self, dim: int, mu: float, groups: Array | None = None):
        if not 0.0 < mu <= 1.0:
            raise ContractError("dropout keep probability must be in (0, 1]")
        self.dim = dim
        self.mu = float(mu)
        self.groups = None if groups is None else np.asarray(groups)
        if self.groups is not None and self.groups.shape != (dim,):
            raise ContractError("group map must have one entry per coordinate")

    @classmethod
    def per_neuron(cls, layout: ParamLayout, mu: float) -> "BernoulliDropout":
        """Neuron-level dropout on an MLP layout.

        Each hidden neuron's incoming weights and bias form one group;
        coordinates outside hidden layers (the output layer) are never
        dropped.
        """
        groups = np.full(layout.dim, -1, dtype=int)
        layers = mlp_layers(layout)
        gid = 0
        for w_name, b_name, out_width, _ in layers[:-1]:  # all but the output layer
            w_coords = layout.coords(w_name).reshape(layout.shape_of(w_name))
            b_coords = layout.coords(b_name) if b_name is not None else None
            for neuron in range(out_width):
                groups[w_coords[neuron]] = gid
                if b_coords is not None:
                    groups[b_coords[neuron]] = gid
                gid += 1
        return cls(layout.dim, mu, groups=groups)

    def next_mask(self, t, grad=None, rng=None):
        if rng is None:
            raise ContractError("dropout requires an rng")
        for _ in range(1000):
            if self.groups is None:
                v = (rng.random(self.dim) < self.mu).astype(np.float64)
            else:
                n_groups = int(self.groups.max()) + 1
                keep = (rng.random(n_groups) < self.mu).astype(np.float64)
                v = np.ones(self.dim)
                grouped = self.groups >= 0
                v[grouped] = keep[self.groups[grouped]]
            if v.any():
                gran = "weight" if self.groups is None else "neuron"
                return Mask(v, granularity=gran, groups=self.groups)
        raise ContractError("dropout drew an empty mask 1000 times in a row")

    def describe(self):
        return {
            "kind": "BernoulliDropout",
            "mu": self.mu,
            "granularity": "weight" if self.groups is None else "neuron",
        }


class TopK(MaskStrategy):
    """Indicator of the k largest-magnitude gradient coordinates.

    Ties break toward the lower coordinate index (stable sort on
    negated magnitudes), so the mask is deterministic in the gradient.
    """

    needs_grad = True

    def __init__(self, k: int):
        if k < 1:
            raise ContractError("k must be >= 1")
        self.k = int(k)

    def next_mask(self, t, grad=None, rng=None):
        if grad is None:
            raise ContractError("top-k masking requires the current gradient")
        grad = as_f64(grad)
        if self.k > grad.size:
            raise ContractError(f"k={self.k} exceeds dimension {grad.size}")
        order = np.argsort(-np.abs(grad), kind="stable")
        return Mask.from_indices(grad.size, order[: self.k])

    def describe(self):
        return {"kind": "TopK", "k": self.k}


class Alternating(MaskStrategy):
    """Cycle through a fixed list of masks: ``masks[t mod len(masks)]``."""

    def __init__(self, masks: list[Mask]):
        if not masks:
            raise ContractError("alternating strategy needs at least one mask")
        self.masks = list(masks)

    @property
    def period(self) -> int:
        return len(self.masks)

    def next_mask(self, t, grad=None, rng=None):
        return self.masks[t % self.period]

    def describe(self):
        return {"kind": "Alternating", "period": self.period}


class DisjointPartition(MaskStrategy):
    """Simulated model-parallel workers on disjoint neuron partitions.

    Step t uses the mask of worker ``t mod workers``; after every worker
    has taken ``local_steps`` turns (``workers * local_steps`` steps) the
    neurons are re-partitioned from the caller's rng. Holds the current
    partition as internal state, so calls must be serialized and made
    with consecutive t.
    """

    def __init__(self, layout: ParamLayout, workers: int, local_steps: int):
        if workers < 1 or local_steps < 1:
            raise ContractError("workers and local_steps must be >= 1")
        self.layout = layout
        self.workers = int(workers)
        self.local_steps = int(local_steps)
        self._round = -1
        self._masks: list[Mask] | None = None

    def next_mask(self, t, grad=None, rng=None):
        period = self.workers * self.local_steps
        rnd = t // period
        if rnd != self._round:
            if rng is None:
                raise ContractError("disjoint partitioning requires an rng")
            self._masks = partition_disjoint(self.layout, self.workers, rng)
            self._round = rnd
        return self._masks[t % self.workers]

    def describe(self):
        return {
            "kind": "DisjointPartition",
            "workers": self.workers,
            "local_steps": self.local_steps,
        }


def next_mask(strategy: MaskStrategy, t: int, grad: Array | None = None, rng=None) -> Mask:
    if strategy.needs_grad and grad is None:
        raise ContractError(f"{type(strategy).__name__} requires the current gradient")
    return strategy.next_mask(t, grad=grad, rng=rng)


def mlp_layers(layout: ParamLayout) -> list[tuple[str, str | None, int, int]]:
    """Recover the layer list of an MLP layout built by the model zoo.

    Returns ``(weight_name, bias_name, out_width, in_width)`` per layer,
    in order. Raises if the layout does not follow the ``w{i}``/``b{i}``
    naming scheme with consistent widths.
    """
    layers = []
    i = 0
    while f"w{i}" in layout.names:
        w_name = f"w{i}"
        shape = layout.shape_of(w_name)
        if len(shape) != 2:
            raise ContractError(f"{w_name} is not a matrix")
        b_name = f"b{i}" if f"b{i}" in layout.names else None
        layers.append((w_name, b_name, shape[0], shape[1]))
        i += 1
    if not layers:
        raise ContractError("layout has no w0; not an MLP layout")
    expected = {n for i in range(len(layers)) for n in (f"w{i}", f"b{i}")}
    extra = [n for n in layout.names if n not in expected]
    if extra:
        raise ContractError(f"layout has non-MLP tensors: {extra}")
    for (_, _, out_w, _), (_, _, _, next_in) in zip(layers, layers[1:]):
        if out_w != next_in:
            raise ContractError("inconsistent widths between consecutive layers")
    return layers


def partition_disjoint(layout: ParamLayout, workers: int, rng) -> list[Mask]:
    """Randomly split every hidden layer's neurons into ``workers`` sets.

    Induced coordinate masks are pairwise disjoint and cover the whole
    vector: a hidden neuron owns its incoming row and bias, weight
    columns between layers follow the owner of the column's neuron, and
    the output bias goes to worker 0.
    """
    if workers < 1:
        raise ContractError("workers must be >= 1")
    layers = mlp_layers(layout)
    n_hidden = len(layers) - 1
    assign = [np.zeros(layout.dim, dtype=bool) for _ in range(workers)]

    # Partition each hidden layer's neurons.
    owners: list[Array] = []  # per hidden layer: owner id per neuron
    for w_name, _, out_width, _ in layers[:-1]:
        if out_width < workers:
            raise ContractError(
                f"hidden layer {w_name} has {out_width} neurons, fewer than {workers} workers"
            )
        perm = rng.permutation(out_width)
        owner = np.empty(out_width, dtype=int)
        for w, chunk in enumerate(np.array_split(perm, workers)):
            owner[chunk] = w
        owners.append(owner)

    for li, (w_name, b_name, out_width, _) in enumerate(layers):
        w_coords = layout.coords(w_name).reshape(layout.shape_of(w_name))
        b_coords = layout.coords(b_name) if b_name is not None else None
        if li == 0:
            # Incoming weights and bias of hidden layer 1, by row owner.
            for neuron in range(out_width):
                w = owners[0][neuron]
                assign[w][w_coords[neuron]] = True
                if b_coords is not None:
                    assign[w][b_coords[neuron]] = True
        else:
            # Columns follow the previous layer's neuron owners.
            col_owner = owners[li - 1]
            for col in range(w_coords.shape[1]):
                assign[col_owner[col]][w_coords[:, col]] = True
            if b_coords is not None:
                if li < n_hidden:
                    for neuron in range(out_width):
                        assign[owners[li][neuron]][b_coords[neuron]] = True
                else:
                    assign[0][b_coords] = True  # output bias: worker 0
    return [Mask(a.astype(np.float64)) for a in assign]


def merge_disjoint(start: Array, finals: list[Array], masks: list[Mask]) -> Array:
    """Merge per-worker results back into one vector.

    Each worker contributes exactly the coordinates its mask owns; masks
    must be pairwise disjoint.
    """
    start = as_f64(start)
    covered = np.zeros(start.size)
    out = start.copy()
    for mask, final in zip(masks, finals):
        covered += mask.values
        idx = mask.values == 1.0
        out[idx] = as_f64(final)[idx]
    if np.any(covered > 1.0):
        raise ContractError("masks overlap; refusing to merge")
    return out

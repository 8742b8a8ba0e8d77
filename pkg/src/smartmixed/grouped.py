"""Phase-2 network with frozen per-neuron activations and grouped execution.

Neurons that share an activation are gathered into one contiguous block,
the activation runs once over that block, and the results are scattered
back.  A layer therefore costs one kernel call per distinct activation
(at most six) instead of one per neuron.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from smartmixed.activations import (
    DEFAULT_PARAMS,
    NUM_ACTIVATIONS,
    ActivationKind,
    ActivationParams,
    apply,
    derivative,
)
from smartmixed.errors import ConfigError, DimensionError
from smartmixed.network import (
    DenseLayer,
    ForwardCache,
    Gradients,
    LayeredNetwork,
    NetworkPhase1,
    _check_cache,
    dense_backward,
    validate_architecture,
)


class ActivationAssignment:
    """Frozen activation kind per hidden neuron, one int array per layer."""

    def __init__(self, layers):
        frozen = []
        for kinds in layers:
            arr = np.array(kinds, dtype=np.int64)
            if arr.ndim != 1 or (arr.size and (arr.min() < 0 or arr.max() >= NUM_ACTIVATIONS)):
                raise ValueError("assignment entries must be activation indices 0..5")
            arr.setflags(write=False)
            frozen.append(arr)
        self._layers = tuple(frozen)

    @classmethod
    def uniform(cls, widths, kind) -> "ActivationAssignment":
        kind = ActivationKind(kind)
        return cls([np.full(w, int(kind)) for w in widths])

    @classmethod
    def from_names(cls, layers) -> "ActivationAssignment":
        return cls([[int(ActivationKind.from_name(s)) for s in names] for names in layers])

    def to_names(self) -> list[list[str]]:
        return [[ActivationKind(int(k)).label for k in layer] for layer in self._layers]

    @property
    def layers(self) -> tuple:
        return self._layers

    @property
    def widths(self) -> list[int]:
        return [len(k) for k in self._layers]

    def histogram(self) -> list[dict[str, int]]:
        out = []
        for layer in self._layers:
            counts = Counter(int(k) for k in layer)
            out.append({kind.label: counts.get(int(kind), 0) for kind in ActivationKind})
        return out

    def __len__(self):
        return len(self._layers)

    def __getitem__(self, i):
        return self._layers[i]

    def __eq__(self, other):
        if not isinstance(other, ActivationAssignment) or len(self) != len(other):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self._layers, other._layers))

    def __repr__(self):
        return f"ActivationAssignment(widths={self.widths})"


@dataclass(frozen=True)
class LayerGroups:
    """Sorted neuron indices per activation kind; empty arrays for unused kinds."""

    width: int
    indices: tuple

    def nonempty(self):
        for kind in ActivationKind:
            idx = self.indices[kind]
            if idx.size:
                yield kind, idx

    def sizes(self) -> list[int]:
        return [int(ix.size) for ix in self.indices]


ActivationGroups = list  # list[LayerGroups], one per hidden layer


def extract_assignment(net: NetworkPhase1) -> ActivationAssignment:
    """Per-neuron argmax over the selection logits (ties to the lowest index)."""
    return ActivationAssignment([np.argmax(s.logits, axis=1) for s in net.selections])


def build_groups(assignment: ActivationAssignment) -> ActivationGroups:
    groups = []
    for kinds in assignment.layers:
        idx = tuple(np.flatnonzero(kinds == int(k)).astype(np.intp) for k in ActivationKind)
        for ix in idx:
            ix.setflags(write=False)
        groups.append(LayerGroups(len(kinds), idx))
    return groups


class NetworkMixed(LayeredNetwork):
    def __init__(self, architecture, layers, assignment: ActivationAssignment,
                 params: ActivationParams = DEFAULT_PARAMS):
        self.architecture = validate_architecture(architecture)
        self.layers = list(layers)
        if len(self.layers) != len(self.architecture) - 1:
            raise ConfigError("one dense layer per architecture transition is required")
        if assignment.widths != self.hidden_widths:
            raise ConfigError(f"assignment widths {assignment.widths} do not match hidden widths {self.hidden_widths}")
        self.assignment = assignment
        self.groups = build_groups(assignment)
        self.params = params
        self._init_identity()


def freeze(net: NetworkPhase1) -> NetworkMixed:
    """Mixed network with copied weights and the max-logit assignment."""
    return NetworkMixed(
        net.architecture,
        [layer.copy() for layer in net.layers],
        extract_assignment(net),
        net.params,
    )


@dataclass
class MixedCache(ForwardCache):
    pre: list = field(default_factory=list)           # pre-activation of each hidden layer
    kernel_calls: list = field(default_factory=list)  # activation kernel invocations per hidden layer


def apply_grouped(u: np.ndarray, groups: LayerGroups, params: ActivationParams) -> tuple[np.ndarray, int]:
    """Apply each group's activation once to its gathered columns."""
    out = np.empty_like(u)
    calls = 0
    for kind, idx in groups.nonempty():
        if idx.size == groups.width:
            out[...] = apply(kind, u, params)
        else:
            out[:, idx] = apply(kind, u[:, idx], params)
        calls += 1
    return out, calls


def grouped_forward(net: NetworkMixed, X: np.ndarray) -> tuple[np.ndarray, MixedCache]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.architecture[0]:
        raise DimensionError(f"input shape {X.shape} does not match input width {net.architecture[0]}")
    cache = MixedCache(net.uid, net.version)
    x = X
    last = len(net.layers) - 1
    for l, layer in enumerate(net.layers):
        cache.inputs.append(x)
        u = layer.affine(x)
        if l == last:
            return u, cache
        x, calls = apply_grouped(u, net.groups[l], net.params)
        cache.pre.append(u)
        cache.kernel_calls.append(calls)
    raise AssertionError("unreachable")


def grouped_backward(net: NetworkMixed, cache: MixedCache, dL_dout: np.ndarray) -> Gradients:
    _check_cache(net, cache)
    dL_dout = np.asarray(dL_dout, dtype=np.float64)
    if dL_dout.shape != (cache.inputs[0].shape[0], net.architecture[-1]):
        raise DimensionError("upstream gradient does not match the cached forward pass")

    def hidden(l, da):
        u = cache.pre[l]
        groups = net.groups[l]
        d = np.empty_like(u)
        for kind, idx in groups.nonempty():
            if idx.size == groups.width:
                d[...] = derivative(kind, u, net.params)
            else:
                d[:, idx] = derivative(kind, u[:, idx], net.params)
        return da * d

    dW, db = dense_backward(net.layers, cache.inputs, dL_dout, hidden)
    cache.consumed = True
    return Gradients(dW, db)

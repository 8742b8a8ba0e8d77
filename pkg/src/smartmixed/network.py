"""Phase-1 trainable network: dense layers, mixed hidden activations, Adam."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from smartmixed.activations import DEFAULT_PARAMS, ActivationParams
from smartmixed.errors import CacheError, ConfigError, DimensionError, LabelError
from smartmixed.gumbel import NoiseMode, SelectionCache, SelectionState, mixed_backward, mixed_forward
from smartmixed.tensor import Rng, adam_update, matmul

_net_ids = itertools.count()


@dataclass
class DenseLayer:
    W: np.ndarray  # (n_out, n_in)
    b: np.ndarray  # (n_out,)

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.W.copy(), self.b.copy())

    def affine(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.W.shape[1]:
            raise DimensionError(f"input width {x.shape[1]} does not match layer fan-in {self.W.shape[1]}")
        u = matmul(x, self.W.T)
        u += self.b
        return u


def validate_architecture(architecture) -> list[int]:
    arch = [int(w) for w in architecture]
    if len(arch) < 2:
        raise ConfigError("architecture needs at least an input and an output width")
    if any(w < 1 for w in arch):
        raise ConfigError(f"layer widths must be >= 1: {arch}")
    return arch


class LayeredNetwork:
    """Shared bookkeeping for Phase-1 and Phase-2 networks.

    ``version`` increments on every parameter update; caches remember the
    version they were produced under so stale ones are rejected.
    """

    architecture: list[int]
    layers: list[DenseLayer]
    params: ActivationParams

    def _init_identity(self):
        self.uid = next(_net_ids)
        self.version = 0

    def touch(self):
        self.version += 1

    @property
    def hidden_widths(self) -> list[int]:
        return self.architecture[1:-1]

    def dense_parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out

    def parameters(self) -> list[np.ndarray]:
        return self.dense_parameters()

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())


class NetworkPhase1(LayeredNetwork):
    def __init__(self, architecture, layers, selections, params: ActivationParams = DEFAULT_PARAMS):
        self.architecture = validate_architecture(architecture)
        self.layers = list(layers)
        self.selections = list(selections)
        self.params = params
        if len(self.layers) != len(self.architecture) - 1:
            raise ConfigError("one dense layer per architecture transition is required")
        if len(self.selections) != len(self.architecture) - 2:
            raise ConfigError("one selection state per hidden layer is required")
        for width, sel in zip(self.hidden_widths, self.selections):
            if sel.n != width:
                raise ConfigError(f"selection state has {sel.n} rows for a layer of width {width}")
        self._init_identity()

    @property
    def tau(self) -> float:
        return self.selections[0].tau if self.selections else 1.0

    def parameters(self) -> list[np.ndarray]:
        return self.dense_parameters() + [s.logits for s in self.selections]


def kaiming_uniform(rng: Rng, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return (2.0 * rng.uniform(fan_out * fan_in) - 1.0).reshape(fan_out, fan_in) * bound


def init_layers(architecture, seed: int) -> list[DenseLayer]:
    rng = Rng(seed).child("init")
    return [
        DenseLayer(kaiming_uniform(rng.child(i), n_out, n_in), np.zeros(n_out))
        for i, (n_in, n_out) in enumerate(zip(architecture[:-1], architecture[1:]))
    ]


def init_network(
    architecture,
    seed: int,
    tau: float = 1.0,
    eps: float = 1e-20,
    params: ActivationParams = DEFAULT_PARAMS,
) -> NetworkPhase1:
    """Kaiming-uniform weights, zero biases, zero (uniform-prior) selection logits."""
    arch = validate_architecture(architecture)
    selections = [SelectionState.zeros(n, tau, eps) for n in arch[1:-1]]
    return NetworkPhase1(arch, init_layers(arch, seed), selections, params)


@dataclass
class ForwardCache:
    net_uid: int
    net_version: int
    inputs: list = field(default_factory=list)       # input to each dense layer
    selection: list = field(default_factory=list)    # SelectionCache per hidden layer
    consumed: bool = False


def _check_cache(net: LayeredNetwork, cache: ForwardCache):
    if cache.consumed:
        raise CacheError("cache already used by a backward pass")
    if cache.net_uid != net.uid or cache.net_version != net.version:
        raise CacheError("cache was produced by a different network state")


def forward(
    net: NetworkPhase1,
    X: np.ndarray,
    rng: Rng | None = None,
    noise_mode=NoiseMode.PER_BATCH,
    noise: list | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Class logits for the batch ``X``.

    Hidden layer ``l`` draws its Gumbel noise from ``rng.child(l)``; pass
    ``noise`` (one array per hidden layer) to replay fixed draws instead.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.architecture[0]:
        raise DimensionError(f"input shape {X.shape} does not match input width {net.architecture[0]}")
    mode = NoiseMode.parse(noise_mode)
    cache = ForwardCache(net.uid, net.version)
    x = X
    last = len(net.layers) - 1
    for l, layer in enumerate(net.layers):
        cache.inputs.append(x)
        u = layer.affine(x)
        if l == last:
            return u, cache
        a, sc = mixed_forward(
            u,
            net.selections[l],
            rng=None if (rng is None or noise is not None) else rng.child(l),
            noise_mode=mode,
            noise=None if noise is None else noise[l],
            params=net.params,
        )
        cache.selection.append(sc)
        x = a
    raise AssertionError("unreachable")


def softmax_xent(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"{labels.shape[0] if labels.ndim else 0} labels for {n} rows")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise LabelError(f"labels must lie in [0, {c})")
    labels = labels.astype(np.intp)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=1, keepdims=True)
    logp = shifted - np.log(z)
    rows = np.arange(n)
    loss = float(-logp[rows, labels].mean()) if n else 0.0
    grad = e / z
    grad[rows, labels] -= 1.0
    grad /= max(n, 1)
    return loss, grad


@dataclass
class Gradients:
    dW: list
    db: list
    dlogits: list = field(default_factory=list)

    def as_list(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.dW, self.db):
            out += [w, b]
        return out + list(self.dlogits)


def dense_backward(layers, inputs, dout, hidden_grad):
    """Backprop through the affine stack.

    ``hidden_grad(l, dL_da)`` turns the gradient at hidden layer ``l``'s
    output into the gradient at its pre-activation.
    """
    n = len(layers)
    dW = [None] * n
    db = [None] * n
    du = dout
    for l in range(n - 1, -1, -1):
        dW[l] = matmul(du.T, inputs[l])
        db[l] = du.sum(axis=0)
        if l == 0:
            break
        da = matmul(du, layers[l].W)
        du = hidden_grad(l - 1, da)
    return dW, db


def backward(net: NetworkPhase1, cache: ForwardCache, dL_dlogits: np.ndarray) -> Gradients:
    _check_cache(net, cache)
    dL_dlogits = np.asarray(dL_dlogits, dtype=np.float64)
    if dL_dlogits.shape != (cache.inputs[0].shape[0], net.architecture[-1]):
        raise DimensionError("upstream gradient does not match the cached forward pass")
    dlogits = [None] * len(net.selections)

    def hidden(l, da):
        du, dlogits[l] = mixed_backward(da, cache.selection[l], net.selections[l])
        return du

    dW, db = dense_backward(net.layers, cache.inputs, dL_dlogits, hidden)
    cache.consumed = True
    return Gradients(dW, db, dlogits)


@dataclass
class OptimizerState:
    """Adam moments, one pair per parameter array."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    lr_scale: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, lr_scale=None):
        scale = list(lr_scale) if lr_scale is not None else [1.0] * len(params)
        return cls(
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            lr_scale=scale,
        )


def adam_step(params: list, grads: list, opt: OptimizerState) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``opt``."""
    if len(params) != len(grads) or len(params) != len(opt.m):
        raise DimensionError("parameter, gradient and moment lists differ in length")
    opt.step += 1
    bc1 = 1.0 - opt.beta1 ** opt.step
    bc2 = 1.0 - opt.beta2 ** opt.step
    for p, g, m, v, scale in zip(params, grads, opt.m, opt.v, opt.lr_scale):
        if p.shape != g.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        g = np.ascontiguousarray(g, dtype=np.float64)
        adam_update(p, g, m, v, opt.beta1, opt.beta2, bc1, bc2, opt.lr * scale, opt.eps)


def make_optimizer(net: LayeredNetwork, lr=1e-3, logit_lr_multiplier=1.0, **kw) -> OptimizerState:
    dense = net.dense_parameters()
    params = net.parameters()
    scale = [1.0] * len(dense) + [logit_lr_multiplier] * (len(params) - len(dense))
    return OptimizerState.for_params(params, lr=lr, lr_scale=scale, **kw)


def optimizer_step(net: LayeredNetwork, grads: Gradients, opt: OptimizerState) -> None:
    adam_step(net.parameters(), grads.as_list(), opt)
    net.touch()

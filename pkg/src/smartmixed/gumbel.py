"""Phase-1 mixed-activation layer with a straight-through Gumbel-Softmax.

Each hidden neuron owns a logit row over the six candidates.  In the
forward pass the neuron samples one candidate through Gumbel-perturbed
logits and outputs exactly that activation.  The backward pass routes the
upstream gradient through the selected activation's derivative, and to the
logits as if the hard one-hot were the tempered softmax itself.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from smartmixed.activations import (
    DEFAULT_PARAMS,
    NUM_ACTIVATIONS,
    ActivationKind,
    ActivationParams,
    apply_all,
    derivative,
)
from smartmixed.errors import DimensionError, InvalidTemperature, NonFiniteError
from smartmixed.tensor import Rng


class NoiseMode(str, enum.Enum):
    PER_BATCH = "per_batch"    # one draw per neuron, shared by the minibatch
    PER_SAMPLE = "per_sample"  # one draw per (sample, neuron)
    ZERO = "zero"              # no noise: selection is argmax of the logits

    @classmethod
    def parse(cls, value) -> "NoiseMode":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower().replace("-", "_"))


@dataclass
class SelectionState:
    """Selection logits for one hidden layer, shape ``(n, 6)``."""

    logits: np.ndarray
    tau: float = 1.0
    eps: float = 1e-20

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 2 or self.logits.shape[1] != NUM_ACTIVATIONS:
            raise DimensionError(f"logits must be (n, {NUM_ACTIVATIONS}), got {self.logits.shape}")
        if not self.tau > 0:
            raise InvalidTemperature(f"temperature must be > 0, got {self.tau}")
        if not np.all(np.isfinite(self.logits)):
            raise NonFiniteError("selection logits must be finite")

    @classmethod
    def zeros(cls, n: int, tau: float = 1.0, eps: float = 1e-20) -> "SelectionState":
        return cls(np.zeros((n, NUM_ACTIVATIONS)), tau, eps)

    @property
    def n(self) -> int:
        return self.logits.shape[0]


@dataclass
class SelectionCache:
    """Everything :func:`mixed_backward` needs from one forward call.

    ``noise``, ``soft``, ``hard`` have shape ``(G, n, 6)`` where ``G`` is 1
    when the selection is shared across the batch and ``batch`` otherwise.
    """

    u: np.ndarray
    noise: np.ndarray
    soft: np.ndarray
    hard: np.ndarray
    choice: np.ndarray
    acts: np.ndarray
    params: ActivationParams = field(default=DEFAULT_PARAMS)


def gumbel_noise(rng: Rng, rows: int, cols: int, eps: float = 1e-20) -> np.ndarray:
    """Gumbel(0, 1) samples by inverse CDF, with ``eps`` guarding both logs."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    v = rng.uniform(rows * cols).reshape(rows, cols)
    return gumbel_from_uniform(v, eps)


def gumbel_from_uniform(v, eps: float = 1e-20) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return -np.log(-np.log(v + eps) + eps)


def tempered_softmax(z, tau: float) -> np.ndarray:
    """Softmax of ``z / tau`` over the last axis."""
    if not tau > 0:
        raise InvalidTemperature(f"temperature must be > 0, got {tau}")
    z = np.asarray(z, dtype=np.float64)
    s = z / tau
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(index, size: int = NUM_ACTIVATIONS) -> np.ndarray:
    index = np.asarray(index)
    out = np.zeros(index.shape + (size,))
    np.put_along_axis(out, index[..., None], 1.0, axis=-1)
    return out


def st_hard(y) -> np.ndarray:
    """Forward value of the straight-through estimator: one-hot of the argmax.

    Its backward Jacobian is the identity, which :func:`mixed_backward`
    applies implicitly.
    """
    y = np.asarray(y, dtype=np.float64)
    return one_hot(np.argmax(y, axis=-1), y.shape[-1])


def selection_probs(logits) -> np.ndarray:
    """Categorical probabilities implied by the logits (softmax, tau = 1)."""
    return tempered_softmax(logits, 1.0)


def _draw_noise(state: SelectionState, batch: int, rng, mode: NoiseMode) -> np.ndarray:
    n = state.n
    if mode is NoiseMode.ZERO:
        return np.zeros((1, n, NUM_ACTIVATIONS))
    if rng is None:
        raise ValueError(f"noise mode {mode.value!r} needs an rng")
    if mode is NoiseMode.PER_BATCH:
        return gumbel_noise(rng, n, NUM_ACTIVATIONS, state.eps)[None]
    return gumbel_noise(rng, batch * n, NUM_ACTIVATIONS, state.eps).reshape(batch, n, NUM_ACTIVATIONS)


def mixed_forward(
    u: np.ndarray,
    state: SelectionState,
    rng: Rng | None = None,
    noise_mode=NoiseMode.PER_BATCH,
    noise: np.ndarray | None = None,
    params: ActivationParams = DEFAULT_PARAMS,
) -> tuple[np.ndarray, SelectionCache]:
    """Hard mixed activation of pre-activations ``u`` (batch x n).

    Pass ``noise`` (shape ``(n, 6)`` or ``(batch, n, 6)``) to replay a fixed
    draw; otherwise it is drawn from ``rng`` according to ``noise_mode``.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[1] != state.n:
        raise DimensionError(f"pre-activations {u.shape} do not match {state.n} neurons")
    batch = u.shape[0]
    if noise is None:
        g = _draw_noise(state, batch, rng, NoiseMode.parse(noise_mode))
    else:
        g = np.asarray(noise, dtype=np.float64)
        if g.ndim == 2:
            g = g[None]
        if g.shape[1:] != state.logits.shape or g.shape[0] not in (1, batch):
            raise DimensionError(f"noise shape {g.shape} does not fit logits {state.logits.shape}")
    z = state.logits[None] + g
    soft = tempered_softmax(z, state.tau)
    # argmax of z equals argmax of soft (softmax is monotone) but cannot be
    # fooled by ties created when exp rounds two close values together
    choice = np.argmax(z, axis=-1)
    hard = one_hot(choice)
    acts = apply_all(u, params)
    idx = np.broadcast_to(choice, u.shape)[None]
    a = np.take_along_axis(acts, idx, axis=0)[0]
    return a, SelectionCache(u=u, noise=g, soft=soft, hard=hard, choice=choice, acts=acts, params=params)


def selected_derivative(u: np.ndarray, choice: np.ndarray, params: ActivationParams = DEFAULT_PARAMS) -> np.ndarray:
    """``sigma'_{choice}(u)`` elementwise; ``choice`` is ``(1, n)`` or ``(batch, n)``."""
    out = np.empty_like(u)
    if choice.shape[0] == 1:
        row = choice[0]
        for k in np.unique(row):
            cols = np.flatnonzero(row == k)
            out[:, cols] = derivative(ActivationKind(int(k)), u[:, cols], params)
    else:
        for k in np.unique(choice):
            mask = choice == k
            out[mask] = derivative(ActivationKind(int(k)), u[mask], params)
    return out


def mixed_backward(
    dL_da: np.ndarray, cache: SelectionCache, state: SelectionState
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients with respect to the pre-activations and the selection logits.

    With ``t[j] = sum_b dL/da[b] * sigma_j(u[b])`` per neuron, the logit
    gradient is ``(1/tau) * y * (t - <y, t>)``: the identity Jacobian of the
    hard step composed with the tempered-softmax Jacobian.
    """
    dL_da = np.asarray(dL_da, dtype=np.float64)
    if dL_da.shape != cache.u.shape:
        raise DimensionError(f"upstream gradient {dL_da.shape} does not match cache {cache.u.shape}")
    if state.logits.shape != cache.soft.shape[1:]:
        raise DimensionError("selection state does not match the cache")
    dL_du = dL_da * selected_derivative(cache.u, cache.choice, cache.params)

    weighted = cache.acts * dL_da[None]  # (6, batch, n)
    if cache.soft.shape[0] == 1:
        t = weighted.sum(axis=1).T[None]  # (1, n, 6)
    else:
        t = weighted.transpose(1, 2, 0)   # (batch, n, 6)
    y = cache.soft
    centered = t - (y * t).sum(axis=-1, keepdims=True)
    dL_dlogits = (y * centered).sum(axis=0) / state.tau
    return dL_du, dL_dlogits

"""Timing comparisons: mixture-style vs grouped forward, compiled vs fallback kernels."""

from __future__ import annotations

import time

import numpy as np

from smartmixed.activations import NUM_ACTIVATIONS, apply_all
from smartmixed.grouped import ActivationAssignment, NetworkMixed, grouped_forward
from smartmixed.network import init_layers
from smartmixed.tensor import Rng, available_backends

BENCH_ARCHITECTURE = [784, 768, 512, 512, 256, 256, 128, 10]


def mixture_forward(net: NetworkMixed, X: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Forward pass that evaluates all six activations for every neuron.

    Each hidden output is the one-hot weighted sum over the six candidates,
    the way a Phase-1 layer computes it.  Returns the logits and the kernel
    call count per hidden layer.
    """
    x = np.asarray(X, dtype=np.float64)
    calls = []
    last = len(net.layers) - 1
    for l, layer in enumerate(net.layers):
        u = layer.affine(x)
        if l == last:
            return u, calls
        acts = apply_all(u, net.params)
        h = np.zeros((NUM_ACTIVATIONS, u.shape[1]))
        h[net.assignment.layers[l], np.arange(u.shape[1])] = 1.0
        x = h[0] * acts[0]
        for j in range(1, NUM_ACTIVATIONS):
            x = x + h[j] * acts[j]
        calls.append(NUM_ACTIVATIONS)
    raise AssertionError("unreachable")


def synthetic_network(architecture=BENCH_ARCHITECTURE, seed: int = 0) -> NetworkMixed:
    """Kaiming-initialized network with a uniformly random activation per neuron."""
    rng = Rng(seed).child("bench_assignment")
    kinds = []
    for w in architecture[1:-1]:
        kinds.append(np.floor(rng.uniform(w) * NUM_ACTIVATIONS).astype(np.int64))
    return NetworkMixed(architecture, init_layers(architecture, seed), ActivationAssignment(kinds))


def _time(fn, repeats: int) -> list[float]:
    out = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return out


def bench_forward(net: NetworkMixed, batch: int = 128, repeats: int = 20, seed: int = 0) -> dict:
    """Time both forward paths on the same weights and inputs.

    Repeats alternate between the two paths so that drift in machine load
    hits both equally; the minimum is reported as the headline figure.
    """
    X = Rng(seed).child("bench_input").uniform(batch * net.architecture[0]).reshape(batch, -1)
    grouped_out, cache = grouped_forward(net, X)
    mixture_out, mixture_calls = mixture_forward(net, X)
    grouped_times, mixture_times = [], []
    grouped_forward(net, X)
    mixture_forward(net, X)
    for _ in range(repeats):
        grouped_times += _time(lambda: grouped_forward(net, X), 1)
        mixture_times += _time(lambda: mixture_forward(net, X), 1)
    g, m = min(grouped_times), min(mixture_times)
    return {
        "architecture": list(net.architecture),
        "batch": batch,
        "repeats": repeats,
        "grouped_seconds": g,
        "mixture_seconds": m,
        "grouped_median_seconds": float(np.median(grouped_times)),
        "mixture_median_seconds": float(np.median(mixture_times)),
        "speedup": m / g,
        "grouped_kernel_calls": list(cache.kernel_calls),
        "mixture_kernel_calls": mixture_calls,
        "outputs_identical": bool(np.array_equal(grouped_out, mixture_out)),
    }


def bench_kernels(m: int = 128, k: int = 784, n: int = 768, repeats: int = 5, seed: int = 0) -> dict:
    """Compare matmul and Adam throughput of every available kernel backend."""
    rng = Rng(seed).child("bench_kernels")
    a = rng.uniform(m * k).reshape(m, k) - 0.5
    b = rng.uniform(k * n).reshape(k, n) - 0.5
    size = k * n
    g = rng.uniform(size) - 0.5
    results = {}
    ref = None
    for name, impl in available_backends().items():
        c = impl.matmul(a, b)
        t_mm = min(_time(lambda: impl.matmul(a, b), repeats))
        p, mo, v = np.zeros(size), np.zeros(size), np.zeros(size)
        t_adam = min(_time(lambda: impl.adam_update(p, g, mo, v, 0.9, 0.999, 0.1, 0.001, 1e-3, 1e-8), repeats))
        if ref is None:
            ref = c
        results[name] = {
            "matmul_seconds": t_mm,
            "matmul_gflops": 2.0 * m * k * n / t_mm / 1e9,
            "adam_seconds": t_adam,
            "adam_ns_per_element": t_adam / size * 1e9,
            "matmul_matches_first_backend": bool(np.array_equal(c, ref)),
        }
    return {"shape": [m, k, n], "backends": results}

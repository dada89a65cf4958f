"""Shared fixtures for the test modules."""
import numpy as np

from fff import nn


def random_net(seed=0, dim=2, hidden=(16, 16), activation="tanh", skip=True, context_dim=0, every=False):
    spec = nn.NetworkSpec(dim, context_dim, hidden, activation, skip, every)
    return nn.init_params(spec, seed, final_layer_scale=0.7)


def reference_forward(params, x, c=None):
    """Independent layer-by-layer evaluation for a single point."""
    spec = params.spec
    act = np.tanh if spec.activation == "tanh" else (lambda p: p / (1.0 + np.exp(-p)))
    h = np.array(x, dtype=np.float64)
    for i in range(spec.n_layers):
        inp = np.concatenate([h, c]) if spec.has_context(i) else h
        W, b = params.weight(i), params.bias(i)
        p = W @ inp + (0 if b is None else b)
        h = act(p) if i < spec.n_layers - 1 else p
    return x + h if spec.global_skip else h


def fd_params(fn, params, eps=1e-5):
    g = np.zeros(params.size)
    for k in range(params.size):
        old = params.flat[k]
        params.flat[k] = old + eps
        fp = fn()
        params.flat[k] = old - eps
        fm = fn()
        params.flat[k] = old
        g[k] = (fp - fm) / (2 * eps)
    return g

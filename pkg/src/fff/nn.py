"""Dimension-preserving MLPs with forward- and reverse-mode differentiation.

Every network maps R^D (plus optional context R^C) to R^D. Four services are
provided on batches of shape (B, D):

* :func:`forward`        plain evaluation
* :func:`jvp`            dual forward pass, returns J(x) w and a tape
* :func:`vjp`            reverse pass, returns u^T J(x) and parameter gradients
* :func:`dual_backward`  reverse pass through a dual forward pass, i.e. the
  parameter gradient of any scalar S(y, J w) given dS/dy and dS/d(Jw)

The last one is what makes the trace surrogate trainable: the gradient of
v^T J_theta w with respect to theta is ``dual_backward(tape, 0, v)`` on the
tape of ``jvp(x, w)``.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionMismatch, TapeMismatch
from .linalg import rng_stream

ACTIVATIONS = {"tanh": 0, "silu": 1}


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    context_dim: int = 0
    hidden_widths: tuple = ()
    activation: str = "tanh"
    global_skip: bool = True
    context_every_layer: bool = False
    bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(h) for h in self.hidden_widths))
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(ACTIVATIONS)}")
        if self.input_dim < 1 or self.context_dim < 0:
            raise ValueError("input_dim must be >= 1 and context_dim >= 0")

    @property
    def output_dim(self):
        return self.input_dim

    @property
    def n_layers(self):
        return len(self.hidden_widths) + 1

    def layer_shapes(self):
        """(out, in) of every linear layer, context columns included."""
        widths = (self.input_dim, *self.hidden_widths, self.input_dim)
        shapes = []
        for i in range(self.n_layers):
            fan_in = widths[i]
            if self.context_dim and (i == 0 or self.context_every_layer):
                fan_in += self.context_dim
            shapes.append((widths[i + 1], fan_in))
        return shapes

    def state_widths(self):
        """Width of the non-context part of each layer input."""
        return (self.input_dim, *self.hidden_widths)

    def has_context(self, layer):
        return bool(self.context_dim) and (layer == 0 or self.context_every_layer)

    def to_dict(self):
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class ParamStore:
    """Flat float64 parameter vector with per-layer weight/bias views.

    Gradient accumulators use the same class (see :meth:`zeros_like`).
    """

    def __init__(self, spec, flat=None):
        self.spec = spec
        self._slices = []
        offset = 0
        for out_dim, in_dim in spec.layer_shapes():
            w = slice(offset, offset + out_dim * in_dim)
            offset = w.stop
            b = None
            if spec.bias:
                b = slice(offset, offset + out_dim)
                offset = b.stop
            self._slices.append(((out_dim, in_dim), w, b))
        self.size = offset
        if flat is None:
            self.flat = np.zeros(offset)
        else:
            flat = np.array(flat, dtype=np.float64)
            if flat.shape != (offset,):
                raise DimensionMismatch(f"expected {offset} parameters, got {flat.shape}")
            self.flat = flat

    def weight(self, layer):
        shape, w, _ = self._slices[layer]
        return self.flat[w].reshape(shape)

    def bias(self, layer):
        _, _, b = self._slices[layer]
        return None if b is None else self.flat[b]

    @property
    def layers(self):
        return [(self.weight(i), self.bias(i)) for i in range(len(self._slices))]

    def zeros_like(self):
        return ParamStore(self.spec)

    def copy(self):
        return ParamStore(self.spec, self.flat.copy())

    def zero(self):
        self.flat[:] = 0.0

    def __len__(self):
        return self.size

    def __repr__(self):
        return f"ParamStore({self.spec.input_dim}->{self.spec.hidden_widths}->{self.spec.output_dim}, n={self.size})"


# GradStore shares the layout; the alias documents intent at call sites.
GradStore = ParamStore


@dataclass
class DualTape:
    """Per-layer values and tangents cached by :func:`jvp` for :func:`dual_backward`."""

    spec: NetworkSpec
    x: np.ndarray
    w: np.ndarray | None
    inputs: list = field(default_factory=list)       # layer inputs incl. context, (B, in)
    tangents: list = field(default_factory=list)     # tangent of the state part of inputs
    d1: list = field(default_factory=list)           # sigma'(pre) per hidden layer
    d2: list = field(default_factory=list)           # sigma''(pre) per hidden layer
    pre_tangents: list = field(default_factory=list) # tangent of pre-activations


def init_params(spec, seed, final_layer_scale=None):
    """Fan-in scaled uniform init; the output layer is multiplied by ``final_layer_scale``.

    The default scale is 0 for skip networks (exact identity at init) and 1
    otherwise.
    """
    if final_layer_scale is None:
        final_layer_scale = 0.0 if spec.global_skip else 1.0
    if final_layer_scale < 0:
        raise ValueError("final_layer_scale must be >= 0")
    rng = rng_stream(seed, 0)
    params = ParamStore(spec)
    last = spec.n_layers - 1
    for i, (out_dim, in_dim) in enumerate(spec.layer_shapes()):
        bound = 1.0 / np.sqrt(in_dim)
        scale = final_layer_scale if i == last else 1.0
        params.weight(i)[...] = rng.uniform(-bound, bound, size=(out_dim, in_dim)) * scale
        b = params.bias(i)
        if b is not None:
            b[...] = rng.uniform(-bound, bound, size=out_dim) * scale
    return params


def _prep(spec, x, c, name="x"):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None] if single else x
    if x2.ndim != 2 or x2.shape[1] != spec.input_dim:
        raise DimensionMismatch(f"{name} has shape {x.shape}, network expects dim {spec.input_dim}")
    if spec.context_dim:
        if c is None:
            raise DimensionMismatch("network is conditional but no context was given")
        c = np.asarray(c, dtype=np.float64)
        c2 = np.broadcast_to(c, (x2.shape[0], spec.context_dim)) if c.ndim == 1 else c
        if c2.shape != (x2.shape[0], spec.context_dim):
            raise DimensionMismatch(f"context has shape {c.shape}, expected (*, {spec.context_dim})")
        c = c2
    elif c is not None and np.size(c):
        raise DimensionMismatch("unconditional network received a context")
    else:
        c = None
    return x2, c, single


def _tangent(spec, w, batch, name="w"):
    w = np.asarray(w, dtype=np.float64)
    w2 = w[None] if w.ndim == 1 else w
    w2 = np.broadcast_to(w2, (batch, spec.input_dim)) if w2.shape[0] == 1 else w2
    if w2.shape != (batch, spec.input_dim):
        raise DimensionMismatch(f"{name} has shape {w.shape}, expected (*, {spec.input_dim})")
    return w2


def _run(params, x, c, w, keep, want_d2):
    spec = params.spec
    act = ACTIVATIONS[spec.activation]
    tape = DualTape(spec, x, w) if keep else None
    last = spec.n_layers - 1
    h, t = x, w
    for i, (W, b) in enumerate(params.layers):
        h_in = np.concatenate([h, c], axis=1) if spec.has_context(i) else h
        p = h_in @ W.T
        if b is not None:
            p += b
        tp = None if t is None else t @ W[:, : t.shape[1]].T
        if keep:
            tape.inputs.append(h_in)
            tape.tangents.append(t)
            tape.pre_tangents.append(tp)
        if i < last:
            h, d1, d2 = kernels.activation_derivs(p, act)
            if keep:
                tape.d1.append(d1)
                tape.d2.append(d2 if want_d2 else None)
            if t is not None:
                t = d1 * tp
        else:
            h, t = p, tp
    if spec.global_skip:
        h = x + h
        if t is not None:
            t = w + t
    return h, t, tape


def forward(params, x, c=None):
    """Evaluate the network; with a global skip the output is ``x + residual(x, c)``."""
    x2, c2, single = _prep(params.spec, x, c)
    y, _, _ = _run(params, x2, c2, None, keep=False, want_d2=False)
    return y[0] if single else y


def jvp(params, x, w, c=None):
    """Dual forward pass. Returns ``(y, J(x) w, tape)``."""
    x2, c2, single = _prep(params.spec, x, c)
    w2 = _tangent(params.spec, w, x2.shape[0])
    y, t, tape = _run(params, x2, c2, w2, keep=True, want_d2=True)
    if single:
        return y[0], t[0], tape
    return y, t, tape


def _backward(params, tape, u_y, u_t, grads):
    spec = params.spec
    last = spec.n_layers - 1
    g, gt = u_y, u_t
    for i in range(last, -1, -1):
        W, b = params.weight(i), params.bias(i)
        if i < last:
            d1 = tape.d1[i]
            gp = d1 * g
            if gt is not None:
                gp = gp + tape.d2[i] * tape.pre_tangents[i] * gt
                gtp = d1 * gt
            else:
                gtp = None
        else:
            gp, gtp = g, gt
        width = spec.state_widths()[i]
        if grads is not None:
            gw = grads.weight(i)
            gw += gp.T @ tape.inputs[i]
            if gtp is not None:
                gw[:, :width] += gtp.T @ tape.tangents[i]
            gb = grads.bias(i)
            if gb is not None:
                gb += gp.sum(axis=0)
        g = gp @ W[:, :width]
        gt = None if gtp is None else gtp @ W[:, :width]
    if spec.global_skip:
        g = g + u_y
        if gt is not None:
            gt = gt + u_t
    return g, gt


def vjp(params, x, u, c=None, grads=None):
    """Reverse pass. Returns ``(y, u^T J(x))``; accumulates d(u . y)/dparams into ``grads``."""
    x2, c2, single = _prep(params.spec, x, c)
    u2 = _tangent(params.spec, u, x2.shape[0], "u")
    y, _, tape = _run(params, x2, c2, None, keep=True, want_d2=False)
    a, _ = _backward(params, tape, u2, None, grads)
    if single:
        return y[0], a[0]
    return y, a


def dual_backward(params, tape, u_y, u_t, grads=None):
    """Reverse pass through a dual forward pass recorded by :func:`jvp`.

    Treats ``(y, t) = (f(x), J(x) w)`` as one program and back-propagates the
    cotangents ``u_y`` (on y) and ``u_t`` (on t). Accumulates parameter
    gradients into ``grads`` and returns the cotangents of ``x`` and ``w``.
    """
    spec = params.spec
    if tape.spec != spec or len(tape.inputs) != spec.n_layers or tape.w is None:
        raise TapeMismatch("tape was not produced by jvp on this network")
    for i, (out_dim, in_dim) in enumerate(spec.layer_shapes()):
        if tape.inputs[i].shape[1] != in_dim:
            raise TapeMismatch(f"layer {i} input width differs from tape")
    batch = tape.x.shape[0]
    u_y = _tangent(spec, u_y, batch, "u_y")
    u_t = _tangent(spec, u_t, batch, "u_t")
    return _backward(params, tape, u_y, u_t, grads)


def full_jacobian(params, x, c=None):
    """Jacobian dy/dx from D basis-tangent JVPs; (D, D) or (B, D, D)."""
    spec = params.spec
    x2, c2, single = _prep(spec, x, c)
    batch, dim = x2.shape
    xr = np.repeat(x2, dim, axis=0)
    cr = None if c2 is None else np.repeat(c2, dim, axis=0)
    wr = np.tile(np.eye(dim), (batch, 1))
    _, t, _ = _run(params, xr, cr, wr, keep=False, want_d2=False)
    jac = t.reshape(batch, dim, dim).transpose(0, 2, 1)
    return jac[0] if single else jac


def linear_spec(dim, bias=True, skip=False):
    """Spec of a single affine layer ``y = W x + b``."""
    return NetworkSpec(input_dim=dim, hidden_widths=(), global_skip=skip, bias=bias)


def linear_params(weight, bias=None):
    """ParamStore for an affine map with the given weight (and optional bias)."""
    weight = np.atleast_2d(np.asarray(weight, dtype=np.float64))
    spec = linear_spec(weight.shape[0], bias=bias is not None)
    params = ParamStore(spec)
    params.weight(0)[...] = weight
    if bias is not None:
        params.bias(0)[...] = bias
    return params

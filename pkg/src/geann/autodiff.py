"""Static compute graphs over dense tensors with reverse-mode differentiation.

A ``ComputeGraph`` is an append-only, topologically ordered list of primitive
ops. Each node names its output; inputs refer to earlier nodes, to entries of
the ``inputs`` map handed to :func:`evaluate`, or to parameters in a
:class:`~geann.tensor.ParameterStore`. Graphs are acyclic by construction
because a node can only reference names that already exist.

Primitives: linear map, dilated causal 1-D convolution, rectifier, softmax,
concatenation, sum/mean reduction, sparse neighborhood aggregation, plus the
indexing and elementwise glue (gather, time expansion, broadcasting
add/sub/mul, constant scale, convex weighted sum) needed to express quantile
losses and ensemble combinations inside the same graph.
"""

from __future__ import annotations

import numpy as np

from . import _accel
from .tensor import ParameterStore, Tensor


class GraphError(ValueError):
    """Raised for malformed graphs, unknown names, or shape mismatches."""


class Node:
    __slots__ = ("name", "op", "inputs", "attrs")

    def __init__(self, name, op, inputs, attrs):
        self.name = name
        self.op = op
        self.inputs = inputs
        self.attrs = attrs

    def __repr__(self):
        return f"Node({self.name!r}, {self.op!r}, inputs={self.inputs})"


class ComputeGraph:
    """Ordered primitive ops; append with :meth:`add`, run with :func:`evaluate`."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._names: set[str] = set()

    def add(self, name: str, op: str, *inputs: str, **attrs) -> str:
        if op not in _FORWARD:
            raise GraphError(f"unknown op {op!r} for node {name!r}")
        if name in self._names:
            raise GraphError(f"duplicate node name {name!r}")
        self.nodes.append(Node(name, op, tuple(inputs), attrs))
        self._names.add(name)
        return name

    def __contains__(self, name: str) -> bool:
        return name in self._names

    def __len__(self) -> int:
        return len(self.nodes)


def _err(node, msg):
    raise GraphError(f"op {node.name!r} ({node.op}): {msg}")


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# forward implementations


def _fw_linear(node, args):
    if len(args) == 2:
        x, w = args
        b = None
    elif len(args) == 3:
        x, w, b = args
    else:
        _err(node, f"expects 2 or 3 inputs, got {len(args)}")
    if x.ndim < 1 or w.ndim != 2 or x.shape[-1] != w.shape[0]:
        _err(node, f"cannot multiply {x.shape} by {w.shape}")
    out = x @ w
    if b is not None:
        if b.shape != (w.shape[1],):
            _err(node, f"bias shape {b.shape} does not match width {w.shape[1]}")
        out = out + b
    return out


def _fw_conv1d(node, args):
    x, w, b = args
    dilation = node.attrs.get("dilation", 1)
    if dilation < 1:
        _err(node, f"dilation must be >= 1, got {dilation}")
    if x.ndim != 3 or w.ndim != 3:
        _err(node, f"expects (rows, time, chan) and (taps, chan, chan'), got {x.shape}, {w.shape}")
    n, t, cin = x.shape
    k, wcin, cout = w.shape
    if wcin != cin:
        _err(node, f"input channels {cin} do not match kernel channels {wcin}")
    if b.shape != (cout,):
        _err(node, f"bias shape {b.shape} does not match out channels {cout}")
    out = np.empty((n, t, cout), dtype=np.float64)
    out[:] = b
    for j in range(k):
        s = j * dilation
        if s >= t:
            break
        out[:, s:, :] += x[:, : t - s, :] @ w[j]
    return out


def _fw_relu(node, args):
    (x,) = args
    return np.maximum(x, 0.0)


def _fw_softmax(node, args):
    (x,) = args
    axis = node.attrs.get("axis", -1)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _fw_concat(node, args):
    axis = node.attrs.get("axis", -1)
    try:
        return np.concatenate(args, axis=axis)
    except ValueError as exc:
        _err(node, str(exc))


def _fw_sum(node, args):
    (x,) = args
    return np.sum(x, axis=node.attrs.get("axis"))


def _fw_mean(node, args):
    (x,) = args
    return np.mean(x, axis=node.attrs.get("axis"))


def _fw_add(node, args):
    a, b = args
    return a + b


def _fw_sub(node, args):
    a, b = args
    return a - b


def _fw_mul(node, args):
    a, b = args
    return a * b


def _fw_scale(node, args):
    (x,) = args
    return node.attrs["factor"] * x


def _fw_graph_agg(node, args):
    (x,) = args
    self_coeff = node.attrs["self_coeff"]
    if x.shape[0] != self_coeff.shape[0]:
        _err(node, f"row count {x.shape[0]} does not match node count {self_coeff.shape[0]}")
    x2 = np.ascontiguousarray(x.reshape(x.shape[0], -1))
    out = _accel.edge_combine(
        node.attrs["src"], node.attrs["dst"], node.attrs["coeff"], self_coeff, x2
    )
    return out.reshape(x.shape)


def _fw_gather(node, args):
    (x,) = args
    axis = node.attrs.get("axis", 0)
    idx = node.attrs["indices"]
    if axis >= x.ndim or (idx.size and (idx.min() < 0 or idx.max() >= x.shape[axis])):
        _err(node, f"indices out of range for axis {axis} of shape {x.shape}")
    return np.take(x, idx, axis=axis)


def _fw_expand_time(node, args):
    (x,) = args
    if x.ndim != 2:
        _err(node, f"expects a 2-D input, got shape {x.shape}")
    length = node.attrs["length"]
    return np.repeat(x[:, None, :], length, axis=1)


def _fw_weighted_sum(node, args):
    w = args[0]
    xs = args[1:]
    if w.ndim != 1 or len(xs) != w.shape[0]:
        _err(node, f"weight vector of length {w.shape} must match {len(xs)} operands")
    out = w[0] * xs[0]
    for r in range(1, len(xs)):
        if xs[r].shape != xs[0].shape:
            _err(node, "operands must share a shape")
        out = out + w[r] * xs[r]
    return out


# ---------------------------------------------------------------------------
# vector-Jacobian products; return one gradient per input (None to skip)


def _bw_linear(node, args, out, g):
    x, w = args[0], args[1]
    gx = g @ w.T
    x2 = x.reshape(-1, x.shape[-1])
    g2 = g.reshape(-1, g.shape[-1])
    gw = x2.T @ g2
    if len(args) == 3:
        return [gx, gw, g2.sum(axis=0)]
    return [gx, gw]


def _bw_conv1d(node, args, out, g):
    x, w, _b = args
    dilation = node.attrs.get("dilation", 1)
    n, t, cin = x.shape
    k, _, cout = w.shape
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    for j in range(k):
        s = j * dilation
        if s >= t:
            break
        gx[:, : t - s, :] += g[:, s:, :] @ w[j].T
        gw[j] = x[:, : t - s, :].reshape(-1, cin).T @ g[:, s:, :].reshape(-1, cout)
    return [gx, gw, g.sum(axis=(0, 1))]


def _bw_relu(node, args, out, g):
    (x,) = args
    return [g * (x > 0.0)]


def _bw_softmax(node, args, out, g):
    axis = node.attrs.get("axis", -1)
    inner = (g * out).sum(axis=axis, keepdims=True)
    return [out * (g - inner)]


def _bw_concat(node, args, out, g):
    axis = node.attrs.get("axis", -1)
    sizes = np.cumsum([a.shape[axis] for a in args[:-1]])
    return list(np.split(g, sizes, axis=axis))


def _bw_sum(node, args, out, g):
    (x,) = args
    axis = node.attrs.get("axis")
    if axis is None:
        return [np.full(x.shape, float(g))]
    return [np.broadcast_to(np.expand_dims(g, axis), x.shape).copy()]


def _bw_mean(node, args, out, g):
    (x,) = args
    axis = node.attrs.get("axis")
    if axis is None:
        return [np.full(x.shape, float(g) / x.size)]
    scale = x.shape[axis]
    return [np.broadcast_to(np.expand_dims(g, axis), x.shape).copy() / scale]


def _bw_add(node, args, out, g):
    a, b = args
    return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]


def _bw_sub(node, args, out, g):
    a, b = args
    return [_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)]


def _bw_mul(node, args, out, g):
    a, b = args
    return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]


def _bw_scale(node, args, out, g):
    return [node.attrs["factor"] * g]


def _bw_graph_agg(node, args, out, g):
    (x,) = args
    g2 = np.ascontiguousarray(g.reshape(g.shape[0], -1))
    # transpose aggregation: swap src and dst roles
    gx = _accel.edge_combine(
        node.attrs["dst"], node.attrs["src"], node.attrs["coeff"], node.attrs["self_coeff"], g2
    )
    return [gx.reshape(x.shape)]


def _bw_gather(node, args, out, g):
    (x,) = args
    axis = node.attrs.get("axis", 0)
    idx = node.attrs["indices"]
    if axis == 0:
        g2 = g.reshape(g.shape[0], -1)
        gx = _accel.scatter_rows(idx, g2, x.shape[0])
        return [gx.reshape(x.shape)]
    gx = np.zeros_like(x)
    for pos, i in enumerate(idx):
        gx[:, i, ...] += g[:, pos, ...]
    return [gx]


def _bw_expand_time(node, args, out, g):
    return [g.sum(axis=1)]


def _bw_weighted_sum(node, args, out, g):
    w = args[0]
    xs = args[1:]
    gw = np.array([(g * x).sum() for x in xs])
    return [gw] + [w[r] * g for r in range(len(xs))]


_FORWARD = {
    "linear": _fw_linear,
    "conv1d": _fw_conv1d,
    "relu": _fw_relu,
    "softmax": _fw_softmax,
    "concat": _fw_concat,
    "sum": _fw_sum,
    "mean": _fw_mean,
    "add": _fw_add,
    "sub": _fw_sub,
    "mul": _fw_mul,
    "scale": _fw_scale,
    "graph_agg": _fw_graph_agg,
    "gather": _fw_gather,
    "expand_time": _fw_expand_time,
    "weighted_sum": _fw_weighted_sum,
}

_BACKWARD = {
    "linear": _bw_linear,
    "conv1d": _bw_conv1d,
    "relu": _bw_relu,
    "softmax": _bw_softmax,
    "concat": _bw_concat,
    "sum": _bw_sum,
    "mean": _bw_mean,
    "add": _bw_add,
    "sub": _bw_sub,
    "mul": _bw_mul,
    "scale": _bw_scale,
    "graph_agg": _bw_graph_agg,
    "gather": _bw_gather,
    "expand_time": _bw_expand_time,
    "weighted_sum": _bw_weighted_sum,
}


def _as_array(value):
    if isinstance(value, Tensor):
        return value.values
    return np.asarray(value, dtype=np.float64)


def evaluate(graph: ComputeGraph, inputs, params: ParameterStore | None = None):
    """Run the graph; returns every node's output as a name -> Tensor map.

    Pure with respect to ``inputs`` and ``params``: nothing is mutated, and
    identical arguments produce bit-identical outputs.
    """
    inputs = inputs or {}
    values: dict[str, np.ndarray] = {}

    def resolve(name, node):
        if name in values:
            return values[name]
        if name in inputs:
            return _as_array(inputs[name])
        if params is not None and name in params:
            return params[name].values
        _err(node, f"unknown input {name!r}")

    for node in graph.nodes:
        if node.name in inputs or (params is not None and node.name in params):
            _err(node, "node name collides with an input or parameter name")
        args = [resolve(n, node) for n in node.inputs]
        values[node.name] = _FORWARD[node.op](node, args)
    return {name: Tensor(v) for name, v in values.items()}


def backward(graph: ComputeGraph, loss_node: str, params: ParameterStore, values, inputs=None):
    """Fill parameter grad slots with d(loss)/d(param).

    ``values`` is the map returned by :func:`evaluate` for the same graph and
    arguments. Grad slots are zeroed first, so each call reflects exactly one
    backward pass.
    """
    inputs = inputs or {}
    if loss_node not in values:
        raise GraphError(f"loss node {loss_node!r} was not evaluated")
    loss_shape = values[loss_node].values.shape
    if loss_shape != ():
        raise GraphError(f"loss node {loss_node!r} must be scalar, has shape {loss_shape}")

    params.zero_grads()
    grads: dict[str, np.ndarray] = {loss_node: np.ones(())}

    def resolve(name, node):
        if name in values:
            return values[name].values
        if name in inputs:
            return _as_array(inputs[name])
        if name in params:
            return params[name].values
        _err(node, f"unknown input {name!r}")

    for node in reversed(graph.nodes):
        g = grads.pop(node.name, None)
        if g is None:
            continue
        args = [resolve(n, node) for n in node.inputs]
        input_grads = _BACKWARD[node.op](node, args, values[node.name].values, g)
        for name, gin in zip(node.inputs, input_grads):
            if gin is None:
                continue
            if name in values:
                grads[name] = grads[name] + gin if name in grads else gin
            elif name not in inputs and name in params:
                params[name].grad += gin.reshape(params[name].shape)
            # plain graph inputs are constants; their gradients are dropped


def finite_diff_oracle(f, params: ParameterStore, epsilon: float = 1e-4):
    """Central-difference gradient of ``f(params)`` per parameter scalar.

    ``f`` must be a deterministic scalar function of the store passed to it.
    Perturbations run on a private copy, so the caller's store is untouched
    and concurrent oracle calls are safe.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    params = params.copy()
    out: dict[str, np.ndarray] = {}
    for name, tensor in params.items():
        flat = tensor.values.reshape(-1)
        grad = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = float(f(params))
            flat[i] = orig - epsilon
            fm = float(f(params))
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise ValueError(
                    f"non-finite evaluation while differencing parameter {name!r}"
                )
            grad[i] = (fp - fm) / (2.0 * epsilon)
        out[name] = grad.reshape(tensor.shape)
    return out


def gradcheck(graph, inputs, params, loss_node="loss", epsilon=1e-4, skip_below=1e-8):
    """Max relative disagreement between backward() and the difference oracle.

    Scalars where both gradients are below ``skip_below`` in magnitude are
    ignored; they carry no signal at 64-bit precision.
    """
    values = evaluate(graph, inputs, params)
    backward(graph, loss_node, params, values, inputs)
    analytic = {name: t.grad.copy() for name, t in params.items()}

    def run(p):
        return float(evaluate(graph, inputs, p)[loss_node].values)

    numeric = finite_diff_oracle(run, params, epsilon)
    worst = 0.0
    for name in params.names():
        a = analytic[name].reshape(-1)
        b = numeric[name].reshape(-1)
        denom = np.maximum(np.abs(a), np.abs(b))
        mask = denom >= skip_below
        if mask.any():
            rel = np.abs(a[mask] - b[mask]) / denom[mask]
            worst = max(worst, float(rel.max()))
    return worst

"""Reverse-mode automatic differentiation over dense numpy arrays.

A deliberately small engine: the primitive set below is exactly what the
memory-matching segmenter and its losses need. Every primitive carries a
hand-written backward rule, and a central-difference harness checks each
rule coordinate by coordinate. Training runs in float32; gradient checks
run in float64 for numeric headroom.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32

# Inputs below this value are clamped before taking the log.
LOG_FLOOR = 1e-12

# When True, every forward op asserts its output is finite. Enabled by the
# test suite; off by default for speed.
check_finite = False


class GradientCheckError(RuntimeError):
    """Raised when an analytic gradient is non-finite during a check."""


def _as_array(data, dtype):
    if dtype is not None:
        return np.asarray(data, dtype=dtype)
    if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
        return data
    return np.asarray(data, dtype=DEFAULT_DTYPE)


class Tensor:
    """Dense array with optional gradient storage.

    ``data`` is always a contiguous float32 or float64 numpy array. ``grad``
    is allocated lazily by backward passes and always matches ``data`` in
    shape and dtype.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        # note: ascontiguousarray would promote 0-d scalars to 1-d
        self.data = np.asarray(_as_array(data, dtype), order="C")
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def detached(self):
        """View of the same data that never records onto a graph."""
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.requires_grad = False
        t.grad = None
        return t

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("op", "inputs", "output", "ctx")

    def __init__(self, op, inputs, output, ctx):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.ctx = ctx


class Graph:
    """Tape of operations recorded in execution (topological) order.

    Ops record a node only while a graph is active *and* at least one input
    requires a gradient, so inference code runs tape-free simply by not
    entering a graph context.
    """

    _active = None

    def __init__(self):
        self.nodes = []
        self._prev = None

    def __enter__(self):
        self._prev = Graph._active
        Graph._active = self
        return self

    def __exit__(self, exc_type, exc, tb):
        Graph._active = self._prev
        self._prev = None
        return False

    @classmethod
    def active(cls):
        return cls._active

    def backward(self, loss):
        """Accumulate d(loss)/d(tensor) into every requires_grad tensor.

        Nodes are visited exactly once, in reverse recording order; a tensor
        used in several places receives the sum of its branch gradients.
        """
        if not self.nodes:
            raise ValueError("backward on empty graph")
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            shape = getattr(loss, "shape", None)
            raise ValueError(f"backward requires a scalar loss, got shape {shape}")
        if not any(node.output is loss for node in self.nodes):
            raise ValueError("loss tensor was not produced by this graph")

        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            gout = grads.pop(id(node.output), None)
            if gout is None:
                continue
            input_grads = _BACKWARD[node.op](node, gout)
            for inp, g in zip(node.inputs, input_grads):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    # Re-allocate instead of += so view gradients (concat
                    # slices) are never mutated through their base buffer.
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
        # Whatever remains belongs to leaves: tensors no node of this graph
        # produced. They keep their gradient on the tensor itself.
        produced = {id(n.output) for n in self.nodes}
        for node in self.nodes:
            for inp in node.inputs:
                if inp.requires_grad and id(inp) not in produced and id(inp) in grads:
                    inp._accumulate(grads.pop(id(inp)))


def forward(op, inputs, attrs=None):
    """Apply a primitive op to input tensors, recording onto the active graph.

    Raises ValueError with the op name and offending shapes on any shape or
    dtype mismatch, and on unknown op kinds.
    """
    if op not in _FORWARD:
        raise ValueError(f"unknown op kind {op!r}")
    for t in inputs:
        if not isinstance(t, Tensor):
            raise ValueError(f"{op}: inputs must be Tensors, got {type(t).__name__}")
    if len(inputs) > 1:
        dtypes = {t.dtype for t in inputs}
        if len(dtypes) > 1:
            raise ValueError(f"{op}: mixed input dtypes {sorted(d.name for d in dtypes)}")
    out_data, ctx = _FORWARD[op](inputs, attrs or {})
    if check_finite and not np.all(np.isfinite(out_data)):
        raise FloatingPointError(f"{op}: non-finite values in forward output")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.grad = None
    graph = Graph.active()
    if graph is not None and out.requires_grad:
        graph.nodes.append(_Node(op, tuple(inputs), out, ctx))
    return out


# ---------------------------------------------------------------------------
# Primitive forward/backward rules
# ---------------------------------------------------------------------------

def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _fw_add(inputs, attrs):
    a, b = inputs
    _same_shape("add", a, b)
    return a.data + b.data, None


def _bw_add(node, g):
    return g, g


def _fw_sub(inputs, attrs):
    a, b = inputs
    _same_shape("sub", a, b)
    return a.data - b.data, None


def _bw_sub(node, g):
    return g, -g


def _fw_mul(inputs, attrs):
    a, b = inputs
    _same_shape("mul", a, b)
    return a.data * b.data, None


def _bw_mul(node, g):
    a, b = node.inputs
    return g * b.data, g * a.data


def _fw_scalar_mul(inputs, attrs):
    (a,) = inputs
    c = a.dtype.type(attrs["value"])
    return a.data * c, c


def _bw_scalar_mul(node, g):
    return (g * node.ctx,)


def _fw_matmul(inputs, attrs):
    a, b = inputs
    if a.data.ndim < 2 or b.data.ndim < 1:
        raise ValueError(f"matmul: need ranks >=2 and >=1, got {a.shape} and {b.shape}")
    k = int(np.prod(a.shape[1:]))
    if k != b.shape[0]:
        raise ValueError(f"matmul: contraction mismatch {a.shape} vs {b.shape}")
    aflat = a.data.reshape(a.shape[0], k)
    bflat = b.data.reshape(b.shape[0], -1)
    out = aflat @ bflat
    return out.reshape((a.shape[0],) + b.shape[1:]), (aflat, bflat)


def _bw_matmul(node, g):
    a, b = node.inputs
    aflat, bflat = node.ctx
    gflat = g.reshape(a.shape[0], -1)
    ga = (gflat @ bflat.T).reshape(a.shape)
    gb = (aflat.T @ gflat).reshape(b.shape)
    return ga, gb


def _fw_conv2d(inputs, attrs):
    x, w, b = inputs
    if x.data.ndim != 3:
        raise ValueError(f"conv2d_3x3_pad1: input must be [C,H,W], got {x.shape}")
    if w.data.ndim != 4 or w.shape[2:] != (3, 3) or w.shape[1] != x.shape[0]:
        raise ValueError(f"conv2d_3x3_pad1: weight {w.shape} incompatible with input {x.shape}")
    if b.data.ndim != 1 or b.shape[0] != w.shape[0]:
        raise ValueError(f"conv2d_3x3_pad1: bias {b.shape} incompatible with weight {w.shape}")
    cin, h, wd = x.shape
    cout = w.shape[0]
    padded = np.pad(x.data, ((0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(1, 2))
    cols = np.ascontiguousarray(windows.transpose(0, 3, 4, 1, 2)).reshape(cin * 9, h * wd)
    wflat = w.data.reshape(cout, cin * 9)
    out = wflat @ cols + b.data[:, None]
    return out.reshape(cout, h, wd), (cols, wflat)


def _bw_conv2d(node, g):
    x, w, b = node.inputs
    cols, wflat = node.ctx
    cin, h, wd = x.shape
    cout = w.shape[0]
    gflat = g.reshape(cout, h * wd)
    gw = (gflat @ cols.T).reshape(w.shape)
    gb = gflat.sum(axis=1)
    gcols = (wflat.T @ gflat).reshape(cin, 3, 3, h, wd)
    gpad = np.zeros((cin, h + 2, wd + 2), dtype=g.dtype)
    for ky in range(3):
        for kx in range(3):
            gpad[:, ky:ky + h, kx:kx + wd] += gcols[:, ky, kx]
    return gpad[:, 1:-1, 1:-1], gw, gb


def _fw_relu(inputs, attrs):
    (x,) = inputs
    return np.maximum(x.data, 0), None


def _bw_relu(node, g):
    (x,) = node.inputs
    return (g * (x.data > 0),)


def _fw_sigmoid(inputs, attrs):
    (x,) = inputs
    s = 1.0 / (1.0 + np.exp(-x.data))
    return s.astype(x.dtype, copy=False), s


def _bw_sigmoid(node, g):
    s = node.ctx
    return (g * s * (1 - s),)


def _fw_channel_softmax(inputs, attrs):
    (x,) = inputs
    if x.data.ndim < 1:
        raise ValueError(f"channel_softmax: need rank >= 1, got {x.shape}")
    # Max-subtraction keeps exp in range on saturated logits.
    shifted = x.data - x.data.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=0, keepdims=True)
    return y, y


def _bw_channel_softmax(node, g):
    y = node.ctx
    return (y * (g - (g * y).sum(axis=0, keepdims=True)),)


def _fw_log(inputs, attrs):
    (x,) = inputs
    floor = x.dtype.type(LOG_FLOOR)
    clamped = np.maximum(x.data, floor)
    return np.log(clamped), clamped


def _bw_log(node, g):
    (x,) = node.inputs
    clamped = node.ctx
    return (g / clamped * (x.data > LOG_FLOOR),)


def _fw_sum(inputs, attrs):
    (x,) = inputs
    return np.asarray(x.data.sum(), dtype=x.dtype), None


def _bw_sum(node, g):
    (x,) = node.inputs
    return (np.broadcast_to(g, x.shape).copy(),)


def _fw_mean(inputs, attrs):
    (x,) = inputs
    return np.asarray(x.data.mean(), dtype=x.dtype), None


def _bw_mean(node, g):
    (x,) = node.inputs
    scale = g.dtype.type(1.0 / x.data.size)
    return (np.full(x.shape, (g * scale).item(), dtype=g.dtype),)


def _fw_gather_labels(inputs, attrs):
    (p,) = inputs
    labels = np.asarray(attrs["labels"])
    if labels.shape != p.shape[1:]:
        raise ValueError(f"gather_labels: labels shape {labels.shape} must match {p.shape[1:]}")
    if labels.size and (labels.min() < 0 or labels.max() >= p.shape[0]):
        raise ValueError(f"gather_labels: label ids out of range for {p.shape[0]} classes")
    flat_labels = labels.reshape(-1)
    pf = p.data.reshape(p.shape[0], -1)
    picked = pf[flat_labels, np.arange(flat_labels.size)]
    return picked.reshape(labels.shape), flat_labels


def _bw_gather_labels(node, g):
    (p,) = node.inputs
    flat_labels = node.ctx
    gp = np.zeros((p.shape[0], flat_labels.size), dtype=g.dtype)
    # Each (label, pixel) position is unique, so direct assignment suffices.
    gp[flat_labels, np.arange(flat_labels.size)] = g.reshape(-1)
    return (gp.reshape(p.shape),)


def _fw_neg_sq_l2_affinity(inputs, attrs):
    q, m = inputs
    if q.data.ndim < 2 or m.data.ndim < 2 or q.shape[0] != m.shape[0]:
        raise ValueError(f"neg_sq_l2_affinity: channel mismatch {q.shape} vs {m.shape}")
    c = q.shape[0]
    qf = q.data.reshape(c, -1)
    mf = m.data.reshape(c, -1)
    scale = q.dtype.type(-1.0 / np.sqrt(c))
    q2 = (qf * qf).sum(axis=0)
    m2 = (mf * mf).sum(axis=0)
    d2 = q2[None, :] + m2[:, None] - 2.0 * (mf.T @ qf)
    out = (d2 * scale).reshape((mf.shape[1],) + q.shape[1:])
    return out, (qf, mf, scale)


def _bw_neg_sq_l2_affinity(node, g):
    q, m = node.inputs
    qf, mf, scale = node.ctx
    g2 = g.reshape(mf.shape[1], qf.shape[1]) * scale
    colsum = g2.sum(axis=0)
    rowsum = g2.sum(axis=1)
    gq = 2.0 * (qf * colsum[None, :] - mf @ g2)
    gm = 2.0 * (mf * rowsum[None, :] - qf @ g2.T)
    return gq.reshape(q.shape), gm.reshape(m.shape)


def _fw_concat_channels(inputs, attrs):
    a, b = inputs
    axis = int(attrs.get("axis", 0))
    if a.data.ndim != b.data.ndim:
        raise ValueError(f"concat_channels: rank mismatch {a.shape} vs {b.shape}")
    for d in range(a.data.ndim):
        if d != axis and a.shape[d] != b.shape[d]:
            raise ValueError(f"concat_channels: shape mismatch {a.shape} vs {b.shape} on axis {d}")
    return np.concatenate([a.data, b.data], axis=axis), axis


def _bw_concat_channels(node, g):
    a, b = node.inputs
    axis = node.ctx
    split = a.shape[axis]
    idx_a = [slice(None)] * g.ndim
    idx_b = [slice(None)] * g.ndim
    idx_a[axis] = slice(0, split)
    idx_b[axis] = slice(split, None)
    return g[tuple(idx_a)], g[tuple(idx_b)]


def _fw_avgpool2(inputs, attrs):
    (x,) = inputs
    if x.data.ndim != 3 or x.shape[1] % 2 or x.shape[2] % 2:
        raise ValueError(f"avgpool2: need [C,2h,2w], got {x.shape}")
    c, h, w = x.shape
    return x.data.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4)), None


def _bw_avgpool2(node, g):
    (x,) = node.inputs
    quarter = g * g.dtype.type(0.25)
    return (quarter.repeat(2, axis=1).repeat(2, axis=2),)


def _fw_upsample2(inputs, attrs):
    (x,) = inputs
    if x.data.ndim != 3:
        raise ValueError(f"upsample2_nearest: need [C,H,W], got {x.shape}")
    return x.data.repeat(2, axis=1).repeat(2, axis=2), None


def _bw_upsample2(node, g):
    (x,) = node.inputs
    c, h, w = x.shape
    return (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),)


_FORWARD = {
    "add": _fw_add,
    "sub": _fw_sub,
    "mul": _fw_mul,
    "scalar_mul": _fw_scalar_mul,
    "matmul": _fw_matmul,
    "conv2d_3x3_pad1": _fw_conv2d,
    "relu": _fw_relu,
    "sigmoid": _fw_sigmoid,
    "channel_softmax": _fw_channel_softmax,
    "log": _fw_log,
    "sum": _fw_sum,
    "mean": _fw_mean,
    "gather_labels": _fw_gather_labels,
    "neg_sq_l2_affinity": _fw_neg_sq_l2_affinity,
    "concat_channels": _fw_concat_channels,
    "avgpool2": _fw_avgpool2,
    "upsample2_nearest": _fw_upsample2,
}

_BACKWARD = {
    "add": _bw_add,
    "sub": _bw_sub,
    "mul": _bw_mul,
    "scalar_mul": _bw_scalar_mul,
    "matmul": _bw_matmul,
    "conv2d_3x3_pad1": _bw_conv2d,
    "relu": _bw_relu,
    "sigmoid": _bw_sigmoid,
    "channel_softmax": _bw_channel_softmax,
    "log": _bw_log,
    "sum": _bw_sum,
    "mean": _bw_mean,
    "gather_labels": _bw_gather_labels,
    "neg_sq_l2_affinity": _bw_neg_sq_l2_affinity,
    "concat_channels": _bw_concat_channels,
    "avgpool2": _bw_avgpool2,
    "upsample2_nearest": _bw_upsample2,
}

PRIMITIVE_OPS = tuple(_FORWARD)


# Thin call-site wrappers.

def add(a, b):
    return forward("add", [a, b])


def sub(a, b):
    return forward("sub", [a, b])


def mul(a, b):
    return forward("mul", [a, b])


def scalar_mul(a, value):
    return forward("scalar_mul", [a], {"value": value})


def matmul(a, b):
    return forward("matmul", [a, b])


def conv2d(x, w, b):
    return forward("conv2d_3x3_pad1", [x, w, b])


def relu(x):
    return forward("relu", [x])


def sigmoid(x):
    return forward("sigmoid", [x])


def channel_softmax(x):
    return forward("channel_softmax", [x])


def log(x):
    return forward("log", [x])


def tsum(x):
    return forward("sum", [x])


def tmean(x):
    return forward("mean", [x])


def gather_labels(p, labels):
    return forward("gather_labels", [p], {"labels": labels})


def neg_sq_l2_affinity(q, m):
    return forward("neg_sq_l2_affinity", [q, m])


def concat_channels(a, b, axis=0):
    return forward("concat_channels", [a, b], {"axis": axis})


def avgpool2(x):
    return forward("avgpool2", [x])


def upsample2_nearest(x):
    return forward("upsample2_nearest", [x])


class ParameterSet:
    """Named map of parameter tensors with deterministic iteration order.

    Iteration is always lexicographic by name, so optimizer updates, EMA
    blends and checkpoint serialization are reproducible.
    """

    def __init__(self):
        self._params = {}

    def add(self, name, tensor):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._params[name] = tensor

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return sorted(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def copy(self, requires_grad=True):
        out = ParameterSet()
        for name, t in self.items():
            out.add(name, Tensor(t.data.copy(), requires_grad=requires_grad, dtype=t.dtype))
        return out

    def detached(self):
        """Same underlying arrays, but none of the tensors record gradients."""
        out = ParameterSet()
        for name, t in self.items():
            out.add(name, t.detached())
        return out

    def zero_grad(self):
        for _, t in self.items():
            t.grad = None

    def total_size(self):
        return sum(t.size for _, t in self.items())


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def gradient_check(fn, inputs, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps the given tensors to a scalar Tensor. It runs once under a
    fresh graph for the analytic pass, then twice per input coordinate with
    no graph for the numeric pass. Inputs must be float64 with
    requires_grad set; they are restored to their original values.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise ValueError("gradient_check requires float64 inputs")
        if not t.requires_grad:
            raise ValueError("gradient_check inputs must require grad")
        t.grad = None

    with Graph() as graph:
        loss = fn(*inputs)
    graph.backward(loss)

    analytic = []
    for t in inputs:
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        bad = np.argwhere(~np.isfinite(g))
        if bad.size:
            raise GradientCheckError(f"non-finite analytic gradient at coordinate {tuple(bad[0])}")
        analytic.append(g.copy())

    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(fn(*inputs).data)
            flat[i] = orig - step
            fm = float(fn(*inputs).data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * step)
            rel = abs(gflat[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, rel)
    return worst


def _check_inputs(rng, shapes, transform=None):
    tensors = []
    for shape in shapes:
        data = rng.uniform(-1.0, 1.0, size=shape)
        if transform is not None:
            data = transform(data)
        tensors.append(Tensor(data, requires_grad=True, dtype=np.float64))
    return tensors


def _away_from_zero(x):
    return x + 0.05 * np.sign(x)


def _positive(x):
    return 0.1 + 0.5 * (x + 1.0)


def _weighted_sum(rng, out_shape):
    w = Tensor(rng.uniform(-1.0, 1.0, size=out_shape), dtype=np.float64)

    def reduce(t):
        if t.data.shape == ():
            return scalar_mul(t, float(w.data.reshape(())))
        return tsum(mul(t, w))

    return reduce


def primitive_gradient_check(op, seed, step=1e-5):
    """Run the standard central-difference check for one primitive.

    Input ranges avoid each op's non-smooth points (relu's kink, the log
    clamp) so central differences are valid; the scalarizing weights are
    drawn from the same seed for reproducibility.
    """
    rng = np.random.default_rng(seed)
    if op in ("add", "sub", "mul"):
        xs = _check_inputs(rng, [(3, 4), (3, 4)])
        reduce = _weighted_sum(rng, (3, 4))
        fn = lambda a, b: reduce(forward(op, [a, b]))
    elif op == "scalar_mul":
        xs = _check_inputs(rng, [(3, 4)])
        reduce = _weighted_sum(rng, (3, 4))
        c = float(rng.uniform(-2.0, 2.0))
        fn = lambda a: reduce(scalar_mul(a, c))
    elif op == "matmul":
        xs = _check_inputs(rng, [(3, 2, 4), (8, 2, 2)])
        reduce = _weighted_sum(rng, (3, 2, 2))
        fn = lambda a, b: reduce(matmul(a, b))
    elif op == "conv2d_3x3_pad1":
        xs = _check_inputs(rng, [(2, 6, 6), (3, 2, 3, 3), (3,)])
        reduce = _weighted_sum(rng, (3, 6, 6))
        fn = lambda x, w, b: reduce(conv2d(x, w, b))
    elif op == "relu":
        xs = _check_inputs(rng, [(4, 5)], transform=_away_from_zero)
        reduce = _weighted_sum(rng, (4, 5))
        fn = lambda x: reduce(relu(x))
    elif op == "sigmoid":
        xs = _check_inputs(rng, [(4, 5)])
        reduce = _weighted_sum(rng, (4, 5))
        fn = lambda x: reduce(sigmoid(x))
    elif op == "channel_softmax":
        xs = _check_inputs(rng, [(3, 4, 4)])
        reduce = _weighted_sum(rng, (3, 4, 4))
        fn = lambda x: reduce(channel_softmax(x))
    elif op == "log":
        xs = _check_inputs(rng, [(3, 4)], transform=_positive)
        reduce = _weighted_sum(rng, (3, 4))
        fn = lambda x: reduce(log(x))
    elif op == "sum":
        xs = _check_inputs(rng, [(3, 4)])
        c = float(rng.uniform(0.5, 1.5))
        fn = lambda x: scalar_mul(tsum(x), c)
    elif op == "mean":
        xs = _check_inputs(rng, [(3, 4)])
        c = float(rng.uniform(0.5, 1.5))
        fn = lambda x: scalar_mul(tmean(x), c)
    elif op == "gather_labels":
        xs = _check_inputs(rng, [(3, 4, 4)])
        labels = rng.integers(0, 3, size=(4, 4))
        reduce = _weighted_sum(rng, (4, 4))
        fn = lambda p: reduce(gather_labels(p, labels))
    elif op == "neg_sq_l2_affinity":
        xs = _check_inputs(rng, [(3, 2, 2), (3, 5)])
        reduce = _weighted_sum(rng, (5, 2, 2))
        fn = lambda q, m: reduce(neg_sq_l2_affinity(q, m))
    elif op == "concat_channels":
        xs = _check_inputs(rng, [(2, 3, 3), (4, 3, 3)])
        reduce = _weighted_sum(rng, (6, 3, 3))
        fn = lambda a, b: reduce(concat_channels(a, b))
    elif op == "avgpool2":
        xs = _check_inputs(rng, [(2, 4, 4)])
        reduce = _weighted_sum(rng, (2, 2, 2))
        fn = lambda x: reduce(avgpool2(x))
    elif op == "upsample2_nearest":
        xs = _check_inputs(rng, [(2, 3, 3)])
        reduce = _weighted_sum(rng, (2, 6, 6))
        fn = lambda x: reduce(upsample2_nearest(x))
    else:
        raise ValueError(f"no gradient check defined for op {op!r}")
    return gradient_check(fn, xs, step=step)


def softmax_log_sum_check(seed, step=1e-5):
    """Check for the softmax -> log -> sum composite used by the losses."""
    rng = np.random.default_rng(seed)
    xs = _check_inputs(rng, [(3, 4, 4)])
    reduce = _weighted_sum(rng, (3, 4, 4))
    fn = lambda x: reduce(log(channel_softmax(x)))
    return gradient_check(fn, xs, step=step)

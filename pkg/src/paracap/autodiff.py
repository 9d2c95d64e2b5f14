"""Dense float64 tensors with reverse-mode automatic differentiation.

Every learnable quantity in the package lives in a `Tensor`. Ops executed
while a `ComputationTape` is active are appended to that tape; `backward`
replays the tape in reverse and accumulates gradients into `.grad`.
Shapes are restricted to scalars () and 2-D matrices; the only broadcasts
allowed are the ones the ops below document (bias rows, column gates,
scalar gates). Everything is float64, single-threaded and deterministic.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation

__all__ = [
    "Tensor",
    "ComputationTape",
    "tensor",
    "constant",
    "parameter",
    "backward",
    "forward_primitive",
    "finite_difference_check",
]

LAYER_NORM_EPS = 1e-5


class Tensor:
    """A float64 value block, optionally carrying a gradient."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def constant(data):
    return Tensor(data)


def parameter(data):
    return Tensor(data, requires_grad=True)


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------

_ACTIVE_TAPE = None


class ComputationTape:
    """Ordered record of executed primitives for one forward pass.

    Execution order is already topological, so backward is a single
    reverse sweep that visits each record exactly once.
    """

    def __init__(self):
        self.records = []  # (op_name, inputs, output, backward_fn)

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise ContractViolation("a ComputationTape is already active in this worker")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def backward(self, loss):
        if loss.data.size != 1:
            raise ContractViolation(
                f"backward expects a scalar loss, got shape {loss.data.shape}"
            )
        loss.grad = np.ones_like(loss.data)
        for name, inputs, out, back in reversed(self.records):
            g = out.grad
            if g is None:
                continue
            grads = back(g)
            for inp, gi in zip(inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.grad is None:
                    inp.grad = gi
                else:
                    inp.grad = inp.grad + gi


def backward(tape, loss):
    """Populate `.grad` on every tensor the loss depends on."""
    tape.backward(loss)


def _record(name, inputs, out, back):
    tape = _ACTIVE_TAPE
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append((name, inputs, out, back))
    return out


def _shape_err(op, *shapes):
    return ContractViolation(f"{op}: incompatible shapes {list(shapes)}")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise _shape_err("matmul", a.data.shape, b.data.shape)
    out = Tensor(a.data @ b.data)

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _record("matmul", (a, b), out, back)


def _binary_shapes(op, a, b):
    """Allowed: equal shapes, scalar b ( () or (1,1) ), bias row b (1,n),
    column b (m,1)."""
    sa, sb = a.data.shape, b.data.shape
    if sa == sb:
        return "same"
    if sb == ():
        return "scalar"
    if len(sa) == 2 and sb == (1, 1):
        return "one"
    if len(sa) == 2 and sb == (1, sa[1]):
        return "row"
    if len(sa) == 2 and sb == (sa[0], 1):
        return "col"
    raise _shape_err(op, sa, sb)


def _reduce_to(g, mode):
    if mode == "same":
        return g
    if mode == "scalar":
        return np.asarray(g.sum())
    if mode == "one":
        return g.sum(keepdims=True).reshape(1, 1)
    if mode == "row":
        return g.sum(axis=0, keepdims=True)
    return g.sum(axis=1, keepdims=True)  # col


def add(a, b):
    mode = _binary_shapes("add", a, b)
    out = Tensor(a.data + b.data)

    def back(g):
        return g, _reduce_to(g, mode)

    return _record("add", (a, b), out, back)


def sub(a, b):
    mode = _binary_shapes("subtract", a, b)
    out = Tensor(a.data - b.data)

    def back(g):
        return g, -_reduce_to(g, mode)

    return _record("subtract", (a, b), out, back)


def mul(a, b):
    mode = _binary_shapes("elementwise-multiply", a, b)
    out = Tensor(a.data * b.data)

    def back(g):
        return g * b.data, _reduce_to(g * a.data, mode)

    return _record("elementwise-multiply", (a, b), out, back)


def scalar_scale(a, c):
    c = float(c)
    out = Tensor(a.data * c)

    def back(g):
        return (g * c,)

    return _record("scalar-scale", (a,), out, back)


def affine_const(a, scale, shift):
    """scale * a + shift with python-float constants."""
    scale, shift = float(scale), float(shift)
    out = Tensor(a.data * scale + shift)

    def back(g):
        return (g * scale,)

    return _record("affine-const", (a,), out, back)


def affine(x, w, b):
    """x @ w + b with b a (1, n) bias row."""
    if x.data.ndim != 2 or x.data.shape[1] != w.data.shape[0] or b.data.shape != (1, w.data.shape[1]):
        raise _shape_err("affine", x.data.shape, w.data.shape, b.data.shape)
    out = Tensor(x.data @ w.data + b.data)

    def back(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0, keepdims=True)

    return _record("affine", (x, w, b), out, back)


def concat_last(tensors):
    tensors = tuple(tensors)
    if not tensors:
        raise ContractViolation("concat-last-axis: empty input list")
    rows = tensors[0].data.shape[0]
    if any(t.data.ndim != 2 or t.data.shape[0] != rows for t in tensors):
        raise _shape_err("concat-last-axis", *[t.data.shape for t in tensors])
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1))
    widths = [t.data.shape[1] for t in tensors]

    def back(g):
        grads, off = [], 0
        for w in widths:
            grads.append(g[:, off:off + w])
            off += w
        return tuple(grads)

    return _record("concat-last-axis", tensors, out, back)


def concat_rows(tensors):
    tensors = tuple(tensors)
    if not tensors:
        raise ContractViolation("concat-rows: empty input list")
    cols = tensors[0].data.shape[1]
    if any(t.data.ndim != 2 or t.data.shape[1] != cols for t in tensors):
        raise _shape_err("concat-rows", *[t.data.shape for t in tensors])
    out = Tensor(np.concatenate([t.data for t in tensors], axis=0))
    heights = [t.data.shape[0] for t in tensors]

    def back(g):
        grads, off = [], 0
        for h in heights:
            grads.append(g[off:off + h, :])
            off += h
        return tuple(grads)

    return _record("concat-rows", tensors, out, back)


def slice_(a, start, stop, axis=0):
    if a.data.ndim != 2 or axis not in (0, 1, -1):
        raise _shape_err("slice", a.data.shape)
    axis = 1 if axis in (1, -1) else 0
    n = a.data.shape[axis]
    if not (0 <= start < stop <= n):
        raise ContractViolation(f"slice: range [{start}, {stop}) invalid for extent {n}")
    out = Tensor(a.data[start:stop, :] if axis == 0 else a.data[:, start:stop])

    def back(g):
        full = np.zeros_like(a.data)
        if axis == 0:
            full[start:stop, :] = g
        else:
            full[:, start:stop] = g
        return (full,)

    return _record("slice", (a,), out, back)


def transpose(a):
    if a.data.ndim != 2:
        raise _shape_err("transpose", a.data.shape)
    out = Tensor(a.data.T.copy())

    def back(g):
        return (g.T,)

    return _record("transpose", (a,), out, back)


def tile_rows(a, m):
    """Repeat a (1, n) row m times."""
    if a.data.ndim != 2 or a.data.shape[0] != 1:
        raise _shape_err("tile-rows", a.data.shape)
    out = Tensor(np.repeat(a.data, m, axis=0))

    def back(g):
        return (g.sum(axis=0, keepdims=True),)

    return _record("tile-rows", (a,), out, back)


def sigmoid(a):
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(y)

    def back(g):
        return (g * y * (1.0 - y),)

    return _record("sigmoid", (a,), out, back)


def relu(a):
    out = Tensor(np.maximum(a.data, 0.0))

    def back(g):
        return (g * (a.data > 0.0),)

    return _record("relu", (a,), out, back)


def tanh(a):
    y = np.tanh(a.data)
    out = Tensor(y)

    def back(g):
        return (g * (1.0 - y * y),)

    return _record("tanh", (a,), out, back)


def log(a):
    if np.any(a.data <= 0.0):
        raise ContractViolation("log: non-positive input")
    out = Tensor(np.log(a.data))

    def back(g):
        return (g / a.data,)

    return _record("log", (a,), out, back)


def exp(a):
    y = np.exp(a.data)
    out = Tensor(y)

    def back(g):
        return (g * y,)

    return _record("exp", (a,), out, back)


def abs_(a):
    out = Tensor(np.abs(a.data))

    def back(g):
        return (g * np.sign(a.data),)

    return _record("abs", (a,), out, back)


def softmax_last(a):
    """Row-wise softmax with max subtraction for stability."""
    x = a.data
    if x.ndim != 2:
        raise _shape_err("softmax-last-axis", x.shape)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def back(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _record("softmax-last-axis", (a,), out, back)


def log_softmax_last(a):
    x = a.data
    if x.ndim != 2:
        raise _shape_err("log-softmax-last-axis", x.shape)
    z = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = Tensor(z - lse)
    soft = np.exp(z - lse)

    def back(g):
        return (g - soft * g.sum(axis=-1, keepdims=True),)

    return _record("log-softmax-last-axis", (a,), out, back)


def layer_norm(a, gain, bias, eps=LAYER_NORM_EPS):
    """Normalize each row to zero mean / unit variance, then scale and shift."""
    x = a.data
    d = x.shape[-1]
    if gain.data.shape != (1, d) or bias.data.shape != (1, d):
        raise _shape_err("layer-norm", x.shape, gain.data.shape, bias.data.shape)
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)

    def back(g):
        gg = g * gain.data
        dxhat_sum = gg.sum(axis=-1, keepdims=True)
        dxhat_dot = (gg * xhat).sum(axis=-1, keepdims=True)
        dx = inv * (gg - dxhat_sum / d - xhat * dxhat_dot / d)
        dgain = (g * xhat).sum(axis=0, keepdims=True)
        dbias = g.sum(axis=0, keepdims=True)
        return dx, dgain, dbias

    return _record("layer-norm", (a, gain, bias), out, back)


def embedding_gather(table, ids):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or table.data.ndim != 2:
        raise _shape_err("embedding-gather", table.data.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ContractViolation("embedding-gather: index out of range")
    out = Tensor(table.data[ids])

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _record("embedding-gather", (table,), out, back)


def gather_last(a, ids):
    """Pick one entry per row; returns a (rows, 1) column."""
    ids = np.asarray(ids, dtype=np.int64)
    m, n = a.data.shape
    if ids.shape != (m,) or (ids.size and (ids.min() < 0 or ids.max() >= n)):
        raise _shape_err("gather-last", a.data.shape, ids.shape)
    rows = np.arange(m)
    out = Tensor(a.data[rows, ids].reshape(m, 1))

    def back(g):
        full = np.zeros_like(a.data)
        full[rows, ids] = g[:, 0]
        return (full,)

    return _record("gather-last", (a,), out, back)


def weighted_sum(tensors, weights):
    """sum_i weights[i] * tensors[i] with python-float weights."""
    tensors = tuple(tensors)
    if not tensors or len(tensors) != len(weights):
        raise ContractViolation("weighted-sum: empty input or weight length mismatch")
    shape = tensors[0].data.shape
    if any(t.data.shape != shape for t in tensors):
        raise _shape_err("weighted-sum", *[t.data.shape for t in tensors])
    weights = [float(w) for w in weights]
    acc = weights[0] * tensors[0].data
    for w, t in zip(weights[1:], tensors[1:]):
        acc = acc + w * t.data
    out = Tensor(acc)

    def back(g):
        return tuple(g * w for w in weights)

    return _record("weighted-sum", tensors, out, back)


def mean(a):
    n = a.data.size
    out = Tensor(np.asarray(a.data.mean()))

    def back(g):
        return (np.full_like(a.data, float(g) / n),)

    return _record("mean", (a,), out, back)


def sum_(a):
    out = Tensor(np.asarray(a.data.sum()))

    def back(g):
        return (np.full_like(a.data, float(g)),)

    return _record("sum", (a,), out, back)


def l2_distance(a, b):
    """Euclidean distance between two same-shape blocks (scalar output)."""
    if a.data.shape != b.data.shape:
        raise _shape_err("l2-distance", a.data.shape, b.data.shape)
    diff = a.data - b.data
    dist = float(np.sqrt((diff * diff).sum()))
    out = Tensor(np.asarray(dist))

    def back(g):
        if dist == 0.0:  # subgradient convention at the kink
            z = np.zeros_like(diff)
            return z, z.copy()
        scale = float(g) / dist
        return diff * scale, -diff * scale

    return _record("l2-distance", (a, b), out, back)


def l2_normalize(a):
    """Normalize a (1, n) row to unit length; zero maps to the first basis vector."""
    if a.data.ndim != 2 or a.data.shape[0] != 1:
        raise _shape_err("l2-normalize", a.data.shape)
    norm = float(np.sqrt((a.data * a.data).sum()))
    if norm == 0.0:
        y = np.zeros_like(a.data)
        y[0, 0] = 1.0
        out = Tensor(y)

        def back(g):
            return (np.zeros_like(a.data),)

        return _record("l2-normalize", (a,), out, back)
    y = a.data / norm
    out = Tensor(y)

    def back(g):
        return ((g - y * (g * y).sum()) / norm,)

    return _record("l2-normalize", (a,), out, back)


def multi_head_attention(q, k, v, n_heads):
    """Projection-free scaled dot-product attention, split over heads.

    Returns (output, mean_attention, per_head_attention) where
    mean_attention is the head-average on the tape (it feeds the memory
    updates) and per_head_attention is a detached (H, Tq, Tk) array kept
    for inspection.
    """
    d = q.data.shape[1]
    if k.data.shape[0] != v.data.shape[0] or k.data.shape[1] != d or v.data.shape[1] != d:
        raise _shape_err("multi-head-attention", q.data.shape, k.data.shape, v.data.shape)
    if d % n_heads != 0:
        raise ContractViolation(
            f"multi-head-attention: width {d} not divisible by {n_heads} heads"
        )
    dh = d // n_heads
    tq, tk = q.data.shape[0], k.data.shape[0]
    scale = 1.0 / np.sqrt(dh)

    qh = q.data.reshape(tq, n_heads, dh).transpose(1, 0, 2)
    kh = k.data.reshape(tk, n_heads, dh).transpose(1, 0, 2)
    vh = v.data.reshape(tk, n_heads, dh).transpose(1, 0, 2)

    scores = np.einsum("hqd,hkd->hqk", qh, kh) * scale
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=-1, keepdims=True)  # (H, Tq, Tk)
    out_h = np.einsum("hqk,hkd->hqd", attn, vh)

    out = Tensor(out_h.transpose(1, 0, 2).reshape(tq, d))
    alpha = Tensor(attn.mean(axis=0))

    def _attn_to_qkv(d_attn):
        ds = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
        dq = np.einsum("hqk,hkd->hqd", ds, kh) * scale
        dk = np.einsum("hqk,hqd->hkd", ds, qh) * scale
        return (dq.transpose(1, 0, 2).reshape(tq, d),
                dk.transpose(1, 0, 2).reshape(tk, d))

    def back_out(g):
        gh = g.reshape(tq, n_heads, dh).transpose(1, 0, 2)
        dv = np.einsum("hqk,hqd->hkd", attn, gh)
        d_attn = np.einsum("hqd,hkd->hqk", gh, vh)
        dq, dk = _attn_to_qkv(d_attn)
        return dq, dk, dv.transpose(1, 0, 2).reshape(tk, d)

    _record("mha-out", (q, k, v), out, back_out)

    def back_alpha(g):
        d_attn = np.broadcast_to(g / n_heads, attn.shape)
        dq, dk = _attn_to_qkv(d_attn)
        return dq, dk, None

    _record("mha-alpha", (q, k, v), alpha, back_alpha)
    return out, alpha, attn.copy()


def cross_entropy_label_smoothing(logits, targets, smoothing):
    """Mean NLL against one-hot targets mixed with the uniform distribution."""
    targets = np.asarray(targets, dtype=np.int64)
    t, v = logits.data.shape
    if targets.shape != (t,):
        raise ContractViolation(
            f"cross-entropy: {t} logit rows vs {targets.shape} targets"
        )
    if not 0.0 <= smoothing < 1.0:
        raise ContractViolation(f"cross-entropy: smoothing {smoothing} outside [0, 1)")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    rows = np.arange(t)
    nll = -(1.0 - smoothing) * logp[rows, targets].sum() - (smoothing / v) * logp.sum()
    out = Tensor(np.asarray(nll / t))
    soft = np.exp(logp)

    def back(g):
        q = np.full((t, v), smoothing / v)
        q[rows, targets] += 1.0 - smoothing
        return ((soft - q) * (float(g) / t),)

    return _record("cross-entropy-with-label-smoothing", (logits,), out, back)


def gru_cell_step(x, h, weights):
    """One reset/update-gate GRU step (composite of primitives).

    `weights` maps {wz, uz, bz, wr, ur, br, wh, uh, bh} to tensors.
    """
    z = sigmoid(add(add(matmul(x, weights["wz"]), matmul(h, weights["uz"])), weights["bz"]))
    r = sigmoid(add(add(matmul(x, weights["wr"]), matmul(h, weights["ur"])), weights["br"]))
    cand = tanh(add(add(matmul(x, weights["wh"]), matmul(mul(r, h), weights["uh"])), weights["bh"]))
    return add(mul(affine_const(z, -1.0, 1.0), h), mul(z, cand))


# ---------------------------------------------------------------------------
# op-kind dispatch
# ---------------------------------------------------------------------------

_OP_TABLE = {
    "matmul": matmul,
    "add": add,
    "subtract": sub,
    "elementwise-multiply": mul,
    "concat-last-axis": lambda *ts: concat_last(ts),
    "slice": slice_,
    "sigmoid": sigmoid,
    "softmax-last-axis": softmax_last,
    "relu": relu,
    "layer-norm": layer_norm,
    "embedding-gather": embedding_gather,
    "gru-cell-step": gru_cell_step,
    "l2-distance": l2_distance,
    "log": log,
    "cross-entropy-with-label-smoothing": cross_entropy_label_smoothing,
    "mean": mean,
    "sum": sum_,
    "scalar-scale": scalar_scale,
}


def forward_primitive(op_kind, *args, **kwargs):
    """Dispatch a primitive by its op-kind name."""
    try:
        op = _OP_TABLE[op_kind]
    except KeyError:
        raise ContractViolation(f"unknown op-kind {op_kind!r}") from None
    return op(*args, **kwargs)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def finite_difference_check(f, params, step=1e-5, max_coords_per_tensor=None, rng=None):
    """Max relative error between analytic gradients of `f` and central differences.

    `f` is a zero-argument callable returning a scalar Tensor; it must read
    the current values of `params` (a list of Tensors). Values are restored
    bit-exactly after probing. `max_coords_per_tensor` caps the number of
    coordinates probed per tensor (sampled with `rng`) so large models stay
    affordable; by default every coordinate is probed.
    """
    with ComputationTape() as tape:
        loss = f()
        tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords_per_tensor is not None and n > max_coords_per_tensor:
            if rng is None:
                raise ContractViolation("finite_difference_check: sampling requires rng")
            coords = rng.choice(n, size=max_coords_per_tensor, replace=False)
        else:
            coords = range(n)
        ana_flat = ana.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            up = f().item()
            flat[i] = orig - step
            down = f().item()
            flat[i] = orig
            fd = (up - down) / (2.0 * step)
            err = abs(ana_flat[i] - fd) / max(1.0, abs(ana_flat[i]))
            if err > worst:
                worst = err
    return worst

"""A small reverse-mode autodiff layer over numpy arrays.

Only the primitives the pointer parser needs are provided, several of them
fused (a whole LSTM layer is one node) so that the tape stays short.  Storage
and compute are float32; :func:`shadow64` switches newly created arrays to
float64, which the finite-difference checker relies on.
"""

from __future__ import annotations

import contextlib
import weakref
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import AllMasked, IndexOutOfRange, NumericError, ShapeMismatch

NLL_EPS = 1e-12

_dtype = np.float32
_grad_enabled = True


def default_dtype():
    return _dtype


@contextlib.contextmanager
def no_grad():
    """Build no tape inside the block (inference)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def shadow64():
    global _dtype
    prev, _dtype = _dtype, np.float64
    try:
        yield
    finally:
        _dtype = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._node = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"

    def backward(self, grad=None) -> None:
        backward(self, grad)


class Parameter(Tensor):
    """A learnable tensor with its Adam moments."""

    __slots__ = ("m", "v", "step")

    def __init__(self, data, name: str | None = None):
        super().__init__(np.array(data, dtype=np.float32), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


class _Node:
    __slots__ = ("inputs", "outputs", "shapes", "backward_fn")

    def __init__(self, inputs, outputs, backward_fn):
        self.inputs = inputs
        self.outputs = [weakref.ref(o) for o in outputs]
        self.shapes = [(o.data.shape, o.data.dtype) for o in outputs]
        self.backward_fn = backward_fn


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"{op} produced a non-finite value")


def _record(op: str, inputs: Sequence[Tensor], outputs: Sequence[np.ndarray], backward_fn) -> list[Tensor]:
    needs = _grad_enabled and any(t.requires_grad for t in inputs)
    tensors = []
    for arr in outputs:
        _check_finite(arr, op)
        tensors.append(Tensor(arr, requires_grad=needs))
    if needs:
        node = _Node(tuple(inputs), tensors, backward_fn)
        for t in tensors:
            t._node = node
    return tensors


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_dtype))


def backward(root: Tensor, grad=None) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every tensor requiring grad."""
    if root._node is None:
        return
    order, seen = [], set()
    stack = [(root._node, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for t in node.inputs:
            if t._node is not None and id(t._node) not in seen:
                stack.append((t._node, False))
    root.grad = np.ones_like(root.data) if grad is None else np.asarray(grad, dtype=root.data.dtype)
    for node in reversed(order):
        gouts = []
        for ref, (shape, dtype) in zip(node.outputs, node.shapes):
            out = ref()
            g = None if out is None else out.grad
            gouts.append(np.zeros(shape, dtype) if g is None else g)
        gins = node.backward_fn(*gouts)
        for t, g in zip(node.inputs, gins):
            if g is None or not t.requires_grad:
                continue
            if isinstance(t, Parameter):
                t.grad += g
            else:
                t.grad = g if t.grad is None else t.grad + g
        for ref in node.outputs:
            out = ref()
            if out is not None and out is not root and not isinstance(out, Parameter):
                out.grad = None


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a bias over the last axis of ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    bias = b.shape != a.shape
    if bias and b.shape != a.shape[-1:]:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")

    def back(g):
        gb = g.reshape(-1, g.shape[-1]).sum(0) if bias else g
        return g, gb

    return _record("add", (a, b), (a.data + b.data,), back)[0]


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}")
    return _record("mul", (a, b), (a.data * b.data,), lambda g: (g * b.data, g * a.data))[0]


def scale(a: Tensor, s: float) -> Tensor:
    return _record("scale", (a,), (a.data * a.data.dtype.type(s),), lambda g: (g * s,))[0]


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _record("tanh", (x,), (y,), lambda g: (g * (1 - y * y),))[0]


def _sigmoid(z):
    return 0.5 * (np.tanh(0.5 * z) + 1)


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _record("sigmoid", (x,), (y,), lambda g: (g * y * (1 - y),))[0]


def sum_all(x: Tensor) -> Tensor:
    return _record("sum", (x,), (np.asarray(x.data.sum()),), lambda g: (np.broadcast_to(g, x.shape).copy(),))[0]


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = x.shape
    return _record("reshape", (x,), (x.data.reshape(shape),), lambda g: (g.reshape(src),))[0]


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _record("concat", xs, (out,), back)[0]


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``rate`` is zero."""
    if not training or rate <= 0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / x.data.dtype.type(1 - rate)
    return _record("dropout", (x,), (x.data * keep,), lambda g: (g * keep,))[0]


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., q) and ``b`` of shape (q, r)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.data.ndim != 2 or a.data.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def back(g):
        ga = g @ b.data.T
        a2 = a.data.reshape(-1, a.shape[-1])
        gb = a2.T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _record("matmul", (a, b), (out,), back)[0]


def take(x: Tensor, index: np.ndarray) -> Tensor:
    """Row gather along axis 1: ``out[b, t] = x[b, index[b, t]]``."""
    index = np.asarray(index, dtype=np.int64)
    if x.data.ndim != 3 or index.ndim != 2 or index.shape[0] != x.shape[0]:
        raise ShapeMismatch(f"take: {x.shape} with index {index.shape}")
    if index.size and (index.min() < 0 or index.max() >= x.shape[1]):
        raise IndexOutOfRange("take: index outside the sequence")
    rows = np.arange(x.shape[0])[:, None]
    out = x.data[rows, index]

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (np.broadcast_to(rows, index.shape), index), g)
        return (gx,)

    return _record("take", (x,), (out,), back)[0]


def embedding_bag(table: Tensor, ids: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted sum of table rows: ``out[..] = sum_k weights[.., k] * table[ids[.., k]]``."""
    ids = np.asarray(ids, dtype=np.int64)
    w = np.asarray(weights, dtype=table.data.dtype)
    if ids.shape != w.shape:
        raise ShapeMismatch("embedding_bag: ids and weights differ in shape")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexOutOfRange("embedding_bag: id outside the table")
    out = np.einsum("...k,...ke->...e", w, table.data[ids])

    def back(g):
        gt = np.zeros_like(table.data)
        contrib = w[..., None] * g[..., None, :]
        np.add.at(gt, ids.reshape(-1), contrib.reshape(-1, table.shape[1]))
        return (gt,)

    return _record("embedding_bag", (table,), (out,), back)[0]


# ---------------------------------------------------------------- distributions

def _softmax_np(x: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
    else:
        neg = np.where(mask, x, -np.inf)
        z = x - neg.max(axis=-1, keepdims=True)
        e = np.where(mask, np.exp(np.where(mask, z, 0)), 0)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: Tensor) -> Tensor:
    if x.shape[-1] < 1:
        raise ShapeMismatch("softmax over an empty axis")
    p = _softmax_np(x.data, None)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _record("softmax", (x,), (p,), back)[0]


def masked_softmax(x: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to ``mask``; masked entries are exactly 0."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not mask.any(axis=-1).all():
        raise AllMasked("every position of a softmax row is masked")
    p = _softmax_np(x.data, mask)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _record("masked_softmax", (x,), (p,), back)[0]


def nll_loss(dist: Tensor, target, step_mask: np.ndarray | None = None) -> Tensor:
    """Summed ``-log(dist[target] + 1e-12)`` with 1-based targets.

    ``dist`` is (k,) with a scalar target, or (..., k) with an integer array
    of targets; ``step_mask`` zeroes the contribution of padded steps.
    """
    tgt = np.asarray(target, dtype=np.int64)
    k = dist.shape[-1]
    if tgt.shape != dist.shape[:-1]:
        raise ShapeMismatch(f"nll_loss: targets {tgt.shape} for distribution {dist.shape}")
    sm = np.ones(tgt.shape, dist.data.dtype) if step_mask is None else np.asarray(step_mask, dist.data.dtype)
    live = sm != 0
    if ((tgt < 1) | (tgt > k))[live].any():
        raise IndexOutOfRange(f"nll_loss: target outside [1, {k}]")
    idx = np.clip(tgt, 1, k) - 1
    flat = dist.data.reshape(-1, k)
    rows = np.arange(flat.shape[0])
    picked = flat[rows, idx.reshape(-1)]
    eps = dist.data.dtype.type(NLL_EPS)
    losses = -np.log(picked + eps) * sm.reshape(-1)
    out = np.asarray(losses.sum(), dtype=dist.data.dtype)

    def back(g):
        gflat = np.zeros_like(flat)
        gflat[rows, idx.reshape(-1)] = -g * sm.reshape(-1) / (picked + eps)
        return (gflat.reshape(dist.shape),)

    return _record("nll_loss", (dist,), (out,), back)[0]


# ---------------------------------------------------------------- recurrent cells

def _cell_forward(zx, h, c, w_hh):
    z = zx + h @ w_hh
    hs = h.shape[-1]
    i = _sigmoid(z[..., :hs])
    f = _sigmoid(z[..., hs:2 * hs])
    g = np.tanh(z[..., 2 * hs:3 * hs])
    o = _sigmoid(z[..., 3 * hs:])
    c2 = f * c + i * g
    tc = np.tanh(c2)
    return i, f, g, o, c2, tc, o * tc


def _cell_backward(gh, gc, i, f, g, o, c_prev, tc):
    """Returns (dz, dc_prev) given grads of h' and c'."""
    gc = gc + gh * o * (1 - tc * tc)
    dz = np.concatenate(
        [gc * g * i * (1 - i), gc * c_prev * f * (1 - f), gc * i * (1 - g * g), gh * tc * o * (1 - o)],
        axis=-1,
    )
    return dz, gc * f


def _check_lstm_shapes(e, hs, w_ih, w_hh, b):
    if w_ih.shape != (e, 4 * hs) or w_hh.shape != (hs, 4 * hs) or b.shape != (4 * hs,):
        raise ShapeMismatch(
            f"lstm weights {w_ih.shape}, {w_hh.shape}, {b.shape} do not fit input {e} / hidden {hs}"
        )


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step; gates are packed in the order input, forget, candidate, output."""
    hs = h.shape[-1]
    _check_lstm_shapes(x.shape[-1], hs, w_ih, w_hh, b)
    if c.shape != h.shape or x.shape[:-1] != h.shape[:-1]:
        raise ShapeMismatch(f"lstm_cell: x {x.shape}, h {h.shape}, c {c.shape}")
    zx = x.data @ w_ih.data + b.data
    i, f, g, o, c2, tc, h2 = _cell_forward(zx, h.data, c.data, w_hh.data)

    def back(gh, gc):
        dz, gc_prev = _cell_backward(gh, gc, i, f, g, o, c.data, tc)
        x2 = x.data.reshape(-1, x.shape[-1])
        h2d = h.data.reshape(-1, hs)
        dz2 = dz.reshape(-1, 4 * hs)
        return (
            dz @ w_ih.data.T,
            dz @ w_hh.data.T,
            gc_prev,
            x2.T @ dz2,
            h2d.T @ dz2,
            dz2.sum(0),
        )

    h_out, c_out = _record("lstm_cell", (x, h, c, w_ih, w_hh, b), (h2, c2), back)
    return h_out, c_out


def lstm_layer(
    x: Tensor,
    w_ih: Tensor,
    w_hh: Tensor,
    b: Tensor,
    h0: Tensor,
    c0: Tensor,
    mask: np.ndarray,
    reverse: bool = False,
) -> tuple[Tensor, Tensor, Tensor]:
    """Run an LSTM over a padded batch ``x`` of shape (B, L, E).

    At positions where ``mask`` is 0 the state is carried through unchanged
    and the emitted output is zero, so trailing padding never influences a
    sequence.  Returns all outputs (B, L, H) plus the final (h, c).
    """
    bsz, length, e = x.shape
    hs = h0.shape[-1]
    _check_lstm_shapes(e, hs, w_ih, w_hh, b)
    if h0.shape != (bsz, hs) or c0.shape != (bsz, hs):
        raise ShapeMismatch(f"lstm_layer: initial state {h0.shape} for batch {bsz}")
    dt = x.data.dtype
    m = np.asarray(mask, dtype=dt).reshape(bsz, length, 1)
    zx = x.data @ w_ih.data + b.data
    steps = range(length - 1, -1, -1) if reverse else range(length)
    out = np.zeros((bsz, length, hs), dt)
    h, c = h0.data, c0.data
    cache = []
    for t in steps:
        i, f, g, o, c2, tc, h2 = _cell_forward(zx[:, t], h, c, w_hh.data)
        mt = m[:, t]
        cache.append((t, h, c, i, f, g, o, tc))
        h = mt * h2 + (1 - mt) * h
        c = mt * c2 + (1 - mt) * c
        out[:, t] = mt[:, 0:1] * h
    h_last, c_last = h, c

    def back(g_out, g_h, g_c):
        dzs = np.zeros((bsz, length, 4 * hs), dt)
        g_whh = np.zeros_like(w_hh.data)
        gh, gc = g_h, g_c
        for t, h_prev, c_prev, i, f, g, o, tc in reversed(cache):
            mt = m[:, t]
            gh = gh + mt * g_out[:, t]
            dz, gc_cell = _cell_backward(mt * gh, mt * gc, i, f, g, o, c_prev, tc)
            dzs[:, t] = dz
            g_whh += h_prev.T @ dz
            gh = (1 - mt) * gh + dz @ w_hh.data.T
            gc = (1 - mt) * gc + gc_cell
        flat = dzs.reshape(-1, 4 * hs)
        return (
            dzs @ w_ih.data.T,
            x.data.reshape(-1, e).T @ flat,
            g_whh,
            flat.sum(0),
            gh,
            gc,
        )

    return tuple(_record("lstm_layer", (x, w_ih, w_hh, b, h0, c0), (out, h_last, c_last), back))


# ---------------------------------------------------------------- attention

def pointer_scores(enc_proj: Tensor, dec_proj: Tensor, v: Tensor) -> Tensor:
    """Additive attention logits ``v . tanh(enc_proj[b, i] + dec_proj[b, t])``.

    ``enc_proj`` is (B, L, A), ``dec_proj`` is (B, T, A); the result is (B, T, L).
    """
    if enc_proj.data.ndim != 3 or dec_proj.data.ndim != 3 or enc_proj.shape[0] != dec_proj.shape[0]:
        raise ShapeMismatch(f"pointer_scores: {enc_proj.shape} vs {dec_proj.shape}")
    if enc_proj.shape[2] != dec_proj.shape[2] or v.shape != (enc_proj.shape[2],):
        raise ShapeMismatch(f"pointer_scores: attention widths {enc_proj.shape[2]}, {dec_proj.shape[2]}, {v.shape}")
    s = np.tanh(enc_proj.data[:, None, :, :] + dec_proj.data[:, :, None, :])
    out = s @ v.data

    def back(g):
        gs = (g[..., None] * v.data) * (1 - s * s)
        gv = np.einsum("btl,btla->a", g, s)
        return gs.sum(axis=1), gs.sum(axis=2), gv

    return _record("pointer_scores", (enc_proj, dec_proj, v), (out,), back)[0]


# ---------------------------------------------------------------- optimisation

def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def global_grad_norm(params: Iterable[Parameter]) -> float:
    total = 0.0
    for p in params:
        total += float(np.dot(p.grad.ravel().astype(np.float64), p.grad.ravel().astype(np.float64)))
    norm = float(np.sqrt(total))
    if not np.isfinite(norm):
        raise NumericError("gradient norm is not finite")
    return norm


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Rescale gradients so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_grad_norm(params)
    if norm > max_norm:
        factor = np.float32(max_norm / (norm + 1e-6))
        for p in params:
            p.grad *= factor
    return norm


def adam_step(
    params: Iterable[Parameter],
    lr: float = 0.001,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update, then gradients are zeroed."""
    for p in params:
        p.step += 1
        g = p.grad
        p.m = beta1 * p.m + (1 - beta1) * g
        p.v = beta2 * p.v + (1 - beta2) * g * g
        mhat = p.m / (1 - beta1 ** p.step)
        vhat = p.v / (1 - beta2 ** p.step)
        update = lr * mhat / (np.sqrt(vhat) + eps)
        p.data = (p.data - update).astype(p.data.dtype)
        _check_finite(p.data, "adam_step")
        p.zero_grad()


# ---------------------------------------------------------------- verification

@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-3

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    tol: float = 1e-3,
    step: float = 1e-5,
    floor: float = 1e-6,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare reverse-mode gradients against central differences in float64.

    ``f`` must rebuild its graph from ``params`` on every call.  Relative
    error per entry is ``|a - n| / max(|a|, |n|, floor)``.  With
    ``max_entries`` only a seeded random subset of each tensor is probed.
    """
    saved = [p.data for p in params]
    saved_grads = [p.grad for p in params]
    rng = np.random.default_rng(seed)
    report = GradCheckReport(0.0, tol=tol)
    try:
        for p in params:
            p.data = p.data.astype(np.float64)
        with shadow64():
            for p in params:
                p.grad = np.zeros_like(p.data)
            loss = f()
            loss.backward()
            analytic = [p.grad.copy() for p in params]
        with shadow64(), no_grad():
            for pi, p in enumerate(params):
                flat = p.data.reshape(-1)
                entries = np.arange(flat.size)
                if max_entries is not None and flat.size > max_entries:
                    entries = np.sort(rng.choice(flat.size, max_entries, replace=False))
                worst = 0.0
                for j in entries:
                    orig = flat[j]
                    flat[j] = orig + step
                    fp = float(f().data)
                    flat[j] = orig - step
                    fm = float(f().data)
                    flat[j] = orig
                    num = (fp - fm) / (2 * step)
                    a = float(analytic[pi].reshape(-1)[j])
                    err = abs(a - num) / max(abs(a), abs(num), floor)
                    worst = max(worst, err)
                report.per_param[p.name or f"param{pi}"] = worst
                report.max_rel_error = max(report.max_rel_error, worst)
    finally:
        for p, d, g in zip(params, saved, saved_grads):
            p.data = d
            p.grad = g
    return report

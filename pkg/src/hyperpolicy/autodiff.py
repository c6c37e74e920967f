"""Dense float64 tensors with reverse-mode automatic differentiation.

Operations record onto a per-thread tape (a plain append-only list, so the
tape order is already a topological order of the graph).  Recording happens
only while a `tape()` context is active and at least one input is tracked;
everything else runs as raw numpy, which is what rollout evaluation uses.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "tape",
    "active_tape",
    "backward",
    "grad_check",
    "add",
    "sub",
    "mul",
    "neg",
    "relu",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "matmul",
    "bmm",
    "transpose",
    "transpose_last2",
    "reshape",
    "narrow",
    "concat",
    "expand_rows",
    "expand_mid",
    "tsum",
    "tmean",
    "softmax_logprob",
    "softmax_entropy",
    "softmax",
]


class AutodiffError(ValueError):
    """Shape mismatch, domain error, or misuse of the tape."""


_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


class Tape:
    """Append-only record of op-produced tensors, in creation order."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)


def tape() -> Tape:
    """Open a fresh recording context: `with tape(): ...; backward(loss)`."""
    return Tape()


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _asarray(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """A dense float64 array, optionally a differentiable leaf.

    `grad` is populated by `backward` and accumulates across calls until
    cleared, so two backward passes over the same graph yield exactly twice
    the gradient.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_op", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = _asarray(data)
        if not np.all(np.isfinite(arr)):
            raise AutodiffError(f"non-finite values in tensor {name or ''!r}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._op: str | None = None
        self._parents: tuple = ()
        self._backward_fn = None

    @classmethod
    def _make(cls, data: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = False
        out.name = None
        out._op = None
        out._parents = ()
        out._backward_fn = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor._make(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op or 'leaf'})"

    # Operator sugar; the functional forms below are the real API.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _tracked(t) -> bool:
    return isinstance(t, Tensor) and (t.requires_grad or t._op is not None)


def _record(data: np.ndarray, op: str, parents: tuple, backward_fn) -> Tensor:
    """Wrap an op result, registering it on the active tape when needed.

    `backward_fn(g, getbuf)` must accumulate into the buffers returned by
    `getbuf(parent)` in place; `getbuf` returns None for untracked parents.
    """
    out = Tensor._make(data)
    tp = active_tape()
    if tp is not None and any(_tracked(p) for p in parents):
        out._op = op
        out._parents = parents
        out._backward_fn = backward_fn
        tp.nodes.append(out)
    return out


def backward(loss: Tensor, graph: Tape | None = None):
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf.

    Visits reachable nodes exactly once, in reverse tape (topological) order.
    """
    tp = graph if graph is not None else active_tape()
    if tp is None:
        raise AutodiffError("backward requires an active tape")
    if loss.data.size != 1:
        raise AutodiffError(f"loss must be scalar, got shape {loss.data.shape}")

    # Intermediate gradients live in a per-call dict; only leaves keep .grad.
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    reach: set[int] = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._op is None or id(t) in reach:
            continue
        reach.add(id(t))
        stack.extend(p for p in t._parents if isinstance(p, Tensor))

    def getbuf(t: Tensor) -> np.ndarray | None:
        if t._op is None:
            if not t.requires_grad:
                return None
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            return t.grad
        if id(t) not in reach:
            return None
        buf = grads.get(id(t))
        if buf is None:
            buf = grads[id(t)] = np.zeros_like(t.data)
        return buf

    for node in reversed(tp.nodes):
        nid = id(node)
        if nid not in reach:
            continue
        g = grads.pop(nid, None)
        if g is None:
            continue
        node._backward_fn(g, getbuf)


# ---------------------------------------------------------------------------
# elementwise ops (equal-shape or scalar-vs-tensor only; no general broadcast)


def _coerce_pair(a, b, op: str):
    a_t = isinstance(a, Tensor)
    b_t = isinstance(b, Tensor)
    if a_t and b_t:
        if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
            raise AutodiffError(f"{op}: incompatible shapes {a.data.shape} vs {b.data.shape}")
    return a, b


def _scalar_reduce(g: np.ndarray, shape: tuple) -> np.ndarray:
    # Gradient flowing into a scalar operand of a scalar-vs-tensor op.
    if shape == g.shape:
        return g
    return np.sum(g).reshape(shape)


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        out_data = a.data + float(b)

        def bw(g, getbuf):
            ga = getbuf(a)
            if ga is not None:
                ga += g

        return _record(out_data, "add", (a,), bw)
    _coerce_pair(a, b, "add")
    out_data = a.data + b.data

    def bw(g, getbuf):
        ga = getbuf(a)
        if ga is not None:
            ga += _scalar_reduce(g, a.data.shape)
        gb = getbuf(b)
        if gb is not None:
            gb += _scalar_reduce(g, b.data.shape)

    return _record(out_data, "add", (a, b), bw)


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _coerce_pair(a, b, "sub")
    out_data = a.data - b.data

    def bw(g, getbuf):
        ga = getbuf(a)
        if ga is not None:
            ga += _scalar_reduce(g, a.data.shape)
        gb = getbuf(b)
        if gb is not None:
            gb -= _scalar_reduce(g, b.data.shape)

    return _record(out_data, "sub", (a, b), bw)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; a python float second operand acts as scale."""
    if not isinstance(b, Tensor):
        c = float(b)
        out_data = a.data * c

        def bw(g, getbuf):
            ga = getbuf(a)
            if ga is not None:
                ga += g * c

        return _record(out_data, "scale", (a,), bw)
    _coerce_pair(a, b, "mul")
    out_data = a.data * b.data

    def bw(g, getbuf):
        ga = getbuf(a)
        if ga is not None:
            ga += _scalar_reduce(g * b.data, a.data.shape)
        gb = getbuf(b)
        if gb is not None:
            gb += _scalar_reduce(g * a.data, b.data.shape)

    return _record(out_data, "mul", (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return mul(a, -1.0)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def bw(g, getbuf):
        ga = getbuf(a)
        if ga is not None:
            ga += g * (a.data > 0.0)

    return _record(out_data, "relu", (a,), bw)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def bw(g, getbuf):
        ga = getbuf(a)
        if ga is not None:
            ga += g * (1.0 - out_data * out_data)

    return _record(out_data, "tanh", (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def bw(g, getbuf):
        ga = getbuf(a)
        if ga is not None:
            ga += g * out_data * (1.0 - out_data)

    return _record(out_data, "sigmoid", (a,), bw)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bw(g, getbuf):
        ga = getbuf(a)
        if ga is not None:
            ga += g * out_data

    return _record(out_data, "exp", (a,), bw)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise AutodiffError("log of non-positive value")
    out_data = np.log(a.data)

    def bw(g, getbuf):
        ga = getbuf(a)
        if ga is not None:
            ga += g / a.data

    return _record(out_data, "log", (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 2-D x 2-D, 2-D x 1-D, and 1-D x 2-D operands."""
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise AutodiffError(f"matmul supports 1-D/2-D operands, got {ad.ndim}-D and {bd.ndim}-D")
    if ad.shape[-1] != (bd.shape[0] if bd.ndim >= 1 else None):
        raise AutodiffError(f"matmul: inner dimensions disagree, {ad.shape} vs {bd.shape}")
    out_data = ad @ bd

    def bw(g, getbuf):
        ga = getbuf(a)
        if ga is not None:
            if bd.ndim == 2:
                ga += g @ bd.T if ad.ndim == 2 else bd @ g
            else:  # b is a vector
                ga += np.outer(g, bd) if ad.ndim == 2 else g * bd
        gb = getbuf(b)
        if gb is not None:
            if ad.ndim == 2:
                gb += ad.T @ g
            else:  # a is a vector
                gb += np.outer(ad, g) if bd.ndim == 2 else g * ad

    return _record(out_data, "matmul", (a, b), bw)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product: (B,m,k) @ (B,k,n) -> (B,m,n)."""
    ad, bd = a.data, b.data
    if ad.ndim != 3 or bd.ndim != 3 or ad.shape[0] != bd.shape[0] or ad.shape[2] != bd.shape[1]:
        raise AutodiffError(f"bmm: incompatible shapes {ad.shape} vs {bd.shape}")
    out_data = ad @ bd

    def bw(g, getbuf):
        ga = getbuf(a)
        if ga is not None:
            ga += g @ bd.transpose(0, 2, 1)
        gb = getbuf(b)
        if gb is not None:
            gb += ad.transpose(0, 2, 1) @ g

    return _record(out_data, "bmm", (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise AutodiffError("transpose expects a 2-D tensor")
    out_data = np.ascontiguousarray(a.data.T)

    def bw(g, getbuf):
        ga = getbuf(a)
        if ga is not None:
            ga += g.T

    return _record(out_data, "transpose", (a,), bw)


def transpose_last2(a: Tensor) -> Tensor:
    """Swap the last two axes of a 3-D tensor."""
    if a.data.ndim != 3:
        raise AutodiffError("transpose_last2 expects a 3-D tensor")
    out_data = np.ascontiguousarray(a.data.transpose(0, 2, 1))

    def bw(g, getbuf):
        ga = getbuf(a)
        if ga is not None:
            ga += g.transpose(0, 2, 1)

    return _record(out_data, "transpose_last2", (a,), bw)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out_data = a.data.reshape(shape)

    def bw(g, getbuf):
        ga = getbuf(a)
        if ga is not None:
            ga += g.reshape(a.data.shape)

    return _record(out_data, "reshape", (a,), bw)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of `length` elements along `axis`."""
    if not (0 <= start and start + length <= a.data.shape[axis]):
        raise AutodiffError(
            f"narrow: [{start}, {start + length}) out of range for axis {axis} of {a.data.shape}"
        )
    idx = tuple(slice(None) if d != axis else slice(start, start + length) for d in range(a.data.ndim))
    out_data = np.ascontiguousarray(a.data[idx])

    def bw(g, getbuf):
        ga = getbuf(a)
        if ga is not None:
            ga[idx] += g

    return _record(out_data, "narrow", (a,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise AutodiffError("concat of empty sequence")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def bw(g, getbuf):
        offset = 0
        for t, size in zip(tensors, sizes):
            gt = getbuf(t)
            if gt is not None:
                idx = tuple(
                    slice(None) if d != axis else slice(offset, offset + size)
                    for d in range(g.ndim)
                )
                gt += g[idx]
            offset += size

    return _record(out_data, "concat", tuple(tensors), bw)


def expand_rows(a: Tensor, n_rows: int) -> Tensor:
    """Tile a 1-D tensor into (n_rows, len); backward sums over rows."""
    if a.data.ndim != 1:
        raise AutodiffError("expand_rows expects a 1-D tensor")
    out_data = np.broadcast_to(a.data, (n_rows, a.data.shape[0])).copy()

    def bw(g, getbuf):
        ga = getbuf(a)
        if ga is not None:
            ga += g.sum(axis=0)

    return _record(out_data, "expand_rows", (a,), bw)


def expand_mid(a: Tensor, n: int) -> Tensor:
    """Tile a (B, d) tensor into (B, n, d); backward sums over the new axis."""
    if a.data.ndim != 2:
        raise AutodiffError("expand_mid expects a 2-D tensor")
    b, d = a.data.shape
    out_data = np.broadcast_to(a.data[:, None, :], (b, n, d)).copy()

    def bw(g, getbuf):
        ga = getbuf(a)
        if ga is not None:
            ga += g.sum(axis=1)

    return _record(out_data, "expand_mid", (a,), bw)


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    out_data = np.asarray(a.data.sum(axis=axis))

    def bw(g, getbuf):
        ga = getbuf(a)
        if ga is not None:
            if axis is None:
                ga += g
            else:
                ga += np.expand_dims(g, axis)

    return _record(out_data, "sum", (a,), bw)


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    out_data = np.asarray(a.data.mean(axis=axis))

    def bw(g, getbuf):
        ga = getbuf(a)
        if ga is not None:
            if axis is None:
                ga += g / n
            else:
                ga += np.expand_dims(g, axis) / n

    return _record(out_data, "mean", (a,), bw)


# ---------------------------------------------------------------------------
# categorical-policy ops


def _logsoftmax(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=-1, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain numpy softmax with max subtraction (used for action sampling)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_logprob(logits: Tensor, actions) -> Tensor:
    """log softmax(logits)[action], stable under large logits.

    Accepts (n,) logits with an int action, or (B,n) logits with (B,) actions,
    returning a scalar or (B,) tensor respectively.
    """
    ld = logits.data
    single = ld.ndim == 1
    if single:
        ld2 = ld[None, :]
        acts = np.asarray([int(actions)])
    else:
        ld2 = ld
        acts = np.asarray(actions, dtype=np.int64)
        if acts.shape != (ld2.shape[0],):
            raise AutodiffError(f"actions shape {acts.shape} does not match batch {ld2.shape[0]}")
    n = ld2.shape[1]
    if np.any(acts < 0) or np.any(acts >= n):
        raise AutodiffError(f"action index out of range [0, {n})")
    logp = _logsoftmax(ld2)
    rows = np.arange(ld2.shape[0])
    out_data = logp[rows, acts]
    if single:
        out_data = out_data.reshape(())
    probs = np.exp(logp)

    def bw(g, getbuf):
        gl = getbuf(logits)
        if gl is not None:
            gv = np.asarray(g).reshape(-1, 1)
            dl = -probs * gv
            dl[rows, acts] += np.asarray(g).reshape(-1)
            gl += dl.reshape(logits.data.shape)

    return _record(out_data, "softmax_logprob", (logits,), bw)


def softmax_entropy(logits: Tensor) -> Tensor:
    """Entropy of the categorical distribution; (n,) -> scalar, (B,n) -> (B,)."""
    ld = logits.data
    single = ld.ndim == 1
    ld2 = ld[None, :] if single else ld
    logp = _logsoftmax(ld2)
    probs = np.exp(logp)
    ent = -(probs * logp).sum(axis=-1)
    out_data = ent.reshape(()) if single else ent

    def bw(g, getbuf):
        gl = getbuf(logits)
        if gl is not None:
            gv = np.asarray(g).reshape(-1, 1)
            dl = -probs * (logp + ent[:, None]) * gv
            gl += dl.reshape(logits.data.shape)

    return _record(out_data, "softmax_entropy", (logits,), bw)


# ---------------------------------------------------------------------------
# verification harness


def grad_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Compare analytic gradients of scalar-valued `f` against central differences.

    Returns the max absolute gradient discrepancy normalized by the largest
    gradient magnitude (so near-zero coordinates do not blow up the ratio).
    """
    if h <= 0:
        raise AutodiffError("step size h must be positive")
    leaf = Tensor(x.data.copy(), requires_grad=True)
    with tape():
        out = f(leaf)
        if not isinstance(out, Tensor) or out.data.size != 1:
            raise AutodiffError("grad_check: f must return a scalar tensor")
        backward(out)
    analytic = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad.copy()

    numeric = np.zeros_like(leaf.data)
    flat_num = numeric.reshape(-1)
    base = leaf.data.reshape(-1)
    probe = Tensor(leaf.data.copy())
    flat_probe = probe.data.reshape(-1)
    for i in range(base.size):
        orig = base[i]
        flat_probe[i] = orig + h
        hi = f(probe).item()
        flat_probe[i] = orig - h
        lo = f(probe).item()
        flat_probe[i] = orig
        flat_num[i] = (hi - lo) / (2.0 * h)

    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)

"""Reverse-mode autodiff over numpy arrays (float64), tape-based.

Each Tensor records its parents and a backward closure; `backward()` runs a
reverse topological sweep. `no_grad()` disables recording for cheap
forward-only evaluation (finite differences, inference); every op takes a
short path there that skips closure construction entirely.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import ShapeError

_grad_enabled = True

# When not None, leaky_relu appends sign masks of its pre-activations here
# (used by grad_check to detect kink crossings between perturbed runs).
kink_monitor = None


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A node in the computation tape."""

    __slots__ = ("value", "grad", "_parents", "_backward", "name")

    def __init__(self, value, parents=(), backward=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents if _grad_enabled else ()
        self._backward = backward if _grad_enabled else None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def backward(self):
        if self.value.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _leaf(value) -> Tensor:
    """Wrap a freshly computed float64 array without tape bookkeeping."""
    t = Tensor.__new__(Tensor)
    t.value = value if type(value) is np.ndarray else np.asarray(value, dtype=np.float64)
    t.grad = None
    t._parents = ()
    t._backward = None
    t.name = None
    return t


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


_scatter_cache: dict = {}


def _scatter_matrix(ids: np.ndarray, n_rows: int) -> np.ndarray:
    """One-hot (n_rows, len(ids)) scatter matrix, cached per id array.

    Holding a reference to the key array keeps its id() stable for the
    cache lifetime; grouped sums become a single matmul."""
    key = (id(ids), n_rows)
    hit = _scatter_cache.get(key)
    if hit is not None and hit[0] is ids:
        return hit[1]
    m = np.zeros((n_rows, len(ids)))
    m[np.asarray(ids, dtype=int), np.arange(len(ids))] = 1.0
    if len(_scatter_cache) > 512:
        _scatter_cache.clear()
    _scatter_cache[key] = (ids, m)
    return m


def _accum(t: Tensor, g: np.ndarray):
    # Lazy: first contribution owns a copy, later ones add in place.
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
    else:
        t.grad += g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.value, b.value
    if av.shape != bv.shape and not (av.ndim == 2 and bv.ndim == 1
                                     and av.shape[1] == bv.shape[0]):
        raise ShapeError(f"add: incompatible shapes {av.shape} and {bv.shape}")
    out_val = av + bv
    if not _grad_enabled:
        return _leaf(out_val)

    def bw(g):
        _accum(a, g)
        _accum(b, g.sum(axis=0) if bv.ndim < g.ndim else g)

    return Tensor(out_val, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.value, b.value
    if av.shape != bv.shape:
        raise ShapeError(f"sub: incompatible shapes {av.shape} and {bv.shape}")
    if not _grad_enabled:
        return _leaf(av - bv)

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return Tensor(av - bv, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.value, b.value
    if av.shape != bv.shape:
        raise ShapeError(f"mul: incompatible shapes {av.shape} and {bv.shape}")
    if not _grad_enabled:
        return _leaf(av * bv)

    def bw(g):
        _accum(a, g * bv)
        _accum(b, g * av)

    return Tensor(av * bv, (a, b), bw)


def scalar_mul(a, c: float) -> Tensor:
    a = _as_tensor(a)
    if not _grad_enabled:
        return _leaf(a.value * c)

    def bw(g):
        _accum(a, g * c)

    return Tensor(a.value * c, (a,), bw)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")
    if not _grad_enabled:
        return _leaf(av @ bv)

    def bw(g):
        _accum(a, g @ bv.T)
        _accum(b, av.T @ g)

    return Tensor(av @ bv, (a, b), bw)


def affine(x, w, b) -> Tensor:
    """Fused x @ w + b with b broadcast over rows."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    xv, wv, bv = x.value, w.value, b.value
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[0] or bv.shape != (wv.shape[1],):
        raise ShapeError(f"affine: incompatible shapes {xv.shape}, {wv.shape}, {bv.shape}")
    out_val = xv @ wv + bv
    if not _grad_enabled:
        return _leaf(out_val)

    def bw(g):
        _accum(x, g @ wv.T)
        _accum(w, xv.T @ g)
        _accum(b, g.sum(axis=0))

    return Tensor(out_val, (x, w, b), bw)


def concat(tensors, axis=1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out_val = np.concatenate([t.value for t in tensors], axis=axis)
    if not _grad_enabled:
        return _leaf(out_val)
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.concatenate(([0], np.cumsum(sizes)))

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return Tensor(out_val, tuple(tensors), bw)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    if not _grad_enabled:
        return _leaf(a.value.reshape(shape))

    def bw(g):
        _accum(a, g.reshape(a.value.shape))

    return Tensor(a.value.reshape(shape), (a,), bw)


def slice_cols(a, lo, hi) -> Tensor:
    a = _as_tensor(a)
    if not _grad_enabled:
        return _leaf(a.value[:, lo:hi])

    def bw(g):
        ga = np.zeros_like(a.value)
        ga[:, lo:hi] = g
        _accum(a, ga)

    return Tensor(a.value[:, lo:hi], (a,), bw)


def gather_rows(a, idx) -> Tensor:
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=int)
    if not _grad_enabled:
        return _leaf(a.value[idx])

    def bw(g):
        ga = np.zeros_like(a.value)
        np.add.at(ga, idx, g)
        _accum(a, ga)

    return Tensor(a.value[idx], (a,), bw)


# embedding lookup is a row gather from a learnable table
embedding_lookup = gather_rows


def segment_sum(a, seg_ids, num_segments) -> Tensor:
    """Sum rows of a into num_segments buckets given per-row bucket ids."""
    a = _as_tensor(a)
    seg_ids = np.asarray(seg_ids, dtype=int)
    out = np.zeros((num_segments,) + a.value.shape[1:])
    np.add.at(out, seg_ids, a.value)
    if not _grad_enabled:
        return _leaf(out)

    def bw(g):
        _accum(a, g[seg_ids])

    return Tensor(out, (a,), bw)


def scale_last(a, w) -> Tensor:
    """Multiply a (..., d) tensor by per-row weights w (...,): a * w[..., None]."""
    a, w = _as_tensor(a), _as_tensor(w)
    av, wv = a.value, w.value
    if av.shape[:-1] != wv.shape:
        raise ShapeError(f"scale_last: {av.shape} vs weights {wv.shape}")
    if not _grad_enabled:
        return _leaf(av * wv[..., None])

    def bw(g):
        _accum(a, g * wv[..., None])
        _accum(w, (g * av).sum(axis=-1))

    return Tensor(av * wv[..., None], (a, w), bw)


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    if not _grad_enabled:
        return _leaf(a.value.sum())

    def bw(g):
        _accum(a, np.full_like(a.value, float(g)))

    return Tensor(a.value.sum(), (a,), bw)


def sum_axis(a, axis) -> Tensor:
    a = _as_tensor(a)
    if not _grad_enabled:
        return _leaf(a.value.sum(axis=axis))

    def bw(g):
        _accum(a, np.expand_dims(g, axis) * np.ones_like(a.value))

    return Tensor(a.value.sum(axis=axis), (a,), bw)


def sum_rows(a) -> Tensor:
    """Sum over rows: (N, d) -> (d,)."""
    return sum_axis(a, 0)


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    return scalar_mul(sum_all(a), 1.0 / a.value.size)


def cumsum_axis(a, axis) -> Tensor:
    a = _as_tensor(a)
    if not _grad_enabled:
        return _leaf(np.cumsum(a.value, axis=axis))

    def bw(g):
        _accum(a, np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis))

    return Tensor(np.cumsum(a.value, axis=axis), (a,), bw)


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = _as_tensor(a)
    av = a.value
    if kink_monitor is not None:
        kink_monitor.append(av >= 0.0)
    mask = np.where(av >= 0.0, 1.0, slope)
    if not _grad_enabled:
        return _leaf(av * mask)

    def bw(g):
        _accum(a, g * mask)

    return Tensor(av * mask, (a,), bw)


def abs_(a) -> Tensor:
    a = _as_tensor(a)
    if not _grad_enabled:
        return _leaf(np.abs(a.value))
    sign = np.sign(a.value)

    def bw(g):
        _accum(a, g * sign)

    return Tensor(np.abs(a.value), (a,), bw)


def log(a) -> Tensor:
    a = _as_tensor(a)
    if not _grad_enabled:
        return _leaf(np.log(a.value))

    def bw(g):
        _accum(a, g / a.value)

    return Tensor(np.log(a.value), (a,), bw)


def pow_const(a, p: float) -> Tensor:
    a = _as_tensor(a)
    if not _grad_enabled:
        return _leaf(np.power(a.value, p))

    def bw(g):
        if p == 0.0:
            return
        _accum(a, g * p * np.power(a.value, p - 1.0))

    return Tensor(np.power(a.value, p), (a,), bw)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.value, b.value
    if av.shape != bv.shape:
        raise ShapeError(f"div: incompatible shapes {av.shape} and {bv.shape}")
    if not _grad_enabled:
        return _leaf(av / bv)

    def bw(g):
        _accum(a, g / bv)
        _accum(b, -g * av / (bv * bv))

    return Tensor(av / bv, (a, b), bw)


def clamp_min(a, c: float) -> Tensor:
    a = _as_tensor(a)
    if not _grad_enabled:
        return _leaf(np.maximum(a.value, c))
    mask = (a.value >= c).astype(float)

    def bw(g):
        _accum(a, g * mask)

    return Tensor(np.maximum(a.value, c), (a,), bw)


def huber_elts(a, delta: float) -> Tensor:
    """Per-element Huber penalty of a residual tensor."""
    a = _as_tensor(a)
    av = a.value
    absa = np.abs(av)
    quad = absa <= delta
    val = np.where(quad, 0.5 * av ** 2, delta * (absa - 0.5 * delta))
    if not _grad_enabled:
        return _leaf(val)
    grad = np.where(quad, av, delta * np.sign(av))

    def bw(g):
        _accum(a, g * grad)

    return Tensor(val, (a,), bw)


def softplus(a) -> Tensor:
    a = _as_tensor(a)
    val = np.logaddexp(0.0, a.value)
    if not _grad_enabled:
        return _leaf(val)
    sig = 1.0 / (1.0 + np.exp(-a.value))

    def bw(g):
        _accum(a, g * sig)

    return Tensor(val, (a,), bw)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization over the last axis with learnable gain/bias."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    av = a.value
    d = av.shape[-1]
    if gain.value.shape != (d,) or bias.value.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias {gain.value.shape}/{bias.value.shape} vs width {d}")
    diff = av - av.sum(axis=-1, keepdims=True) / d
    var = (diff * diff).sum(axis=-1, keepdims=True) / d
    inv = 1.0 / np.sqrt(var + eps)
    xhat = diff * inv
    out_val = xhat * gain.value + bias.value
    if not _grad_enabled:
        return _leaf(out_val)

    def bw(g):
        _accum(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        _accum(bias, g.reshape(-1, d).sum(axis=0))
        gx = g * gain.value
        _accum(a, inv * (gx - gx.mean(axis=-1, keepdims=True)
                         - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))

    return Tensor(out_val, (a, gain, bias), bw)


def dropout(a, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not train or p <= 0.0:
        return _as_tensor(a)
    a = _as_tensor(a)
    keep = (rng.random(a.value.shape) >= p) / (1.0 - p)
    if not _grad_enabled:
        return _leaf(a.value * keep)

    def bw(g):
        _accum(a, g * keep)

    return Tensor(a.value * keep, (a,), bw)


def softmax_grouped(logits, group_ids, num_groups=None) -> Tensor:
    """Softmax normalized independently within each group of rows.

    logits: (E,) or (E, H); group_ids: (E,) ints. With 2D logits the grouping
    applies per column.
    """
    logits = _as_tensor(logits)
    group_ids = np.asarray(group_ids, dtype=int)
    if len(group_ids) != logits.value.shape[0]:
        raise ShapeError(f"softmax_grouped: {len(group_ids)} group ids for {logits.value.shape[0]} logits")
    if num_groups is None:
        num_groups = int(group_ids.max()) + 1 if len(group_ids) else 0
    if len(group_ids) and (group_ids.min() < 0 or group_ids.max() >= num_groups):
        raise IndexError("softmax_grouped: group id out of range")
    x = logits.value
    squeeze = x.ndim == 1
    x2 = x[:, None] if squeeze else x
    if not _grad_enabled and len(group_ids):
        ex = np.exp(x2 - x2.max(axis=0))
        p = ex / (_scatter_matrix(group_ids, num_groups) @ ex)[group_ids]
        return _leaf(p[:, 0] if squeeze else p)
    gmax = np.full((num_groups, x2.shape[1]), -np.inf)
    np.maximum.at(gmax, group_ids, x2)
    ex = np.exp(x2 - gmax[group_ids])
    den = np.zeros((num_groups, x2.shape[1]))
    np.add.at(den, group_ids, ex)
    p = ex / den[group_ids]
    if not _grad_enabled:
        return _leaf(p[:, 0] if squeeze else p)

    def bw(g):
        g2 = g[:, None] if squeeze else g
        dot = np.zeros((num_groups, x2.shape[1]))
        np.add.at(dot, group_ids, p * g2)
        gx = p * (g2 - dot[group_ids])
        _accum(logits, gx[:, 0] if squeeze else gx)

    return Tensor(p[:, 0] if squeeze else p, (logits,), bw)

"""Parameter store, layers (MLP, graph attention), checkpointing, grad check."""

from __future__ import annotations

import json
import math
import os

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

CKPT_HEADER = "goalgraph-ckpt v1"


class ParamStore:
    """Named parameter tensors with gradients and a seeded initializer."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        self.decay: dict[str, bool] = {}

    def create(self, name: str, shape, init: str = "affine", decay: bool = False) -> Tensor:
        if name in self.params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        if init == "affine":
            fan_in, fan_out = shape[0], shape[1]
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            value = self.rng.uniform(-bound, bound, size=shape)
        elif init == "zeros":
            value = np.zeros(shape)
        elif init == "ones":
            value = np.ones(shape)
        elif init == "embedding":
            value = self.rng.normal(0.0, 0.02, size=shape)
        else:
            raise ConfigError(f"unknown init {init!r}")
        t = Tensor(value, name=name)
        self.params[name] = t
        self.decay[name] = decay
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def names(self):
        return sorted(self.params)

    def n_coords(self) -> int:
        return sum(t.value.size for t in self.params.values())

    # Every forward pass builds a fresh tape; detach parameters between passes.
    # No-op while gradients are disabled: ops never attach tape links then.
    def fresh(self):
        if not ad._grad_enabled:
            return
        for t in self.params.values():
            t._parents = ()
            t._backward = None


def create_affine(ps: ParamStore, prefix: str, d_in: int, d_out: int):
    ps.create(f"{prefix}.W", (d_in, d_out), "affine", decay=True)
    ps.create(f"{prefix}.b", (d_out,), "zeros")


def affine(ps: ParamStore, prefix: str, x: Tensor) -> Tensor:
    if not ad._grad_enabled:
        p = ps.params
        return ad._leaf(x.value @ p[prefix + ".W"].value + p[prefix + ".b"].value)
    return ad.affine(x, ps[f"{prefix}.W"], ps[f"{prefix}.b"])


def create_mlp(ps: ParamStore, prefix: str, dims):
    """dims: [d_in, hidden..., d_out]."""
    for i in range(len(dims) - 1):
        create_affine(ps, f"{prefix}.l{i}", dims[i], dims[i + 1])


def mlp(ps: ParamStore, prefix: str, x: Tensor, n_layers: int) -> Tensor:
    """Affine -> LeakyReLU -> ... -> affine (no activation after the last)."""
    if not ad._grad_enabled:
        p = ps.params
        xv = x.value
        for i in range(n_layers):
            xv = xv @ p[f"{prefix}.l{i}.W"].value + p[f"{prefix}.l{i}.b"].value
            if i < n_layers - 1:
                if ad.kink_monitor is not None:
                    ad.kink_monitor.append(xv >= 0.0)
                xv = xv * np.where(xv >= 0.0, 1.0, 0.01)
        return ad._leaf(xv)
    for i in range(n_layers):
        x = affine(ps, f"{prefix}.l{i}", x)
        if i < n_layers - 1:
            x = ad.leaky_relu(x)
    return x


def create_layer_norm(ps: ParamStore, prefix: str, d: int):
    ps.create(f"{prefix}.g", (d,), "ones")
    ps.create(f"{prefix}.b", (d,), "zeros")


def layer_norm(ps: ParamStore, prefix: str, x: Tensor) -> Tensor:
    if not ad._grad_enabled:
        p = ps.params
        return ad._leaf(_ln_raw(x.value, p[prefix + ".g"].value, p[prefix + ".b"].value))
    return ad.layer_norm(x, ps[f"{prefix}.g"], ps[f"{prefix}.b"])


def _ln_raw(v: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    d = v.shape[-1]
    diff = v - v.sum(axis=-1, keepdims=True) / d
    var = (diff * diff).sum(axis=-1, keepdims=True) / d
    inv = 1.0 / np.sqrt(var + eps)
    return diff * inv * gain + bias


def create_graph_attention_layer(ps: ParamStore, prefix: str, d_h: int, ffn_hidden: int):
    for nm in ("q", "k", "v", "skip", "edge"):
        create_affine(ps, f"{prefix}.{nm}", d_h, d_h)
    create_layer_norm(ps, f"{prefix}.ln_src", d_h)
    create_layer_norm(ps, f"{prefix}.ln_dst", d_h)
    create_layer_norm(ps, f"{prefix}.ln_ffn", d_h)
    create_mlp(ps, f"{prefix}.ffn", [d_h, ffn_hidden, d_h])


def graph_attention_layer(ps: ParamStore, prefix: str, src_feats: Tensor,
                          dst_feats: Tensor, edge_src, edge_dst, edge_emb: Tensor,
                          heads: int = 8, p_drop: float = 0.0, train: bool = False,
                          rng=None) -> Tensor:
    """Transformer-style attention over graph edges, then a residual FFN.

    Per head: query from dst, key and value from src with the projected edge
    embedding added to both; attention softmax runs over each destination
    node's in-edges. Destinations without in-edges pass through the
    skip + FFN path unchanged by attention.
    """
    d_h = dst_feats.shape[1]
    if d_h % heads:
        raise ShapeError(f"width {d_h} not divisible by {heads} heads")
    d_head = d_h // heads
    n_dst = dst_feats.shape[0]

    if not ad._grad_enabled and not (train and p_drop > 0.0):
        return _gal_raw(ps, prefix, src_feats.value, dst_feats.value,
                        edge_src, edge_dst, edge_emb.value, heads, d_head, n_dst)

    s = layer_norm(ps, f"{prefix}.ln_src", src_feats)
    d0 = layer_norm(ps, f"{prefix}.ln_dst", dst_feats)

    n_e = len(edge_src)
    if n_e:
        q = ad.gather_rows(affine(ps, f"{prefix}.q", d0), edge_dst)
        e = affine(ps, f"{prefix}.edge", edge_emb)
        k = ad.add(ad.gather_rows(affine(ps, f"{prefix}.k", s), edge_src), e)
        v = ad.add(ad.gather_rows(affine(ps, f"{prefix}.v", s), edge_src), e)
        qh = ad.reshape(q, (n_e, heads, d_head))
        kh = ad.reshape(k, (n_e, heads, d_head))
        vh = ad.reshape(v, (n_e, heads, d_head))
        logits = ad.scalar_mul(ad.sum_axis(ad.mul(qh, kh), axis=2), 1.0 / math.sqrt(d_head))
        alpha = ad.softmax_grouped(logits, edge_dst, n_dst)  # (E, heads)
        weighted = ad.scale_last(vh, alpha)
        msg = ad.segment_sum(ad.reshape(weighted, (n_e, d_h)), edge_dst, n_dst)
        attn = ad.add(affine(ps, f"{prefix}.skip", d0), msg)
    else:
        attn = affine(ps, f"{prefix}.skip", d0)
    x1 = ad.add(dst_feats, ad.dropout(attn, p_drop, train, rng))

    h = layer_norm(ps, f"{prefix}.ln_ffn", x1)
    h = affine(ps, f"{prefix}.ffn.l0", h)
    h = ad.dropout(ad.leaky_relu(h), p_drop, train, rng)
    h = affine(ps, f"{prefix}.ffn.l1", h)
    return ad.add(x1, h)


def _gal_raw(ps, prefix, sv, dv, edge_src, edge_dst, ev, heads, d_head, n_dst):
    """Plain-numpy evaluation of graph_attention_layer, arithmetic-identical."""
    p = ps.params

    def aff(nm, x):
        return x @ p[f"{prefix}.{nm}.W"].value + p[f"{prefix}.{nm}.b"].value

    d_h = dv.shape[1]
    s = _ln_raw(sv, p[prefix + ".ln_src.g"].value, p[prefix + ".ln_src.b"].value)
    d0 = _ln_raw(dv, p[prefix + ".ln_dst.g"].value, p[prefix + ".ln_dst.b"].value)
    n_e = len(edge_src)
    if n_e:
        e = aff("edge", ev)
        q = aff("q", d0)[edge_dst]
        k = aff("k", s)[edge_src] + e
        v = aff("v", s)[edge_src] + e
        qh = q.reshape(n_e, heads, d_head)
        kh = k.reshape(n_e, heads, d_head)
        vh = v.reshape(n_e, heads, d_head)
        logits = (qh * kh).sum(axis=2) * (1.0 / math.sqrt(d_head))
        # np.add.at is slow; scatter-sum via a dense one-hot matmul instead
        ex = np.exp(logits - logits.max(axis=0))
        scatter = ad._scatter_matrix(edge_dst, n_dst)
        den = scatter @ ex
        alpha = ex / den[edge_dst]
        weighted = vh * alpha[..., None]
        msg = scatter @ weighted.reshape(n_e, d_h)
        attn = aff("skip", d0) + msg
    else:
        attn = aff("skip", d0)
    x1 = dv + attn
    h = aff("ffn.l0", _ln_raw(x1, p[prefix + ".ln_ffn.g"].value, p[prefix + ".ln_ffn.b"].value))
    if ad.kink_monitor is not None:
        ad.kink_monitor.append(h >= 0.0)
    h = aff("ffn.l1", h * np.where(h >= 0.0, 1.0, 0.01))
    return ad._leaf(x1 + h)


# ---------------------------------------------------------------------------
# Checkpoint I/O: header line, JSON manifest line, little-endian float64 blobs.

def save_checkpoint(ps: ParamStore, path: str) -> None:
    names = ps.names()
    manifest = {"seed": ps.seed, "params": []}
    offset = 0
    for name in names:
        t = ps.params[name]
        manifest["params"].append({"name": name, "shape": list(t.shape),
                                   "offset": offset, "decay": ps.decay[name]})
        offset += t.value.size * 8
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write((CKPT_HEADER + "\n").encode())
        f.write((json.dumps(manifest, sort_keys=True) + "\n").encode())
        for name in names:
            f.write(np.ascontiguousarray(ps.params[name].value, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str) -> ParamStore:
    with open(path, "rb") as f:
        header = f.readline().decode().rstrip("\n")
        if header != CKPT_HEADER:
            raise ConfigError(f"bad checkpoint header {header!r}")
        manifest = json.loads(f.readline().decode())
        blob = f.read()
    ps = ParamStore(seed=manifest["seed"])
    for rec in manifest["params"]:
        size = int(np.prod(rec["shape"])) if rec["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size,
                            offset=rec["offset"]).reshape(rec["shape"]).copy()
        t = Tensor(arr, name=rec["name"])
        ps.params[rec["name"]] = t
        ps.decay[rec["name"]] = rec["decay"]
    return ps


# ---------------------------------------------------------------------------
# Gradient checking

def grad_check(f, ps: ParamStore, h: float = 1e-5, tol: float = 1e-4,
               rel_floor: float = 1e-6, names=None):
    """Compare analytic gradients of scalar f(ps) against central differences.

    Coordinates whose perturbed forward passes cross a LeakyReLU kink are
    excluded. `names` restricts the check to a subset of parameters.
    Returns a report dict with per-parameter worst errors.

    Central differences resolve gradients only down to eps*|f|/h (rounding
    noise in f swamps anything smaller), so the relative-error denominator
    is floored at that noise level divided by tol: coordinates whose true
    gradient is indistinguishable from zero at FD precision pass rather
    than failing on pure float noise.
    """
    check_names = sorted(names) if names is not None else ps.names()
    ps.fresh()
    ps.zero_grad()
    loss = f()
    loss.backward()
    fd_noise = 10.0 * np.finfo(float).eps * abs(float(loss.value)) / h
    rel_floor = max(rel_floor, fd_noise / tol)
    analytic = {n: (ps.params[n].grad.copy() if ps.params[n].grad is not None
                    else np.zeros_like(ps.params[n].value)) for n in check_names}

    checked = passed = excluded = 0
    worst = {}
    failures = []
    for name in check_names:
        t = ps.params[name]
        flat = t.value.ravel()
        ga = analytic[name].ravel()
        wmax = 0.0
        for j in range(flat.size):
            orig = flat[j]
            signs = []
            vals = []
            for delta in (h, -h):
                flat[j] = orig + delta
                ad.kink_monitor = monitor = []
                with ad.no_grad():
                    vals.append(float(f().value))
                ad.kink_monitor = None
                signs.append(monitor)
            flat[j] = orig
            crossed = any((a != b).any() for a, b in zip(*signs))
            if crossed:
                excluded += 1
                continue
            fd = (vals[0] - vals[1]) / (2.0 * h)
            denom = max(rel_floor, abs(ga[j]), abs(fd))
            err = abs(ga[j] - fd) / denom
            checked += 1
            wmax = max(wmax, err)
            if err < tol:
                passed += 1
            else:
                failures.append((name, j, ga[j], fd, err))
        worst[name] = wmax
    return {"checked": checked, "passed": passed, "excluded": excluded,
            "pass_fraction": passed / checked if checked else 1.0,
            "worst": worst, "failures": failures}

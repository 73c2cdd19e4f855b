"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Variable` wraps an ndarray value. While a :class:`Tape` is active,
every primitive records one node (inputs, output, a VJP closure, and a replay
closure); ``Tape.backward`` walks the nodes once in reverse recorded order,
which is a reverse topological order, and deposits gradients on ``.grad``.
With no active tape the same primitives just compute values, so model code is
written once and reused for inference, training, and benchmarking.

One tape per training step; tapes are not shared across threads.
"""

from __future__ import annotations

import numpy as np

from . import ops, scan as scan_mod
from .errors import DomainError, ShapeError

__all__ = [
    "Variable",
    "Tape",
    "wrap",
    "add",
    "addc",
    "sub",
    "mul",
    "neg",
    "scale",
    "exp",
    "matmul",
    "sigmoid",
    "silu",
    "softplus",
    "relu",
    "power_compress",
    "depthwise_conv1d",
    "layer_norm",
    "rms_norm",
    "reverse_time",
    "softmax",
    "glu",
    "dropout",
    "reshape",
    "transpose",
    "concat",
    "slice_last",
    "sum_all",
    "mean_all",
    "mean_axis",
    "selective_scan",
    "softmax_cross_entropy",
    "finite_diff_check",
]

_TAPES: list["Tape"] = []


class Variable:
    """A float64 array plus the gradient slot filled by ``Tape.backward``."""

    __slots__ = ("value", "grad", "name")

    def __init__(self, value, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Variable{tag}(shape={self.value.shape})"


def wrap(x) -> Variable:
    return x if isinstance(x, Variable) else Variable(x)


class _Node:
    __slots__ = ("op", "inputs", "output", "vjp", "forward")

    def __init__(self, op, inputs, output, vjp, forward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.vjp = vjp
        self.forward = forward


class Tape:
    """Ordered record of primitive applications for one forward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPES.pop()
        if popped is not self:
            raise RuntimeError("tape stack corrupted")
        return False

    def backward(self, loss: Variable) -> None:
        """Accumulate d(loss)/d(variable) into ``.grad`` for every variable.

        Visits each node exactly once, newest first. Variables with no path
        to the loss get a zero gradient.
        """
        if not isinstance(loss, Variable) or loss.value.shape != ():
            raise ShapeError("backward needs a scalar Variable loss")
        pending: dict[int, np.ndarray] = {id(loss): np.ones(())}
        final: dict[int, np.ndarray] = {}
        seen: dict[int, Variable] = {id(loss): loss}
        for node in reversed(self.nodes):
            seen[id(node.output)] = node.output
            for v in node.inputs:
                seen[id(v)] = v
            g = pending.pop(id(node.output), None)
            if g is None:
                continue  # no path from this node's output to the loss
            final[id(node.output)] = g
            for v, ig in zip(node.inputs, node.vjp(g)):
                if ig is None:
                    continue
                prev = pending.get(id(v))
                pending[id(v)] = ig if prev is None else prev + ig
        final.update(pending)  # leaves
        for vid, var in seen.items():
            g = final.get(vid)
            var.grad = np.zeros_like(var.value) if g is None else np.asarray(g)

    def replay_max_abs_diff(self) -> float:
        """Re-run every recorded forward on its stored inputs; return the
        largest absolute deviation from the stored outputs (0.0 when the
        recorded computation replays bit-exactly)."""
        worst = 0.0
        for node in self.nodes:
            ref = node.forward(*[v.value for v in node.inputs])
            diff = np.max(np.abs(ref - node.output.value)) if ref.size else 0.0
            worst = max(worst, float(diff))
        return worst


def _record(op, inputs, out_value, vjp, forward) -> Variable:
    out = Variable(out_value)
    if _TAPES:
        _TAPES[-1].nodes.append(_Node(op, tuple(inputs), out, vjp, forward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Adjoint of numpy broadcasting: reduce g back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(x, y) -> Variable:
    x, y = wrap(x), wrap(y)
    xs, ys = x.value.shape, y.value.shape
    return _record(
        "add",
        (x, y),
        x.value + y.value,
        lambda g: (_unbroadcast(g, xs), _unbroadcast(g, ys)),
        lambda a, b: a + b,
    )


def addc(x, c) -> Variable:
    """Add a non-differentiable constant (e.g. an attention mask)."""
    x = wrap(x)
    c = np.asarray(c, dtype=np.float64)
    xs = x.value.shape
    return _record(
        "addc", (x,), x.value + c, lambda g: (_unbroadcast(g, xs),), lambda a: a + c
    )


def sub(x, y) -> Variable:
    x, y = wrap(x), wrap(y)
    xs, ys = x.value.shape, y.value.shape
    return _record(
        "sub",
        (x, y),
        x.value - y.value,
        lambda g: (_unbroadcast(g, xs), _unbroadcast(-g, ys)),
        lambda a, b: a - b,
    )


def mul(x, y) -> Variable:
    x, y = wrap(x), wrap(y)
    xv, yv = x.value, y.value
    return _record(
        "mul",
        (x, y),
        xv * yv,
        lambda g: (_unbroadcast(g * yv, xv.shape), _unbroadcast(g * xv, yv.shape)),
        lambda a, b: a * b,
    )


def neg(x) -> Variable:
    x = wrap(x)
    return _record("neg", (x,), -x.value, lambda g: (-g,), lambda a: -a)


def scale(x, c: float) -> Variable:
    x = wrap(x)
    c = float(c)
    return _record("scale", (x,), x.value * c, lambda g: (g * c,), lambda a: a * c)


def exp(x) -> Variable:
    x = wrap(x)
    out = np.exp(x.value)
    return _record("exp", (x,), out, lambda g: (g * out,), np.exp)


# ---------------------------------------------------------------------------
# activations


def sigmoid(x) -> Variable:
    x = wrap(x)
    out = ops.sigmoid(x.value)
    return _record("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),), ops.sigmoid)


def silu(x) -> Variable:
    x = wrap(x)
    s = ops.sigmoid(x.value)
    return _record(
        "silu",
        (x,),
        x.value * s,
        lambda g: (g * (s * (1.0 + x.value * (1.0 - s))),),
        ops.silu,
    )


def softplus(x) -> Variable:
    x = wrap(x)
    return _record(
        "softplus",
        (x,),
        ops.softplus(x.value),
        lambda g: (g * ops.sigmoid(x.value),),
        ops.softplus,
    )


def relu(x) -> Variable:
    x = wrap(x)
    mask = x.value > 0
    return _record("relu", (x,), x.value * mask, lambda g: (g * mask,), ops.relu)


def power_compress(x, alpha: float, floor: float = 1e-12) -> Variable:
    """(x + floor) ** alpha - floor ** alpha for x >= 0 (negatives clamp to 0).

    The shift keeps the map smooth through zero magnitude with a finite,
    never exactly zero gradient there, so coordinates driven to zero by an
    optimizer keep a restoring signal instead of freezing; for alpha == 1
    the map reduces to the identity.
    """
    x = wrap(x)
    alpha = float(alpha)
    floor = float(floor)
    shifted = np.maximum(x.value, 0.0) + floor
    out = np.power(shifted, alpha) - floor**alpha
    live = x.value >= 0.0

    def vjp(g):
        return (g * alpha * np.power(shifted, alpha - 1.0) * live,)

    def replay(a):
        return np.power(np.maximum(a, 0.0) + floor, alpha) - floor**alpha

    return _record("power_compress", (x,), out, vjp, replay)


# ---------------------------------------------------------------------------
# linear algebra and shaping


def matmul(a, b) -> Variable:
    a, b = wrap(a), wrap(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError(f"traced matmul needs >=2-d operands, got {av.shape} @ {bv.shape}")
    out = ops.matmul(av, bv)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(bv, -1, -2))
        gb = np.matmul(np.swapaxes(av, -1, -2), g)
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _record("matmul", (a, b), out, vjp, ops.matmul)


def reshape(x, shape) -> Variable:
    x = wrap(x)
    shape = tuple(int(s) for s in shape)
    old = x.value.shape
    return _record(
        "reshape",
        (x,),
        x.value.reshape(shape),
        lambda g: (g.reshape(old),),
        lambda a: a.reshape(shape),
    )


def transpose(x, axes) -> Variable:
    x = wrap(x)
    axes = tuple(int(a) for a in axes)
    inv = tuple(int(i) for i in np.argsort(axes))
    return _record(
        "transpose",
        (x,),
        np.ascontiguousarray(x.value.transpose(axes)),
        lambda g: (g.transpose(inv),),
        lambda a: np.ascontiguousarray(a.transpose(axes)),
    )


def concat(parts, axis: int) -> Variable:
    parts = [wrap(p) for p in parts]
    values = [p.value for p in parts]
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _record(
        "concat",
        tuple(parts),
        np.concatenate(values, axis=axis),
        vjp,
        lambda *vals: np.concatenate(vals, axis=axis),
    )


def slice_last(x, start: int, stop: int) -> Variable:
    """Slice [start:stop] along the last axis."""
    x = wrap(x)
    start, stop = int(start), int(stop)
    xs = x.value.shape

    def vjp(g):
        gx = np.zeros(xs)
        gx[..., start:stop] = g
        return (gx,)

    return _record(
        "slice_last",
        (x,),
        np.ascontiguousarray(x.value[..., start:stop]),
        vjp,
        lambda a: np.ascontiguousarray(a[..., start:stop]),
    )


# ---------------------------------------------------------------------------
# sequence kernels


def depthwise_conv1d(x, w, b=None, causal: bool = True) -> Variable:
    x, w = wrap(x), wrap(w)
    inputs = [x, w]
    bv = None
    if b is not None:
        b = wrap(b)
        inputs.append(b)
        bv = b.value
    out = ops.depthwise_conv1d(x.value, w.value, bv, causal=causal)
    xv, wv = x.value, w.value
    k = wv.shape[1]
    left = k - 1 if causal else (k - 1) // 2
    length = xv.shape[1]

    def vjp(g):
        from numpy.lib.stride_tricks import sliding_window_view

        xpad = np.pad(xv, ((0, 0), (left, k - 1 - left), (0, 0)))
        windows = sliding_window_view(xpad, k, axis=1)  # [B,L,E,K]
        gw = np.einsum("ble,blek->ek", g, windows)
        gpad = np.pad(g, ((0, 0), (k - 1, k - 1), (0, 0)))
        gwin = sliding_window_view(gpad, k, axis=1)  # [B, L+K-1, E, K]
        gxfull = np.einsum("mlek,ek->mle", gwin, wv[:, ::-1])
        gx = gxfull[:, left : left + length]
        if bv is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1))

    return _record(
        "depthwise_conv1d",
        tuple(inputs),
        out,
        vjp,
        lambda *vals: ops.depthwise_conv1d(
            vals[0], vals[1], vals[2] if len(vals) > 2 else None, causal=causal
        ),
    )


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Variable:
    x, gain, bias = wrap(x), wrap(gain), wrap(bias)
    xv = x.value
    mean = xv.mean(axis=-1, keepdims=True)
    var = xv.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mean) * inv
    # Output through the same code path replay uses, so replay is bit-exact.
    out = ops.normalize(xv, "layer", gain.value, bias.value, eps=eps)
    gshape, bshape = gain.value.shape, bias.value.shape

    def vjp(g):
        ggain = _unbroadcast(g * xhat, gshape)
        gbias = _unbroadcast(g, bshape)
        gxh = g * gain.value
        gx = inv * (
            gxh
            - gxh.mean(axis=-1, keepdims=True)
            - xhat * (gxh * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggain, gbias

    return _record(
        "layer_norm",
        (x, gain, bias),
        out,
        vjp,
        lambda a, gn, bs: ops.normalize(a, "layer", gn, bs, eps=eps),
    )


def rms_norm(x, gain, eps: float = 1e-5) -> Variable:
    x, gain = wrap(x), wrap(gain)
    xv = x.value
    d = xv.shape[-1]
    ms = np.mean(xv * xv, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(ms + eps)
    out = ops.normalize(xv, "rms", gain.value, eps=eps)
    gshape = gain.value.shape

    def vjp(g):
        ggain = _unbroadcast(g * xv * inv, gshape)
        gxh = g * gain.value
        gx = gxh * inv - xv * (inv**3) * np.sum(gxh * xv, axis=-1, keepdims=True) / d
        return gx, ggain

    return _record(
        "rms_norm",
        (x, gain),
        out,
        vjp,
        lambda a, gn: ops.normalize(a, "rms", gn, eps=eps),
    )


def reverse_time(x, axis: int = 1) -> Variable:
    x = wrap(x)
    return _record(
        "reverse_time",
        (x,),
        ops.reverse_time(x.value, axis=axis),
        lambda g: (np.flip(g, axis=axis).copy(),),
        lambda a: ops.reverse_time(a, axis=axis),
    )


def softmax(x, axis: int = -1, may_destroy: bool = False) -> Variable:
    """Softmax along ``axis``. When untraced and ``may_destroy`` is set the
    input buffer is normalized in place (bounds peak memory at large L; the
    caller must not reuse ``x`` afterwards)."""
    x = wrap(x)
    if may_destroy and not _TAPES:
        y = x.value
        y -= np.max(y, axis=axis, keepdims=True)
        np.exp(y, out=y)
        y /= np.sum(y, axis=axis, keepdims=True)
        return Variable(y)
    out = ops.softmax(x.value, axis=axis)

    def vjp(g):
        dot = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _record("softmax", (x,), out, vjp, lambda a: ops.softmax(a, axis=axis))


def glu(x) -> Variable:
    """Gated linear unit over the last axis: first half gated by sigmoid of
    the second half. Last extent must be even."""
    x = wrap(x)
    xv = x.value
    d2 = xv.shape[-1]
    if d2 % 2:
        raise ShapeError(f"glu needs an even last extent, got {d2}")
    h = d2 // 2
    a, b = xv[..., :h], xv[..., h:]
    s = ops.sigmoid(b)
    out = a * s

    def vjp(g):
        gx = np.empty_like(xv)
        gx[..., :h] = g * s
        gx[..., h:] = g * a * s * (1.0 - s)
        return (gx,)

    def forward(v):
        return v[..., :h] * ops.sigmoid(v[..., h:])

    return _record("glu", (x,), out, vjp, forward)


def dropout(x, p: float, rng: np.random.Generator) -> Variable:
    """Inverted dropout with an explicit generator for determinism."""
    x = wrap(x)
    if not 0.0 <= p < 1.0:
        raise DomainError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    mask = (rng.random(x.value.shape) >= p) / (1.0 - p)
    return _record(
        "dropout", (x,), x.value * mask, lambda g: (g * mask,), lambda a: a * mask
    )


# ---------------------------------------------------------------------------
# reductions and losses


def sum_all(x) -> Variable:
    x = wrap(x)
    xs = x.value.shape
    return _record(
        "sum_all",
        (x,),
        np.asarray(x.value.sum()),
        lambda g: (np.broadcast_to(g, xs).copy(),),
        lambda a: np.asarray(a.sum()),
    )


def mean_all(x) -> Variable:
    x = wrap(x)
    xs = x.value.shape
    size = x.value.size
    return _record(
        "mean_all",
        (x,),
        np.asarray(x.value.mean()),
        lambda g: (np.broadcast_to(g / size, xs).copy(),),
        lambda a: np.asarray(a.mean()),
    )


def mean_axis(x, axis: int) -> Variable:
    x = wrap(x)
    xs = x.value.shape
    n = xs[axis]

    def vjp(g):
        return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return _record(
        "mean_axis", (x,), x.value.mean(axis=axis), vjp, lambda a: a.mean(axis=axis)
    )


def softmax_cross_entropy(logits, onehot) -> Variable:
    """Mean softmax cross-entropy between ``logits [M, C]`` and constant
    one-hot targets."""
    logits = wrap(logits)
    onehot = np.asarray(onehot, dtype=np.float64)
    lv = logits.value
    if lv.ndim != 2 or onehot.shape != lv.shape:
        raise ShapeError(f"expected matching [M,C] logits/targets, got {lv.shape}, {onehot.shape}")
    m = lv.shape[0]
    shifted = lv - lv.max(axis=1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    logp = shifted - logz
    out = np.asarray(-(onehot * logp).sum() / m)
    probs = np.exp(logp)

    def vjp(g):
        return (g * (probs - onehot) / m,)

    def forward(a):
        sh = a - a.max(axis=1, keepdims=True)
        lp = sh - np.log(np.sum(np.exp(sh), axis=1, keepdims=True))
        return np.asarray(-(onehot * lp).sum() / m)

    return _record("softmax_cross_entropy", (logits,), out, vjp, forward)


# ---------------------------------------------------------------------------
# the selective scan


def selective_scan(u, delta, a, bsel, csel, d, impl: str = "sequential", chunk: int = 64) -> Variable:
    """Differentiable selective scan (see :mod:`bimamba.scan` for semantics).

    ``impl`` picks the forward realization ("sequential" or "parallel"); the
    adjoint is the shared reverse recurrence g_{l-1} += Abar_l * g_l either
    way, evaluated on the states the chosen forward produced.
    """
    u, delta, a = wrap(u), wrap(delta), wrap(a)
    bsel, csel, d = wrap(bsel), wrap(csel), wrap(d)
    inp = scan_mod.SsmInputs(u.value, delta.value, a.value, bsel.value, csel.value, d.value)
    if impl == "sequential":
        h = scan_mod.scan_states_sequential(inp)
    elif impl == "parallel":
        h = scan_mod.scan_states_parallel(inp, chunk)
    else:
        raise DomainError(f"unknown scan impl {impl!r}")
    y = scan_mod.readout(h, inp)
    uv, dv, av = u.value, delta.value, a.value
    bv, cv, skv = bsel.value, csel.value, d.value
    _, length, _, _ = inp.dims

    def vjp(gy):
        abar = np.exp(dv[..., None] * av)  # [B,L,E,N]
        grad_h = np.empty_like(h)
        carry = np.zeros_like(h[:, 0])
        for t in reversed(range(length)):
            gt = gy[:, t, :, None] * cv[:, t, None, :] + carry
            grad_h[:, t] = gt
            carry = abar[:, t] * gt  # reverse recurrence g_{l-1} += Abar_l * g_l
        hprev = np.concatenate([np.zeros_like(h[:, :1]), h[:, :-1]], axis=1)
        gabar = grad_h * hprev
        gu = gy * skv + np.einsum("blen,ble,bln->ble", grad_h, dv, bv)
        gdelta = np.einsum("blen,en,blen->ble", gabar, av, abar) + np.einsum(
            "blen,bln,ble->ble", grad_h, bv, uv
        )
        ga = np.einsum("blen,ble,blen->en", gabar, dv, abar)
        gbsel = np.einsum("blen,ble,ble->bln", grad_h, dv, uv)
        gcsel = np.einsum("blen,ble->bln", h, gy)
        gd = np.einsum("ble,ble->e", gy, uv)
        return gu, gdelta, ga, gbsel, gcsel, gd

    def forward(uu, dd, aa, bb, cc, sk):
        fresh = scan_mod.SsmInputs(uu, dd, aa, bb, cc, sk)
        if impl == "sequential":
            return scan_mod.selective_scan_sequential(fresh)
        return scan_mod.selective_scan_parallel(fresh, chunk)

    return _record("selective_scan", (u, delta, a, bsel, csel, d), y, vjp, forward)


# ---------------------------------------------------------------------------
# finite differences


def finite_diff_check(
    f,
    params,
    eps: float = 1e-4,
    num_coords: int = 200,
    seed: int = 0,
) -> float:
    """Compare reverse-mode gradients of ``f()`` against central differences.

    ``f`` must be a zero-argument callable returning a scalar Variable and
    depending on the parameters only through their current ``.value``.
    ``params`` maps names to Variables. Up to ``num_coords`` coordinates are
    sampled without replacement across the concatenated parameter space.
    Returns the largest relative error |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
    """
    params = dict(params)
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    grads = {name: np.array(p.grad) for name, p in params.items()}

    names = sorted(params)
    sizes = np.array([params[n].value.size for n in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    count = min(num_coords, total)
    flat_choices = rng.choice(total, size=count, replace=False)
    bounds = np.cumsum(sizes)

    def eval_loss() -> float:
        out = f()
        return float(out.value)

    worst = 0.0
    for flat in sorted(int(i) for i in flat_choices):
        which = int(np.searchsorted(bounds, flat, side="right"))
        name = names[which]
        idx = flat - (int(bounds[which - 1]) if which else 0)
        p = params[name]
        orig = p.value.flat[idx]
        p.value.flat[idx] = orig + eps
        f_plus = eval_loss()
        p.value.flat[idx] = orig - eps
        f_minus = eval_loss()
        p.value.flat[idx] = orig
        fd = (f_plus - f_minus) / (2.0 * eps)
        ad = float(grads[name].flat[idx])
        rel = abs(ad - fd) / max(1.0, abs(ad), abs(fd))
        worst = max(worst, rel)
    return worst

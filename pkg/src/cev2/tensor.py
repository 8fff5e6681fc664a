"""Rank-4 tensors, a reverse-mode tape, and the differentiable kernels the
network blocks compose.

Data lives in float64 numpy arrays laid out (batch, channels, height, width).
Ops record backward rules onto the innermost active ``Tape``; ``backward``
replays the rules last-to-first and fills the ``grad`` slots of every tensor
that asked for one. ``finite_diff_check`` is the central-difference oracle the
test suite and the ``gradcheck`` CLI command run against the analytic path.

Kernels are vectorized but deliberately simple: no FFT/Winograd tricks, no
fusion, single-threaded numpy. Channel vectors (per-channel biases, pooled
statistics, gate logits) are ordinary tensors with H = W = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, expit

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A dense (N, C, H, W) array of float64 with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        if arr.ndim != 4:
            raise ValueError(f"tensor must be rank-4 (N,C,H,W), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"tensor dims must all be >= 1, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def numel(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            # copy: g may alias a downstream grad buffer
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape))


def full(shape, value: float) -> Tensor:
    return Tensor(np.full(shape, float(value)))


def ones_like(t: Tensor) -> Tensor:
    return Tensor(np.ones_like(t.data))


def zeros_like(t: Tensor) -> Tensor:
    return Tensor(np.zeros_like(t.data))


def channel_vector(values) -> Tensor:
    """Wrap a 1-D sequence as a (1, C, 1, 1) tensor."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    return Tensor(arr.reshape(1, arr.size, 1, 1))


# ---------------------------------------------------------------------------
# Tape


class Tape:
    """Ordered record of backward rules.

    Recording order is the op execution order, which is deterministic for a
    fixed program; ``backward`` replays it reversed, exactly once.
    """

    def __init__(self):
        self._rules: list[Callable[[], None]] = []
        self._consumed = False

    def record(self, rule: Callable[[], None]) -> None:
        self._rules.append(rule)

    def __len__(self) -> int:
        return len(self._rules)

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPES.pop()
        return False


_TAPES: list[Tape] = []


def record_op(outs, inputs: Sequence[Tensor], rule: Callable[[], None]) -> None:
    """Attach a backward rule to the active tape if any input tracks grads."""
    if not _TAPES:
        return
    if not any(t.requires_grad for t in inputs):
        return
    if isinstance(outs, Tensor):
        outs.requires_grad = True
    else:
        for o in outs:
            o.requires_grad = True
    _TAPES[-1].record(rule)


def backward(tape: Tape, loss: Tensor) -> None:
    """Seed d(loss)/d(loss) = 1 and replay the tape reversed.

    Gradients accumulate into every tensor that requested them; the tape is
    consumed and cannot be replayed twice.
    """
    if loss.shape != (1, 1, 1, 1):
        raise ValueError(f"loss must be scalar (1,1,1,1), got shape {loss.shape}")
    if tape._consumed:
        raise RuntimeError("tape already consumed by a previous backward()")
    tape._consumed = True
    loss.accumulate_grad(np.ones((1, 1, 1, 1)))
    for rule in reversed(tape._rules):
        rule()


# ---------------------------------------------------------------------------
# Convolution


@dataclass(frozen=True)
class ConvSpec:
    """Static shape contract of one convolution.

    groups == in_channels == out_channels is a depthwise convolution;
    1x1 kernel with groups == 1 is a pointwise convolution.
    """

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        for field in ("in_channels", "out_channels", "kernel_h", "kernel_w", "stride", "groups"):
            if getattr(self, field) < 1:
                raise ValueError(f"ConvSpec.{field} must be >= 1, got {getattr(self, field)}")
        if self.padding < 0:
            raise ValueError(f"ConvSpec.padding must be >= 0, got {self.padding}")
        if self.in_channels % self.groups != 0:
            raise ValueError(
                f"ConvSpec.in_channels {self.in_channels} not divisible by groups {self.groups}")
        if self.out_channels % self.groups != 0:
            raise ValueError(
                f"ConvSpec.out_channels {self.out_channels} not divisible by groups {self.groups}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    """Grouped 2-D convolution (cross-correlation) with zero padding.

    weight is (out_channels, in_channels/groups, kernel_h, kernel_w); bias is a
    channel vector or None. Output spatial dims follow the usual
    floor((H + 2p - k)/s) + 1 rule.
    """
    N, C, H, W = x.shape
    if C != spec.in_channels:
        raise ValueError(f"conv2d: input has {C} channels, spec.in_channels is {spec.in_channels}")
    G, s, p = spec.groups, spec.stride, spec.padding
    O, KH, KW = spec.out_channels, spec.kernel_h, spec.kernel_w
    cg, og = C // G, O // G
    if weight.shape != (O, cg, KH, KW):
        raise ValueError(
            f"conv2d: weight shape {weight.shape} != expected {(O, cg, KH, KW)} "
            f"(out_channels, in_channels/groups, kernel_h, kernel_w)")
    if bias is not None and bias.shape != (1, O, 1, 1):
        raise ValueError(f"conv2d: bias shape {bias.shape} != expected {(1, O, 1, 1)}")

    Hp, Wp = H + 2 * p, W + 2 * p
    H2 = (Hp - KH) // s + 1
    W2 = (Wp - KW) // s + 1
    if Hp < KH or Wp < KW:
        raise ValueError(
            f"conv2d: kernel {KH}x{KW} larger than padded input {Hp}x{Wp}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    depthwise = G == C and cg == 1 and og == 1

    # kernel-offset accumulation; dense and depthwise cases route to BLAS /
    # broadcast multiplies, any other grouping takes the einsum path
    if G == 1:
        w2 = weight.data
        acc = np.zeros((N, H2, W2, O))
        for i in range(KH):
            hi = i + s * (H2 - 1) + 1
            for j in range(KW):
                wj = j + s * (W2 - 1) + 1
                acc += np.tensordot(xp[:, :, i:hi:s, j:wj:s], w2[:, :, i, j], axes=((1,), (1,)))
        out_data = np.ascontiguousarray(acc.transpose(0, 3, 1, 2))
    elif depthwise:
        wv = weight.data.reshape(C, KH, KW)
        acc = np.zeros((N, C, H2, W2))
        for i in range(KH):
            hi = i + s * (H2 - 1) + 1
            for j in range(KW):
                wj = j + s * (W2 - 1) + 1
                acc += xp[:, :, i:hi:s, j:wj:s] * wv[None, :, i, j, None, None]
        out_data = acc
    else:
        xg = xp.reshape(N, G, cg, Hp, Wp)
        wg = weight.data.reshape(G, og, cg, KH, KW)
        acc = np.zeros((N, G, og, H2, W2))
        for i in range(KH):
            hi = i + s * (H2 - 1) + 1
            for j in range(KW):
                wj = j + s * (W2 - 1) + 1
                acc += np.einsum("ngchw,goc->ngohw", xg[:, :, :, i:hi:s, j:wj:s],
                                 wg[:, :, :, i, j], optimize=True)
        out_data = acc.reshape(N, O, H2, W2)
    if bias is not None:
        out_data = out_data + bias.data.reshape(1, O, 1, 1)
    out = Tensor(out_data)

    def rule():
        g = out.grad
        if g is None:
            return
        need_w = weight.requires_grad
        need_x = x.requires_grad
        gxp = np.zeros((N, C, Hp, Wp)) if need_x else None
        if G == 1:
            w2 = weight.data
            gw = np.zeros((O, C, KH, KW)) if need_w else None
            for i in range(KH):
                hi = i + s * (H2 - 1) + 1
                for j in range(KW):
                    wj = j + s * (W2 - 1) + 1
                    if need_w:
                        gw[:, :, i, j] = np.tensordot(g, xp[:, :, i:hi:s, j:wj:s],
                                                      axes=((0, 2, 3), (0, 2, 3)))
                    if need_x:
                        gxp[:, :, i:hi:s, j:wj:s] += np.tensordot(
                            g, w2[:, :, i, j], axes=((1,), (0,))).transpose(0, 3, 1, 2)
            if need_w:
                weight.accumulate_grad(gw)
        elif depthwise:
            wv = weight.data.reshape(C, KH, KW)
            gw = np.zeros((C, KH, KW)) if need_w else None
            for i in range(KH):
                hi = i + s * (H2 - 1) + 1
                for j in range(KW):
                    wj = j + s * (W2 - 1) + 1
                    if need_w:
                        gw[:, i, j] = (g * xp[:, :, i:hi:s, j:wj:s]).sum(axis=(0, 2, 3))
                    if need_x:
                        gxp[:, :, i:hi:s, j:wj:s] += g * wv[None, :, i, j, None, None]
            if need_w:
                weight.accumulate_grad(gw.reshape(O, cg, KH, KW))
        else:
            xg = xp.reshape(N, G, cg, Hp, Wp)
            wg = weight.data.reshape(G, og, cg, KH, KW)
            gg = g.reshape(N, G, og, H2, W2)
            gw = np.zeros((G, og, cg, KH, KW)) if need_w else None
            gxg = gxp.reshape(N, G, cg, Hp, Wp) if need_x else None
            for i in range(KH):
                hi = i + s * (H2 - 1) + 1
                for j in range(KW):
                    wj = j + s * (W2 - 1) + 1
                    if need_w:
                        gw[:, :, :, i, j] = np.einsum(
                            "ngchw,ngohw->goc", xg[:, :, :, i:hi:s, j:wj:s], gg, optimize=True)
                    if need_x:
                        gxg[:, :, :, i:hi:s, j:wj:s] += np.einsum(
                            "ngohw,goc->ngchw", gg, wg[:, :, :, i, j], optimize=True)
            if need_w:
                weight.accumulate_grad(gw.reshape(O, cg, KH, KW))
        if need_x:
            gx = gxp if not p else gxp[:, :, p:Hp - p, p:Wp - p]
            x.accumulate_grad(gx)
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)).reshape(1, O, 1, 1))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    record_op(out, inputs, rule)
    return out


# ---------------------------------------------------------------------------
# Pooling / upsampling


def pool(x: Tensor, kind: str, window: int = 0, stride: int = 0) -> Tensor:
    """global-avg / global-max reduce each channel map to 1x1; window-max is a
    non-overlapping max (window must equal stride) with edge windows truncated
    (ceil-mode output dims)."""
    N, C, H, W = x.shape
    if kind == "global-avg":
        out = Tensor(x.data.mean(axis=(2, 3), keepdims=True))

        def rule():
            g = out.grad
            if g is None or not x.requires_grad:
                return
            x.accumulate_grad(np.broadcast_to(g / (H * W), x.shape))

        record_op(out, (x,), rule)
        return out

    if kind == "global-max":
        flat = x.data.reshape(N, C, H * W)
        idx = flat.argmax(axis=2)
        out = Tensor(np.take_along_axis(flat, idx[:, :, None], axis=2).reshape(N, C, 1, 1))

        def rule():
            g = out.grad
            if g is None or not x.requires_grad:
                return
            gflat = np.zeros((N, C, H * W))
            np.put_along_axis(gflat, idx[:, :, None], g.reshape(N, C, 1), axis=2)
            x.accumulate_grad(gflat.reshape(N, C, H, W))

        record_op(out, (x,), rule)
        return out

    if kind == "window-max":
        if window < 1 or window != stride:
            raise ValueError(f"window-max needs window == stride >= 1, got {window}/{stride}")
        if window > H and window > W:
            raise ValueError(
                f"window-max window {window} exceeds both spatial dims ({H}, {W}); "
                "use global-max for a global reduction")
        k = window
        Ho, Wo = -(-H // k), -(-W // k)
        ph, pw = Ho * k - H, Wo * k - W
        xpad = (np.pad(x.data, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=-np.inf)
                if ph or pw else x.data)
        win = xpad.reshape(N, C, Ho, k, Wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, Ho, Wo, k * k)
        idx = win.argmax(axis=4)
        out = Tensor(np.take_along_axis(win, idx[..., None], axis=4).reshape(N, C, Ho, Wo))

        def rule():
            g = out.grad
            if g is None or not x.requires_grad:
                return
            gwin = np.zeros((N, C, Ho, Wo, k * k))
            np.put_along_axis(gwin, idx[..., None], g.reshape(N, C, Ho, Wo, 1), axis=4)
            gpad = (gwin.reshape(N, C, Ho, Wo, k, k).transpose(0, 1, 2, 4, 3, 5)
                    .reshape(N, C, Ho * k, Wo * k))
            x.accumulate_grad(gpad[:, :, :H, :W])

        record_op(out, (x,), rule)
        return out

    raise ValueError(f"unknown pool kind {kind!r}")


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Replicate each cell into a factor x factor block."""
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    N, C, H, W = x.shape
    f = factor
    out = Tensor(x.data.repeat(f, axis=2).repeat(f, axis=3))

    def rule():
        g = out.grad
        if g is None or not x.requires_grad:
            return
        x.accumulate_grad(g.reshape(N, C, H, f, W, f).sum(axis=(3, 5)))

    record_op(out, (x,), rule)
    return out


def upsample_to(x: Tensor, target_h: int, target_w: int) -> Tensor:
    """Nearest-neighbor resize to (target_h, target_w); output cell (i, j)
    reads source cell (floor(i*h/target_h), floor(j*w/target_w))."""
    N, C, H, W = x.shape
    if target_h < H or target_w < W:
        raise ValueError(
            f"upsample_to target ({target_h}, {target_w}) smaller than input ({H}, {W})")
    rows = (np.arange(target_h) * H) // target_h
    cols = (np.arange(target_w) * W) // target_w
    out = Tensor(x.data[:, :, rows][:, :, :, cols])

    def rule():
        g = out.grad
        if g is None or not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None), slice(None), rows[:, None], cols[None, :]), g)
        x.accumulate_grad(gx)

    record_op(out, (x,), rule)
    return out


# ---------------------------------------------------------------------------
# Elementwise


def activation(x: Tensor, kind: str) -> Tensor:
    """relu | gelu | sigmoid | silu, elementwise. gelu is the exact
    Gaussian-CDF form x*Phi(x), not the tanh approximation."""
    d = x.data
    if kind == "relu":
        out = Tensor(np.maximum(d, 0.0))
        local = (d > 0.0).astype(np.float64)
    elif kind == "sigmoid":
        sig = expit(d)
        out = Tensor(sig)
        local = sig * (1.0 - sig)
    elif kind == "silu":
        sig = expit(d)
        out = Tensor(d * sig)
        local = sig * (1.0 + d * (1.0 - sig))
    elif kind == "gelu":
        phi = 0.5 * (1.0 + erf(d * _INV_SQRT2))
        out = Tensor(d * phi)
        local = phi + d * np.exp(-0.5 * d * d) * _INV_SQRT2PI
    else:
        raise ValueError(f"unknown activation kind {kind!r}")

    def rule():
        g = out.grad
        if g is None or not x.requires_grad:
            return
        x.accumulate_grad(g * local)

    record_op(out, (x,), rule)
    return out


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    """add | mul with equal shapes, or b as an (N,C,1,1) channel vector
    broadcast across a's spatial positions."""
    if kind not in ("add", "mul"):
        raise ValueError(f"unknown elementwise kind {kind!r}")
    broadcast = a.shape != b.shape
    if broadcast:
        N, C, _, _ = a.shape
        if b.shape != (N, C, 1, 1):
            raise ValueError(
                f"elementwise: shapes {a.shape} and {b.shape} incompatible; "
                f"second operand must match or be ({N}, {C}, 1, 1)")
    out = Tensor(a.data + b.data if kind == "add" else a.data * b.data)

    def rule():
        g = out.grad
        if g is None:
            return
        if kind == "add":
            if a.requires_grad:
                a.accumulate_grad(g)
            if b.requires_grad:
                b.accumulate_grad(g.sum(axis=(2, 3), keepdims=True) if broadcast else g)
        else:
            if a.requires_grad:
                a.accumulate_grad(g * b.data)
            if b.requires_grad:
                gb = g * a.data
                b.accumulate_grad(gb.sum(axis=(2, 3), keepdims=True) if broadcast else gb)

    record_op(out, (a, b), rule)
    return out


def negate(x: Tensor) -> Tensor:
    out = Tensor(-x.data)

    def rule():
        g = out.grad
        if g is None or not x.requires_grad:
            return
        x.accumulate_grad(-g)

    record_op(out, (x,), rule)
    return out


def sum_all(x: Tensor) -> Tensor:
    """Reduce every entry to a scalar (1,1,1,1) tensor."""
    out = Tensor(np.full((1, 1, 1, 1), x.data.sum()))

    def rule():
        g = out.grad
        if g is None or not x.requires_grad:
            return
        x.accumulate_grad(np.full_like(x.data, g.reshape(-1)[0]))

    record_op(out, (x,), rule)
    return out


# ---------------------------------------------------------------------------
# Channel split / concat


def channel_split4(x: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Split into four equal channel quarters; part i holds channels
    [i*C/4, (i+1)*C/4)."""
    N, C, H, W = x.shape
    if C % 4 != 0:
        raise ValueError(f"channel_split4: channel count {C} not divisible by 4")
    q = C // 4
    parts = tuple(Tensor(x.data[:, i * q:(i + 1) * q].copy()) for i in range(4))

    def rule():
        if not x.requires_grad:
            return
        chunks = [p.grad if p.grad is not None else np.zeros((N, q, H, W)) for p in parts]
        x.accumulate_grad(np.concatenate(chunks, axis=1))

    record_op(parts, (x,), rule)
    return parts


def channel_concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel axis; exact inverse of channel_split4."""
    if not parts:
        raise ValueError("channel_concat: need at least one part")
    n, _, h, w = parts[0].shape
    for p in parts[1:]:
        if p.shape[0] != n or p.shape[2:] != (h, w):
            raise ValueError(
                f"channel_concat: part shape {p.shape} incompatible with {parts[0].shape}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    offsets = np.cumsum([0] + [p.shape[1] for p in parts])

    def rule():
        g = out.grad
        if g is None:
            return
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p.accumulate_grad(g[:, lo:hi])

    record_op(out, tuple(parts), rule)
    return out


# ---------------------------------------------------------------------------
# Batch normalization


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: Tensor,
               running_var: Tensor, mode: str, momentum: float = 0.9,
               eps: float = 1e-3) -> Tensor:
    """Per-channel batch norm.

    train mode normalizes by biased batch statistics and folds them into the
    running stats with the given momentum; eval mode normalizes by the running
    stats (which start at mean 0 / var 1, so eval before any train step is
    well defined). The running-stat update is a side effect, not part of the
    differentiated graph.
    """
    N, C, H, W = x.shape
    for name, t in (("gamma", gamma), ("beta", beta)):
        if t.shape != (1, C, 1, 1):
            raise ValueError(f"batch_norm: {name} shape {t.shape} != expected {(1, C, 1, 1)}")
    if mode == "train":
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
        var = x.data.var(axis=(0, 2, 3), keepdims=True)
        running_mean.data[...] = momentum * running_mean.data + (1.0 - momentum) * mu
        running_var.data[...] = momentum * running_var.data + (1.0 - momentum) * var
    elif mode == "eval":
        mu = running_mean.data.copy()
        var = running_var.data.copy()
    else:
        raise ValueError(f"unknown batch_norm mode {mode!r}")

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gamma.data + beta.data)

    def rule():
        g = out.grad
        if g is None:
            return
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3), keepdims=True))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=(0, 2, 3), keepdims=True))
        if x.requires_grad:
            dxhat = g * gamma.data
            if mode == "train":
                # batch statistics depend on x, so the mean/var paths feed back
                dx = inv * (dxhat
                            - dxhat.mean(axis=(0, 2, 3), keepdims=True)
                            - xhat * (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True))
            else:
                dx = dxhat * inv
            x.accumulate_grad(dx)

    record_op(out, (x, gamma, beta), rule)
    return out


# ---------------------------------------------------------------------------
# Finite-difference oracle


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-3,
                      max_coords: int | None = None,
                      rng: np.random.Generator | None = None) -> float:
    """Compare the tape gradient of scalar-valued f against central
    differences on x.

    Returns max over checked coordinates of |analytic - numeric| divided by
    max(1, |analytic|, |numeric|) (the guard keeps near-zero derivatives from
    blowing up the ratio). f must be deterministic. max_coords, when given,
    subsamples coordinates for large tensors.
    """
    x.requires_grad = True
    x.zero_grad()
    tape = Tape()
    with tape:
        y = f(x)
    if y.shape != (1, 1, 1, 1):
        raise ValueError(f"finite_diff_check: f must return a scalar tensor, got {y.shape}")
    backward(tape, y)
    analytic = (x.grad if x.grad is not None else np.zeros_like(x.data)).reshape(-1).copy()

    flat = x.data.reshape(-1)
    n = flat.size
    if max_coords is not None and max_coords < n:
        if rng is None:
            rng = np.random.default_rng(0)
        coords = rng.choice(n, size=max_coords, replace=False)
    else:
        coords = range(n)

    worst = 0.0
    for k in coords:
        orig = flat[k]
        flat[k] = orig + step
        fp = f(x).item()
        flat[k] = orig - step
        fm = f(x).item()
        flat[k] = orig
        numeric = (fp - fm) / (2.0 * step)
        a = analytic[k]
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        worst = max(worst, err)
    return worst

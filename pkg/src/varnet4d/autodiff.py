"""Dense-tensor computation graph with reverse-mode differentiation.

Every op's backward rule is written in terms of the public ops, so running
a backward pass with ``create_graph=True`` emits ordinary graph nodes and
the resulting gradients can be differentiated again.  This is what lets a
training loss backpropagate through the inner cost gradient consumed by
the iterative solver.

Conventions:
  * float64 everywhere;
  * convolution inputs are (B, C, H, W), kernels (C_out, C_in, K, K) with
    K odd, implicit K//2 padding (circular by default) and integer stride;
  * reductions and accumulations use a fixed summation order, so graph
    evaluation is bit-deterministic for identical inputs.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import backend


class ShapeError(ValueError):
    """Operand shapes are invalid for the requested op."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def enable_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = True
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class GraphNode:
    """One recorded op: kind tag, parent tensors, and a backward closure.

    The closure holds whatever forward inputs the backward rule needs; it
    is dropped (and the node marked freed) once consumed by a backward
    pass that does not retain the graph.
    """

    __slots__ = ("kind", "parents", "backward_fn", "freed")

    def __init__(self, kind: str, parents: tuple["Tensor", ...], backward_fn: Callable):
        self.kind = kind
        self.parents = parents
        self.backward_fn = backward_fn
        self.freed = False

    def release(self) -> None:
        self.freed = True
        self.backward_fn = None
        self.parents = ()


class Tensor:
    """A float64 array plus graph linkage.

    ``grad`` is populated on requires-grad leaves by :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "node", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and min(arr.shape) < 1:
            raise ShapeError(f"tensor extents must all be >= 1, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node: GraphNode | None = None
        self.grad: Tensor | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor) and other.data.ndim > 0:
            return mul(self, other)
        return smul(self, other)

    __rmul__ = __mul__


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, kind: str, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = GraphNode(kind, parents, backward_fn)
    return out


def _check_same_shape(kind: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{kind}: operand shapes differ, {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise and scalar ops

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)

    def bw(g: Tensor, needs):
        return (g if needs[0] else None, g if needs[1] else None)

    return _make(a.data + b.data, "add", (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)

    def bw(g: Tensor, needs):
        return (g if needs[0] else None, smul(g, -1.0) if needs[1] else None)

    return _make(a.data - b.data, "sub", (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("elementwise-mul", a, b)

    def bw(g: Tensor, needs):
        ga = mul(g, b) if needs[0] else None
        gb = mul(g, a) if needs[1] else None
        return (ga, gb)

    return _make(a.data * b.data, "elementwise-mul", (a, b), bw)


def smul(x: Tensor, s) -> Tensor:
    """Scale by a python float or by a scalar (size-1) tensor."""
    if isinstance(s, Tensor):
        if s.data.size != 1:
            raise ShapeError(f"scalar-mul: scale must be size 1, got shape {s.data.shape}")

        def bw(g: Tensor, needs):
            gx = smul(g, s) if needs[0] else None
            gs = sum_(mul(g, x)) if needs[1] else None
            return (gx, gs)

        return _make(x.data * s.data, "scalar-mul", (x, s), bw)

    c = float(s)

    def bwf(g: Tensor, needs):
        return (smul(g, c) if needs[0] else None,)

    return _make(x.data * c, "scalar-mul", (x,), bwf)


def square(x: Tensor) -> Tensor:
    def bw(g: Tensor, needs):
        return (smul(mul(g, x), 2.0),)

    return _make(x.data * x.data, "square", (x,), bw)


def one_minus(x: Tensor) -> Tensor:
    def bw(g: Tensor, needs):
        return (smul(g, -1.0),)

    return _make(1.0 - x.data, "one-minus", (x,), bw)


def relu(x: Tensor) -> Tensor:
    mask = Tensor((x.data > 0).astype(np.float64))

    def bw(g: Tensor, needs):
        return (mul(g, mask),)

    return _make(np.maximum(x.data, 0.0), "relu", (x,), bw)


def tanh(x: Tensor) -> Tensor:
    def bw(g: Tensor, needs):
        y = tanh(x)  # recomputed so second derivatives see the x dependence
        return (mul(g, one_minus(square(y))),)

    return _make(np.tanh(x.data), "tanh", (x,), bw)


def sigmoid(x: Tensor) -> Tensor:
    def bw(g: Tensor, needs):
        y = sigmoid(x)
        return (mul(g, mul(y, one_minus(y))),)

    data = 1.0 / (1.0 + np.exp(-x.data))
    return _make(data, "sigmoid", (x,), bw)


# ---------------------------------------------------------------------------
# reductions and broadcasts

def sum_(x: Tensor) -> Tensor:
    def bw(g: Tensor, needs):
        return (broadcast_to(g, x.data.shape),)

    return _make(np.asarray(x.data.sum()), "sum", (x,), bw)


def mean(x: Tensor) -> Tensor:
    n = x.data.size

    def bw(g: Tensor, needs):
        return (smul(broadcast_to(g, x.data.shape), 1.0 / n),)

    return _make(np.asarray(x.data.mean()), "mean", (x,), bw)


def broadcast_to(x: Tensor, shape) -> Tensor:
    if x.data.size != 1:
        raise ShapeError(f"broadcast: only scalars broadcast, got shape {x.data.shape}")

    def bw(g: Tensor, needs):
        return (_reshape_scalar(sum_(g), x.data.shape),)

    return _make(np.broadcast_to(x.data, shape).copy(), "broadcast", (x,), bw)


def _reshape_scalar(g: Tensor, shape) -> Tensor:
    if g.data.shape == tuple(shape):
        return g

    def bw(gg: Tensor, needs):
        return (_reshape_scalar(gg, g.data.shape),)

    return _make(g.data.reshape(shape), "reshape", (g,), bw)


def masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean of x over the True cells of a boolean mask (not differentiable
    in the mask)."""
    m = np.asarray(mask, dtype=bool)
    if m.shape != x.data.shape:
        raise ShapeError(f"masked-mean: mask shape {m.shape} != tensor shape {x.data.shape}")
    count = int(m.sum())
    if count == 0:
        raise ValueError("masked-mean over an empty mask")
    coeff = Tensor(m.astype(np.float64) / count)

    def bw(g: Tensor, needs):
        return (smul(coeff, g),)

    return _make(np.asarray(x.data[m].sum() / count), "masked-mean", (x,), bw)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")

    def bw(g: Tensor, needs):
        ga = matmul(g, transpose(b)) if needs[0] else None
        gb = matmul(transpose(a), g) if needs[1] else None
        return (ga, gb)

    return _make(a.data @ b.data, "matmul", (a, b), bw)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got {x.data.shape}")

    def bw(g: Tensor, needs):
        return (transpose(g),)

    return _make(np.ascontiguousarray(x.data.T), "transpose", (x,), bw)


# ---------------------------------------------------------------------------
# convolution family
#
# Three mutually adjoint primitives. Their backward rules only use each
# other, which makes arbitrary-order differentiation work for any stride
# and both padding modes:
#   fwd(x, w)      d/dx -> igrad(g, w)      d/dw -> wgrad(x, g)
#   igrad(g, w)    d/dg -> fwd(z, w)        d/dw -> wgrad(z, g)
#   wgrad(x, g)    d/dx -> igrad(g, z)      d/dg -> fwd(x, z)

def _check_conv(kind: str, x: Tensor, w: Tensor) -> None:
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"{kind}: expected 4-D input/kernel, got {x.data.shape}, {w.data.shape}")
    if w.data.shape[2] != w.data.shape[3] or w.data.shape[2] % 2 == 0:
        raise ShapeError(f"{kind}: kernels must be square and odd-sized, got {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(
            f"{kind}: input has {x.data.shape[1]} channels, kernel expects {w.data.shape[1]}"
        )


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: str = "circular") -> Tensor:
    _check_conv("conv2d", x, w)
    circular = _padding_flag(padding)
    H, W = x.data.shape[2], x.data.shape[3]
    K = w.data.shape[2]

    def bw(g: Tensor, needs):
        gx = conv2d_input_grad(g, w, (H, W), stride, padding) if needs[0] else None
        gw = conv2d_weight_grad(x, g, K, stride, padding) if needs[1] else None
        return (gx, gw)

    return _make(backend.conv2d_fwd(x.data, w.data, stride, circular), "conv2d", (x, w), bw)


def conv2d_input_grad(
    g: Tensor, w: Tensor, hw: tuple[int, int], stride: int = 1, padding: str = "circular"
) -> Tensor:
    circular = _padding_flag(padding)
    H, W = hw
    K = w.data.shape[2]

    def bw(z: Tensor, needs):
        dg = conv2d(z, w, stride, padding) if needs[0] else None
        dw = conv2d_weight_grad(z, g, K, stride, padding) if needs[1] else None
        return (dg, dw)

    data = backend.conv2d_igrad(g.data, w.data, H, W, stride, circular)
    return _make(data, "conv2d-igrad", (g, w), bw)


def conv2d_weight_grad(
    x: Tensor, g: Tensor, K: int, stride: int = 1, padding: str = "circular"
) -> Tensor:
    circular = _padding_flag(padding)
    H, W = x.data.shape[2], x.data.shape[3]

    def bw(z: Tensor, needs):
        dx = conv2d_input_grad(g, z, (H, W), stride, padding) if needs[0] else None
        dg = conv2d(x, z, stride, padding) if needs[1] else None
        return (dx, dg)

    data = backend.conv2d_wgrad(x.data, g.data, K, stride, circular)
    return _make(data, "conv2d-wgrad", (x, g), bw)


def _padding_flag(padding: str) -> bool:
    if padding == "circular":
        return True
    if padding == "zero":
        return False
    raise ValueError(f"conv2d: unknown padding {padding!r} (use 'circular' or 'zero')")


# ---------------------------------------------------------------------------
# spatial stencils, resampling, channel plumbing

def ddx(x: Tensor) -> Tensor:
    """Central difference along the last axis with circular wrap."""

    def bw(g: Tensor, needs):
        return (smul(ddx(g), -1.0),)

    data = 0.5 * (np.roll(x.data, -1, axis=-1) - np.roll(x.data, 1, axis=-1))
    return _make(data, "ddx", (x,), bw)


def ddy(x: Tensor) -> Tensor:
    """Central difference along the second-to-last axis with circular wrap."""

    def bw(g: Tensor, needs):
        return (smul(ddy(g), -1.0),)

    data = 0.5 * (np.roll(x.data, -1, axis=-2) - np.roll(x.data, 1, axis=-2))
    return _make(data, "ddy", (x,), bw)


def spatial_gradient(x: Tensor) -> Tensor:
    """Stack the two circular central-difference components along channels."""
    if x.data.ndim != 4:
        raise ShapeError(f"spatial-gradient: expected 4-D input, got {x.data.shape}")
    return concat([ddx(x), ddy(x)])


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate 4-D tensors along the channel axis (or axis 0 for
    stacking conv kernels by output channel)."""
    parts = list(parts)
    if axis not in (0, 1):
        raise ShapeError(f"concat: axis must be 0 or 1, got {axis}")
    first = parts[0].data.shape
    for p in parts:
        s = p.data.shape
        other = tuple(v for i, v in enumerate(s) if i != axis)
        ref = tuple(v for i, v in enumerate(first) if i != axis)
        if len(s) != 4 or other != ref:
            raise ShapeError(f"concat: incompatible shapes {[q.data.shape for q in parts]}")
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def bw(g: Tensor, needs):
        return tuple(
            channel_slice(g, int(offsets[i]), int(offsets[i + 1]), axis) if needs[i] else None
            for i in range(len(parts))
        )

    return _make(np.concatenate([p.data for p in parts], axis=axis), "concat", tuple(parts), bw)


def channel_slice(x: Tensor, lo: int, hi: int, axis: int = 1) -> Tensor:
    C = x.data.shape[axis]
    if not (0 <= lo < hi <= C):
        raise ShapeError(f"split: range [{lo}, {hi}) invalid for {C} channels")

    def bw(g: Tensor, needs):
        return (channel_pad(g, lo, C, axis),)

    sl = (slice(None),) * axis + (slice(lo, hi),)
    return _make(np.ascontiguousarray(x.data[sl]), "split", (x,), bw)


def split(x: Tensor, sizes: Iterable[int], axis: int = 1) -> tuple[Tensor, ...]:
    """Split along the channel axis into consecutive groups of given sizes."""
    sizes = list(sizes)
    if sum(sizes) != x.data.shape[axis]:
        raise ShapeError(f"split: sizes {sizes} do not cover {x.data.shape[axis]} channels")
    outs, lo = [], 0
    for s in sizes:
        outs.append(channel_slice(x, lo, lo + s, axis))
        lo += s
    return tuple(outs)


def channel_pad(x: Tensor, lo: int, total: int, axis: int = 1) -> Tensor:
    C = x.data.shape[axis]

    def bw(g: Tensor, needs):
        return (channel_slice(g, lo, lo + C, axis),)

    shape = list(x.data.shape)
    shape[axis] = total
    data = np.zeros(shape)
    sl = (slice(None),) * axis + (slice(lo, lo + C),)
    data[sl] = x.data
    return _make(data, "channel-pad", (x,), bw)


def channel_broadcast(b: Tensor, shape) -> Tensor:
    """Broadcast a per-channel vector (C,) over a (B, C, H, W) shape."""
    if b.data.ndim != 1 or len(shape) != 4 or shape[1] != b.data.shape[0]:
        raise ShapeError(f"channel-broadcast: vector {b.data.shape} vs target {tuple(shape)}")

    def bw(g: Tensor, needs):
        return (channel_sum(g),)

    data = np.broadcast_to(b.data[None, :, None, None], shape).copy()
    return _make(data, "channel-broadcast", (b,), bw)


def channel_sum(x: Tensor) -> Tensor:
    """Sum a (B, C, H, W) tensor over batch and space, leaving (C,)."""
    if x.data.ndim != 4:
        raise ShapeError(f"channel-sum: expected 4-D input, got {x.data.shape}")
    shape = x.data.shape

    def bw(g: Tensor, needs):
        return (channel_broadcast(g, shape),)

    return _make(x.data.sum(axis=(0, 2, 3)), "channel-sum", (x,), bw)


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias to a (B, C, H, W) tensor."""
    return add(x, channel_broadcast(b, x.data.shape))


def avg_pool2(x: Tensor) -> Tensor:
    B, C, H, W = x.data.shape
    if H % 2 or W % 2:
        raise ShapeError(f"avg-pool2: spatial dims must be even, got {H}x{W}")

    def bw(g: Tensor, needs):
        return (smul(upsample_nearest2(g), 0.25),)

    data = x.data.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))
    return _make(data, "avg-pool2", (x,), bw)


def upsample_nearest2(x: Tensor) -> Tensor:
    def bw(g: Tensor, needs):
        return (smul(avg_pool2(g), 4.0),)

    data = x.data.repeat(2, axis=2).repeat(2, axis=3)
    return _make(data, "upsample-nearest2", (x,), bw)


def _up1d(a: np.ndarray, axis: int) -> np.ndarray:
    axis = axis % a.ndim
    lo = a
    hi = 0.5 * (a + np.roll(a, -1, axis=axis))
    out = np.stack([lo, hi], axis=axis + 1)
    shape = list(a.shape)
    shape[axis] *= 2
    return out.reshape(shape)


def _up1d_adj(y: np.ndarray, axis: int) -> np.ndarray:
    axis = axis % y.ndim
    shape = list(y.shape)
    shape[axis] //= 2
    shape.insert(axis + 1, 2)
    pairs = y.reshape(shape)
    even = np.take(pairs, 0, axis=axis + 1)
    odd = np.take(pairs, 1, axis=axis + 1)
    return even + 0.5 * (odd + np.roll(odd, 1, axis=axis))


def upsample_linear2(x: Tensor) -> Tensor:
    """2x periodic linear-interpolation upsampling on the two trailing axes."""

    def bw(g: Tensor, needs):
        return (upsample_linear2_adj(g),)

    data = _up1d(_up1d(x.data, axis=-2), axis=-1)
    return _make(data, "upsample-linear2", (x,), bw)


def upsample_linear2_adj(y: Tensor) -> Tensor:
    B, C, H, W = y.data.shape
    if H % 2 or W % 2:
        raise ShapeError(f"upsample-linear2-adj: spatial dims must be even, got {H}x{W}")

    def bw(g: Tensor, needs):
        return (upsample_linear2(g),)

    data = _up1d_adj(_up1d_adj(y.data, axis=-1), axis=-2)
    return _make(data, "upsample-linear2-adj", (y,), bw)


# ---------------------------------------------------------------------------
# generic dispatch (op-kind table)

OP_TABLE: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "elementwise-mul": mul,
    "scalar-mul": smul,
    "matmul": matmul,
    "conv2d": conv2d,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "sum": sum_,
    "mean": mean,
    "square": square,
    "masked-mean": masked_mean,
    "spatial-gradient": spatial_gradient,
    "concat": concat,
    "split": split,
}


def forward_op(kind: str, *inputs, **kwargs):
    """Dispatch an op by kind tag; raises on unknown kinds."""
    try:
        fn = OP_TABLE[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# reverse pass

def _toposort(loss: Tensor, stop_ids: set[int]) -> list[Tensor]:
    """Tensors reachable from loss whose nodes must run, inputs first."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None and id(t) not in stop_ids:
            for p in t.node.parents:
                if p.node is not None and id(p) not in seen:
                    stack.append((p, False))
    return order


def backward(
    loss: Tensor,
    wrt: Sequence[Tensor] | None = None,
    create_graph: bool = False,
    retain_graph: bool | None = None,
):
    """Reverse-mode pass from a scalar loss.

    Without ``wrt``, accumulates into ``.grad`` of every requires-grad leaf
    and returns a {leaf: gradient} map.  With ``wrt``, returns the list of
    gradients w.r.t. those tensors (which may be interior graph nodes) and
    leaves ``.grad`` untouched; traversal stops at the ``wrt`` tensors.

    ``create_graph=True`` makes the produced gradients graph-linked and
    differentiable a second time.  Otherwise the graph is released as it is
    consumed, and a second backward over it raises.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if retain_graph is None:
        retain_graph = create_graph

    wrt_list = list(wrt) if wrt is not None else None
    stop_ids = {id(t) for t in wrt_list} if wrt_list else set()

    if loss.node is None:
        raise ValueError("backward: loss is not connected to a computation graph")
    if loss.node.freed:
        raise RuntimeError(
            "backward: graph already freed by a previous backward "
            "(pass create_graph=True or retain_graph=True on the first call)"
        )

    order = _toposort(loss, stop_ids)

    # a tensor "needs" gradient if it is a requested wrt tensor, or its
    # subtree contains one (wrt mode) / contains a requires-grad leaf
    if wrt_list is None:
        def needs_grad(t: Tensor) -> bool:
            return t.requires_grad
    else:
        needed: set[int] = set(stop_ids)
        for t in order:
            if t.node is not None and id(t) not in stop_ids:
                if any(id(p) in needed for p in t.node.parents):
                    needed.add(id(t))

        def needs_grad(t: Tensor) -> bool:
            return id(t) in needed

    # collect leaves up front: node release during the reverse pass clears
    # parent references
    leaf_map: dict[int, Tensor] = {}
    if wrt_list is None:
        for t in order:
            if t.node is not None and t.node.parents:
                for p in t.node.parents:
                    if p.node is None and p.requires_grad:
                        leaf_map[id(p)] = p

    grads: dict[int, Tensor] = {id(loss): Tensor(np.ones_like(loss.data))}
    ctx = enable_grad() if create_graph else no_grad()
    with ctx:
        for t in reversed(order):
            if t.node is None or id(t) in stop_ids:
                continue
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.node.freed:
                raise RuntimeError(
                    "backward: graph already freed by a previous backward "
                    "(pass create_graph=True or retain_graph=True on the first call)"
                )
            parents = t.node.parents
            needs = tuple(needs_grad(p) for p in parents)
            if any(needs):
                pgrads = t.node.backward_fn(g, needs)
                for p, pg in zip(parents, pgrads):
                    if pg is None:
                        continue
                    if pg.data.shape != p.data.shape:
                        raise ShapeError(
                            f"backward of {t.node.kind}: gradient shape {pg.data.shape} "
                            f"!= parent shape {p.data.shape}"
                        )
                    acc = grads.get(id(p))
                    grads[id(p)] = pg if acc is None else add(acc, pg)
            if not retain_graph:
                t.node.release()

    if wrt_list is not None:
        out = []
        for t in wrt_list:
            g = grads.get(id(t))
            if g is None:
                raise ValueError("backward: a wrt tensor is unreachable from the loss")
            out.append(g)
        return out

    result: dict[Tensor, Tensor] = {}
    for tid, leaf in leaf_map.items():
        g = grads.get(tid)
        if g is None:
            continue
        leaf.grad = g if leaf.grad is None else Tensor(leaf.grad.data + g.data)
        result[leaf] = g
    return result


def finite_diff_gradient(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> Tensor:
    """Central-difference gradient estimate of a scalar-valued pure function.

    Independent of the graph machinery by construction; serves as the
    reference oracle for backward().
    """
    if step <= 0:
        raise ValueError("finite_diff_gradient: step must be > 0")
    base = x.data.copy()
    out = np.zeros_like(base)
    flat = out.reshape(-1)
    src = base.reshape(-1)
    for i in range(src.size):
        orig = src[i]
        src[i] = orig + step
        fp = float(_as_tensor(f(Tensor(base.copy()))).data)
        src[i] = orig - step
        fm = float(_as_tensor(f(Tensor(base.copy()))).data)
        src[i] = orig
        flat[i] = (fp - fm) / (2.0 * step)
    return Tensor(out)

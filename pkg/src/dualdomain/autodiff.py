"""Reverse-mode automatic differentiation over dense float64 arrays.

The engine is deliberately small: a Tensor wraps a numpy array, every
operation records a node on a Tape, and backward() walks the tape in
reverse creation order (which is already topological). The primitive set
is exactly what the generators, feature extractors and losses need:
2-D convolution (stride 1 or 2, zero padding), dense maps, leaky-rectifier
and tanh activations, nearest-neighbour 2x upsampling, elementwise
add/multiply, square root, reductions (sum / mean / mean-square) and the
structural reshape/stack ops.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeMismatchError(ValueError):
    """Raised when two operands have incompatible shapes."""


class NonFiniteInputError(ValueError):
    """Raised when a leaf value contains NaN or infinity."""


class TapeConsumedError(RuntimeError):
    """Raised when backward() is called twice on the same tape."""


class Tape:
    """Records operations in creation order (inputs always precede users)."""

    def __init__(self) -> None:
        self.nodes: list["Tensor"] = []
        self.consumed = False

    def leaf(self, data, name: str = "") -> "Tensor":
        """Create a differentiable leaf bound to this tape."""
        return Tensor(data, tape=self, name=name)


def _check_same_shape(a: "Tensor", b: "Tensor", op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(
            f"{op}: operand shapes {a.data.shape} and {b.data.shape} differ"
        )


class Tensor:
    """A float64 array, optionally linked into a differentiation tape."""

    __array_ufunc__ = None  # keep numpy from hijacking reflected operators

    def __init__(self, data, tape: Tape | None = None, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.name = name
        self._vjps: tuple[tuple["Tensor", Callable], ...] = ()
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteInputError(
                f"leaf '{name or 'value'}' contains non-finite entries"
            )
        if tape is not None:
            tape.nodes.append(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # -- arithmetic sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def sqrt(self) -> "Tensor":
        return sqrt(self)

    def sum(self) -> "Tensor":
        return tsum(self)

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return reshape(self, shape)


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _result(data: np.ndarray, vjps: Iterable[tuple[Tensor, Callable]]) -> Tensor:
    """Build an op result, inheriting the (unique) tape of its parents."""
    vjps = tuple(vjps)
    tape = None
    for parent, _ in vjps:
        if parent.tape is None:
            continue
        if tape is None:
            tape = parent.tape
        elif tape is not parent.tape:
            raise ValueError("operands belong to different tapes")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.tape = tape
    out.name = ""
    out._vjps = vjps if tape is not None else ()
    if tape is not None:
        tape.nodes.append(out)
    return out


# -- elementwise primitives ----------------------------------------------


def add(a, b) -> Tensor:
    """Elementwise a + b; one operand may be scalar-shaped."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        if a.data.size != 1 and b.data.size != 1:
            raise ShapeMismatchError(
                f"add: operand shapes {a.data.shape} and {b.data.shape} differ"
            )
    data = a.data + b.data

    def vjp_a(g):
        return g if a.data.shape == data.shape else np.sum(g).reshape(a.data.shape)

    def vjp_b(g):
        return g if b.data.shape == data.shape else np.sum(g).reshape(b.data.shape)

    return _result(data, [(a, vjp_a), (b, vjp_b)])


def mul(a, b) -> Tensor:
    """Elementwise a * b; one operand may be scalar-shaped."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        if a.data.size != 1 and b.data.size != 1:
            raise ShapeMismatchError(
                f"mul: operand shapes {a.data.shape} and {b.data.shape} differ"
            )
    data = a.data * b.data
    a_val, b_val = a.data, b.data

    def vjp_a(g):
        full = g * b_val
        return full if a_val.shape == data.shape else np.sum(full).reshape(a_val.shape)

    def vjp_b(g):
        full = g * a_val
        return full if b_val.shape == data.shape else np.sum(full).reshape(b_val.shape)

    return _result(data, [(a, vjp_a), (b, vjp_b)])


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    t = np.tanh(x.data)
    return _result(t, [(x, lambda g: g * (1.0 - t * t))])


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0.0
    data = np.where(mask, x.data, slope * x.data)
    return _result(data, [(x, lambda g: g * np.where(mask, 1.0, slope))])


def sqrt(x) -> Tensor:
    """Elementwise square root; inputs must be nonnegative."""
    x = _as_tensor(x)
    if np.any(x.data < 0.0):
        raise ValueError("sqrt: negative input")
    s = np.sqrt(x.data)
    return _result(s, [(x, lambda g: g * (0.5 / s))])


# -- reductions ------------------------------------------------------------


def tsum(x) -> Tensor:
    x = _as_tensor(x)
    shape = x.data.shape
    data = np.array(x.data.sum())
    return _result(data, [(x, lambda g: np.broadcast_to(g, shape).copy())])


def mean(x) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size
    shape = x.data.shape
    data = np.array(x.data.mean())
    return _result(data, [(x, lambda g: np.broadcast_to(g / n, shape).copy())])


def msq(x) -> Tensor:
    """Mean-square reduction: mean(x**2), fused for the hot loss path."""
    x = _as_tensor(x)
    n = x.data.size
    x_val = x.data
    data = np.array(np.mean(x_val * x_val))
    return _result(data, [(x, lambda g: g * (2.0 / n) * x_val)])


# -- structural ops ---------------------------------------------------------


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    old = x.data.shape
    data = x.data.reshape(shape)
    return _result(data, [(x, lambda g: g.reshape(old))])


def stack(parts: Sequence) -> Tensor:
    """Stack same-shaped tensors along a new leading axis."""
    parts = [_as_tensor(p) for p in parts]
    base = parts[0].data.shape
    for p in parts[1:]:
        if p.data.shape != base:
            raise ShapeMismatchError(
                f"stack: part shapes {base} and {p.data.shape} differ"
            )
    data = np.stack([p.data for p in parts])

    def make_vjp(i):
        return lambda g: g[i]

    return _result(data, [(p, make_vjp(i)) for i, p in enumerate(parts)])


# -- network primitives -----------------------------------------------------


def dense(w, x, b=None) -> Tensor:
    """Linear map: w @ x (+ b) for w of shape (out, in) and x of shape (in,)."""
    w, x = _as_tensor(w), _as_tensor(x)
    if w.data.ndim != 2 or x.data.ndim != 1 or w.data.shape[1] != x.data.shape[0]:
        raise ShapeMismatchError(
            f"dense: weight {w.data.shape} incompatible with input {x.data.shape}"
        )
    data = w.data @ x.data
    w_val, x_val = w.data, x.data
    vjps = [
        (w, lambda g: np.outer(g, x_val)),
        (x, lambda g: w_val.T @ g),
    ]
    if b is not None:
        b = _as_tensor(b)
        if b.data.shape != data.shape:
            raise ShapeMismatchError(
                f"dense: bias {b.data.shape} does not match output {data.shape}"
            )
        data = data + b.data
        vjps.append((b, lambda g: g))
    return _result(data, vjps)


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution of x (C,H,W) with w (O,C,kh,kw), zero padding."""
    x, w = _as_tensor(x), _as_tensor(w)
    if stride not in (1, 2):
        raise ValueError(f"conv2d: stride must be 1 or 2, got {stride}")
    if x.data.ndim != 3 or w.data.ndim != 4 or x.data.shape[0] != w.data.shape[1]:
        raise ShapeMismatchError(
            f"conv2d: input {x.data.shape} incompatible with kernel {w.data.shape}"
        )
    c, h, wd = x.data.shape
    o, _, kh, kw = w.data.shape
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise ShapeMismatchError(
            f"conv2d: kernel {w.data.shape} larger than padded input {xp.shape}"
        )
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    # out[o,i,j] = sum_{c,u,v} w[o,c,u,v] * win[c,i,j,u,v]
    data = np.tensordot(w.data, win, axes=([1, 2, 3], [0, 3, 4]))
    w_val = w.data

    def vjp_x(g):
        gx = np.zeros_like(xp)
        for u in range(kh):
            for v in range(kw):
                gx[:, u : u + stride * ho : stride, v : v + stride * wo : stride] += (
                    np.tensordot(w_val[:, :, u, v], g, axes=([0], [0]))
                )
        if padding:
            gx = gx[:, padding:-padding, padding:-padding]
        return gx

    def vjp_w(g):
        return np.tensordot(g, win, axes=([1, 2], [1, 2]))

    vjps = [(x, vjp_x), (w, vjp_w)]
    if b is not None:
        b = _as_tensor(b)
        if b.data.shape != (o,):
            raise ShapeMismatchError(
                f"conv2d: bias {b.data.shape} does not match {o} output channels"
            )
        data = data + b.data[:, None, None]
        vjps.append((b, lambda g: g.sum(axis=(1, 2))))
    return _result(data, vjps)


def upsample2x(x) -> Tensor:
    """Nearest-neighbour 2x upsampling of the two trailing spatial axes."""
    x = _as_tensor(x)
    if x.data.ndim < 2:
        raise ShapeMismatchError(
            f"upsample2x: need at least 2 dims, got shape {x.data.shape}"
        )
    data = np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1)
    shape = x.data.shape

    def vjp(g):
        lead = shape[:-2]
        h, w = shape[-2], shape[-1]
        return g.reshape(*lead, h, 2, w, 2).sum(axis=(-3, -1))

    return _result(data, [(x, vjp)])


# -- backward propagation ----------------------------------------------------


class Gradients:
    """Result of a backward pass: maps leaves to gradient arrays."""

    def __init__(self, table: dict):
        self._table = table

    def wrt(self, leaf: Tensor) -> np.ndarray:
        """Gradient w.r.t. `leaf`; zeros if the leaf did not influence the root."""
        g = self._table.get(leaf)
        if g is None:
            return np.zeros_like(leaf.data)
        return np.asarray(g).reshape(leaf.data.shape)

    def __getitem__(self, leaf: Tensor) -> np.ndarray:
        return self.wrt(leaf)


def backward(root: Tensor) -> Gradients:
    """Propagate d(root)/d(node) through the root's tape.

    The root must be scalar-shaped and recorded on a tape; the tape is
    consumed by the pass and cannot be walked twice.
    """
    tape = root.tape
    if tape is None:
        raise ValueError("backward: root is not recorded on any tape")
    if tape.consumed:
        raise TapeConsumedError("backward: tape has already been consumed")
    if root.data.size != 1:
        raise ValueError(f"backward: root must be scalar, got shape {root.data.shape}")
    tape.consumed = True
    table: dict[Tensor, np.ndarray] = {root: np.ones_like(root.data)}
    for node in reversed(tape.nodes):
        g = table.get(node)
        if g is None:
            continue
        for parent, vjp in node._vjps:
            if parent.tape is not tape:
                continue
            contrib = vjp(g)
            prev = table.get(parent)
            table[parent] = contrib if prev is None else prev + contrib
    return Gradients(table)

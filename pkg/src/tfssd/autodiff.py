"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps a float64 or complex128 ndarray plus the tape edges that
produced it.  Calling ``backward()`` on a scalar walks the tape once in
reverse topological order and accumulates gradients into every reachable
tensor.

Gradients of complex tensors follow the split-real convention: the stored
gradient is dL/d(real part) + 1j * dL/d(imag part).  For holomorphic maps
this equals the conjugate of the usual Wirtinger derivative times the
upstream gradient, which is exactly what the chain rule below produces.
"""

from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import InvalidArgumentError, ShapeMismatchError

__all__ = [
    "Tensor",
    "tensor",
    "as_tensor",
    "constant",
    "make_tensor_node",
    "concat",
    "slice_axis",
    "take_rows",
    "transpose",
    "reshape",
    "tsum",
    "tmean",
    "exp",
    "log",
    "sqrt",
    "sigmoid",
    "softplus",
    "silu",
    "tanh",
    "relu",
    "creal",
    "cimag",
    "cabs2",
    "rfft",
    "irfft",
    "conv1d_depthwise",
    "layer_norm",
    "softmax",
    "logsumexp",
    "gradient",
    "finite_diff_check",
    "FiniteDiffReport",
]


def _coerce(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype.kind == "c":
        return arr.astype(np.complex128, copy=False)
    return arr.astype(np.float64, copy=False)


class Tensor:
    """Node of the differentiation tape.

    ``_edges`` holds (parent, vjp) pairs where vjp maps the gradient at this
    node to the gradient contribution for that parent.  Leaves have no edges.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_edges")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _coerce(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._edges: tuple = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_complex(self) -> bool:
        return self.data.dtype.kind == "c"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def reset_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __neg__(self):
        return neg(self)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    # -- tape walk ----------------------------------------------------------
    def backward(self) -> None:
        """Accumulate gradients of this scalar into all reachable tensors."""
        if self.data.shape != ():
            raise InvalidArgumentError(
                f"backward() needs a scalar, got shape {self.data.shape}"
            )
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._edges:
                if id(parent) not in seen and parent._edges:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            g = node.grad
            if g is None:
                continue
            for parent, vjp in node._edges:
                contrib = vjp(g)
                if parent.grad is None:
                    parent.grad = contrib
                else:
                    parent.grad = parent.grad + contrib


def tensor(data, requires_grad: bool = True, name: str | None = None) -> Tensor:
    """Leaf constructor for trainable values; use constant() for fixed data."""
    return Tensor(data, requires_grad=requires_grad, name=name)


def constant(data) -> Tensor:
    return Tensor(data)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def make_tensor_node(data, edges) -> Tensor:
    """Build a tape node for a custom op.

    ``edges`` is an iterable of (parent Tensor, vjp callable) pairs.  Edges
    whose parent is a detached constant are dropped so dead subgraphs do not
    pay for backward bookkeeping.
    """
    live = tuple(
        (parent, vjp)
        for parent, vjp in edges
        if parent.requires_grad or parent._edges
    )
    out = Tensor(data, requires_grad=bool(live))
    out._edges = live
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` to undo numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _to_real(grad: np.ndarray, parent: Tensor) -> np.ndarray:
    if not parent.is_complex and grad.dtype.kind == "c":
        return grad.real
    return grad


# -- arithmetic --------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    return make_tensor_node(
        a.data + b.data,
        [
            (a, lambda g: _unbroadcast(_to_real(g, a), a.shape)),
            (b, lambda g: _unbroadcast(_to_real(g, b), b.shape)),
        ],
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    return make_tensor_node(
        a.data - b.data,
        [
            (a, lambda g: _unbroadcast(_to_real(g, a), a.shape)),
            (b, lambda g: _unbroadcast(_to_real(-g, b), b.shape)),
        ],
    )


def neg(a: Tensor) -> Tensor:
    return make_tensor_node(-a.data, [(a, lambda g: -g)])


def mul(a: Tensor, b: Tensor) -> Tensor:
    a_data, b_data = a.data, b.data
    return make_tensor_node(
        a_data * b_data,
        [
            (a, lambda g: _unbroadcast(_to_real(g * np.conj(b_data), a), a.shape)),
            (b, lambda g: _unbroadcast(_to_real(g * np.conj(a_data), b), b.shape)),
        ],
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    if a.is_complex or b.is_complex:
        raise InvalidArgumentError("div supports real operands only")
    a_data, b_data = a.data, b.data
    return make_tensor_node(
        a_data / b_data,
        [
            (a, lambda g: _unbroadcast(g / b_data, a.shape)),
            (b, lambda g: _unbroadcast(-g * a_data / (b_data * b_data), b.shape)),
        ],
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a_data, b_data = a.data, b.data
    if a_data.ndim == 2 and b_data.ndim == 2:
        return make_tensor_node(
            a_data @ b_data,
            [
                (a, lambda g: _to_real(g @ np.conj(b_data.T), a)),
                (b, lambda g: _to_real(np.conj(a_data.T) @ g, b)),
            ],
        )
    if a_data.ndim == 1 and b_data.ndim == 2:
        return make_tensor_node(
            a_data @ b_data,
            [
                (a, lambda g: _to_real(np.conj(b_data) @ g, a)),
                (b, lambda g: _to_real(np.outer(np.conj(a_data), g), b)),
            ],
        )
    if a_data.ndim == 2 and b_data.ndim == 1:
        return make_tensor_node(
            a_data @ b_data,
            [
                (a, lambda g: _to_real(np.outer(g, np.conj(b_data)), a)),
                (b, lambda g: _to_real(np.conj(a_data.T) @ g, b)),
            ],
        )
    raise ShapeMismatchError(
        f"matmul supports 1-D/2-D operands, got {a_data.shape} @ {b_data.shape}"
    )


# -- structure ---------------------------------------------------------------


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeMismatchError(f"transpose expects 2-D, got shape {a.shape}")
    return make_tensor_node(a.data.T.copy(), [(a, lambda g: g.T.copy())])


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.data.shape
    return make_tensor_node(
        a.data.reshape(shape), [(a, lambda g: g.reshape(old))]
    )


def slice_axis(a: Tensor, axis: int, start: int, size: int) -> Tensor:
    """View ``size`` entries along ``axis`` starting at ``start``."""
    if not 0 <= axis < a.ndim:
        raise InvalidArgumentError(f"axis {axis} out of range for ndim {a.ndim}")
    if start < 0 or size < 1 or start + size > a.shape[axis]:
        raise InvalidArgumentError(
            f"slice [{start}:{start + size}) out of range for extent {a.shape[axis]}"
        )
    index = tuple(
        slice(start, start + size) if i == axis else slice(None)
        for i in range(a.ndim)
    )
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[index] = g
        return full

    return make_tensor_node(a.data[index].copy(), [(a, vjp)])


def concat(parts, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise InvalidArgumentError("concat needs at least one input")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)
    edges = []
    for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
        index = tuple(
            slice(int(lo), int(hi)) if i == axis else slice(None)
            for i in range(data.ndim)
        )
        edges.append((part, lambda g, index=index, p=part: _to_real(g[index], p)))
    return make_tensor_node(data, edges)


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows; duplicate indices accumulate gradient."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeMismatchError(f"indices must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise InvalidArgumentError("row index out of range")
    shape, dtype = a.shape, a.data.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return full

    return make_tensor_node(a.data[idx], [(a, vjp)])


# -- reductions ---------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, shape).copy()

    return make_tensor_node(a.data.sum(axis=axis, keepdims=keepdims), [(a, vjp)])


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        count = a.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


# -- elementwise --------------------------------------------------------------


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return make_tensor_node(out_data, [(a, lambda g: g * out_data)])


def log(a: Tensor) -> Tensor:
    return make_tensor_node(np.log(a.data), [(a, lambda g: g / a.data)])


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)
    return make_tensor_node(out_data, [(a, lambda g: g * (0.5 / out_data))])


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    return make_tensor_node(out_data, [(a, lambda g: g * (1.0 - out_data**2))])


def sigmoid(a: Tensor) -> Tensor:
    out_data = numerics.sigmoid(a.data)
    return make_tensor_node(
        out_data, [(a, lambda g: g * out_data * (1.0 - out_data))]
    )


def softplus(a: Tensor) -> Tensor:
    return make_tensor_node(
        numerics.softplus(a.data), [(a, lambda g: g * numerics.sigmoid(a.data))]
    )


def silu(a: Tensor) -> Tensor:
    sig = numerics.sigmoid(a.data)

    def vjp(g):
        return g * (sig + a.data * sig * (1.0 - sig))

    return make_tensor_node(a.data * sig, [(a, vjp)])


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def vjp(g):
        return g * mask

    return make_tensor_node(np.where(mask, a.data, 0.0), [(a, vjp)])


# -- complex ------------------------------------------------------------------


def creal(a: Tensor) -> Tensor:
    """Real part; gradient flows back into the real component."""
    return make_tensor_node(
        np.ascontiguousarray(a.data.real),
        [(a, lambda g: g.astype(np.complex128))],
    )


def cimag(a: Tensor) -> Tensor:
    """Imaginary part; gradient flows back into the imaginary component."""
    return make_tensor_node(
        np.ascontiguousarray(a.data.imag), [(a, lambda g: 1j * g)]
    )


def cabs2(a: Tensor) -> Tensor:
    """Squared magnitude per entry of a complex tensor, as a real tensor."""
    re = creal(a)
    im = cimag(a)
    return re * re + im * im


# -- spectral -----------------------------------------------------------------


def rfft(a: Tensor, axis: int = 0) -> Tensor:
    """One-sided DFT along ``axis`` of a real tensor."""
    if a.is_complex:
        raise InvalidArgumentError("rfft expects a real tensor")
    length = a.shape[axis]
    if length < 1:
        raise InvalidArgumentError("rfft needs at least one sample")
    out_data = np.fft.rfft(a.data, axis=axis)

    def vjp(g):
        # Adjoint of the one-sided DFT: zero-pad the bin gradient back to a
        # full spectrum of length L, then L * Re(ifft).
        pad = [(0, 0)] * g.ndim
        pad[axis] = (0, length - g.shape[axis])
        g_full = np.pad(g, pad)
        return length * np.real(np.fft.ifft(g_full, axis=axis))

    return make_tensor_node(out_data, [(a, vjp)])


def irfft(a: Tensor, n: int, axis: int = 0) -> Tensor:
    """Inverse one-sided DFT along ``axis`` back to ``n`` real samples.

    Imaginary parts of the DC bin (and the Nyquist bin for even ``n``)
    describe no real signal; forward ignores them and their gradient is zero.
    """
    if not a.is_complex:
        raise InvalidArgumentError("irfft expects a complex tensor")
    bins = n // 2 + 1
    if a.shape[axis] != bins:
        raise ShapeMismatchError(
            f"expected {bins} bins along axis {axis} for length {n}, "
            f"got {a.shape[axis]}"
        )
    out_data = np.fft.irfft(a.data, n=n, axis=axis)

    weights = np.full(bins, 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    w_shape = [1] * a.ndim
    w_shape[axis] = bins
    weights = weights.reshape(w_shape)

    def vjp(g):
        return (weights / n) * np.fft.rfft(g, axis=axis)

    return make_tensor_node(out_data, [(a, vjp)])


# -- fused kernels -------------------------------------------------------------


def conv1d_depthwise(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Differentiable causal per-channel convolution, (L, C) -> (L, C)."""
    out_data = numerics.depthwise_conv1d(x.data, kernel.data, bias.data)
    length, channels = x.shape
    taps = kernel.shape[0]

    def vjp_x(g):
        # Correlate the output gradient with the flipped kernel: input step t
        # feeds outputs t .. t+k-1 through taps k-1 .. 0.
        padded = np.vstack([g, np.zeros((taps - 1, channels))])
        dx = np.zeros((length, channels))
        for j in range(taps):
            dx += kernel.data[j] * padded[taps - 1 - j : taps - 1 - j + length]
        return dx

    def vjp_kernel(g):
        padded = np.vstack([np.zeros((taps - 1, channels)), x.data])
        dk = np.empty((taps, channels))
        for j in range(taps):
            dk[j] = (g * padded[j : j + length]).sum(axis=0)
        return dk

    return make_tensor_node(
        out_data,
        [(x, vjp_x), (kernel, vjp_kernel), (bias, lambda g: g.sum(axis=0))],
    )


# -- composites ----------------------------------------------------------------


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise normalization of (L, C), built from primitive ops."""
    if eps <= 0.0:
        raise InvalidArgumentError(f"eps must be positive, got {eps}")
    mean = tmean(x, axis=1, keepdims=True)
    centered = x - mean
    var = tmean(centered * centered, axis=1, keepdims=True)
    return centered / sqrt(var + eps) * gain + shift


def logsumexp(a: Tensor, axis: int) -> Tensor:
    """log(sum(exp(a))) along ``axis``, max-shifted for stability.

    The shift is a detached constant, which leaves the exact gradient
    unchanged because the shifted terms cancel analytically.
    """
    peak = constant(np.max(a.data, axis=axis, keepdims=True))
    shifted = exp(a - peak)
    total = tsum(shifted, axis=axis, keepdims=True)
    out = log(total) + peak
    new_shape = tuple(n for i, n in enumerate(out.shape) if i != axis)
    return reshape(out, new_shape)


def softmax(a: Tensor, axis: int) -> Tensor:
    peak = constant(np.max(a.data, axis=axis, keepdims=True))
    num = exp(a - peak)
    return num / tsum(num, axis=axis, keepdims=True)


# -- gradient drivers -----------------------------------------------------------


def gradient(loss_builder, params) -> list[np.ndarray]:
    """Evaluate ``loss_builder()`` and return dL/dp for each tensor in ``params``.

    Parameter gradients are reset to zero first, so the result reflects this
    loss evaluation alone.
    """
    params = list(params)
    for p in params:
        p.reset_grad()
    loss = loss_builder()
    if not isinstance(loss, Tensor):
        raise InvalidArgumentError("loss_builder must return a Tensor")
    loss.backward()
    return [p.grad.copy() for p in params]


@dataclass
class FiniteDiffReport:
    """Comparison of tape gradients against central finite differences."""

    names: list[str]
    analytic: list[np.ndarray]
    numeric: list[np.ndarray]
    rel_error: list[np.ndarray]

    @property
    def max_rel_error(self) -> float:
        worst = 0.0
        for err in self.rel_error:
            if err.size:
                worst = max(worst, float(err.max()))
        return worst

    def worst_param(self) -> str:
        worst_name, worst_val = "", -1.0
        for name, err in zip(self.names, self.rel_error):
            if err.size and float(err.max()) > worst_val:
                worst_name, worst_val = name, float(err.max())
        return worst_name


def finite_diff_check(
    loss_builder, params, h: float = 1e-5, floor: float = 1e-6
) -> FiniteDiffReport:
    """Central-difference check of every entry of every parameter.

    Relative error uses ``floor`` as an absolute floor in the denominator so
    near-zero gradients do not blow the ratio up.
    """
    params = list(params)
    if h <= 0.0:
        raise InvalidArgumentError(f"step size must be positive, got {h}")
    analytic = gradient(loss_builder, params)
    names, numeric, rel = [], [], []
    for index, p in enumerate(params):
        if p.is_complex:
            raise InvalidArgumentError("finite_diff_check expects real parameters")
        flat = p.data.ravel()
        fd = np.zeros(p.data.size)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            f_plus = float(loss_builder().data)
            flat[i] = saved - h
            f_minus = float(loss_builder().data)
            flat[i] = saved
            fd[i] = (f_plus - f_minus) / (2.0 * h)
        fd = fd.reshape(p.data.shape)
        err = np.abs(analytic[index] - fd) / np.maximum(np.abs(fd), floor)
        names.append(p.name or f"param{index}")
        numeric.append(fd)
        rel.append(err)
    return FiniteDiffReport(names, analytic, numeric, rel)

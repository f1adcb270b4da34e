"""Dense float64 tensors with reverse-mode automatic differentiation.

Storage is row-major numpy float64 throughout. Each op records its parents
and a backward closure; ``Tensor.backward()`` on a scalar loss topologically
sorts the graph and accumulates gradients into ``Tensor.grad``. Gradients
accumulate across backward calls by design; call :func:`zero_grads` before
each optimizer step.

Broadcasting is supported only where a bias-style addition needs it.
"""
from __future__ import annotations

import ctypes
import sys

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ContractError, DataError, DimensionError

Array = np.ndarray

# Keep glibc from returning the large conv/feature buffers to the OS after
# every op; the mmap/munmap + page-fault churn otherwise dominates step time.
if sys.platform.startswith("linux"):
    try:
        _libc = ctypes.CDLL("libc.so.6")
        _libc.mallopt(-3, 512 * 1024 * 1024)  # M_MMAP_THRESHOLD
        _libc.mallopt(-1, 512 * 1024 * 1024)  # M_TRIM_THRESHOLD
    except OSError:
        pass


class Tensor:
    """A dense n-d array node in a reverse-mode differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def accumulate_grad(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from a scalar; populates grad on every reachable leaf."""
        if self.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            nid = id(node)
            if nid in visited:
                continue
            visited.add(nid)
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # Arithmetic sugar used internally and in tests.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(-self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _from_op(data: Array, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum gradient over axes that numpy broadcast when producing g."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def zero_grads(tensors) -> None:
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        data = a.data + b

        def bw():
            a.accumulate_grad(out.grad)

        out = _from_op(data, (a,), bw)
        return out
    data = a.data + b.data

    def bw():
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(out.grad, b.shape))

    out = _from_op(data, (a, b), bw)
    return out


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        data = a.data * b

        def bw():
            a.accumulate_grad(out.grad * b)

        out = _from_op(data, (a,), bw)
        return out
    data = a.data * b.data

    def bw():
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(out.grad * a.data, b.shape))

    out = _from_op(data, (a, b), bw)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def bw():
        a.accumulate_grad(out.grad.reshape(a.shape))

    out = _from_op(data, (a,), bw)
    return out


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = a.data.transpose(axes)

    def bw():
        a.accumulate_grad(out.grad.transpose(inv))

    out = _from_op(data, (a,), bw)
    return out


def take(a: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing with scatter-add backward."""
    data = a.data[idx]

    def bw():
        g = np.zeros_like(a.data)
        g[idx] += out.grad
        a.accumulate_grad(g)

    out = _from_op(data, (a,), bw)
    return out


def tsum(a: Tensor, axis=None) -> Tensor:
    data = a.data.sum(axis=axis)

    def bw():
        g = out.grad
        if axis is not None:
            g = np.expand_dims(g, axis)
        a.accumulate_grad(np.broadcast_to(g, a.shape).copy())

    out = _from_op(data, (a,), bw)
    return out


def tmean(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        n = a.size
    else:
        n = a.shape[axis]
    data = a.data.mean(axis=axis)

    def bw():
        g = out.grad
        if axis is not None:
            g = np.expand_dims(g, axis)
        a.accumulate_grad(np.broadcast_to(g, a.shape) / n)

    out = _from_op(data, (a,), bw)
    return out


def sigmoid(a: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-a.data))

    def bw():
        a.accumulate_grad(out.grad * data * (1.0 - data))

    out = _from_op(data, (a,), bw)
    return out


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    """max(x, slope*x); the subgradient at 0 is defined as 1."""
    data = np.where(a.data >= 0.0, a.data, slope * a.data)

    def bw():
        a.accumulate_grad(np.where(a.data >= 0.0, out.grad, slope * out.grad))

    out = _from_op(data, (a,), bw)
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted stable softmax along ``axis``."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw():
        g = out.grad
        dot = (g * data).sum(axis=axis, keepdims=True)
        a.accumulate_grad((g - dot) * data)

    out = _from_op(data, (a,), bw)
    return out


# ---------------------------------------------------------------------------
# linear-algebra ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; also supports stacked matmul with equal batch dims."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch dims disagree: {a.shape} x {b.shape}")
    data = a.data @ b.data

    def bw():
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            b.accumulate_grad(np.swapaxes(a.data, -1, -2) @ g)

    out = _from_op(data, (a, b), bw)
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map x @ w.T + b for x of shape (B, in)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"linear shapes disagree: x {x.shape}, w {w.shape}")
    if b.shape != (w.shape[0],):
        raise DimensionError(f"linear bias shape {b.shape} != ({w.shape[0]},)")
    data = x.data @ w.data.T + b.data

    def bw():
        g = out.grad
        if x.requires_grad:
            x.accumulate_grad(g @ w.data)
        if w.requires_grad:
            w.accumulate_grad(g.T @ x.data)
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=0))

    out = _from_op(data, (x, w, b), bw)
    return out


# ---------------------------------------------------------------------------
# convolution / pooling


def conv2d(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """3x3 cross-correlation, padding 1, stride 1 (spatial size preserved)."""
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be (B,C,H,W), got {x.shape}")
    if w.ndim != 4 or w.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d kernel must be (Cout,Cin,3,3), got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.shape} vs kernel {w.shape}"
        )
    if bias.shape != (w.shape[0],):
        raise DimensionError(f"conv2d bias shape {bias.shape} != ({w.shape[0]},)")
    B, cin, H, W = x.shape
    cout = w.shape[0]
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (B,Cin,H,W,3,3)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        B * H * W, cin * 9
    )
    flat = cols @ w.data.reshape(cout, -1).T + bias.data
    data = flat.reshape(B, H, W, cout).transpose(0, 3, 1, 2)

    def bw():
        g = out.grad
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
        if w.requires_grad:
            w.accumulate_grad((gmat.T @ cols).reshape(cout, cin, 3, 3))
        if bias.requires_grad:
            bias.accumulate_grad(gmat.sum(axis=0))
        if x.requires_grad:
            dcols = gmat @ w.data.reshape(cout, -1)
            dwin = dcols.reshape(B, H, W, cin, 3, 3).transpose(0, 3, 1, 2, 4, 5)
            dxp = np.zeros_like(xp)
            for i in range(3):
                for j in range(3):
                    dxp[:, :, i : i + H, j : j + W] += dwin[:, :, :, :, i, j]
            x.accumulate_grad(dxp[:, :, 1 : H + 1, 1 : W + 1])

    out = _from_op(data, (x, w, bias), bw)
    return out


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling; gradient routes to the first max in row-major scan."""
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d input must be (B,C,H,W), got {x.shape}")
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise DimensionError(f"maxpool2d needs even spatial dims, got {H}x{W}")
    corners = ((0, 0), (0, 1), (1, 0), (1, 1))  # row-major window scan order
    slices = [x.data[:, :, i::2, j::2] for i, j in corners]
    data = np.maximum(np.maximum(slices[0], slices[1]),
                      np.maximum(slices[2], slices[3]))

    def bw():
        g = out.grad
        dx = np.zeros_like(x.data)
        taken = np.zeros(data.shape, dtype=bool)
        for (i, j), s in zip(corners, slices):
            sel = (s == data) & ~taken
            dx[:, :, i::2, j::2][sel] = g[sel]
            taken |= sel
        x.accumulate_grad(dx)

    out = _from_op(data, (x,), bw)
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the two spatial axes: (B,C,H,W) -> (B,C)."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool input must be (B,C,H,W), got {x.shape}")
    B, C, H, W = x.shape
    data = x.data.mean(axis=(2, 3))

    def bw():
        x.accumulate_grad(
            np.broadcast_to(out.grad[:, :, None, None], x.shape) / (H * W)
        )

    out = _from_op(data, (x,), bw)
    return out


# ---------------------------------------------------------------------------
# normalization / regularization


class BatchNormState:
    """Running statistics for one batchnorm layer."""

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)

    def copy(self) -> "BatchNormState":
        st = BatchNormState(self.num_features, self.momentum, self.eps)
        st.running_mean = self.running_mean.copy()
        st.running_var = self.running_var.copy()
        return st


def batchnorm(
    x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, mode: str
) -> Tensor:
    """BatchNorm over (B,) for 2-d input or (B,H,W) for 4-d input, per channel.

    Train mode normalizes by the biased batch variance and updates the
    running stats with momentum; eval mode normalizes by the running stats.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"batchnorm mode must be train|eval, got {mode!r}")
    if x.ndim == 4:
        axes, pshape = (0, 2, 3), (1, -1, 1, 1)
    elif x.ndim == 2:
        axes, pshape = (0,), (1, -1)
    else:
        raise DimensionError(f"batchnorm input must be 2-d or 4-d, got {x.shape}")
    C = x.shape[1]
    if C != state.num_features or gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(
            f"batchnorm channel mismatch: input has {C}, state {state.num_features}"
        )
    eps = state.eps
    if mode == "train":
        if x.shape[0] < 2:
            raise ConfigError("batchnorm train mode requires batch size >= 2")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mean
        state.running_var = (1 - m) * state.running_var + m * var
    else:
        mean = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(pshape)) * inv_std.reshape(pshape)
    data = gamma.data.reshape(pshape) * xhat + beta.data.reshape(pshape)
    n = x.data.size // C

    def bw():
        g = out.grad
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=axes))
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(pshape)
            if mode == "train":
                s1 = dxhat.sum(axis=axes).reshape(pshape)
                s2 = (dxhat * xhat).sum(axis=axes).reshape(pshape)
                dx = (inv_std.reshape(pshape) / n) * (n * dxhat - s1 - xhat * s2)
            else:
                dx = dxhat * inv_std.reshape(pshape)
            x.accumulate_grad(dx)

    out = _from_op(data, (x, gamma, beta), bw)
    return out


def dropout(
    x: Tensor, p: float, rng: np.random.Generator | None, mode: str
) -> Tensor:
    """Elementwise dropout; survivors scaled by 1/(1-p). Identity in eval mode."""
    return _dropout_impl(x, p, rng, mode, channelwise=False)


def dropout2d(
    x: Tensor, p: float, rng: np.random.Generator | None, mode: str
) -> Tensor:
    """Channel dropout for (B,C,H,W): zeros whole channels."""
    if x.ndim != 4:
        raise DimensionError(f"dropout2d input must be (B,C,H,W), got {x.shape}")
    return _dropout_impl(x, p, rng, mode, channelwise=True)


def _dropout_impl(x, p, rng, mode, channelwise):
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must satisfy 0 <= p < 1, got {p}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"dropout mode must be train|eval, got {mode!r}")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ContractError("train-mode dropout requires an rng")
    mshape = (x.shape[0], x.shape[1], 1, 1) if channelwise else x.shape
    mask = (rng.random(mshape) >= p) / (1.0 - p)
    data = x.data * mask

    def bw():
        x.accumulate_grad(out.grad * mask)

    out = _from_op(data, (x,), bw)
    return out


# ---------------------------------------------------------------------------
# loss


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(
            f"cross_entropy shapes disagree: logits {logits.shape}, labels {labels.shape}"
        )
    C = logits.shape[1]
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= C:
        raise DataError(f"labels must lie in [0, {C}), got {labels.tolist()}")
    B = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    data = -log_probs[np.arange(B), labels].mean()

    def bw():
        probs = np.exp(log_probs)
        probs[np.arange(B), labels] -= 1.0
        logits.accumulate_grad(out.grad * probs / B)

    out = _from_op(np.float64(data), (logits,), bw)
    return out


# ---------------------------------------------------------------------------
# verification


def grad_check(
    f,
    tensors,
    eps: float = 1e-4,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare autodiff gradients of ``f(*tensors)`` to central differences.

    ``f`` must be deterministic (dropout in eval mode, batchnorm mode fixed).
    Returns the max over checked coordinates of |fd - g| / max(1, |g|).
    When ``max_coords`` is set, that many coordinates per tensor are sampled
    at random instead of sweeping every entry.

    Kink refinement: leaky_relu and maxpool are piecewise linear, so a +/-eps
    probe occasionally crosses a kink and the central difference estimates
    the average of two one-sided slopes. Coordinates off by more than 1e-6
    are re-probed at eps/10; a genuine gradient bug persists at every eps,
    while a kink crossing vanishes.
    """
    if isinstance(tensors, Tensor):
        tensors = [tensors]
    zero_grads(tensors)
    loss = f(*tensors)
    loss.backward()
    grads = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def fd_error(flat, j, g_j, h):
        orig = flat[j]
        flat[j] = orig + h
        fp = f(*tensors).item()
        flat[j] = orig - h
        fm = f(*tensors).item()
        flat[j] = orig
        fd = (fp - fm) / (2.0 * h)
        return abs(fd - g_j) / max(1.0, abs(g_j))

    worst = 0.0
    for t, g in zip(tensors, grads):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        gflat = g.reshape(-1)
        for j in coords:
            err = fd_error(flat, j, gflat[j], eps)
            if err > 1e-6:
                err = min(err, fd_error(flat, j, gflat[j], eps / 10.0))
            worst = max(worst, err)
    return worst

"""Layer primitives with hand-written backward rules.

Public ops take signals as ``[batch, channels, length]`` with conv weights
``[out, in, k]`` and transposed-conv weights ``[in, out, k]``. Convolution is
cross-correlation (no kernel flip).

The kernels themselves run channels-last (``[batch, length, channels]``, the
``*_nlc`` functions): every reduction and scatter then walks contiguous
channel rows, which is several times faster in numpy than striding over a
short length axis. The networks stay channels-last end to end and only the
public wrappers transpose.
"""
from __future__ import annotations

import numpy as np

from .tensor import ContractError, Tensor, make_node, transpose


class GeometryError(ContractError):
    pass


def conv_out_length(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def deconv_out_length(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length - 1) * stride - 2 * padding + kernel


def _check_geometry(kernel: int, stride: int, padding: int) -> None:
    if kernel < 1 or stride < 1 or padding < 0:
        raise GeometryError(f"bad geometry k={kernel} s={stride} p={padding}")


def _colsum(x2d: np.ndarray) -> np.ndarray:
    """Column sums of a 2-D array via BLAS; much faster than ``sum(axis=0)`` for narrow rows."""
    return np.ones(x2d.shape[0], dtype=x2d.dtype) @ x2d


def _im2col(xp: np.ndarray, k: int, stride: int, nwin: int) -> np.ndarray:
    """[B, Lp, C] -> [B*nwin, k*C]; row t holds xp[t*stride + j, c] at column j*C + c."""
    b, _, c = xp.shape
    cols = np.empty((b, nwin, k, c), dtype=xp.dtype)
    span = stride * (nwin - 1) + 1
    for j in range(k):
        cols[:, :, j, :] = xp[:, j : j + span : stride, :]
    return cols.reshape(b * nwin, k * c)


def _col2im(cols: np.ndarray, b: int, c: int, k: int, stride: int, nwin: int, lp: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add windows back into [B, lp, C]."""
    cols = cols.reshape(b, nwin, k, c)
    out = np.zeros((b, lp, c), dtype=cols.dtype)
    span = stride * (nwin - 1) + 1
    for j in range(k):
        out[:, j : j + span : stride, :] += cols[:, :, j, :]
    return out


def conv1d_nlc(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Channels-last conv: x [B, L, Cin], weight [Cout, Cin, k] -> [B, Lout, Cout]."""
    cout, wcin, k = weight.shape
    _check_geometry(k, stride, padding)
    b, length, cin = x.shape
    if cin != wcin:
        raise ContractError(f"conv1d: input has {cin} channels, weight expects {wcin}")
    lout = conv_out_length(length, k, stride, padding)
    if length + 2 * padding < k or lout < 1:
        raise GeometryError(f"conv1d: nonpositive output length for L={length}, k={k}, s={stride}, p={padding}")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (0, 0))) if padding else x.data
    lp = xp.shape[1]
    cols = _im2col(xp, k, stride, lout)
    wmat = np.ascontiguousarray(weight.data.transpose(2, 1, 0)).reshape(k * cin, cout)
    out = cols @ wmat
    if bias is not None:
        out += bias.data
    out = out.reshape(b, lout, cout)

    def bw(g):
        g2 = g.reshape(b * lout, cout)
        gx = gw = gb = None
        if x.requires_grad:
            gxp = _col2im(g2 @ wmat.T, b, cin, k, stride, lout, lp)
            gx = gxp[:, padding : lp - padding, :] if padding else gxp
        if weight.requires_grad:
            gw = (cols.T @ g2).reshape(k, cin, cout).transpose(2, 1, 0)
        if bias is not None and bias.requires_grad:
            gb = _colsum(g2)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, bw)


def deconv1d_nlc(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Channels-last transposed conv: x [B, L, Cin], weight [Cin, Cout, k] -> [B, Lout, Cout]."""
    wcin, cout, k = weight.shape
    _check_geometry(k, stride, padding)
    b, length, cin = x.shape
    if cin != wcin:
        raise ContractError(f"deconv1d: input has {cin} channels, weight expects {wcin}")
    lout = deconv_out_length(length, k, stride, padding)
    if lout < 1:
        raise GeometryError(f"deconv1d: nonpositive output length for L={length}, k={k}, s={stride}, p={padding}")
    lfull = (length - 1) * stride + k
    wmat = np.ascontiguousarray(weight.data.transpose(0, 2, 1)).reshape(cin, k * cout)
    x2 = x.data.reshape(b * length, cin)
    # every input position emits a [k, Cout] patch; neighbours overlap by k - stride
    full = _col2im(x2 @ wmat, b, cout, k, stride, length, lfull)
    out = full[:, padding : padding + lout, :]
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out)

    def bw(g):
        gfull = np.pad(g, ((0, 0), (padding, lfull - lout - padding), (0, 0))) if lfull != lout else g
        gcols = _im2col(gfull, k, stride, length)
        gx = gw = gb = None
        if x.requires_grad:
            gx = (gcols @ wmat.T).reshape(b, length, cin)
        if weight.requires_grad:
            gw = (x2.T @ gcols).reshape(cin, k, cout).transpose(0, 2, 1)
        if bias is not None and bias.requires_grad:
            gb = _colsum(g.reshape(-1, cout))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, bw)


class BatchNormState:
    """Running statistics of one batch-norm layer."""

    def __init__(self, channels: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps


def batchnorm_nlc(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool = True,
    update_stats: bool = True,
) -> Tensor:
    """Normalize each channel (last axis) over all other axes.

    ``training=True`` uses batch statistics; the running statistics move only
    when ``update_stats`` is also set. Eval mode uses the running statistics.
    """
    shape = x.shape
    c = shape[-1]
    xd = x.data.reshape(-1, c)
    n = xd.shape[0]
    dt = x.dtype
    gd = gamma.data.astype(dt, copy=False)
    bd = beta.data.astype(dt, copy=False)
    if not training:
        inv = (1.0 / np.sqrt(state.running_var + state.eps)).astype(dt)
        xhat = (xd - state.running_mean.astype(dt)) * inv
        out = xhat * gd + bd

        def bw_eval(g):
            g = g.reshape(-1, c)
            return (
                (g * (gd * inv)).reshape(shape) if x.requires_grad else None,
                _colsum(g * xhat) if gamma.requires_grad else None,
                _colsum(g) if beta.requires_grad else None,
            )

        return make_node(out.reshape(shape), (x, gamma, beta), bw_eval)

    if n < 2:
        raise ContractError(f"batchnorm: degenerate batch ({n} values per channel) in training mode")
    mean = _colsum(xd) / dt.type(n)
    xc = xd - mean
    var = _colsum(xc * xc) / dt.type(n)
    inv = (1.0 / np.sqrt(var + state.eps)).astype(dt)
    xhat = xc * inv
    out = xhat * gd + bd
    if update_stats:
        m = state.momentum
        rdt = state.running_mean.dtype
        state.running_mean = ((1 - m) * state.running_mean + m * mean).astype(rdt)
        state.running_var = ((1 - m) * state.running_var + m * var * (n / (n - 1))).astype(rdt)

    def bw(g):
        g = g.reshape(-1, c)
        gg = gb = gx = None
        gsum = _colsum(g)
        gxhat_dot = _colsum(g * xhat)
        if gamma.requires_grad:
            gg = gxhat_dot
        if beta.requires_grad:
            gb = gsum
        if x.requires_grad:
            # d/dx of gamma * xhat with batch statistics
            gx = ((gd * inv) / n) * (n * g - gsum - xhat * gxhat_dot)
            gx = gx.reshape(shape)
        return gx, gg, gb

    return make_node(out.reshape(shape), (x, gamma, beta), bw)


def _to_nlc(x: Tensor) -> Tensor:
    return transpose(x, (0, 2, 1))


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x [B, Cin, L] with weight [Cout, Cin, k] -> [B, Cout, Lout]."""
    if x.ndim != 3 or weight.ndim != 3:
        raise ContractError("conv1d expects 3-d input and weight")
    return _to_nlc(conv1d_nlc(_to_nlc(x), weight, bias, stride, padding))


def deconv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution, the adjoint of :func:`conv1d` with the same weight."""
    if x.ndim != 3 or weight.ndim != 3:
        raise ContractError("deconv1d expects 3-d input and weight")
    return _to_nlc(deconv1d_nlc(_to_nlc(x), weight, bias, stride, padding))


def batchnorm1d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool = True, update_stats: bool = True) -> Tensor:
    """Batch norm over batch and length for x [B, C, L]."""
    if x.ndim != 3:
        raise ContractError("batchnorm1d expects [B, C, L]")
    return _to_nlc(batchnorm_nlc(_to_nlc(x), gamma, beta, state, training, update_stats))


def relu(x: Tensor) -> Tensor:
    xd = x.data
    # masks are multiplied in, not selected with np.where: branchy selects are ~10x slower
    return make_node(np.maximum(xd, 0), (x,), lambda g: (g * (xd > 0),))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    xd = x.data
    s = xd.dtype.type(slope)

    def bw(g):
        d = (xd >= 0).astype(g.dtype)
        d *= 1 - s
        d += s
        return (g * d,)

    out = np.maximum(xd, xd * s) if 0 <= slope <= 1 else xd * ((xd >= 0) * (1 - s) + s)
    return make_node(out, (x,), bw)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_node(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_node(y, (x,), lambda g: (g * y * (1.0 - y),))


def activation(kind: str, x: Tensor, slope: float = 0.2) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ContractError(f"unknown activation {kind!r}")


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity in eval mode or when ``p == 0``.

    Keep decisions compare 16-bit random words against ``p * 2**16``, so ``p``
    is effectively quantized to multiples of 1/65536 (0.5 is exact).
    """
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an rng")
    words = np.frombuffer(rng.bytes(2 * x.size), dtype=np.uint16).reshape(x.shape)
    keep = (words >= int(round(p * 65536))).astype(x.dtype)
    keep *= x.dtype.type(1.0 / (1.0 - p))
    return make_node(x.data * keep, (x,), lambda g: (g * keep,))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` with ``weight`` shaped [out, in]."""
    if x.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ContractError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ContractError(f"linear: bias {bias.shape} incompatible with weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def bw(g):
        return (
            g @ wd if x.requires_grad else None,
            g.T @ xd if weight.requires_grad else None,
            g.sum(axis=0) if bias is not None and bias.requires_grad else None,
        )

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, bw)


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    """Stable log-sum-exp along ``axis`` (axis removed)."""
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    soft = e / s
    return make_node(out, (x,), lambda g: (np.expand_dims(g, axis) * soft,))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    soft = np.exp(out)
    return make_node(out, (x,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),))


def softmax(logits) -> np.ndarray:
    """Plain (untaped) float64 softmax over the last axis."""
    z = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def flatten(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0], -1)

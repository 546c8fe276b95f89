"""CNN operators on hashed sparse features.

Feature matrices are ``(channels, columns)`` with one column per occupied
voxel of a :class:`SuperPsh`.  Convolution-like ops gather receptive fields
through the input-level hash (``hash2col``), multiply by the kernel matrix,
and scatter gradients back with ``col2hash``.

Column matrices have ``c * F^d`` rows: row ``i_c * F^d + t`` holds channel
``i_c`` at receptive-field tap ``t``, taps ordered with x varying fastest.
Any float dtype is accepted and preserved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._parallel import chunks, pmap, worker_count
from .batch import SuperPsh, locate_many


@dataclass(frozen=True)
class ConvSpec:
    kernel_size: int
    stride: int = 1
    padding: int = 0
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if self.kernel_size < 1:
            raise ValueError("kernel_size must be positive")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.padding < 0:
            raise ValueError("padding must be >= 0")
        if self.stride == 1 and self.kernel_size % 2 == 0:
            raise ValueError("stride-1 kernels must have odd size (centered field)")

    def taps(self, dim: int) -> np.ndarray:
        """``(F^d, d)`` field offsets, x fastest."""
        F = self.kernel_size
        grid = np.indices((F,) * dim).reshape(dim, -1).T
        return grid[:, ::-1].astype(np.int64)

    def field_origin(self, out_pos: np.ndarray) -> np.ndarray:
        if self.stride == 1:
            return out_pos - (self.kernel_size - 1) // 2
        return out_pos * self.stride - self.padding


def receptive_field_index(in_sp: SuperPsh, out_sp: SuperPsh, spec: ConvSpec) -> np.ndarray:
    """``(columns_out, F^d)`` input data columns feeding each output, -1 if empty.

    This is the neighbour table shared by every op on the same pair of
    levels; it is memoized on ``out_sp``.
    """
    if in_sp.dim != out_sp.dim or in_sp.b != out_sp.b:
        raise ValueError("input and output structures must share dim and batch size")
    if spec.stride == 1 and in_sp.resolution != out_sp.resolution:
        raise ValueError("stride 1 requires equal input and output resolution")
    cache = out_sp.__dict__.setdefault("_field_cache", {})
    hit = cache.get((id(in_sp), spec.kernel_size, spec.stride, spec.padding))
    if hit is not None and hit[0] is in_sp:
        return hit[1]
    pos, model = out_sp.column_positions()
    taps = spec.taps(out_sp.dim)
    field = spec.field_origin(pos)[:, None, :] + taps[None, :, :]
    idx = locate_many(in_sp, np.repeat(model, len(taps)), field.reshape(-1, out_sp.dim))
    idx = idx.reshape(len(pos), len(taps))
    cache[(id(in_sp), spec.kernel_size, spec.stride, spec.padding)] = (in_sp, idx)
    return idx


def _features(sp: SuperPsh, features) -> np.ndarray:
    X = sp.D if features is None else np.asarray(features)
    if X.ndim != 2 or X.shape[1] != sp.columns:
        raise ValueError(f"feature matrix must have {sp.columns} columns, got {X.shape}")
    return X


def hash2col(in_sp: SuperPsh, out_sp: SuperPsh, spec: ConvSpec, features=None) -> np.ndarray:
    X = _features(in_sp, features)
    if X.shape[0] != spec.in_channels:
        raise ValueError(f"expected {spec.in_channels} input channels, got {X.shape[0]}")
    idx = receptive_field_index(in_sp, out_sp, spec)
    c, (ncol, k) = X.shape[0], idx.shape
    padded = np.concatenate([X, np.zeros((c, 1), X.dtype)], axis=1)
    safe = np.where(idx < 0, X.shape[1], idx)
    out = np.empty((c, k, ncol), dtype=X.dtype)

    def gather(sl):
        out[:, :, sl] = padded[:, safe[sl].T]

    pmap(gather, chunks(ncol, worker_count()))
    return out.reshape(c * k, ncol)


def col2hash(cols: np.ndarray, in_sp: SuperPsh, out_sp: SuperPsh, spec: ConvSpec) -> np.ndarray:
    """Adjoint of :func:`hash2col`: accumulate column entries into data cells.

    Each channel reduces its contributions in a fixed column-major order,
    so the result does not depend on the worker count.
    """
    idx = receptive_field_index(in_sp, out_sp, spec)
    ncol, k = idx.shape
    cols = np.asarray(cols)
    if cols.shape[1] != ncol or cols.shape[0] % k:
        raise ValueError(f"column matrix shape {cols.shape} does not match field {idx.shape}")
    c = cols.shape[0] // k
    flat = idx.ravel()
    keep = flat >= 0
    target = flat[keep]
    n_in = in_sp.columns
    out = np.zeros((c, n_in), dtype=cols.dtype)
    per_channel = cols.reshape(c, k, ncol)

    def reduce(ch):
        w = per_channel[ch].T.ravel()[keep]
        out[ch] = np.bincount(target, weights=w, minlength=n_in)

    pmap(reduce, range(c))
    return out


def _check_weights(W: np.ndarray, spec: ConvSpec, dim: int) -> None:
    expect = (spec.out_channels, spec.in_channels * spec.kernel_size ** dim)
    if W.shape != expect:
        raise ValueError(f"kernel matrix shape {W.shape}, expected {expect}")


def conv_forward(in_sp: SuperPsh, out_sp: SuperPsh, W: np.ndarray, spec: ConvSpec,
                 features=None) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(W @ cols, cols)``; keep ``cols`` for the backward pass."""
    _check_weights(W, spec, in_sp.dim)
    cols = hash2col(in_sp, out_sp, spec, features)
    return W @ cols, cols


def conv_backward(grad_out: np.ndarray, W: np.ndarray, cols: np.ndarray,
                  in_sp: SuperPsh, out_sp: SuperPsh, spec: ConvSpec):
    """Returns ``(dW, dX)`` with ``dW = dY cols^T`` and ``dX = col2hash(W^T dY)``."""
    _check_weights(W, spec, in_sp.dim)
    if grad_out.shape != (W.shape[0], cols.shape[1]):
        raise ValueError(f"gradient shape {grad_out.shape} does not match output")
    dW = grad_out @ cols.T
    dX = col2hash(W.T @ grad_out, in_sp, out_sp, spec)
    return dW, dX


def deconv_forward(in_sp: SuperPsh, out_sp: SuperPsh, W: np.ndarray, spec: ConvSpec,
                   features=None) -> np.ndarray:
    """Transposed convolution from ``in_sp`` (coarse side) onto ``out_sp`` (fine side).

    ``spec`` and ``W`` describe the forward convolution fine -> coarse being
    transposed, so ``W`` is ``(c_coarse, c_fine * F^d)``.
    """
    _check_weights(W, spec, in_sp.dim)
    X = _features(in_sp, features)
    return col2hash(W.T @ X, out_sp, in_sp, spec)


def deconv_backward(grad_out: np.ndarray, W: np.ndarray, X: np.ndarray,
                    in_sp: SuperPsh, out_sp: SuperPsh, spec: ConvSpec):
    """Backward of :func:`deconv_forward` through the forward-conv path."""
    cols = hash2col(out_sp, in_sp, spec, grad_out)
    return X @ cols.T, W @ cols


# -- pooling ---------------------------------------------------------------------

NO_SWITCH = -1


def _gather_fields(in_sp, out_sp, spec, features):
    X = _features(in_sp, features)
    idx = receptive_field_index(in_sp, out_sp, spec)
    padded = np.concatenate([X, np.zeros((X.shape[0], 1), X.dtype)], axis=1)
    vals = padded[:, np.where(idx < 0, X.shape[1], idx)]
    return vals, idx >= 0


def max_pool(in_sp: SuperPsh, out_sp: SuperPsh, spec: ConvSpec, features=None):
    """Max over the present voxels of each field; returns ``(values, switches)``.

    Ties go to the smallest tap; all-empty fields give 0 and ``NO_SWITCH``.
    """
    vals, present = _gather_fields(in_sp, out_sp, spec, features)
    masked = np.where(present[None], vals, -np.inf)
    switches = masked.argmax(axis=2)
    out = np.take_along_axis(vals, switches[..., None], axis=2)[..., 0]
    empty = ~present.any(axis=1)
    out[:, empty] = 0
    switches[:, empty] = NO_SWITCH
    return out, switches


def avg_pool(in_sp: SuperPsh, out_sp: SuperPsh, spec: ConvSpec, features=None) -> np.ndarray:
    """Field sum divided by F^d (empty taps count as zeros)."""
    vals, _ = _gather_fields(in_sp, out_sp, spec, features)
    return vals.sum(axis=2) / vals.dtype.type(vals.shape[2])


def max_unpool(values: np.ndarray, switches: np.ndarray, fine_sp: SuperPsh,
               coarse_sp: SuperPsh, spec: ConvSpec) -> np.ndarray:
    """Put each coarse value back at its recorded switch voxel (also max-pool backward)."""
    idx = receptive_field_index(fine_sp, coarse_sp, spec)
    switches = np.asarray(switches)
    if switches.shape != values.shape:
        raise ValueError("switches must match values")
    if np.any(switches >= idx.shape[1]):
        raise ValueError("switch index outside the receptive field")
    c = values.shape[0]
    out = np.zeros((c, fine_sp.columns), dtype=values.dtype)
    cols = np.arange(idx.shape[0])
    for ch in range(c):
        sw = switches[ch]
        ok = sw != NO_SWITCH
        target = idx[cols[ok], sw[ok]]
        out[ch] = np.bincount(target, weights=values[ch, ok], minlength=fine_sp.columns)
    return out


max_pool_backward = max_unpool


def avg_unpool(values: np.ndarray, fine_sp: SuperPsh, coarse_sp: SuperPsh,
               spec: ConvSpec) -> np.ndarray:
    """Spread value / F^d over every present voxel of the field (also avg-pool backward)."""
    k = spec.kernel_size ** fine_sp.dim
    cols = np.repeat(values / values.dtype.type(k), k, axis=0)
    return col2hash(cols, fine_sp, coarse_sp, spec)


avg_pool_backward = avg_unpool


# -- columnwise ops ----------------------------------------------------------------

def batch_norm_forward(X: np.ndarray, running_mean: np.ndarray, running_var: np.ndarray,
                       training: bool = True, momentum: float = 0.1, eps: float = 1e-5):
    """Per-channel normalization over all columns.

    In training mode the running statistics are updated in place.  Returns
    ``(Y, cache)``.
    """
    if training:
        mean = X.mean(axis=1)
        var = X.var(axis=1)
        n = X.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (X - mean[:, None]) * inv_std[:, None]
    return xhat.astype(X.dtype, copy=False), (xhat, inv_std, training)


def batch_norm_backward(dY: np.ndarray, cache) -> np.ndarray:
    xhat, inv_std, training = cache
    if not training:
        return dY * inv_std[:, None]
    n = dY.shape[1]
    dsum = dY.sum(axis=1, keepdims=True)
    dxhat_sum = (dY * xhat).sum(axis=1, keepdims=True)
    return (inv_std[:, None] / n) * (n * dY - dsum - xhat * dxhat_sum)


def scale_forward(X, gamma, beta):
    return gamma[:, None] * X + beta[:, None]


def scale_backward(dY, X, gamma):
    """Returns ``(dX, dgamma, dbeta)``."""
    return gamma[:, None] * dY, (dY * X).sum(axis=1), dY.sum(axis=1)


def relu_forward(X):
    return np.maximum(X, 0)


def relu_backward(dY, X):
    return dY * (X > 0)


def dropout_forward(X, ratio: float, rng: np.random.Generator, training: bool = True):
    """Inverted dropout; returns ``(Y, mask)`` with ``mask=None`` at inference."""
    if not training or ratio <= 0:
        return X, None
    keep = rng.random(X.shape) >= ratio
    mask = keep.astype(X.dtype) / X.dtype.type(1.0 - ratio)
    return X * mask, mask


def dropout_backward(dY, mask):
    return dY if mask is None else dY * mask

"""Spectral-norm estimation on explicit matrices and implicit linear operators."""

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from . import kernels
from .errors import NumericError, ShapeError, SizeError

MAX_EXACT_SIDE = 256
MAX_MATERIALIZED_SIDE = 4096


@dataclass(frozen=True)
class LinearOperator:
    """A linear map given by forward and adjoint callables on shaped arrays."""

    apply: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]
    in_shape: Tuple[int, ...]
    out_shape: Tuple[int, ...]

    @classmethod
    def from_matrix(cls, M):
        M = np.asarray(M)
        if M.ndim != 2:
            raise ShapeError(f"expected a rank-2 matrix, got shape {M.shape}")
        return cls(lambda x: M @ x, lambda y: M.T @ y, (M.shape[1],), (M.shape[0],))

    @property
    def in_size(self):
        return int(np.prod(self.in_shape))

    @property
    def out_size(self):
        return int(np.prod(self.out_shape))


@dataclass
class PowerState:
    """Persisted singular-vector estimates (right ``v``, left ``u``) for warm starts."""

    v: np.ndarray
    u: np.ndarray


def _unit(x):
    n = np.linalg.norm(x)
    return x / n if n > 0 else x


def power_iteration(op, iters=100, tol=1e-12, state=None, rng=None):
    """Estimate the largest singular value of ``op``.

    Alternates ``u = A v / |A v|`` and ``v = A^T u / |A^T u|``. The returned
    value is ``|A v|`` for a unit ``v`` and therefore never exceeds the true
    norm beyond round-off. Iteration stops early once the relative change of
    the estimate drops below ``tol``.

    Returns ``(sigma, state)``; pass ``state`` back in to warm-start.
    """
    if op.in_size == 0 or op.out_size == 0:
        raise ShapeError("operator has an empty domain or range")
    if iters < 1:
        raise ValueError("iters must be positive")
    rng = np.random.default_rng(rng)

    if state is None:
        v = _unit(rng.standard_normal(op.in_shape))
    else:
        if state.v.shape != tuple(op.in_shape) or state.u.shape != tuple(op.out_shape):
            raise ShapeError("power-iteration state does not match operator shapes")
        v = _unit(np.array(state.v, dtype=np.float64))
        if not np.any(v):
            v = _unit(rng.standard_normal(op.in_shape))

    sigma = 0.0
    u = np.zeros(op.out_shape)
    for _ in range(iters):
        Av = np.asarray(op.apply(v), dtype=np.float64)
        if not np.all(np.isfinite(Av)):
            raise NumericError("non-finite value during power iteration")
        norm_Av = float(np.linalg.norm(Av))
        if norm_Av == 0.0:
            # v landed in the null space; only the zero operator keeps doing this
            v = _unit(rng.standard_normal(op.in_shape))
            Av = np.asarray(op.apply(v), dtype=np.float64)
            norm_Av = float(np.linalg.norm(Av))
            if norm_Av == 0.0:
                fresh = PowerState(_unit(rng.standard_normal(op.in_shape)),
                                   _unit(rng.standard_normal(op.out_shape)))
                return 0.0, fresh
        u = Av / norm_Av
        ATu = np.asarray(op.adjoint(u), dtype=np.float64)
        if not np.all(np.isfinite(ATu)):
            raise NumericError("non-finite value during power iteration")
        v = _unit(ATu)
        prev, sigma = sigma, norm_Av
        if prev > 0 and abs(sigma - prev) <= tol * sigma:
            break

    # Final Rayleigh value at the latest right vector.
    Av = np.asarray(op.apply(v), dtype=np.float64)
    sigma = float(np.linalg.norm(Av))
    if sigma > 0:
        u = Av / sigma
    return sigma, PowerState(v, u)


def spectral_norm_exact(M):
    """Largest singular value of a (small) dense matrix via LAPACK SVD."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ShapeError(f"expected a rank-2 matrix, got shape {M.shape}")
    if max(M.shape) > MAX_EXACT_SIDE:
        raise SizeError(f"matrix {M.shape} exceeds {MAX_EXACT_SIDE}x{MAX_EXACT_SIDE}")
    if not np.all(np.isfinite(M)):
        raise NumericError("matrix has non-finite entries")
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def conv_operator(kernel, in_shape, stride=1, padding=0):
    """Convolution (no bias) on a single (C, H, W) map as a :class:`LinearOperator`."""
    kernel = np.asarray(kernel, dtype=np.float64)
    out_ch, in_ch, kh, kw = kernel.shape
    c, h, w = in_shape
    if c != in_ch:
        raise ShapeError(f"kernel expects {in_ch} input channels, input has {c}")
    oh = kernels.conv_out_size(h, kh, stride, padding)
    ow = kernels.conv_out_size(w, kw, stride, padding)
    if oh <= 0 or ow <= 0:
        raise ShapeError("kernel does not fit the padded input")
    Wm = kernel.reshape(out_ch, -1)

    def apply(x):
        cols = kernels.im2col(np.ascontiguousarray(x, dtype=np.float64)[None], kh, kw, stride, padding)
        return (Wm @ cols[0]).reshape(out_ch, oh, ow)

    def adjoint(y):
        cols = Wm.T @ np.asarray(y, dtype=np.float64).reshape(out_ch, oh * ow)
        return kernels.col2im(cols[None], (1, c, h, w), kh, kw, stride, padding)[0]

    return LinearOperator(apply, adjoint, (c, h, w), (out_ch, oh, ow))


def materialize_conv_matrix(kernel, in_shape, stride=1, padding=0):
    """Explicit matrix ``W`` with ``W @ x.ravel() == conv(x).ravel()``.

    Built directly from the index arithmetic of a zero-padded strided
    convolution, independent of the im2col kernels.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    out_ch, in_ch, kh, kw = kernel.shape
    c, h, w = in_shape
    if c != in_ch:
        raise ShapeError(f"kernel expects {in_ch} input channels, input has {c}")
    if stride < 1 or padding < 0:
        raise ShapeError("stride must be >= 1 and padding >= 0")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError("kernel does not fit the padded input")
    rows, cols = out_ch * oh * ow, c * h * w
    if max(rows, cols) > MAX_MATERIALIZED_SIDE:
        raise SizeError(f"materialized matrix {rows}x{cols} exceeds {MAX_MATERIALIZED_SIDE}")

    M = np.zeros((rows, cols))
    for o in range(out_ch):
        for i in range(oh):
            for j in range(ow):
                r = (o * oh + i) * ow + j
                for ch in range(c):
                    for p in range(kh):
                        y = i * stride - padding + p
                        if not 0 <= y < h:
                            continue
                        for q in range(kw):
                            x = j * stride - padding + q
                            if 0 <= x < w:
                                M[r, (ch * h + y) * w + x] += kernel[o, ch, p, q]
    return M


def maxpool_op(x, window):
    return kernels.maxpool_forward(np.ascontiguousarray(x), window)[0]


def avgpool_op(x, window):
    n, c, h, w = x.shape
    oh, ow = h // window, w // window
    blocks = x[:, :, :oh * window, :ow * window].reshape(n, c, oh, window, ow, window)
    return blocks.mean(axis=(3, 5))


def check_adjoint(op, rng=None, trials=5):
    """Worst relative mismatch of <A x, y> vs <x, A^T y> over random samples."""
    rng = np.random.default_rng(rng)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(op.in_shape)
        y = rng.standard_normal(op.out_shape)
        Ax = op.apply(x)
        lhs = float(np.vdot(Ax, y))
        rhs = float(np.vdot(x, op.adjoint(y)))
        # normalise by |Ax||y| so near-orthogonal draws do not blow up the ratio
        scale = max(float(np.linalg.norm(Ax) * np.linalg.norm(y)), 1e-300)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst

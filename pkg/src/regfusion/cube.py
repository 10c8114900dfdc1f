"""Third-order tensor algebra built on the mode-3 FFT (t-product family).

A "cube" is a dense real ndarray of shape (rows, cols, bands).  All image
and coefficient containers in this package are cubes; the band axis is the
spectral one.  The transform convention is numpy's: unnormalized forward
FFT along the band axis, 1/n3-scaled inverse.  This pins the value of the
tensor nuclear norm so golden tests are backend independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "as_cube",
    "unfold3",
    "fold3",
    "mode3_product",
    "t_product",
    "t_transpose",
    "t_svd",
    "TSvdFactors",
    "tnn",
    "average_rank",
]

# imaginary residue allowed when casting FFT results back to real
_IMAG_TOL = 1e-10


def as_cube(x) -> np.ndarray:
    """Validate and return ``x`` as a float64 cube (rows, cols, bands)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"cube must be 3-D, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError("cube contains non-finite entries")
    return arr


def unfold3(x) -> np.ndarray:
    """Mode-3 unfolding: (bands, rows*cols) matrix.

    Column j holds the spectral fiber at spatial index j, where j runs
    row-major over (row, col).  Exact inverse of :func:`fold3`.
    """
    x = as_cube(x)
    rows, cols, bands = x.shape
    return np.ascontiguousarray(x.reshape(rows * cols, bands).T)


def fold3(m, rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`unfold3` for a (bands, rows*cols) matrix."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != rows * cols:
        raise ValueError(f"cannot fold shape {m.shape} into {rows}x{cols} spatial grid")
    return np.ascontiguousarray(m.T.reshape(rows, cols, m.shape[0]))


def mode3_product(x, d) -> np.ndarray:
    """Mode-3 product: fold3(d @ unfold3(x)); maps bands -> d.shape[0]."""
    x = as_cube(x)
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[1] != x.shape[2]:
        raise ValueError(
            f"matrix with {d.shape[1] if d.ndim == 2 else '?'} columns does not match "
            f"{x.shape[2]} bands"
        )
    return fold3(d @ unfold3(x), x.shape[0], x.shape[1])


def _to_real(z: np.ndarray) -> np.ndarray:
    """Drop the imaginary part after asserting it is numerically zero."""
    scale = max(1.0, float(np.abs(z.real).max(initial=0.0)))
    resid = float(np.abs(z.imag).max(initial=0.0))
    if resid > _IMAG_TOL * scale:
        raise FloatingPointError(f"imaginary residue {resid:.3e} exceeds tolerance")
    return np.ascontiguousarray(z.real)


def t_product(a, b) -> np.ndarray:
    """t-product of cubes a (n1 x k x n3) and b (k x n2 x n3).

    FFT both along the band axis, multiply matching frontal slices,
    inverse FFT.  Equivalent to the block-circulant matrix product.
    """
    a = as_cube(a)
    b = as_cube(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape[1]} vs {b.shape[0]}")
    if a.shape[2] != b.shape[2]:
        raise ValueError(f"band counts differ: {a.shape[2]} vs {b.shape[2]}")
    fa = np.fft.fft(a, axis=2).transpose(2, 0, 1)
    fb = np.fft.fft(b, axis=2).transpose(2, 0, 1)
    fc = fa @ fb
    return _to_real(np.fft.ifft(fc.transpose(1, 2, 0), axis=2))


def t_transpose(x) -> np.ndarray:
    """Tensor conjugate transpose: swap the first two axes and reverse
    the order of frontal slices 2..n3."""
    x = as_cube(x)
    xt = x.transpose(1, 0, 2).copy()
    xt[:, :, 1:] = xt[:, :, :0:-1]
    return xt


@dataclass(frozen=True)
class TSvdFactors:
    """t-SVD factors: x == u * s * t_transpose(v) under the t-product.

    u is (n1, n1, n3), s is (n1, n2, n3) f-diagonal with nonnegative
    nonincreasing singular fibers in the FFT domain, v is (n2, n2, n3).
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return t_product(t_product(self.u, self.s), t_transpose(self.v))


def _fix_svd_signs(u: np.ndarray, vh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Make the first nonzero entry of each left singular vector real and
    nonnegative; compensate in vh so the product is unchanged."""
    for k in range(u.shape[1]):
        col = u[:, k]
        nz = np.flatnonzero(np.abs(col) > 1e-8)
        if nz.size == 0:
            continue
        lead = col[nz[0]]
        phase = lead / abs(lead)
        u[:, k] *= np.conj(phase)
        if k < vh.shape[0]:
            vh[k, :] *= phase
    return u, vh


def _half_slice_count(n3: int) -> int:
    # real input: FFT slices beyond n3//2 are conjugates of earlier ones
    return n3 // 2 + 1


def _slice_weights(n3: int) -> np.ndarray:
    w = np.full(_half_slice_count(n3), 2.0)
    w[0] = 1.0
    if n3 % 2 == 0:
        w[-1] = 1.0
    return w


def t_svd(x) -> TSvdFactors:
    """t-SVD of a cube.

    Only the first n3//2 + 1 FFT slices are decomposed; the rest follow
    by conjugate symmetry.  Singular values are nonnegative descending
    per slice, and a deterministic sign convention keeps the factors
    stable across LAPACK backends.
    """
    x = as_cube(x)
    n1, n2, n3 = x.shape
    xf = np.fft.fft(x, axis=2)
    uf = np.zeros((n1, n1, n3), dtype=complex)
    sf = np.zeros((n1, n2, n3), dtype=complex)
    vf = np.zeros((n2, n2, n3), dtype=complex)
    kmin = min(n1, n2)
    for t in range(_half_slice_count(n3)):
        um, sig, vh = np.linalg.svd(xf[:, :, t])
        um, vh = _fix_svd_signs(um, vh)
        uf[:, :, t] = um
        sf[:kmin, :kmin, t] = np.diag(sig)
        vf[:, :, t] = vh.conj().T
    for t in range(_half_slice_count(n3), n3):
        uf[:, :, t] = np.conj(uf[:, :, n3 - t])
        sf[:, :, t] = np.conj(sf[:, :, n3 - t])
        vf[:, :, t] = np.conj(vf[:, :, n3 - t])
    return TSvdFactors(
        u=_to_real(np.fft.ifft(uf, axis=2)),
        s=_to_real(np.fft.ifft(sf, axis=2)),
        v=_to_real(np.fft.ifft(vf, axis=2)),
    )


def _half_singular_values(x: np.ndarray):
    """Yield (weight, singular values) for the independent FFT slices."""
    x = as_cube(x)
    n3 = x.shape[2]
    xf = np.fft.fft(x, axis=2)
    weights = _slice_weights(n3)
    for t, w in enumerate(weights):
        yield w, np.linalg.svd(xf[:, :, t], compute_uv=False)


def tnn(x) -> float:
    """Tensor nuclear norm: mean nuclear norm of the FFT frontal slices."""
    x = as_cube(x)
    total = 0.0
    for w, sig in _half_singular_values(x):
        total += w * float(sig.sum())
    return total / x.shape[2]


def average_rank(x, tol: float = 1e-10) -> float:
    """Tensor average rank: mean rank of the FFT frontal slices.

    A singular value counts toward the rank of its slice when it exceeds
    ``tol`` times that slice's largest singular value.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = as_cube(x)
    total = 0.0
    for w, sig in _half_singular_values(x):
        if sig.size and sig[0] > 0:
            total += w * int(np.count_nonzero(sig > tol * sig[0]))
    return total / x.shape[2]

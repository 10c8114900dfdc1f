"""Spatial/spectral degradation operators, their adjoints, the FFT-domain
Sylvester solver used by every least-squares subproblem, and blind
estimation of the degradation from an unregistered image pair.

The spatial operator is a per-band circular convolution with a blur kernel
followed by decimation that keeps samples at indices 0, d, 2d, ...  The
spectral operator multiplies the band axis by a response matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .cube import as_cube, fold3, mode3_product, unfold3

__all__ = [
    "DegradationModel",
    "gaussian_kernel",
    "band_averaging_response",
    "default_model",
    "apply_hspa",
    "adjoint_hspa",
    "apply_hspec",
    "adjoint_hspec",
    "SylvesterSolver",
    "sylvester_solve",
    "estimate_degradation",
]


def gaussian_kernel(sigma: float, size: int | None = None) -> np.ndarray:
    """Normalized 2-D Gaussian blur kernel; default size 2*ceil(2*sigma)+1."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if size is None:
        size = 2 * int(np.ceil(2.0 * sigma)) + 1
    if size < 1 or size % 2 == 0:
        raise ValueError("kernel size must be a positive odd integer")
    r = np.arange(size) - size // 2
    g = np.exp(-0.5 * (r / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def band_averaging_response(out_bands: int, in_bands: int) -> np.ndarray:
    """Piecewise-constant response: each output band averages a contiguous
    group of input bands.  Rows are nonnegative and sum to 1."""
    if not 0 < out_bands <= in_bands:
        raise ValueError("need 0 < out_bands <= in_bands")
    edges = np.linspace(0, in_bands, out_bands + 1).round().astype(int)
    r = np.zeros((out_bands, in_bands))
    for i in range(out_bands):
        lo, hi = edges[i], max(edges[i + 1], edges[i] + 1)
        r[i, lo:hi] = 1.0 / (hi - lo)
    return r


@dataclass(frozen=True)
class DegradationModel:
    """Blur kernel (circularly applied PSF), decimation factor, and
    spectral response matrix (out_bands x in_bands)."""

    kernel: np.ndarray
    factor: int
    response: np.ndarray

    def __post_init__(self):
        kernel = np.asarray(self.kernel, dtype=np.float64)
        response = np.asarray(self.response, dtype=np.float64)
        if kernel.ndim != 2:
            raise ValueError("kernel must be a 2-D array")
        if abs(kernel.sum() - 1.0) > 1e-8:
            raise ValueError("kernel must sum to 1 (flux preserving)")
        if not (isinstance(self.factor, (int, np.integer)) and self.factor >= 1):
            raise ValueError("factor must be a positive integer")
        if response.ndim != 2:
            raise ValueError("response must be a 2-D matrix")
        if response.min(initial=0.0) < 0:
            warnings.warn("spectral response has negative entries", stacklevel=2)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "factor", int(self.factor))
        object.__setattr__(self, "response", response)

    @property
    def bands_in(self) -> int:
        return self.response.shape[1]

    @property
    def bands_out(self) -> int:
        return self.response.shape[0]


def default_model(factor: int, bands_in: int, bands_out: int,
                  sigma: float | None = None) -> DegradationModel:
    """Gaussian blur scaled to the decimation ratio (sigma = factor/2 by
    default) and a band-averaging spectral response."""
    if sigma is None:
        sigma = max(factor / 2.0, 0.5)
    return DegradationModel(
        kernel=gaussian_kernel(sigma),
        factor=factor,
        response=band_averaging_response(bands_out, bands_in),
    )


def _otf(kernel: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Kernel embedded at the origin with circular wrap, then fft2.

    The kernel center (size//2 per axis) lands on index (0, 0) so that
    convolution does not shift the image.
    """
    rows, cols = shape
    kh, kw = kernel.shape
    if kh > rows or kw > cols:
        raise ValueError(f"kernel {kernel.shape} larger than image {shape}")
    pad = np.zeros(shape)
    pad[:kh, :kw] = kernel
    pad = np.roll(pad, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.fft.fft2(pad)


def _check_divisible(shape, factor: int):
    if shape[0] % factor or shape[1] % factor:
        raise ValueError(f"spatial dims {shape[:2]} not divisible by factor {factor}")


def apply_hspa(m: DegradationModel, x) -> np.ndarray:
    """Spatial degradation: circular blur per band, then keep every
    factor-th sample starting at index 0."""
    x = as_cube(x)
    _check_divisible(x.shape, m.factor)
    otf = _otf(m.kernel, x.shape[:2])
    blurred = np.fft.ifft2(np.fft.fft2(x, axes=(0, 1)) * otf[:, :, None], axes=(0, 1)).real
    return np.ascontiguousarray(blurred[:: m.factor, :: m.factor, :])


def adjoint_hspa(m: DegradationModel, y, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Exact adjoint of :func:`apply_hspa`: zero-fill upsampling followed
    by circular correlation with the kernel."""
    y = as_cube(y)
    d = m.factor
    if shape is None:
        shape = (y.shape[0] * d, y.shape[1] * d)
    if shape[0] != y.shape[0] * d or shape[1] != y.shape[1] * d:
        raise ValueError("target shape inconsistent with decimation factor")
    up = np.zeros((shape[0], shape[1], y.shape[2]))
    up[::d, ::d, :] = y
    otf = _otf(m.kernel, shape)
    return np.fft.ifft2(np.fft.fft2(up, axes=(0, 1)) * np.conj(otf)[:, :, None], axes=(0, 1)).real


def apply_hspec(m: DegradationModel, x) -> np.ndarray:
    """Spectral degradation: fold3(response @ unfold3(x))."""
    x = as_cube(x)
    if m.response.shape[1] != x.shape[2]:
        raise ValueError(f"response expects {m.response.shape[1]} bands, cube has {x.shape[2]}")
    return mode3_product(x, m.response)


def adjoint_hspec(m: DegradationModel, z) -> np.ndarray:
    """Exact adjoint of :func:`apply_hspec` (response transposed)."""
    z = as_cube(z)
    if m.response.shape[0] != z.shape[2]:
        raise ValueError(f"adjoint expects {m.response.shape[0]} bands, cube has {z.shape[2]}")
    return mode3_product(z, m.response.T)


class SylvesterSolver:
    """Factorized form of  h1 @ L + L @ H2 = h3  with
    H2 = mu1 * (BS)(BS)^T implied by the model's blur and decimation.

    h1 must be symmetric positive definite.  Works in the 2-D Fourier
    domain: frequencies that alias under d-fold decimation form groups of
    d^2, on which the decimation operator is a rank-one average, so each
    group solves by a Sherman-Morrison update of the diagonal blur
    spectrum.  Construction caches the eigen-decomposition of h1 and the
    blur spectrum so repeated solves only pay for FFTs.
    """

    def __init__(self, h1: np.ndarray, m: DegradationModel, mu1: float,
                 shape: tuple[int, int]):
        h1 = np.asarray(h1, dtype=np.float64)
        rows, cols = shape
        d = m.factor
        _check_divisible(shape, d)
        lam, q = np.linalg.eigh(h1)
        if lam.min() <= 0:
            raise np.linalg.LinAlgError("h1 is not positive definite")
        self.shape = (rows, cols)
        self.nsub = h1.shape[0]
        self.d = d
        self.mu1 = float(mu1)
        self.lam = lam
        self.q = q
        self.otf = _otf(m.kernel, shape)
        hg = self.otf.reshape(d, rows // d, d, cols // d)
        self._group_energy = (np.abs(hg) ** 2).sum(axis=(0, 2))

    def solve(self, h3: np.ndarray) -> np.ndarray:
        rows, cols = self.shape
        d = self.d
        if h3.shape != (self.nsub, rows * cols):
            raise ValueError(f"h3 shape {h3.shape} does not match ({self.nsub}, {rows * cols})")
        v = np.fft.fft2((self.q.T @ h3).reshape(self.nsub, rows, cols), axes=(1, 2))
        hg = self.otf.reshape(d, rows // d, d, cols // d)
        t = (hg[None] * v.reshape(self.nsub, d, rows // d, d, cols // d)).sum(axis=(1, 3))
        c = self.mu1 / d**2
        lam = self.lam[:, None, None]
        corr = np.tile(c * t / (lam + c * self._group_energy[None]), (1, d, d))
        w = (v - np.conj(self.otf)[None] * corr) / lam
        lt = np.fft.ifft2(w, axes=(1, 2)).real.reshape(self.nsub, rows * cols)
        return self.q @ lt


def sylvester_solve(h1: np.ndarray, m: DegradationModel, h3: np.ndarray,
                    mu1: float, shape: tuple[int, int]) -> np.ndarray:
    """One-shot wrapper around :class:`SylvesterSolver`."""
    h3 = np.asarray(h3, dtype=np.float64)
    return SylvesterSolver(h1, m, mu1, shape).solve(h3)


def _decimated_shift(z3: np.ndarray, shape, shift, d: int) -> np.ndarray:
    """Bands x pixels design column: circularly shift, then decimate."""
    rows, cols = shape
    img = z3.reshape(-1, rows, cols)
    rolled = np.roll(img, shift, axis=(1, 2))
    return rolled[:, ::d, ::d].reshape(z3.shape[0], -1)


def _first_difference(n: int) -> np.ndarray:
    dmat = np.zeros((max(n - 1, 1), n))
    for i in range(n - 1):
        dmat[i, i] = 1.0
        dmat[i, i + 1] = -1.0
    return dmat


def _kernel_smoother(size: int) -> np.ndarray:
    """First differences along both axes of a size x size kernel grid."""
    d1 = _first_difference(size)
    eye = np.eye(size)
    return np.vstack([np.kron(d1, eye), np.kron(eye, d1)])


def estimate_degradation(y, z, lambda_r: float, lambda_b: float,
                         kernel_size: int, max_outer: int = 50,
                         tol: float = 1e-6) -> DegradationModel:
    """Estimate response and blur from an unregistered pair by alternating
    ridge least squares on  || R @ Y3 - Z3 @ BS ||_F^2  with quadratic
    first-difference smoothness on both unknowns.

    y is the low-resolution many-band cube, z the high-resolution few-band
    cube; z's spatial dims must be an integer multiple of y's.  The kernel
    is constrained to sum to 1 (removes the joint scale ambiguity).
    """
    y = as_cube(y)
    z = as_cube(z)
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError("kernel_size must be a positive odd integer")
    if z.shape[0] % y.shape[0] or z.shape[1] % y.shape[1]:
        raise ValueError("shape ratio between z and y is not an integer")
    d = z.shape[0] // y.shape[0]
    if z.shape[1] // y.shape[1] != d:
        raise ValueError("shape ratio differs between axes")
    if np.linalg.norm(y) == 0 or np.linalg.norm(z) == 0:
        raise ValueError("degenerate all-zero input")

    y3 = unfold3(y)
    z3 = unfold3(z)
    hy, hz = y3.shape[0], z3.shape[0]

    # design matrix: one column per kernel tap (shift z, blur by a delta
    # at that tap, decimate); the fit is linear in the tap weights
    c = kernel_size // 2
    columns = []
    for i in range(kernel_size):
        for j in range(kernel_size):
            col = _decimated_shift(z3, z.shape[:2], (i - c, j - c), d)
            columns.append(col.ravel())
    a = np.stack(columns, axis=1)
    k = kernel_size**2
    dd = _kernel_smoother(kernel_size)
    ata = a.T @ a + lambda_b * (dd.T @ dd)
    gg = _first_difference(hy)
    yyt = y3 @ y3.T + lambda_r * (gg.T @ gg)

    kernel = gaussian_kernel(max(d / 2.0, 0.5), kernel_size).ravel()
    resp = np.zeros((hz, hy))
    prev_obj = np.inf
    for _ in range(max_outer):
        zbs = (a @ kernel).reshape(hz, -1)
        resp = np.linalg.solve(yyt, y3 @ zbs.T).T
        target = a.T @ (resp @ y3).ravel()
        # equality-constrained ridge: kernel taps sum to 1 (KKT system)
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = ata
        kkt[:k, k] = 1.0
        kkt[k, :k] = 1.0
        rhs = np.concatenate([target, [1.0]])
        kernel = np.linalg.solve(kkt, rhs)[:k]
        obj = (
            np.linalg.norm(resp @ y3 - (a @ kernel).reshape(hz, -1)) ** 2
            + lambda_r * np.linalg.norm(resp @ gg.T) ** 2
            + lambda_b * np.linalg.norm(dd @ kernel) ** 2
        )
        if prev_obj < np.inf and abs(prev_obj - obj) <= tol * max(prev_obj, 1e-30):
            break
        prev_obj = obj

    kernel = kernel.reshape(kernel_size, kernel_size)
    kernel = kernel / kernel.sum()
    return DegradationModel(kernel=kernel, factor=d, response=resp)

"""Sparsity penalty family (l1 / logarithm / MCP) and its proximal operators.

Three proximal flavors are provided: scalar (closed form, exact minimizer),
singular-fiber (shrinkage of t-SVD singular values in the FFT domain), and
group (fiberwise shrinkage of mode-3 fiber norms).  Two composite norms are
built on top of them: a spectral one summing the penalty over FFT-slice
singular values, and a group one summing the penalty over fiber norms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cube import as_cube, _half_singular_values, _half_slice_count, _to_real

__all__ = [
    "PenaltySpec",
    "psi_eval",
    "prox_scalar",
    "norm_psi",
    "prox_tnn_psi",
    "norm_group",
    "prox_group",
]

KINDS = ("l1", "log", "mcp")


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty kind plus its concavity parameter theta (unused for l1).

    The logarithm penalty is shifted by -log(theta) so that psi(0) == 0;
    the shift is a constant and leaves every proximal map unchanged.
    """

    kind: str = "mcp"
    theta: float = 8.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown penalty kind {self.kind!r}, expected one of {KINDS}")
        if self.kind in ("log", "mcp") and not self.theta > 0:
            raise ValueError("theta must be positive for log and mcp penalties")


def psi_eval(p: PenaltySpec, x):
    """Evaluate the penalty elementwise; symmetric, psi(0) == 0."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    if p.kind == "l1":
        return x
    if p.kind == "log":
        return np.log(x + p.theta) - np.log(p.theta)
    th = p.theta
    return np.where(x <= th, x - x * x / (2.0 * th), th / 2.0)


def _prox_objective(p: PenaltySpec, alpha: float, x, z):
    return alpha * psi_eval(p, x) + 0.5 * (x - z) ** 2


def _prox_mcp_magnitude(alpha: float, theta: float, a: np.ndarray) -> np.ndarray:
    """Exact prox magnitude for MCP via candidate enumeration.

    The objective alpha*psi(x) + (x-a)^2/2 is piecewise quadratic on
    [0, theta] and [theta, inf); every local minimizer is one of: 0, the
    inner stationary point clipped to [0, theta], theta itself, or a on
    the flat branch.  Ties break toward 0 (the sparser solution).  This
    also covers theta <= alpha, where the inner branch is non-convex.
    """
    denom = 1.0 - alpha / theta
    with np.errstate(divide="ignore", invalid="ignore"):
        stationary = (a - alpha) / denom
    if denom > 0:
        inner = np.clip(stationary, 0.0, theta)
    else:
        # concave or flat inner branch: minimum sits at an endpoint
        inner = np.zeros_like(a)
    cands = np.stack([np.zeros_like(a), inner, np.full_like(a, theta), np.maximum(a, theta)])
    p = PenaltySpec("mcp", theta)
    objs = _prox_objective(p, alpha, cands, a)
    # argmin returns the first minimizer; candidate 0 is listed first
    best = np.argmin(objs, axis=0)
    return np.take_along_axis(cands, best[None], axis=0)[0]


def _prox_log_magnitude(alpha: float, theta: float, a: np.ndarray) -> np.ndarray:
    """Exact prox magnitude for the log penalty.

    The positive stationary point (a - theta + sqrt(disc))/2 exists when
    disc = (a + theta)^2 - 4*alpha > 0; it must still beat the objective
    at 0 because the problem is nonconvex.  Ties break toward 0.
    """
    disc = (a + theta) ** 2 - 4.0 * alpha
    root = np.where(disc > 0, (a - theta + np.sqrt(np.maximum(disc, 0.0))) / 2.0, 0.0)
    root = np.maximum(root, 0.0)
    p = PenaltySpec("log", theta)
    take_root = _prox_objective(p, alpha, root, a) < _prox_objective(p, alpha, 0.0, a)
    return np.where(take_root, root, 0.0)


def prox_scalar(p: PenaltySpec, alpha: float, z):
    """Proximal map argmin_x alpha*psi(x) + (x - z)^2 / 2, elementwise.

    Exact minimizer for all parameter combinations; for MCP with
    theta > alpha it reduces to the three-branch closed form with middle
    branch sign(z)(|z| - alpha)/(1 - alpha/theta).
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    z = np.asarray(z, dtype=np.float64)
    a = np.abs(z)
    if p.kind == "l1":
        mag = np.maximum(a - alpha, 0.0)
    elif p.kind == "mcp":
        mag = _prox_mcp_magnitude(alpha, p.theta, a)
    else:
        mag = _prox_log_magnitude(alpha, p.theta, a)
    out = np.sign(z) * mag
    return out if out.ndim else float(out)


def norm_psi(p: PenaltySpec, x) -> float:
    """Spectral penalty norm: mean over FFT slices of sum psi(sigma)."""
    x = as_cube(x)
    total = 0.0
    for w, sig in _half_singular_values(x):
        total += w * float(np.sum(psi_eval(p, sig)))
    return total / x.shape[2]


def prox_tnn_psi(p: PenaltySpec, alpha: float, a) -> np.ndarray:
    """Singular-fiber shrinkage: t-SVD of ``a`` with prox_scalar applied to
    each FFT-domain singular value, then reassembled.

    With p.kind == "l1" this is exactly tensor singular value thresholding
    max(sigma - alpha, 0).
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    a = as_cube(a)
    n1, n2, n3 = a.shape
    af = np.fft.fft(a, axis=2)
    out = np.zeros_like(af)
    half = _half_slice_count(n3)
    for t in range(half):
        um, sig, vh = np.linalg.svd(af[:, :, t], full_matrices=False)
        shrunk = prox_scalar(p, alpha, sig)
        out[:, :, t] = (um * shrunk) @ vh
    for t in range(half, n3):
        out[:, :, t] = np.conj(out[:, :, n3 - t])
    return _to_real(np.fft.ifft(out, axis=2))


def norm_group(p: PenaltySpec, e) -> float:
    """Group penalty norm: sum over spatial sites of psi(||fiber||_2)."""
    e = as_cube(e)
    norms = np.sqrt(np.sum(e * e, axis=2))
    return float(np.sum(psi_eval(p, norms)))


def prox_group(p: PenaltySpec, beta: float, z) -> np.ndarray:
    """Fiberwise prox of the group norm: each mode-3 fiber is rescaled by
    prox_scalar(p, beta, ||fiber||) / ||fiber|| (zero fibers stay zero)."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    z = as_cube(z)
    norms = np.sqrt(np.sum(z * z, axis=2))
    shrunk = prox_scalar(p, beta, norms)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > 0, shrunk / np.where(norms > 0, norms, 1.0), 0.0)
    return z * scale[:, :, None]

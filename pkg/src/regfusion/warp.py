"""Per-band parametric geometric transforms, bicubic resampling, warp
Jacobians, and the linearized warp operator used by the Gauss-Newton loop.

Conventions
-----------
A transform maps output pixel coordinates to source coordinates:
``out[r, c] = band(sr(r, c), sc(r, c))``.  Coordinates are (row, col) in
pixel units, except the radial kind which works in coordinates normalized
to [-1, 1] about the image center.  Sampling is Keys bicubic (a = -1/2)
with edge replication; it reproduces samples at integer coordinates
bit-exactly and has a continuous first derivative, which the Jacobians
differentiate analytically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cube import as_cube

__all__ = [
    "TransformStack",
    "WarpJacobians",
    "warp_cube",
    "warp_jacobian",
    "apply_j",
    "delta_tau_solve",
]

KIND_NPARAMS = {"translation": 2, "similarity": 4, "affine": 6, "radial": 1}

_IDENTITY = {
    "translation": (0.0, 0.0),
    "similarity": (1.0, 0.0, 0.0, 0.0),
    "affine": (1.0, 0.0, 0.0, 1.0, 0.0, 0.0),
    "radial": (0.0,),
}


@dataclass
class TransformStack:
    """One parameter vector per band for a single transform kind.

    translation: (dr, dc) source offset in pixels.
    similarity:  (a, b, tr, tc) with linear part [[a, -b], [b, a]].
    affine:      (a11, a12, a21, a22, tr, tc), row-major linear part.
    radial:      (k1,) in r' = r (1 + k1 r^2) on center-normalized coords.
    """

    kind: str
    params: np.ndarray

    def __post_init__(self):
        if self.kind not in KIND_NPARAMS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        p = np.atleast_2d(np.asarray(self.params, dtype=np.float64))
        if p.shape[1] != KIND_NPARAMS[self.kind]:
            raise ValueError(
                f"{self.kind} expects {KIND_NPARAMS[self.kind]} parameters per band, "
                f"got {p.shape[1]}"
            )
        self.params = p

    @classmethod
    def identity(cls, kind: str, bands: int) -> "TransformStack":
        return cls(kind, np.tile(_IDENTITY[kind], (bands, 1)))

    @classmethod
    def zeros(cls, kind: str, bands: int) -> "TransformStack":
        """Zero increment (neutral element of parameter addition)."""
        return cls(kind, np.zeros((bands, KIND_NPARAMS[kind])))

    @property
    def bands(self) -> int:
        return self.params.shape[0]

    def validate(self):
        if not np.all(np.isfinite(self.params)):
            raise ValueError("transform parameters contain non-finite values")
        if self.kind == "affine":
            det = (self.params[:, 0] * self.params[:, 3]
                   - self.params[:, 1] * self.params[:, 2])
            if np.any(np.abs(det) <= 1e-8):
                raise ValueError("affine linear part is singular")
        if self.kind == "radial" and np.any(np.abs(self.params[:, 0]) >= 0.5):
            raise ValueError("|k1| must stay below 0.5")

    def __add__(self, other: "TransformStack") -> "TransformStack":
        if self.kind != other.kind or self.params.shape != other.params.shape:
            raise ValueError("incompatible transform stacks")
        return TransformStack(self.kind, self.params + other.params)

    def norm(self) -> float:
        return float(np.linalg.norm(self.params))

    def increment_displacement(self, shape: tuple[int, int]) -> np.ndarray:
        """Per-band maximum displacement (pixels) this stack induces when
        read as a parameter increment.

        All supported coordinate maps are linear in their parameters, so
        the displacement of an increment is the parameter-partial field
        contracted with the parameters, independent of the base transform.
        """
        _, _, drs, dcs = _source_coords(self.kind, np.zeros(KIND_NPARAMS[self.kind]), shape)
        out = np.empty(self.bands)
        for i in range(self.bands):
            dr = np.tensordot(self.params[i], drs, axes=(0, 0))
            dc = np.tensordot(self.params[i], dcs, axes=(0, 0))
            out[i] = max(np.abs(dr).max(), np.abs(dc).max())
        return out

    def to_text(self) -> str:
        lines = []
        for row in self.params:
            lines.append(self.kind + " " + " ".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TransformStack":
        rows = []
        kind = None
        for line in text.strip().splitlines():
            parts = line.split()
            if not parts:
                continue
            if kind is None:
                kind = parts[0]
            elif parts[0] != kind:
                raise ValueError("mixed transform kinds in one stack")
            rows.append([float(v) for v in parts[1:]])
        if kind is None:
            raise ValueError("empty transform stack")
        return cls(kind, np.asarray(rows))


def _source_coords(kind: str, p: np.ndarray, shape: tuple[int, int]):
    """Source coordinate maps (sr, sc) on the full pixel grid, plus the
    per-parameter partials of (sr, sc), stacked (nparams, rows, cols)."""
    rows, cols = shape
    r, c = np.meshgrid(np.arange(rows, dtype=float), np.arange(cols, dtype=float),
                       indexing="ij")
    if kind == "translation":
        sr = r + p[0]
        sc = c + p[1]
        drs = np.stack([np.ones_like(r), np.zeros_like(r)])
        dcs = np.stack([np.zeros_like(c), np.ones_like(c)])
    elif kind == "similarity":
        a, b, tr, tc = p
        sr = a * r - b * c + tr
        sc = b * r + a * c + tc
        drs = np.stack([r, -c, np.ones_like(r), np.zeros_like(r)])
        dcs = np.stack([c, r, np.zeros_like(c), np.ones_like(c)])
    elif kind == "affine":
        a11, a12, a21, a22, tr, tc = p
        sr = a11 * r + a12 * c + tr
        sc = a21 * r + a22 * c + tc
        zero = np.zeros_like(r)
        one = np.ones_like(r)
        drs = np.stack([r, c, zero, zero, one, zero])
        dcs = np.stack([zero, zero, r, c, zero, one])
    else:  # radial
        k1 = p[0]
        cr, cc = (rows - 1) / 2.0, (cols - 1) / 2.0
        scale_r = max(cr, 0.5)
        scale_c = max(cc, 0.5)
        rn = (r - cr) / scale_r
        cn = (c - cc) / scale_c
        rho2 = rn * rn + cn * cn
        f = 1.0 + k1 * rho2
        sr = cr + rn * f * scale_r
        sc = cc + cn * f * scale_c
        drs = (rn * rho2 * scale_r)[None]
        dcs = (cn * rho2 * scale_c)[None]
    return sr, sc, drs, dcs


def _keys_weights(t: np.ndarray):
    """Keys cubic (a = -1/2) weights and derivatives at fraction t in [0, 1)
    for the four neighbors at offsets -1, 0, 1, 2."""
    # distances to the neighbors, all in [0, 2]
    x0 = t + 1.0
    x1 = t
    x2 = 1.0 - t
    x3 = 2.0 - t
    w0 = -0.5 * x0**3 + 2.5 * x0**2 - 4.0 * x0 + 2.0
    w1 = 1.5 * x1**3 - 2.5 * x1**2 + 1.0
    w2 = 1.5 * x2**3 - 2.5 * x2**2 + 1.0
    w3 = -0.5 * x3**3 + 2.5 * x3**2 - 4.0 * x3 + 2.0
    # d/dt of each weight (note x2, x3 decrease with t)
    g0 = -1.5 * x0**2 + 5.0 * x0 - 4.0
    g1 = 4.5 * x1**2 - 5.0 * x1
    g2 = -(4.5 * x2**2 - 5.0 * x2)
    g3 = -(-1.5 * x3**2 + 5.0 * x3 - 4.0)
    return (w0, w1, w2, w3), (g0, g1, g2, g3)


def _sample_band(band: np.ndarray, sr: np.ndarray, sc: np.ndarray,
                 want_grad: bool = False):
    """Bicubic sample of a 2-D band at (sr, sc) with edge replication.

    Returns the values, and when ``want_grad`` also d/dsr and d/dsc of the
    interpolant (analytic kernel derivatives, consistent with clamping).
    """
    rows, cols = band.shape
    fr = np.floor(sr)
    fc = np.floor(sc)
    tr = sr - fr
    tc = sc - fc
    fr = fr.astype(np.int64)
    fc = fc.astype(np.int64)
    (wr, gr) = _keys_weights(tr)
    (wc, gc) = _keys_weights(tc)
    val = np.zeros_like(sr)
    dvr = np.zeros_like(sr) if want_grad else None
    dvc = np.zeros_like(sr) if want_grad else None
    for i in range(4):
        ri = np.clip(fr + (i - 1), 0, rows - 1)
        for j in range(4):
            cj = np.clip(fc + (j - 1), 0, cols - 1)
            v = band[ri, cj]
            val += wr[i] * wc[j] * v
            if want_grad:
                dvr += gr[i] * wc[j] * v
                dvc += wr[i] * gc[j] * v
    if want_grad:
        return val, dvr, dvc
    return val


def warp_cube(y, tau: TransformStack) -> np.ndarray:
    """Resample each band of ``y`` at its transform's source coordinates."""
    y = as_cube(y)
    tau.validate()
    if tau.bands != y.shape[2]:
        raise ValueError(f"transform has {tau.bands} bands, cube has {y.shape[2]}")
    out = np.empty_like(y)
    for i in range(y.shape[2]):
        sr, sc, _, _ = _source_coords(tau.kind, tau.params[i], y.shape[:2])
        out[:, :, i] = _sample_band(y[:, :, i], sr, sc)
    return out


@dataclass
class WarpJacobians:
    """Per-band Jacobians of the (optionally norm-normalized) warped band
    with respect to the transform parameters: (bands, rows*cols, nparams)."""

    kind: str
    mats: np.ndarray
    shape: tuple[int, int]

    @property
    def bands(self) -> int:
        return self.mats.shape[0]


def warp_jacobian(y, tau: TransformStack, normalize: bool = True) -> WarpJacobians:
    """Analytic Jacobian of each warped band with respect to its parameters.

    Chain rule: interpolant spatial gradients sampled at the warped
    coordinates times the coordinate-map parameter partials.  When
    ``normalize`` is set, the band is treated as vec(warped)/||vec(warped)||
    and the projector (I - u u^T)/||v|| is applied, which kills uniform
    intensity components (a constant band has a zero Jacobian).
    """
    y = as_cube(y)
    tau.validate()
    if tau.bands != y.shape[2]:
        raise ValueError(f"transform has {tau.bands} bands, cube has {y.shape[2]}")
    rows, cols, bands = y.shape
    nparams = KIND_NPARAMS[tau.kind]
    mats = np.empty((bands, rows * cols, nparams))
    for i in range(bands):
        sr, sc, drs, dcs = _source_coords(tau.kind, tau.params[i], (rows, cols))
        val, dvr, dvc = _sample_band(y[:, :, i], sr, sc, want_grad=True)
        jac = (dvr[None] * drs + dvc[None] * dcs).reshape(nparams, -1).T
        if normalize:
            v = val.ravel()
            nv = float(np.linalg.norm(v))
            if nv == 0.0:
                raise ValueError(f"band {i} warps to zero, cannot normalize")
            u = v / nv
            jac = (jac - np.outer(u, u @ jac)) / nv
        mats[i] = jac
    return WarpJacobians(kind=tau.kind, mats=mats, shape=(rows, cols))


def apply_j(j: WarpJacobians, dtau: TransformStack) -> np.ndarray:
    """Linearized warp increment: band i of the output is J_i @ dtau_i."""
    if dtau.kind != j.kind or dtau.bands != j.bands:
        raise ValueError("increment does not match the Jacobians")
    rows, cols = j.shape
    out = np.empty((rows, cols, j.bands))
    for i in range(j.bands):
        out[:, :, i] = (j.mats[i] @ dtau.params[i]).reshape(rows, cols)
    return out


def _ls_band(jac: np.ndarray, rhs_vec: np.ndarray) -> np.ndarray:
    """Least-squares solve for one band's parameter increment.

    Well-conditioned Grams solve exactly; rank-deficient ones (flat image
    regions) fall back to a ridge with damping 1e-8 times the largest Gram
    eigenvalue, which keeps the Gauss-Newton step defined.
    """
    gram = jac.T @ jac
    rhs = jac.T @ rhs_vec
    evals = np.linalg.eigvalsh(gram)
    lam_max = float(evals[-1])
    if lam_max <= 0.0:
        return np.zeros(jac.shape[1])
    if evals[0] > 1e-12 * lam_max:
        return np.linalg.solve(gram, rhs)
    damp = 1e-8 * lam_max
    return np.linalg.solve(gram + damp * np.eye(gram.shape[0]), rhs)


def delta_tau_solve(j: WarpJacobians, m) -> TransformStack:
    """Per-band least-squares parameter increment J_i^+ (band i of m)."""
    m = as_cube(m)
    if m.shape[:2] != j.shape or m.shape[2] != j.bands:
        raise ValueError("residual cube does not match the Jacobians")
    params = np.zeros((j.bands, j.mats.shape[2]))
    for i in range(j.bands):
        params[i] = _ls_band(j.mats[i], m[:, :, i].ravel())
    return TransformStack(j.kind, params)

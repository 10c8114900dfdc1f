"""Synthetic dataset generation: degrade a known ground truth into a
low-resolution many-band cube and a high-resolution few-band cube, with
one of five per-band geometric perturbations applied to the many-band
branch (Wald-style protocol, so fusion quality is measurable)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi

from .cube import as_cube, mode3_product, t_product
from .degradation import DegradationModel, apply_hspa, apply_hspec
from .warp import TransformStack, warp_cube

__all__ = ["SimSpec", "SCENARIOS", "simulate", "make_test_cube", "draw_transforms"]

SCENARIOS = ("translation", "rotation", "flip", "barrel", "pincushion")

# scenario -> transform kind used to realize it
_SCENARIO_KIND = {
    "translation": "translation",
    "rotation": "similarity",
    "flip": "affine",
    "barrel": "radial",
    "pincushion": "radial",
}


@dataclass(frozen=True)
class SimSpec:
    """Scenario description: ground-truth source, perturbation kind and
    magnitude, degradation model, optional noise level, and the seed.

    Magnitude units: pixels (translation), degrees (rotation), distortion
    coefficient k1 (barrel/pincushion); ignored for flip.
    """

    source: object
    scenario: str
    magnitude: float
    model: DegradationModel
    noise_snr: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}, expected one of {SCENARIOS}")
        if self.magnitude < 0:
            raise ValueError("magnitude must be nonnegative")


def make_test_cube(rows: int, cols: int, bands: int, rank: int = 3,
                   seed: int = 0, tubal_rank: int = 2) -> np.ndarray:
    """Smooth synthetic ground truth that is exactly representable in a
    ``rank``-dimensional spectral subspace containing the constant band
    direction, with low tubal-rank coefficients, scaled into [0, 1]."""
    if rank < 2 or rank > bands:
        raise ValueError("need 2 <= rank <= bands")
    rng = np.random.default_rng(seed)
    base = np.ones((bands, 1)) / np.sqrt(bands)
    rest = rng.standard_normal((bands, rank - 1))
    rest -= base @ (base.T @ rest)
    rest, _ = np.linalg.qr(rest)
    dmat = np.hstack([base, rest])

    a = ndi.gaussian_filter(rng.random((rows, tubal_rank, rank)), sigma=(3, 0, 0))
    b = ndi.gaussian_filter(rng.random((tubal_rank, cols, rank)), sigma=(0, 3, 0))
    coeff = t_product(a, b)
    coeff /= np.abs(coeff).max()
    # dominant positive component along the constant direction keeps the
    # cube positive without adding an out-of-subspace shift
    coeff[:, :, 0] = 2.0 + coeff[:, :, 0]
    coeff[:, :, 1:] *= 0.5
    x = mode3_product(coeff, dmat)
    lo = x.min()
    if lo <= 0:
        # rescale the non-constant components until positive
        coeff[:, :, 1:] *= 0.5
        x = mode3_product(coeff, dmat)
    return x / x.max()


def draw_transforms(scenario: str, magnitude: float, bands: int, shape,
                    rng: np.random.Generator) -> TransformStack:
    """Per-band transform draw for a scenario at the given magnitude."""
    kind = _SCENARIO_KIND[scenario]
    if scenario == "translation":
        params = rng.uniform(-magnitude, magnitude, size=(bands, 2))
    elif scenario == "rotation":
        rows, cols = shape
        cr, cc = (rows - 1) / 2.0, (cols - 1) / 2.0
        params = np.zeros((bands, 4))
        ang = np.radians(rng.uniform(-magnitude, magnitude, size=bands))
        a, b = np.cos(ang), np.sin(ang)
        params[:, 0] = a
        params[:, 1] = b
        # rotate about the image center
        params[:, 2] = cr - (a * cr - b * cc)
        params[:, 3] = cc - (b * cr + a * cc)
    elif scenario == "flip":
        rows, cols = shape
        params = np.tile([1.0, 0.0, 0.0, -1.0, 0.0, cols - 1.0], (bands, 1))
    else:
        sign = 1.0 if scenario == "barrel" else -1.0
        k1 = sign * magnitude * rng.uniform(0.8, 1.0, size=bands)
        params = k1[:, None]
    return TransformStack(kind, params)


def _add_noise(signal: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    power = np.mean(signal**2)
    sigma = np.sqrt(power / 10.0 ** (snr_db / 10.0))
    return signal + sigma * rng.standard_normal(signal.shape)


def simulate(spec: SimSpec):
    """Generate (y, z, ground_truth, true_tau).

    The perturbation warps the many-band branch before spatial
    degradation: y = H_spa(warp(gt, tau)) [+ noise], z = H_spec(gt)
    [+ noise].  Deterministic for a fixed seed.
    """
    from .tensorio import read_cube  # local import to avoid a cycle

    gt = spec.source
    if isinstance(gt, (str, bytes)) or hasattr(gt, "__fspath__"):
        gt = read_cube(gt)
    gt = as_cube(gt)
    rng = np.random.default_rng(spec.seed)
    tau = draw_transforms(spec.scenario, spec.magnitude, gt.shape[2], gt.shape[:2], rng)
    tau.validate()
    y = apply_hspa(spec.model, warp_cube(gt, tau))
    z = apply_hspec(spec.model, gt)
    if spec.noise_snr is not None:
        y = _add_noise(y, spec.noise_snr, rng)
        z = _add_noise(z, spec.noise_snr, rng)
    return y, z, gt, tau

"""Synthetic short-axis cardiac phantoms and labeled registration pairs.

The phantom mimics a short-axis slice: a bright disc (label 1, "LV cavity"),
the muscular ring around it (label 2, "myocardium"), and a crescent hugging
the left half of the ring (label 3, "RV cavity") on a dark background.
Pairs are built by warping one phantom with a seeded smooth deformation, so
dense ground-truth correspondence is known by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .bspline import ControlGrid, densify, random_smooth_deformation, warp_image, warp_labels
from .errors import ConfigurationError
from .image import Image2D, LabelMap

__all__ = ["PhantomSpec", "PhantomPair", "make_phantom", "make_pair", "augment_pairs"]

LV_CAVITY = 1
MYOCARDIUM = 2
RV_CAVITY = 3


@dataclass
class PhantomSpec:
    width: int = 112
    height: int = 112
    center: tuple = (62.0, 56.0)  # (x, y); off-center so the RV crescent fits
    lv_radius: float = 13.0
    myo_outer_radius: float = 22.0
    rv_thickness: float = 8.0
    intensities: dict = field(default_factory=lambda: {
        0: 0.15, LV_CAVITY: 0.95, MYOCARDIUM: 0.45, RV_CAVITY: 0.8})
    noise_amplitude: float = 0.02
    smooth_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ConfigurationError("phantom must be at least 8x8")
        if not (0 < self.lv_radius < self.myo_outer_radius):
            raise ConfigurationError("radii must be positive and nested")
        if self.rv_thickness <= 0:
            raise ConfigurationError("rv_thickness must be positive")
        cx, cy = self.center
        if cx + self.myo_outer_radius >= self.width or cy + self.myo_outer_radius + self.rv_thickness >= self.height:
            raise ConfigurationError("phantom geometry does not fit the image")
        if cx - self.myo_outer_radius - self.rv_thickness < 0:
            raise ConfigurationError("phantom geometry does not fit the image")

    def analytic_areas(self) -> dict:
        """Exact region areas in pixels^2 for rasterization checks."""
        r_lv = self.lv_radius
        r_myo = self.myo_outer_radius
        r_rv = r_myo + self.rv_thickness
        return {
            LV_CAVITY: math.pi * r_lv**2,
            MYOCARDIUM: math.pi * (r_myo**2 - r_lv**2),
            RV_CAVITY: math.pi * (r_rv**2 - r_myo**2) / 2.0,
        }


@dataclass
class PhantomPair:
    fixed_image: Image2D
    fixed_labels: LabelMap
    moving_image: Image2D
    moving_labels: LabelMap
    true_grid: ControlGrid

    @property
    def true_field(self):
        fld = densify(self.true_grid, self.fixed_image.width, self.fixed_image.height)
        fld.spacing = self.fixed_image.spacing
        return fld


def make_phantom(spec: PhantomSpec):
    """Deterministic phantom image + label map for one spec."""
    cx, cy = spec.center
    xx, yy = np.meshgrid(np.arange(spec.width, dtype=np.float64),
                         np.arange(spec.height, dtype=np.float64))
    r = np.hypot(xx - cx, yy - cy)
    labels = np.zeros((spec.height, spec.width), dtype=np.int32)
    labels[r <= spec.lv_radius] = LV_CAVITY
    labels[(r > spec.lv_radius) & (r <= spec.myo_outer_radius)] = MYOCARDIUM
    crescent = (r > spec.myo_outer_radius) & (r <= spec.myo_outer_radius + spec.rv_thickness) & (xx < cx)
    labels[crescent] = RV_CAVITY

    data = np.empty((spec.height, spec.width), dtype=np.float64)
    for lbl, inten in spec.intensities.items():
        data[labels == lbl] = inten
    if spec.noise_amplitude > 0:
        rng = np.random.default_rng(spec.seed)
        data = data + rng.uniform(-spec.noise_amplitude, spec.noise_amplitude, data.shape)
    if spec.smooth_sigma > 0:
        data = gaussian_filter(data, spec.smooth_sigma, mode="nearest")
    np.clip(data, 0.0, 1.0, out=data)
    return Image2D(data), LabelMap(labels, num_classes=4)


def make_pair(spec: PhantomSpec, deform_magnitude_px: float = 2.0, seed: int = 0,
              control_spacing_px: float = 16.0,
              observation_noise: float = 0.0) -> PhantomPair:
    """Labeled pair with known ground truth: fixed is the phantom warped by a seeded field.

    ``observation_noise`` adds independent seeded noise to the two images after
    warping, mimicking per-acquisition scanner noise that no deformation can
    reconcile.
    """
    moving_img, moving_lab = make_phantom(spec)
    grid = random_smooth_deformation(spec.width, spec.height, deform_magnitude_px,
                                     seed=seed, spacing_px=control_spacing_px)
    fld = densify(grid, spec.width, spec.height)
    fixed_img = warp_image(moving_img, fld)
    fixed_lab = warp_labels(moving_lab, fld)
    if observation_noise > 0:
        rng = np.random.default_rng((seed, 1))
        shape = fixed_img.data.shape
        fixed_img = Image2D(np.clip(
            fixed_img.data + rng.uniform(-observation_noise, observation_noise, shape), 0, 1))
        moving_img = Image2D(np.clip(
            moving_img.data + rng.uniform(-observation_noise, observation_noise, shape), 0, 1))
    return PhantomPair(fixed_image=fixed_img, fixed_labels=fixed_lab,
                       moving_image=moving_img, moving_labels=moving_lab,
                       true_grid=grid)


def augment_pairs(spec: PhantomSpec, deform_magnitude_px: float = 2.0, seed: int = 0,
                  factor: int = 8, control_spacing_px: float = 16.0):
    """Expand one base phantom into ``factor`` pairs with fresh deformation seeds."""
    seq = np.random.SeedSequence(seed)
    child_seeds = [int(s.generate_state(1)[0]) for s in seq.spawn(factor)]
    return [make_pair(spec, deform_magnitude_px, seed=s,
                      control_spacing_px=control_spacing_px) for s in child_seeds]

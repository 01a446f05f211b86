"""Multi-coil Cartesian MRI forward model.

Measurements follow  y = E x + n  where E applies coil sensitivities,
a centered unitary 2-D FFT and a column undersampling mask.  Columns are
the phase-encode direction: rows are always fully sampled, undersampling
removes whole columns.  Everything here is a pure function of its inputs;
all randomness goes through explicit seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def fft2c(x):
    """Centered unitary 2-D FFT (DC in the middle of the array)."""
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(x), norm="ortho"))


def ifft2c(y):
    """Inverse of :func:`fft2c` (also its adjoint, the map is unitary)."""
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(y), norm="ortho"))


@dataclass
class ComplexImage:
    """A 2-D complex image (dimensionless intensity)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 2 or self.data.size == 0:
            raise ValueError("ComplexImage needs a non-empty 2-D array")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("ComplexImage contains non-finite samples")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass
class KSpaceData:
    """Per-coil frequency-domain samples, indexed (coil, row, column)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 3 or self.data.shape[0] < 1:
            raise ValueError("KSpaceData needs a (coil, row, col) array")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("KSpaceData contains non-finite samples")

    @property
    def num_coils(self):
        return self.data.shape[0]


@dataclass
class SamplingMask:
    """Boolean k-space sampling pattern (True = acquired).

    ``acs_lines`` central columns are always fully sampled; the nominal
    acceleration is kept for bookkeeping only.
    """

    pattern: np.ndarray
    acceleration: float
    acs_lines: int

    def __post_init__(self):
        self.pattern = np.asarray(self.pattern, dtype=bool)
        if self.pattern.ndim != 2 or not self.pattern.any():
            raise ValueError("mask must be 2-D with at least one sampled entry")
        if self.acceleration <= 0:
            raise ValueError("acceleration must be positive")
        if self.acs_lines < 0:
            raise ValueError("acs_lines must be non-negative")

    def sampled_columns(self):
        return np.flatnonzero(self.pattern.all(axis=0))


@dataclass
class CoilSensitivities:
    """Per-coil complex spatial weighting maps, indexed (coil, row, col)."""

    maps: np.ndarray

    def __post_init__(self):
        self.maps = np.asarray(self.maps, dtype=np.complex128)
        if self.maps.ndim != 3 or self.maps.shape[0] < 1:
            raise ValueError("sensitivities need a (coil, row, col) array")
        if not np.all(np.isfinite(self.maps)):
            raise ValueError("sensitivities contain non-finite samples")

    @property
    def num_coils(self):
        return self.maps.shape[0]


def _acs_columns(cols, acs):
    """Centered ACS block; for an odd remainder it extends one column right."""
    start = cols // 2 - acs // 2
    return np.arange(start, start + acs)


def make_equispaced_mask(rows, cols, R, acs):
    """Equispaced column undersampling: columns {0, R, 2R, ...} plus a
    centered block of ``acs`` fully sampled columns."""
    if R < 1:
        raise ValueError("R must be >= 1")
    if acs > cols:
        raise ValueError("acs exceeds number of columns")
    pattern = np.zeros((rows, cols), dtype=bool)
    pattern[:, ::R] = True
    if acs > 0:
        pattern[:, _acs_columns(cols, acs)] = True
    return SamplingMask(pattern, float(R), int(acs))


def make_random_mask(rows, cols, R, acs, seed):
    """Random column undersampling with a guaranteed ACS block.

    The total column budget is round(cols / R); non-ACS columns are drawn
    uniformly without replacement.  Deterministic given the seed.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    budget = int(round(cols / R))
    if budget < acs:
        raise ValueError(f"budget {budget} cannot cover {acs} ACS columns")
    acs_cols = _acs_columns(cols, acs)
    rng = np.random.default_rng(seed)
    free = np.setdiff1d(np.arange(cols), acs_cols)
    extra = rng.choice(free, size=budget - acs, replace=False)
    pattern = np.zeros((rows, cols), dtype=bool)
    pattern[:, acs_cols] = True
    pattern[:, extra] = True
    return SamplingMask(pattern, float(R), int(acs))


def make_phantom(height, width, num_ellipses, seed):
    """Synthetic complex phantom: a stack of random ellipses with a smooth
    random phase ramp.  Intensities land in [0, sum of ellipse weights]."""
    if height < 8 or width < 8:
        raise ValueError("phantom dimensions must be >= 8")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(
        np.linspace(-1.0, 1.0, height), np.linspace(-1.0, 1.0, width), indexing="ij"
    )
    mag = np.zeros((height, width))
    for _ in range(num_ellipses):
        cy, cx = rng.uniform(-0.6, 0.6, size=2)
        ay = rng.uniform(0.15, 0.7)
        ax = rng.uniform(0.15, 0.7)
        angle = rng.uniform(0.0, np.pi)
        amp = rng.uniform(0.1, 1.0)
        c, s = np.cos(angle), np.sin(angle)
        u = (yy - cy) * c + (xx - cx) * s
        v = -(yy - cy) * s + (xx - cx) * c
        mag += amp * (((u / ay) ** 2 + (v / ax) ** 2) <= 1.0)
    # low-order polynomial phase keeps the image smoothly complex
    a = rng.uniform(-1.0, 1.0, size=4)
    phase = a[0] * yy + a[1] * xx + a[2] * yy * xx + a[3] * (yy**2 - xx**2)
    return ComplexImage(mag * np.exp(1j * phase))


def make_smooth_sensitivities(height, width, num_coils, seed):
    """Smooth coil profiles: Gaussian magnitudes centered around the FOV with
    linear phases, normalized so that sum_c |s_c|^2 = 1 at every pixel."""
    if num_coils < 1:
        raise ValueError("need at least one coil")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(
        np.linspace(-1.0, 1.0, height), np.linspace(-1.0, 1.0, width), indexing="ij"
    )
    maps = np.empty((num_coils, height, width), dtype=np.complex128)
    for c in range(num_coils):
        theta = 2.0 * np.pi * c / num_coils + rng.uniform(-0.2, 0.2)
        cy, cx = 0.7 * np.sin(theta), 0.7 * np.cos(theta)
        sigma = rng.uniform(0.6, 1.0)
        mag = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))
        ramp = rng.uniform(-0.5, 0.5, size=2)
        maps[c] = mag * np.exp(1j * np.pi * (ramp[0] * yy + ramp[1] * xx))
    norm = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return CoilSensitivities(maps / norm)


@dataclass
class EncodingOperator:
    """The multi-coil undersampled Fourier operator and its adjoint.

    forward:  y_c = mask * fft2c(sens_c * x)
    adjoint:  x   = sum_c conj(sens_c) * ifft2c(mask * y_c)

    With the unitary FFT and normalized sensitivities the composite
    adjoint(forward(.)) is self-adjoint PSD with operator norm <= 1.
    """

    mask: SamplingMask
    sens: CoilSensitivities
    fft_normalization: str = field(default="unitary")

    def __post_init__(self):
        if self.fft_normalization != "unitary":
            raise ValueError("only unitary FFT normalization is supported")
        if self.mask.pattern.shape != self.sens.maps.shape[1:]:
            raise ValueError("mask and sensitivity shapes disagree")

    @property
    def shape(self):
        return self.mask.pattern.shape

    @property
    def num_coils(self):
        return self.sens.num_coils

    def forward(self, x: ComplexImage) -> KSpaceData:
        if x.data.shape != self.shape:
            raise ValueError(f"image shape {x.data.shape} != operator {self.shape}")
        coil_imgs = self.sens.maps * x.data[None, :, :]
        k = fft2c(coil_imgs)
        k[:, ~self.mask.pattern] = 0.0
        return KSpaceData(k)

    def adjoint(self, y: KSpaceData) -> ComplexImage:
        if y.data.shape != (self.num_coils,) + self.shape:
            raise ValueError(
                f"k-space shape {y.data.shape} != operator "
                f"{(self.num_coils,) + self.shape}"
            )
        masked = np.where(self.mask.pattern[None, :, :], y.data, 0.0)
        imgs = ifft2c(masked)
        return ComplexImage(np.sum(np.conj(self.sens.maps) * imgs, axis=0))

    def normal(self, x: ComplexImage) -> ComplexImage:
        """adjoint(forward(x)), the Gram operator E^H E."""
        return ComplexImage(self.normal_array(x.data))

    def normal_array(self, img):
        """E^H E on a raw 2-D array, no validation; lets optimization loops
        pass transient non-finite values through to their own checks."""
        k = fft2c(self.sens.maps * img[None, :, :])
        k[:, ~self.mask.pattern] = 0.0
        return np.sum(np.conj(self.sens.maps) * ifft2c(k), axis=0)


def add_noise(y: KSpaceData, sigma, seed, mask: SamplingMask | None = None):
    """Add circular complex Gaussian noise (std ``sigma`` per real/imag
    component).  When ``mask`` is given, noise enters only at sampled
    locations so unacquired entries stay exactly zero."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return KSpaceData(y.data.copy())
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=y.data.shape) + 1j * rng.normal(
        0.0, sigma, size=y.data.shape
    )
    if mask is not None:
        noise = np.where(mask.pattern[None, :, :], noise, 0.0)
    return KSpaceData(y.data + noise)

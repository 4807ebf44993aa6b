"""Closed-form image formation through participating media.

The general model composes an observation from attenuated direct radiance
and accumulated backscatter,

    I = J * exp(-sigma_attn * z) + B * (1 - exp(-sigma_scat * z)),

and specializes to haze (shared coefficient), underwater (distinct
per-channel coefficients), and low light (no backscatter). The medium color
seen by a ray follows from vertical sunlight attenuation,

    c_med = phi * exp(-(sigma_attn + sigma_scat) * z_phi).

These functions are the analytic counterpart of the discrete volume
renderer and back both the synthetic-data oracle and the regression tests.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import IllConditionedError, InputError
from .scene import Spectrum

MIN_TRANSMITTANCE = 1e-12


class Condition(enum.Enum):
    """Degradation regime. Haze shares one extinction coefficient; low light has no backscatter."""

    HAZE = "haze"
    UNDERWATER = "underwater"
    LOWLIGHT = "lowlight"


@dataclass(frozen=True)
class DegradationSpec:
    """Parameters of the closed-form model for one line of sight."""

    J: Spectrum
    B: Spectrum
    sigma_attn: Spectrum
    sigma_scat: Spectrum
    z: float
    condition: Condition = Condition.UNDERWATER

    def __post_init__(self):
        if self.z < 0:
            raise InputError(f"line-of-sight distance must be >= 0, got {self.z}")
        if self.condition is Condition.HAZE and not np.array_equal(self.sigma_attn.rgb, self.sigma_scat.rgb):
            raise InputError("haze condition requires sigma_attn == sigma_scat")
        if self.condition is Condition.LOWLIGHT and np.any(self.B.rgb != 0):
            raise InputError("lowlight condition requires B = 0")

    def to_dict(self) -> dict:
        return {
            "J": self.J.rgb.tolist(),
            "B": self.B.rgb.tolist(),
            "sigma_attn": self.sigma_attn.rgb.tolist(),
            "sigma_scat": self.sigma_scat.rgb.tolist(),
            "z": self.z,
            "condition": self.condition.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationSpec":
        return cls(
            J=Spectrum(np.asarray(d["J"])),
            B=Spectrum(np.asarray(d["B"])),
            sigma_attn=Spectrum(np.asarray(d["sigma_attn"])),
            sigma_scat=Spectrum(np.asarray(d["sigma_scat"])),
            z=float(d["z"]),
            condition=Condition(d["condition"]),
        )


@dataclass(frozen=True)
class DownwellingParams:
    """Sunlight constant and vertical distance to the medium surface (overhead sun)."""

    phi: Spectrum
    z_phi: float
    theta: float = 0.0  # solar incidence; fixed overhead

    def __post_init__(self):
        if self.z_phi < 0:
            raise InputError(f"downwelling distance must be >= 0, got {self.z_phi}")
        if self.theta != 0.0:
            raise InputError("only overhead sunlight (theta = 0) is supported")


def compose_arrays(J, B, sigma_attn, sigma_scat, z):
    """Vectorized closed-form observation; arrays broadcast channelwise.

    ``z`` broadcasts against the leading axes of the per-channel arrays, so a
    (H, W, 1) distance map against (3,) coefficients yields an (H, W, 3) image.
    """
    J = np.asarray(J, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    return J * np.exp(-np.asarray(sigma_attn) * z) + B * (1.0 - np.exp(-np.asarray(sigma_scat) * z))


def compose(spec: DegradationSpec) -> Spectrum:
    """Observed radiance I for one line of sight, per channel."""
    return Spectrum(compose_arrays(spec.J.rgb, spec.B.rgb, spec.sigma_attn.rgb, spec.sigma_scat.rgb, spec.z))


def decompose_given_medium(I: Spectrum, B: Spectrum, sigma_attn: Spectrum,
                           sigma_scat: Spectrum, z: float) -> Spectrum:
    """Invert the composition for J when the medium parameters and distance are known."""
    trans = np.exp(-sigma_attn.rgb * z)
    bad = np.nonzero(trans <= MIN_TRANSMITTANCE)[0]
    if bad.size:
        raise IllConditionedError(
            f"direct transmittance {trans[bad[0]]:.3e} too small to invert (channel {int(bad[0])})",
            channel=int(bad[0]))
    J = (np.asarray(I.rgb) - B.rgb * (1.0 - np.exp(-sigma_scat.rgb * z))) / trans
    return Spectrum(np.maximum(J, 0.0))


def asm_haze(J: Spectrum, B_inf: Spectrum, sigma: Spectrum, z: float) -> Spectrum:
    """Atmospheric scattering model: one shared extinction coefficient for both paths."""
    return compose(DegradationSpec(J=J, B=B_inf, sigma_attn=sigma, sigma_scat=sigma,
                                   z=z, condition=Condition.HAZE))


def lowlight_scale(J: Spectrum, sigma_attn: Spectrum, z: float):
    """Low-light observation I = K * J through a purely absorbing medium.

    Returns (I, K) with the per-channel scaling factor K = exp(-sigma_attn * z).
    """
    I = compose(DegradationSpec(J=J, B=Spectrum.zeros(), sigma_attn=sigma_attn,
                                sigma_scat=Spectrum.zeros(), z=z, condition=Condition.LOWLIGHT))
    return I, Spectrum(np.exp(-sigma_attn.rgb * z))


def downwelling_color_values(phi, sigma_attn, sigma_scat, z_phi):
    """Medium color from vertical sunlight attenuation; works on numpy arrays or torch tensors.

    ``z_phi`` broadcasts against the trailing channel axis, e.g. a (R, 1)
    per-ray depth against (3,) coefficients gives (R, 3) colors. Differentiable
    when handed torch tensors.
    """
    k = sigma_attn + sigma_scat
    x = -(k * z_phi)
    if hasattr(x, "exp"):  # torch tensor path
        return phi * x.exp()
    return np.asarray(phi) * np.exp(x)


def downwelling_color(p: DownwellingParams, sigma_attn: Spectrum, sigma_scat: Spectrum) -> Spectrum:
    """Per-channel medium color c_med = phi * exp(-(sigma_attn + sigma_scat) * z_phi)."""
    return Spectrum(downwelling_color_values(p.phi.rgb, sigma_attn.rgb, sigma_scat.rgb, p.z_phi))

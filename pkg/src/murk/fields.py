"""Dense voxel-grid fields with trilinear interpolation and global medium parameters.

Grids store raw parameters per voxel node; an activation (softplus for
densities, sigmoid for colors) is applied per node before interpolation, so
interpolated densities stay non-negative and colors stay in [0, 1] for any
raw value. Everything is differentiable w.r.t. the raw parameters through
torch autograd.

Grids are defined over the unit cube [0, 1]^3 with nodes at i / (n - 1);
queries outside are clamped to the boundary.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigError, InputError

DTYPE = torch.float64

CHECKPOINT_VERSION = 1

_ACTIVATIONS = {
    "softplus": torch.nn.functional.softplus,
    "sigmoid": torch.sigmoid,
    "identity": lambda x: x,
}


def inverse_activation(name, value):
    """Raw parameter that activates to ``value``; used to initialize grids."""
    v = torch.as_tensor(value, dtype=DTYPE)
    if name == "softplus":
        # softplus^-1(y) = y + log(1 - exp(-y)), stable for small y
        return v + torch.log(-torch.expm1(-v))
    if name == "sigmoid":
        return torch.log(v) - torch.log1p(-v)
    if name == "identity":
        return v.clone()
    raise ConfigError(f"unknown activation {name!r}")


class VoxelField:
    """A dense (nx, ny, nz, channels) grid queried by trilinear interpolation."""

    def __init__(self, raw: torch.Tensor, activation: str):
        if activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        raw = torch.as_tensor(raw, dtype=DTYPE)
        if raw.ndim != 4:
            raise ConfigError(f"voxel grid must be (nx, ny, nz, channels), got {tuple(raw.shape)}")
        if min(raw.shape[:3]) < 2:
            raise ConfigError(f"resolution must be >= 2 per axis, got {tuple(raw.shape[:3])}")
        self.raw = raw
        self.activation = activation

    @classmethod
    def constant(cls, resolution, value, activation, channels=1) -> "VoxelField":
        nx, ny, nz = (resolution,) * 3 if np.isscalar(resolution) else resolution
        raw = inverse_activation(activation, torch.full((nx, ny, nz, channels), float(value), dtype=DTYPE))
        return cls(raw, activation)

    @property
    def resolution(self):
        return tuple(self.raw.shape[:3])

    @property
    def channels(self):
        return self.raw.shape[3]

    def values(self) -> torch.Tensor:
        """Activated node values."""
        return _ACTIVATIONS[self.activation](self.raw)

    def query(self, p) -> torch.Tensor:
        """Trilinear interpolation of activated node values at points ``p`` (..., 3)."""
        p = torch.as_tensor(p, dtype=DTYPE)
        if p.shape[-1] != 3:
            raise InputError(f"query points must be (..., 3), got {tuple(p.shape)}")
        if not torch.isfinite(p).all():
            raise InputError("query points must be finite")
        nodes = self.values()
        res = torch.tensor(self.resolution, dtype=DTYPE)
        q = p.clamp(0.0, 1.0) * (res - 1)
        i0 = q.floor().long()
        i0 = torch.minimum(i0, torch.tensor([n - 2 for n in self.resolution]))
        f = (q - i0).unsqueeze(-1)  # (..., 3, 1)
        ix, iy, iz = i0[..., 0], i0[..., 1], i0[..., 2]
        fx, fy, fz = f[..., 0, :], f[..., 1, :], f[..., 2, :]
        c00 = nodes[ix, iy, iz] * (1 - fx) + nodes[ix + 1, iy, iz] * fx
        c10 = nodes[ix, iy + 1, iz] * (1 - fx) + nodes[ix + 1, iy + 1, iz] * fx
        c01 = nodes[ix, iy, iz + 1] * (1 - fx) + nodes[ix + 1, iy, iz + 1] * fx
        c11 = nodes[ix, iy + 1, iz + 1] * (1 - fx) + nodes[ix + 1, iy + 1, iz + 1] * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        return c0 * (1 - fz) + c1 * fz

    def clone(self) -> "VoxelField":
        return VoxelField(self.raw.detach().clone(), self.activation)


def pool_per_ray(values: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Weighted mean of per-sample values along the last axis.

    Rays whose weights sum to ~zero fall back to the unweighted mean, so the
    pooled value is always defined.
    """
    values = torch.as_tensor(values, dtype=DTYPE)
    weights = torch.as_tensor(weights, dtype=DTYPE)
    if values.shape[-1] < 1:
        raise InputError("pooling needs at least one sample")
    wsum = weights.sum(dim=-1, keepdim=True)
    pooled = (weights * values).sum(dim=-1, keepdim=True) / torch.where(wsum > 0, wsum, torch.ones_like(wsum))
    fallback = values.mean(dim=-1, keepdim=True)
    return torch.where(wsum > 0, pooled, fallback).squeeze(-1)


class MediumMode(enum.Enum):
    """How medium coefficients vary: one global value, pooled per ray, or per sample."""

    GLOBAL_CONSTANT = "global-constant"
    PER_RAY_POOLED = "per-ray-pooled"
    PER_SAMPLE = "per-sample"


class MediumParams:
    """Global per-channel medium coefficients and the sunlight constant.

    With the softplus activation (the fitting default) the activated values
    are positive for any raw parameter; the identity activation stores given
    non-negative values exactly, which synthetic scenes and tests use to
    realize exact zeros.
    """

    def __init__(self, raw_attn, raw_scat, raw_phi, activation="softplus",
                 mode=MediumMode.PER_RAY_POOLED):
        if activation not in ("softplus", "identity"):
            raise ConfigError(f"medium activation must be softplus or identity, got {activation!r}")
        self.raw_attn = torch.as_tensor(raw_attn, dtype=DTYPE).reshape(3)
        self.raw_scat = torch.as_tensor(raw_scat, dtype=DTYPE).reshape(3)
        self.raw_phi = torch.as_tensor(raw_phi, dtype=DTYPE).reshape(3)
        self.activation = activation
        self.mode = MediumMode(mode)
        if activation == "identity":
            for t in (self.raw_attn, self.raw_scat, self.raw_phi):
                if (t < 0).any():
                    raise InputError("identity-activated medium values must be non-negative")

    @classmethod
    def from_values(cls, sigma_attn, sigma_scat, phi=(1.0, 1.0, 1.0),
                    mode=MediumMode.GLOBAL_CONSTANT) -> "MediumParams":
        """Exact coefficient values (identity activation)."""
        return cls(torch.as_tensor(sigma_attn, dtype=DTYPE), torch.as_tensor(sigma_scat, dtype=DTYPE),
                   torch.as_tensor(phi, dtype=DTYPE), activation="identity", mode=mode)

    @classmethod
    def initial(cls, sigma_init=0.5, phi_init=(1.0, 1.0, 1.0),
                mode=MediumMode.PER_RAY_POOLED) -> "MediumParams":
        """Fitting initialization; phi defaults to flat white in linear RGB (D65 working space)."""
        s = inverse_activation("softplus", torch.full((3,), float(sigma_init), dtype=DTYPE))
        p = inverse_activation("softplus", torch.as_tensor(phi_init, dtype=DTYPE))
        return cls(s, s.clone(), p, activation="softplus", mode=mode)

    def _act(self, raw):
        return _ACTIVATIONS[self.activation](raw)

    @property
    def sigma_attn(self) -> torch.Tensor:
        return self._act(self.raw_attn)

    @property
    def sigma_scat(self) -> torch.Tensor:
        return self._act(self.raw_scat)

    @property
    def phi(self) -> torch.Tensor:
        return self._act(self.raw_phi)

    def clone(self) -> "MediumParams":
        return MediumParams(self.raw_attn.detach().clone(), self.raw_scat.detach().clone(),
                            self.raw_phi.detach().clone(), self.activation, self.mode)


class DownwellingKind(enum.Enum):
    PLANE = "plane"
    GRID = "grid"


class DownwellingField:
    """Vertical distance to the medium surface, z_phi(p) >= 0.

    Two representations: an analytic horizontal surface plane at a given
    height (z_phi = max(0, height - p[up_axis])), or an unstructured voxel
    grid (softplus-positive), which is what fitting uses since the surface
    is not observed directly. ``scale`` rescales every queried depth and is
    the hook for depth-rescaled resynthesis.
    """

    def __init__(self, kind, surface_height=None, grid: VoxelField | None = None,
                 up_axis=1, scale=1.0):
        self.kind = DownwellingKind(kind)
        self.up_axis = int(up_axis)
        self.scale = float(scale)
        if self.kind is DownwellingKind.PLANE:
            if surface_height is None:
                raise ConfigError("plane representation needs a surface height")
            self.surface_height = torch.as_tensor(float(surface_height), dtype=DTYPE)
            self.grid = None
        else:
            if grid is None:
                raise ConfigError("grid representation needs a voxel field")
            if grid.channels != 1:
                raise ConfigError("downwelling grid must have one channel")
            self.grid = grid
            self.surface_height = None

    @classmethod
    def plane(cls, surface_height, up_axis=1) -> "DownwellingField":
        return cls(DownwellingKind.PLANE, surface_height=surface_height, up_axis=up_axis)

    @classmethod
    def grid_init(cls, resolution, init_depth=1.0) -> "DownwellingField":
        return cls(DownwellingKind.GRID, grid=VoxelField.constant(resolution, init_depth, "softplus"))

    def query(self, p) -> torch.Tensor:
        """Downwelling depth at points (..., 3) -> (...,)."""
        p = torch.as_tensor(p, dtype=DTYPE)
        if self.kind is DownwellingKind.PLANE:
            z = torch.relu(self.surface_height - p[..., self.up_axis])
        else:
            z = self.grid.query(p).squeeze(-1)
        return z * self.scale

    def rescaled(self, factor) -> "DownwellingField":
        return DownwellingField(self.kind, surface_height=self.surface_height,
                                grid=self.grid, up_axis=self.up_axis, scale=self.scale * float(factor))

    def clone(self) -> "DownwellingField":
        if self.kind is DownwellingKind.PLANE:
            return DownwellingField(self.kind, surface_height=self.surface_height.detach().clone(),
                                    up_axis=self.up_axis, scale=self.scale)
        return DownwellingField(self.kind, grid=self.grid.clone(), up_axis=self.up_axis, scale=self.scale)


@dataclass
class FieldSet:
    """Everything the renderer queries: object fields, medium field, global medium parameters."""

    object_density: VoxelField
    object_color: VoxelField
    media_density: VoxelField
    medium: MediumParams
    downwelling: DownwellingField

    def __post_init__(self):
        if self.object_density.channels != 1 or self.media_density.channels != 1:
            raise ConfigError("density grids must have one channel")
        if self.object_color.channels != 3:
            raise ConfigError("color grid must have three channels")

    @classmethod
    def initial(cls, object_res=32, media_res=16, mode=MediumMode.PER_RAY_POOLED,
                sigma_init=0.5, media_density_init=1.0, object_density_init=0.01,
                downwelling="grid", surface_height=1.0, z_phi_init=1.0) -> "FieldSet":
        if downwelling == "grid":
            dw = DownwellingField.grid_init(media_res, init_depth=z_phi_init)
        else:
            dw = DownwellingField.plane(surface_height)
        return cls(
            object_density=VoxelField.constant(object_res, object_density_init, "softplus"),
            object_color=VoxelField(torch.zeros((*((object_res,) * 3 if np.isscalar(object_res) else object_res), 3),
                                                dtype=DTYPE), "sigmoid"),
            media_density=VoxelField.constant(media_res, media_density_init, "softplus"),
            medium=MediumParams.initial(sigma_init=sigma_init, mode=mode),
            downwelling=dw,
        )

    def parameters(self) -> dict:
        """Named raw parameter tensors, the unit of optimization and checkpointing."""
        params = {
            "object_density": self.object_density.raw,
            "object_color": self.object_color.raw,
            "media_density": self.media_density.raw,
            "sigma_attn": self.medium.raw_attn,
            "sigma_scat": self.medium.raw_scat,
            "phi": self.medium.raw_phi,
        }
        if self.downwelling.kind is DownwellingKind.PLANE:
            params["downwelling_height"] = self.downwelling.surface_height
        else:
            params["downwelling_grid"] = self.downwelling.grid.raw
        return params

    def requires_grad_(self, flag=True) -> "FieldSet":
        for t in self.parameters().values():
            t.requires_grad_(flag)
        return self

    def clone(self) -> "FieldSet":
        return FieldSet(self.object_density.clone(), self.object_color.clone(),
                        self.media_density.clone(), self.medium.clone(), self.downwelling.clone())


def save_checkpoint(path, fieldset: FieldSet, condition=None, extra=None):
    """Self-describing .npz checkpoint with a versioned header."""
    header = {
        "version": CHECKPOINT_VERSION,
        "object_density_activation": fieldset.object_density.activation,
        "object_color_activation": fieldset.object_color.activation,
        "media_density_activation": fieldset.media_density.activation,
        "medium_activation": fieldset.medium.activation,
        "medium_mode": fieldset.medium.mode.value,
        "downwelling_kind": fieldset.downwelling.kind.value,
        "downwelling_up_axis": fieldset.downwelling.up_axis,
        "downwelling_scale": fieldset.downwelling.scale,
        "condition": condition,
        "extra": extra or {},
    }
    arrays = {
        "object_density": fieldset.object_density.raw.detach().numpy(),
        "object_color": fieldset.object_color.raw.detach().numpy(),
        "media_density": fieldset.media_density.raw.detach().numpy(),
        "sigma_attn": fieldset.medium.raw_attn.detach().numpy(),
        "sigma_scat": fieldset.medium.raw_scat.detach().numpy(),
        "phi": fieldset.medium.raw_phi.detach().numpy(),
    }
    if fieldset.downwelling.kind is DownwellingKind.PLANE:
        arrays["downwelling_height"] = fieldset.downwelling.surface_height.detach().numpy()
    else:
        arrays["downwelling_grid"] = fieldset.downwelling.grid.raw.detach().numpy()
    np.savez(path, header=json.dumps(header), **arrays)


def load_checkpoint(path):
    """Returns (FieldSet, header dict)."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {header.get('version')}")
        medium = MediumParams(
            torch.from_numpy(data["sigma_attn"]), torch.from_numpy(data["sigma_scat"]),
            torch.from_numpy(data["phi"]), header["medium_activation"],
            MediumMode(header["medium_mode"]))
        if header["downwelling_kind"] == "plane":
            dw = DownwellingField(DownwellingKind.PLANE,
                                  surface_height=float(data["downwelling_height"]),
                                  up_axis=header["downwelling_up_axis"], scale=header["downwelling_scale"])
        else:
            dw = DownwellingField(DownwellingKind.GRID,
                                  grid=VoxelField(torch.from_numpy(data["downwelling_grid"]), "softplus"),
                                  up_axis=header["downwelling_up_axis"], scale=header["downwelling_scale"])
        fieldset = FieldSet(
            object_density=VoxelField(torch.from_numpy(data["object_density"]),
                                      header["object_density_activation"]),
            object_color=VoxelField(torch.from_numpy(data["object_color"]),
                                    header["object_color_activation"]),
            media_density=VoxelField(torch.from_numpy(data["media_density"]),
                                     header["media_density_activation"]),
            medium=medium, downwelling=dw)
    return fieldset, header

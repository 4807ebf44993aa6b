"""Geometric and radiometric value types: rays, spectra, sample sets, cameras.

All types are immutable values (frozen dataclasses over read-only numpy
arrays) and safe to share between threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError

_DIR_TOL = 1e-9
_POSE_TOL = 1e-8


def _readonly(a) -> np.ndarray:
    out = np.asarray(a, dtype=np.float64).copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Spectrum:
    """Per-channel linear radiance or coefficient; channel index stands in for wavelength."""

    rgb: np.ndarray

    def __post_init__(self):
        rgb = _readonly(self.rgb)
        if rgb.shape != (3,):
            raise InputError(f"Spectrum needs 3 channels, got shape {rgb.shape}")
        if not np.all(np.isfinite(rgb)):
            raise InputError("Spectrum channels must be finite")
        if np.any(rgb < 0):
            raise InputError(f"Spectrum channels must be non-negative, got {rgb}")
        object.__setattr__(self, "rgb", rgb)

    @classmethod
    def of(cls, r, g=None, b=None) -> "Spectrum":
        if g is None:
            g = b = r
        return cls(np.array([r, g, b], dtype=np.float64))

    @classmethod
    def zeros(cls) -> "Spectrum":
        return cls.of(0.0)

    def __iter__(self):
        return iter(self.rgb)

    def allclose(self, other, atol=0.0, rtol=1e-12) -> bool:
        return np.allclose(self.rgb, np.asarray(other.rgb if isinstance(other, Spectrum) else other),
                           atol=atol, rtol=rtol)


@dataclass(frozen=True)
class Ray:
    """A viewing ray o + t*d with a unit direction and positive depth bounds."""

    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        origin = _readonly(self.origin)
        direction = _readonly(self.direction)
        if origin.shape != (3,) or direction.shape != (3,):
            raise InputError("Ray origin/direction must be 3-vectors")
        norm = float(np.linalg.norm(direction))
        if abs(norm - 1.0) > _DIR_TOL:
            raise InputError(f"Ray direction must be unit length, |d| = {norm}")
        if not (0.0 <= self.t_near < self.t_far):
            raise InputError(f"Ray bounds must satisfy 0 <= near < far, got ({self.t_near}, {self.t_far})")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)

    def at(self, t):
        """Point(s) along the ray; t may be scalar or an array."""
        t = np.asarray(t, dtype=np.float64)
        return self.origin + t[..., None] * self.direction


@dataclass(frozen=True)
class RayBatch:
    """One ray per pixel in row-major order, plus the image shape that produced it."""

    origins: np.ndarray      # (N, 3)
    directions: np.ndarray   # (N, 3), unit
    t_near: np.ndarray       # (N,)
    t_far: np.ndarray        # (N,)
    image_size: tuple        # (H, W)

    def __post_init__(self):
        for name in ("origins", "directions", "t_near", "t_far"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        n = self.origins.shape[0]
        if self.directions.shape != (n, 3) or self.t_near.shape != (n,) or self.t_far.shape != (n,):
            raise InputError("RayBatch arrays disagree on ray count")

    def __len__(self):
        return self.origins.shape[0]

    def ray(self, i: int) -> Ray:
        return Ray(self.origins[i], self.directions[i], float(self.t_near[i]), float(self.t_far[i]))

    def subset(self, idx) -> "RayBatch":
        idx = np.asarray(idx)
        return RayBatch(self.origins[idx], self.directions[idx],
                        self.t_near[idx], self.t_far[idx], self.image_size)


class Phase(enum.IntEnum):
    """Which field a ray-marching sample belongs to."""

    OBJECT = 0
    MEDIA = 1


@dataclass(frozen=True)
class SampleSet:
    """Sorted ray-marching positions with per-interval lengths and phase tags.

    ``deltas[k] = positions[k+1] - positions[k]`` covers the n-1 interior
    intervals. The renderer extends the last sample's interval to ``t_far``.
    Duplicate positions are coalesced at construction (zero-length intervals
    contribute nothing to the quadrature).
    """

    positions: np.ndarray   # (n,), strictly ascending
    phase: np.ndarray       # (n,), Phase values
    t_near: float
    t_far: float
    deltas: np.ndarray = field(init=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        ph = np.asarray(self.phase, dtype=np.int8)
        if pos.ndim != 1 or ph.shape != pos.shape:
            raise InputError("positions and phase must be 1-d arrays of equal length")
        if pos.size == 0:
            raise InputError("SampleSet must hold at least one sample")
        order = np.argsort(pos, kind="stable")
        pos, ph = pos[order], ph[order]
        keep = np.concatenate([[True], np.diff(pos) > 0.0])
        pos, ph = pos[keep], ph[keep]
        if pos[0] < self.t_near - 1e-12 or pos[-1] > self.t_far + 1e-12:
            raise InputError("sample positions fall outside the ray bounds")
        object.__setattr__(self, "positions", _readonly(pos))
        object.__setattr__(self, "phase", _readonly(ph).astype(np.int8))
        object.__setattr__(self, "deltas", _readonly(np.diff(pos)))

    def __len__(self):
        return self.positions.size

    def render_deltas(self) -> np.ndarray:
        """Per-sample interval lengths: interior gaps plus a final tail to t_far."""
        return np.append(self.deltas, self.t_far - self.positions[-1])


def sort_merge(a: SampleSet, b: SampleSet) -> SampleSet:
    """Union of two sample sets on the same ray: ascending, tags kept, deltas recomputed."""
    if (a.t_near, a.t_far) != (b.t_near, b.t_far):
        raise InputError("sample sets to merge must share ray bounds")
    return SampleSet(
        np.concatenate([a.positions, b.positions]),
        np.concatenate([a.phase, b.phase]),
        a.t_near, a.t_far,
    )


class CameraKind(enum.Enum):
    PINHOLE = "pinhole"
    ORTHOGRAPHIC = "orthographic"


@dataclass(frozen=True)
class CameraModel:
    """A posed camera. Pose is the 4x4 rigid world-from-camera transform.

    Camera frame: x right, y up, viewing along -z.

    pinhole intrinsics: (fx, fy, cx, cy) in pixels.
    orthographic intrinsics: (extent_x, extent_y), the world-unit width and
    height of the parallel view volume.
    """

    kind: CameraKind
    intrinsics: tuple
    pose: np.ndarray  # (4, 4) world <- camera

    def __post_init__(self):
        pose = _readonly(self.pose)
        if pose.shape != (4, 4):
            raise ConfigError("camera pose must be a 4x4 matrix")
        r = pose[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=_POSE_TOL):
            raise ConfigError("camera pose rotation must be orthonormal")
        if len(self.intrinsics) not in (2, 4) or any(v <= 0 for v in self.intrinsics[:2]):
            raise ConfigError(f"invalid intrinsics {self.intrinsics}")
        object.__setattr__(self, "pose", pose)
        object.__setattr__(self, "intrinsics", tuple(float(v) for v in self.intrinsics))

    @classmethod
    def pinhole(cls, focal, image_size, pose=None, principal=None) -> "CameraModel":
        h, w = image_size
        cx, cy = principal if principal is not None else (w / 2.0, h / 2.0)
        return cls(CameraKind.PINHOLE, (focal, focal, cx, cy),
                   np.eye(4) if pose is None else pose)

    @classmethod
    def orthographic(cls, extent, pose=None) -> "CameraModel":
        ex, ey = (extent, extent) if np.isscalar(extent) else extent
        return cls(CameraKind.ORTHOGRAPHIC, (ex, ey), np.eye(4) if pose is None else pose)

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:3, :3]

    @property
    def center(self) -> np.ndarray:
        return self.pose[:3, 3]


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-from-camera pose for a camera at ``eye`` viewing ``target`` (camera looks along -z)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    right = right / np.linalg.norm(right)
    true_up = np.cross(right, fwd)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2] = right, true_up, -fwd
    pose[:3, 3] = eye
    return pose


def generate_rays(camera: CameraModel, image_size, t_near=0.0, t_far=2.0) -> RayBatch:
    """One ray per pixel through pixel centers, row-major.

    Pinhole rays all start at the camera center; orthographic rays are
    parallel and start on the camera plane.
    """
    h, w = int(image_size[0]), int(image_size[1])
    if h < 1 or w < 1:
        raise ConfigError(f"image size must be at least 1x1, got {image_size}")
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    u = (jj.ravel() + 0.5)
    v = (ii.ravel() + 0.5)
    r = camera.rotation
    if camera.kind is CameraKind.PINHOLE:
        fx, fy, cx, cy = camera.intrinsics
        dirs_cam = np.stack([(u - cx) / fx, -(v - cy) / fy, -np.ones_like(u)], axis=-1)
        dirs = dirs_cam @ r.T
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        origins = np.broadcast_to(camera.center, dirs.shape).copy()
    else:
        ex, ey = camera.intrinsics
        origins_cam = np.stack([(u / w - 0.5) * ex, -(v / h - 0.5) * ey, np.zeros_like(u)], axis=-1)
        origins = origins_cam @ r.T + camera.center
        d = r @ np.array([0.0, 0.0, -1.0])
        dirs = np.broadcast_to(d / np.linalg.norm(d), origins.shape).copy()
    n = h * w
    return RayBatch(origins, dirs, np.full(n, float(t_near)), np.full(n, float(t_far)), (h, w))

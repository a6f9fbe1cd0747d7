"""Underwater image formation model, forward and inverse.

Forward (degrade):   I = J * t + A * (1 - t)
Inverse (restore):   J = (I - A) / max(t, t0) + A

with per-channel transmission ``t = exp(-p * d)`` for a camera-object distance
``d`` and background light ``A = exp(-p * phi)`` for a dive depth ``phi``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .images import as_rgb, to_uint8
from .spectral import ChannelAttenuation

# distances the restoration was designed around; outside this a warning is issued
TYPICAL_DISTANCE_M = (1.0, 5.0)


class DistanceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SceneGeometry:
    distance_m: float
    dive_depth_m: float

    def __post_init__(self):
        if not (math.isfinite(self.distance_m) and self.distance_m > 0):
            raise ValueError(f"distance_m must be > 0, got {self.distance_m}")
        if not (math.isfinite(self.dive_depth_m) and self.dive_depth_m >= 0):
            raise ValueError(f"dive_depth_m must be >= 0, got {self.dive_depth_m}")

    @classmethod
    def from_json(cls, path) -> "SceneGeometry":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        try:
            return cls(float(d["distance_m"]), float(d["dive_depth_m"]))
        except KeyError as exc:
            raise ValueError(f"{path}: missing field {exc}") from None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True) + "\n"


@dataclass(frozen=True)
class RestoreParams:
    """Inversion settings.

    ``keep_range`` is an inclusive 8-bit interval of input intensities that are
    mapped through the inverse model as-is; pixels outside it have their
    inverted value clamped to [0, 1].  ``rescale`` applies a per-channel
    min-max stretch to [0, 1] afterwards.
    """

    t0: float = 0.1
    keep_range: tuple[int, int] = (13, 255)
    rescale: bool = True

    def __post_init__(self):
        if not (0.0 < self.t0 <= 1.0):
            raise ValueError(f"t0 must be in (0, 1], got {self.t0}")
        lo, hi = self.keep_range
        if int(lo) != lo or int(hi) != hi or not (0 <= lo < hi <= 255):
            raise ValueError(f"keep_range must satisfy 0 <= lo < hi <= 255, got {self.keep_range}")
        object.__setattr__(self, "keep_range", (int(lo), int(hi)))

    def to_dict(self) -> dict:
        return {"t0": self.t0, "keep_range": list(self.keep_range), "rescale": self.rescale}

    @classmethod
    def from_dict(cls, d: dict) -> "RestoreParams":
        return cls(t0=float(d["t0"]), keep_range=tuple(d["keep_range"]), rescale=bool(d["rescale"]))


def _coeffs(p) -> np.ndarray:
    if isinstance(p, ChannelAttenuation):
        return p.as_array()
    arr = np.asarray(p, dtype=float).ravel()
    if arr.shape != (3,) or not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError(f"attenuation must be three finite values >= 0, got {p}")
    return arr


def _triple(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float).ravel()
    if arr.shape != (3,):
        raise ValueError(f"{name} must have one value per channel, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def transmission(p, distance_m: float) -> np.ndarray:
    if not distance_m > 0:
        raise ValueError(f"distance must be > 0, got {distance_m}")
    return np.exp(-_coeffs(p) * distance_m)


def airlight(p, depth_m: float) -> np.ndarray:
    if not depth_m >= 0:
        raise ValueError(f"dive depth must be >= 0, got {depth_m}")
    return np.exp(-_coeffs(p) * depth_m)


def degrade(J, t, A) -> np.ndarray:
    J = as_rgb(J)
    t = _triple(t, "t")
    A = _triple(A, "A")
    if np.any(t <= 0) or np.any(t > 1):
        raise ValueError(f"transmission must lie in (0, 1], got {t}")
    if np.any(A < 0) or np.any(A > 1):
        raise ValueError(f"background light must lie in [0, 1], got {A}")
    return np.clip(J * t + A * (1.0 - t), 0.0, 1.0)


def rescale_channels(img) -> np.ndarray:
    """Per-channel min-max stretch to [0, 1]; flat channels are left as they are."""
    img = np.asarray(img, dtype=float)
    out = img.copy()
    for c in range(img.shape[2]):
        ch = img[..., c]
        lo, hi = ch.min(), ch.max()
        if hi - lo > 1e-12:
            out[..., c] = (ch - lo) / (hi - lo)
    return out


def invert(I, t, A, t0: float) -> np.ndarray:
    """Bare inverse model, no range handling."""
    return (I - A) / np.maximum(t, t0) + A


def restore(I, t, A, params: RestoreParams = RestoreParams()) -> np.ndarray:
    I = as_rgb(I)
    t = _triple(t, "t")
    A = _triple(A, "A")
    J = invert(I, t, A, params.t0)
    lo, hi = params.keep_range
    code = to_uint8(I)
    outside = (code < lo) | (code > hi)
    if outside.any():
        J = np.where(outside, np.clip(J, 0.0, 1.0), J)
    if params.rescale:
        J = rescale_channels(J)
    return J


def restore_with_geometry(
    I,
    p,
    geometry: SceneGeometry,
    params: RestoreParams = RestoreParams(),
) -> np.ndarray:
    lo, hi = TYPICAL_DISTANCE_M
    if not lo <= geometry.distance_m <= hi:
        warnings.warn(
            f"distance {geometry.distance_m} m is outside the typical {lo}-{hi} m range",
            DistanceWarning,
            stacklevel=2,
        )
    t = transmission(p, geometry.distance_m)
    A = airlight(p, geometry.dive_depth_m)
    return restore(I, t, A, params)


def synthesize(J, p, geometry: SceneGeometry) -> np.ndarray:
    """Forward model driven by attenuation and geometry."""
    return degrade(J, transmission(p, geometry.distance_m), airlight(p, geometry.dive_depth_m))


def geometry_sidecar(image_path) -> Path:
    p = Path(image_path)
    return p.with_name(p.stem + ".geometry.json")

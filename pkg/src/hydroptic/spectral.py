"""Spectral curves and per-channel total attenuation.

A channel's total attenuation coefficient is the quadrature of the water
attenuation spectrum against the camera's spectral response over the visible
band.  By default the integral is normalized by the response area so a flat
attenuation spectrum ``k`` yields exactly ``k`` for every channel; pass
``normalize=False`` for the raw (unnormalized) integral.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

CHANNELS = ("r", "g", "b")

DEFAULT_BAND_NM = (400.0, 750.0)
DEFAULT_STEP_NM = 1.0


class CurveKind(str, Enum):
    SENSOR_RESPONSE = "SensorResponse"
    ATTENUATION = "Attenuation"


@dataclass(frozen=True)
class SpectralCurve:
    """Tabulated function of wavelength (nm).

    Sensor responses are unitless in [0, 1]; attenuation spectra are in 1/m
    and non-negative.
    """

    wavelengths: np.ndarray
    values: np.ndarray
    kind: CurveKind
    # resampled curves may legitimately hold a single point
    _min_samples: int = field(default=2, repr=False, compare=False)

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=float).ravel()
        val = np.asarray(self.values, dtype=float).ravel()
        if wl.shape != val.shape:
            raise ValueError("wavelengths and values must have the same length")
        if np.unique(wl).size < self._min_samples:
            raise ValueError("spectral curve needs at least 2 distinct samples (fewer than 2 samples)")
        if np.any(np.diff(wl) <= 0):
            raise ValueError("wavelengths must be strictly increasing")
        if not (np.all(np.isfinite(wl)) and np.all(np.isfinite(val))):
            raise ValueError("spectral curve samples must be finite")
        kind = CurveKind(self.kind)
        if kind is CurveKind.SENSOR_RESPONSE and (val.min() < 0.0 or val.max() > 1.0):
            raise ValueError("sensor response values must lie in [0, 1]")
        if kind is CurveKind.ATTENUATION and val.min() < 0.0:
            raise ValueError("attenuation values must be >= 0")
        wl.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "values", val)
        object.__setattr__(self, "kind", kind)

    @classmethod
    def from_samples(cls, samples: Iterable[tuple[float, float]], kind: CurveKind | str) -> "SpectralCurve":
        pairs = list(samples)
        if not pairs:
            raise ValueError("spectral curve needs at least 2 distinct samples (fewer than 2 samples)")
        wl, val = zip(*pairs)
        return cls(np.array(wl), np.array(val), CurveKind(kind))

    @property
    def support(self) -> tuple[float, float]:
        return float(self.wavelengths[0]), float(self.wavelengths[-1])

    def __call__(self, grid) -> np.ndarray:
        """Evaluate by linear interpolation with the kind's out-of-support rule."""
        grid = np.asarray(grid, dtype=float)
        if self.kind is CurveKind.SENSOR_RESPONSE:
            return np.interp(grid, self.wavelengths, self.values, left=0.0, right=0.0)
        return np.interp(grid, self.wavelengths, self.values)

    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.wavelengths.tolist(), self.values.tolist()))


@dataclass(frozen=True)
class ChannelAttenuation:
    """Total attenuation coefficient per RGB channel, in 1/m."""

    r: float
    g: float
    b: float

    def __post_init__(self):
        for name in CHANNELS:
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"attenuation p_{name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.g, self.b], dtype=float)

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "ChannelAttenuation":
        if len(values) != 3:
            raise ValueError("expected three values (r, g, b)")
        return cls(*values)


@dataclass(frozen=True)
class IntegrationBounds:
    a: float = DEFAULT_BAND_NM[0]
    b: float = DEFAULT_BAND_NM[1]

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)) or self.a >= self.b:
            raise ValueError(f"integration bounds need a < b, got ({self.a}, {self.b})")


def resample(curve: SpectralCurve, grid, clamp: bool = True) -> SpectralCurve:
    """Linearly interpolate ``curve`` onto ``grid``.

    Outside the curve's support a sensor response is 0 and an attenuation
    spectrum is held at its edge value.  With ``clamp=False`` a grid reaching
    outside the support is an error instead.
    """
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("resample grid is empty")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("resample grid must be strictly increasing")
    lo, hi = curve.support
    if not clamp and (grid[0] < lo or grid[-1] > hi):
        raise ValueError(f"grid [{grid[0]}, {grid[-1]}] exceeds curve support [{lo}, {hi}]")
    return SpectralCurve(grid, curve(grid), curve.kind, _min_samples=1)


def quadrature_grid(knots: Iterable[float], bounds: IntegrationBounds, step: float = DEFAULT_STEP_NM) -> np.ndarray:
    """Merged knot grid inside ``bounds``, each interval split evenly to spacing <= ``step``."""
    if not step > 0:
        raise ValueError("quadrature step must be positive")
    k = np.asarray(list(knots), dtype=float)
    k = k[(k > bounds.a) & (k < bounds.b)]
    k = np.unique(np.concatenate(([bounds.a], k, [bounds.b])))
    pieces = []
    for x0, x1 in zip(k[:-1], k[1:]):
        n = max(1, math.ceil((x1 - x0) / step - 1e-9))
        pieces.append(np.linspace(x0, x1, n + 1)[:-1])
    pieces.append(k[-1:])
    return np.concatenate(pieces)


def _trapezoid(y: np.ndarray, x: np.ndarray) -> float:
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def total_attenuation(
    beta: SpectralCurve,
    response: SpectralCurve,
    bounds: IntegrationBounds = IntegrationBounds(),
    normalize: bool = True,
    step: float = DEFAULT_STEP_NM,
) -> float:
    """Response-weighted attenuation of one channel, in 1/m.

    Composite trapezoid on the union of both curves' sample points inside
    ``bounds``, refined to at most ``step`` nm spacing.
    """
    if beta.kind is not CurveKind.ATTENUATION:
        raise ValueError("beta must be an Attenuation curve")
    if response.kind is not CurveKind.SENSOR_RESPONSE:
        raise ValueError("response must be a SensorResponse curve")
    grid = quadrature_grid(np.concatenate((beta.wavelengths, response.wavelengths)), bounds, step)
    s = response(grid)
    weighted = _trapezoid(beta(grid) * s, grid)
    if not math.isfinite(weighted):
        raise ValueError("non-finite attenuation integral")
    if not normalize:
        return weighted
    area = _trapezoid(s, grid)
    if area == 0.0:
        raise ValueError("sensor response integrates to 0 over the band; cannot normalize")
    return weighted / area


def channel_attenuations(
    beta: SpectralCurve,
    responses: Mapping[str, SpectralCurve],
    bounds: IntegrationBounds = IntegrationBounds(),
    normalize: bool = True,
    step: float = DEFAULT_STEP_NM,
) -> ChannelAttenuation:
    missing = [c for c in CHANNELS if c not in responses]
    if missing:
        raise ValueError(f"missing sensor responses for channels: {missing}")
    return ChannelAttenuation(
        *(total_attenuation(beta, responses[c], bounds, normalize, step) for c in CHANNELS)
    )


# ---------------------------------------------------------------- file formats

CSV_HEADER = ("wavelength_nm", "value")


def read_curve_csv(path, kind: CurveKind | str) -> SpectralCurve:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise ValueError(f"{path}: expected header 'wavelength_nm,value', got {header}")
        samples = []
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                samples.append((float(row[0]), float(row[1])))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    try:
        return SpectralCurve.from_samples(samples, kind)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def write_curve_csv(curve: SpectralCurve, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for wl, v in curve.samples():
            w.writerow([repr(wl), repr(v)])


@dataclass(frozen=True)
class SiteSpectra:
    """Spectral part of a site's metadata file, with curves loaded."""

    site_id: str
    attenuation: SpectralCurve
    responses: dict
    max_dive_depth_m: float
    camera_model: str
    water_type: str

    def channel_attenuation(self, bounds: IntegrationBounds = IntegrationBounds(), normalize: bool = True):
        return channel_attenuations(self.attenuation, self.responses, bounds, normalize)


def load_site_metadata(path) -> SiteSpectra:
    """Read ``metadata.json``; CSV paths are resolved relative to its directory."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        meta = json.load(fh)
    base = path.parent
    try:
        att = read_curve_csv(base / meta["attenuation_csv"], CurveKind.ATTENUATION)
        resp_paths = meta["sensor_response_csv"]
        responses = {c: read_curve_csv(base / resp_paths[c], CurveKind.SENSOR_RESPONSE) for c in CHANNELS}
        return SiteSpectra(
            site_id=str(meta.get("site_id", base.name)),
            attenuation=att,
            responses=responses,
            max_dive_depth_m=float(meta["max_dive_depth_m"]),
            camera_model=str(meta["camera_model"]),
            water_type=str(meta["water_type"]),
        )
    except KeyError as exc:
        raise ValueError(f"{path}: missing field {exc}") from None


# ------------------------------------------------------------ synthetic spectra
#
# No measured tables ship with this package.  The curves below are smooth,
# plausible stand-ins used for fixtures and demos: three Gaussian-shaped colour
# channels roughly where a CMOS Bayer sensor peaks, and a coastal-water
# attenuation spectrum (pure-water absorption plus dissolved organic matter and
# a weak particle term).

_SYNTH_BANDS = {"r": (605.0, 38.0, 0.42), "g": (535.0, 40.0, 0.50), "b": (460.0, 32.0, 0.45)}

# approximate pure-water absorption (1/m)
_WATER_ABS = (
    (400, 0.0066), (425, 0.0048), (450, 0.0092), (475, 0.0114), (500, 0.0257),
    (525, 0.0477), (550, 0.0565), (575, 0.0894), (600, 0.2224), (625, 0.2834),
    (650, 0.3400), (675, 0.4250), (700, 0.6500), (725, 1.6900), (750, 2.4700),
)


def synthetic_sensor_responses(step: float = 10.0, band=DEFAULT_BAND_NM) -> dict:
    grid = np.arange(band[0], band[1] + step / 2, step)
    out = {}
    for c, (mu, sigma, peak) in _SYNTH_BANDS.items():
        vals = peak * np.exp(-0.5 * ((grid - mu) / sigma) ** 2)
        out[c] = SpectralCurve(grid, np.round(vals, 6), CurveKind.SENSOR_RESPONSE)
    return out


def synthetic_attenuation(step: float = 10.0, band=DEFAULT_BAND_NM, turbidity: float = 1.0) -> SpectralCurve:
    grid = np.arange(band[0], band[1] + step / 2, step)
    wl, aw = np.array(_WATER_ABS, dtype=float).T
    water = np.interp(grid, wl, aw)
    cdom = 0.02 * np.exp(-0.014 * (grid - 440.0))
    particles = 0.03 * (550.0 / grid)
    return SpectralCurve(grid, np.round(water + turbidity * (cdom + particles), 6), CurveKind.ATTENUATION)


def write_synthetic_site(
    site_dir,
    site_id: str | None = None,
    max_dive_depth_m: float = 10.0,
    turbidity: float = 1.0,
) -> Path:
    """Write a complete site folder (metadata.json + CSVs) from the synthetic curves."""
    site_dir = Path(site_dir)
    site_dir.mkdir(parents=True, exist_ok=True)
    write_curve_csv(synthetic_attenuation(turbidity=turbidity), site_dir / "attenuation.csv")
    for c, curve in synthetic_sensor_responses().items():
        write_curve_csv(curve, site_dir / f"response_{c}.csv")
    meta = {
        "site_id": site_id or site_dir.name,
        "attenuation_csv": "attenuation.csv",
        "sensor_response_csv": {c: f"response_{c}.csv" for c in CHANNELS},
        "max_dive_depth_m": max_dive_depth_m,
        "camera_model": "CMV2000 (synthetic response)",
        "water_type": "coastal (synthetic)",
    }
    path = site_dir / "metadata.json"
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path

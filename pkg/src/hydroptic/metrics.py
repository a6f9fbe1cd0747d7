"""Full-reference (MSE, PSNR, SSIM) and no-reference (UIQM) image metrics.

Float images are taken to be in [0, 1] and are scaled to the 8-bit range;
integer images are used as-is.  All metrics are computed on the 0-255 scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import uiqm_constants as K

PSNR_CAP_DB = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DATA_RANGE = 255.0

LUMA = np.array([0.299, 0.587, 0.114])


def to_8bit_scale(img) -> np.ndarray:
    arr = np.asarray(img)
    if np.issubdtype(arr.dtype, np.integer):
        return arr.astype(np.float64)
    return arr.astype(np.float64) * 255.0


def _pair(a, b):
    a, b = to_8bit_scale(a), to_8bit_scale(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr_from_mse(err: float, peak: float = DATA_RANGE, cap: float = PSNR_CAP_DB) -> float:
    if err < 0:
        raise ValueError("mse must be >= 0")
    if err == 0:
        return cap
    return min(cap, 10.0 * math.log10(peak * peak / err))


def psnr(a, b, peak: float = DATA_RANGE) -> float:
    """PSNR in dB; identical images report :data:`PSNR_CAP_DB`."""
    return psnr_from_mse(mse(a, b), peak)


# ------------------------------------------------------------------------- SSIM


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    y = ndimage.correlate1d(x, g, axis=0, mode="constant")
    y = ndimage.correlate1d(y, g, axis=1, mode="constant")
    return y[r:-r, r:-r]


def _ssim_maps(a: np.ndarray, b: np.ndarray):
    g = gaussian_window()
    c1 = (SSIM_K1 * DATA_RANGE) ** 2
    c2 = (SSIM_K2 * DATA_RANGE) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    lum = (2 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    return lum, cs


def _planes(a: np.ndarray, gray: bool) -> list[np.ndarray]:
    if a.ndim == 2:
        return [a]
    if gray:
        return [a @ LUMA]
    return [a[..., c] for c in range(a.shape[2])]


def ssim(a, b, gray: bool = False, return_cs: bool = False):
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), mean over the valid map.

    RGB inputs are scored per channel and averaged unless ``gray`` is set, in
    which case both images are converted to BT.601 luma first.  With
    ``return_cs`` the mean contrast-structure term is returned as well.
    """
    a, b = _pair(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape[:2]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    scores, cs_scores = [], []
    for pa, pb in zip(_planes(a, gray), _planes(b, gray)):
        lum, cs = _ssim_maps(pa, pb)
        scores.append(float(np.mean(lum * cs)))
        cs_scores.append(float(np.mean(cs)))
    s = float(np.mean(scores))
    if return_cs:
        return s, float(np.mean(cs_scores))
    return s


# ------------------------------------------------------------------------- UIQM


def trimmed_mean(x, alpha_l: float = K.ALPHA_L, alpha_r: float = K.ALPHA_R) -> float:
    """Asymmetric alpha-trimmed mean."""
    xs = np.sort(np.asarray(x, dtype=float).ravel())
    n = xs.size
    lo = math.ceil(alpha_l * n)
    hi = math.floor(alpha_r * n)
    kept = xs[lo : n - hi]
    if kept.size == 0:
        raise ValueError("alpha trimming removed every sample")
    return float(np.mean(kept))


def uicm(img255: np.ndarray) -> float:
    r, g, b = img255[..., 0], img255[..., 1], img255[..., 2]
    rg = r - g
    yb = 0.5 * (r + g) - b
    mu_rg, mu_yb = trimmed_mean(rg), trimmed_mean(yb)
    var_rg = float(np.mean((rg - mu_rg) ** 2))
    var_yb = float(np.mean((yb - mu_yb) ** 2))
    return K.UICM_MEAN_WEIGHT * math.sqrt(mu_rg**2 + mu_yb**2) + K.UICM_SPREAD_WEIGHT * math.sqrt(var_rg + var_yb)


def _blocks(shape, size):
    h, w = shape
    for i in range(0, h, size):
        for j in range(0, w, size):
            yield slice(i, min(i + size, h)), slice(j, min(j + size, w))


def _block_count(shape, size) -> int:
    return math.ceil(shape[0] / size) * math.ceil(shape[1] / size)


def eme(channel: np.ndarray, block: int = K.EME_BLOCK) -> float:
    """Measure of enhancement: 2/(k1 k2) * sum log(max/min) over blocks."""
    total = 0.0
    for sl in _blocks(channel.shape, block):
        blk = channel[sl]
        lo, hi = float(blk.min()), float(blk.max())
        lo = lo if lo != 0 else 1.0
        hi = hi if hi != 0 else 1.0
        total += math.log(hi / lo)
    return 2.0 / _block_count(channel.shape, block) * total


def sobel_magnitude(channel01: np.ndarray) -> np.ndarray:
    gx = ndimage.sobel(channel01, axis=1, mode="reflect")
    gy = ndimage.sobel(channel01, axis=0, mode="reflect")
    return np.hypot(gx, gy) / (4.0 * math.sqrt(2.0))


def uism(img255: np.ndarray) -> float:
    weights = (K.LAMBDA_R, K.LAMBDA_G, K.LAMBDA_B)
    total = 0.0
    for c, lam in enumerate(weights):
        ch = img255[..., c]
        edge = ch * sobel_magnitude(ch / 255.0)
        edge = np.clip(np.floor(edge + 0.5), 0, 255)
        total += lam * eme(edge)
    return total


def plip_add(a, b, gamma=K.PLIP_GAMMA):
    return a + b - a * b / gamma


def plip_sub(a, b, k=K.PLIP_K):
    return k * (a - b) / (k - b)


def plip_scalar_mul(c, a, gamma=K.PLIP_GAMMA):
    return gamma - gamma * (1.0 - a / gamma) ** c


def logamee(gray255: np.ndarray, block: int = K.LOGAMEE_BLOCK) -> float:
    total = 0.0
    for sl in _blocks(gray255.shape, block):
        blk = gray255[sl]
        lo, hi = float(blk.min()), float(blk.max())
        bottom = plip_add(hi, lo)
        m = plip_sub(hi, lo) / bottom if bottom != 0 else 0.0
        if m != 0:
            total += m * math.log(m)
    return plip_scalar_mul(1.0 / _block_count(gray255.shape, block), total)


def uiconm(img255: np.ndarray) -> float:
    return logamee(img255 @ LUMA)


@dataclass(frozen=True)
class UIQMScore:
    uicm: float
    uism: float
    uiconm: float

    @property
    def uiqm(self) -> float:
        return K.C_UICM * self.uicm + K.C_UISM * self.uism + K.C_UICONM * self.uiconm


def uiqm_components(img) -> UIQMScore:
    a = to_8bit_scale(img)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"UIQM needs an RGB image, got shape {a.shape}")
    if a.shape[0] * a.shape[1] < 2:
        raise ValueError("UIQM is undefined for a single-pixel image")
    return UIQMScore(uicm(a), uism(a), uiconm(a))


def uiqm(img) -> float:
    return uiqm_components(img).uiqm


# ------------------------------------------------------------------ aggregation


@dataclass(frozen=True)
class MetricReport:
    filename: str
    mse: float
    psnr: float
    ssim: float
    uicm: float
    uism: float
    uiconm: float
    uiqm: float

    @property
    def psnr_is_inf(self) -> bool:
        return self.mse == 0.0


def score_pair(name: str, restored, reference, gray: bool = False) -> MetricReport:
    err = mse(restored, reference)
    u = uiqm_components(restored)
    return MetricReport(
        filename=name,
        mse=err,
        psnr=psnr_from_mse(err),
        ssim=ssim(restored, reference, gray=gray),
        uicm=u.uicm,
        uism=u.uism,
        uiconm=u.uiconm,
        uiqm=u.uiqm,
    )


def summarize(reports: list[MetricReport]) -> dict:
    """Arithmetic means over images; PSNR is reported both per-image-averaged and from the mean MSE."""
    if not reports:
        raise ValueError("no reports to summarize")
    fields = ("mse", "psnr", "ssim", "uicm", "uism", "uiconm", "uiqm")
    mean = {f: math.fsum(getattr(r, f) for r in reports) / len(reports) for f in fields}
    return {
        "count": len(reports),
        "mean": mean,
        "psnr_of_mean_mse": psnr_from_mse(mean["mse"]),
        "fid": None,
    }


def pair_files(restored_dir, reference_dir, pattern: str = "*.png"):
    """Match files by name; returns (pairs, missing_in_reference, missing_in_restored)."""
    a = {p.name: p for p in sorted(Path(restored_dir).glob(pattern))}
    b = {p.name: p for p in sorted(Path(reference_dir).glob(pattern))}
    common = sorted(set(a) & set(b))
    return [(n, a[n], b[n]) for n in common], sorted(set(a) - set(b)), sorted(set(b) - set(a))

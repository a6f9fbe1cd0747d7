"""Dataset construction: quality labels, batch restoration, train/test splits.

Dataset root layout::

    records.json                 input records (see ImageRecord)
    sites/<id>/metadata.json     per-site spectra and dive metadata
    raw/                         source frames
    restored/                    restored frames + <stem>.provenance.json
    exclusions.txt               paths dropped by manual review, one per line
    manifests/{unpaired_train,paired_train,test}.json
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path, PurePosixPath
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .imaging import TYPICAL_DISTANCE_M, DistanceWarning, RestoreParams, SceneGeometry, airlight, restore, transmission
from .images import atomic_write_bytes, atomic_write_text, encode_png, load_png
from .spectral import ChannelAttenuation, IntegrationBounds, SiteSpectra, load_site_metadata

log = logging.getLogger(__name__)

DEPTH_JITTER_MAX_M = 0.5
NATIVE_SIZE = (1842, 980)
PRNG_NAME = "numpy.random.PCG64"
SPLIT_NAMES = ("unpaired_train", "paired_train", "test")


class Quality(str, Enum):
    LOW = "Low"
    GOOD = "Good"
    RESTORED = "Restored"


@dataclass
class ImageRecord:
    path: str
    site_id: str
    dive_depth_m: float
    distance_m: float | None = None
    depth_series: list | None = None
    quality: Quality | None = None
    source: str | None = None

    def __post_init__(self):
        if self.quality is not None:
            self.quality = Quality(self.quality)
        if self.quality is Quality.RESTORED and not self.source:
            raise ValueError(f"{self.path}: restored record must reference its good-quality source")
        if self.distance_m is not None and not (math.isfinite(self.distance_m) and self.distance_m > 0):
            raise ValueError(f"{self.path}: distance_m must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "ImageRecord":
        return cls(
            path=str(d["path"]),
            site_id=str(d["site_id"]),
            dive_depth_m=float(d["dive_depth_m"]),
            distance_m=None if d.get("distance_m") is None else float(d["distance_m"]),
            depth_series=d.get("depth_series"),
            quality=d.get("quality"),
            source=d.get("source"),
        )

    def to_dict(self) -> dict:
        d = {"path": self.path, "site_id": self.site_id, "dive_depth_m": self.dive_depth_m}
        if self.distance_m is not None:
            d["distance_m"] = self.distance_m
        if self.depth_series is not None:
            d["depth_series"] = list(self.depth_series)
        if self.quality is not None:
            d["quality"] = self.quality.value
        if self.source is not None:
            d["source"] = self.source
        return d


def load_records(path) -> list[ImageRecord]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return [ImageRecord.from_dict(d) for d in doc["records"]]


def load_sites(root) -> dict[str, SiteSpectra]:
    sites = {}
    for meta in sorted(Path(root, "sites").glob("*/metadata.json")):
        site = load_site_metadata(meta)
        sites[site.site_id] = site
    return sites


def read_exclusions(path) -> set[str]:
    path = Path(path)
    if not path.exists():
        return set()
    out = set()
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            out.add(line)
    return out


# -------------------------------------------------------------------- labeling


def label_quality(record: ImageRecord, depth_jitter_max: float = DEPTH_JITTER_MAX_M) -> Quality:
    """Good when the depth log stays within ``depth_jitter_max`` metres and a distance is assigned.

    A quality already present on the record is returned unchanged.
    """
    if record.quality is not None:
        return record.quality
    if not record.depth_series:
        raise ValueError(f"{record.path}: no depth series and no pre-assigned quality")
    depths = np.asarray(record.depth_series, dtype=float)
    steady = float(depths.max() - depths.min()) <= depth_jitter_max
    if steady and record.distance_m is not None:
        return Quality.GOOD
    return Quality.LOW


# ----------------------------------------------------------------- restoration


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def restored_path_for(source: str) -> str:
    p = PurePosixPath(source)
    rel = PurePosixPath(*p.parts[1:]) if p.parts and p.parts[0] == "raw" else PurePosixPath(p.name)
    return str(PurePosixPath("restored") / rel.with_suffix(".png"))


def provenance_path(image_path) -> Path:
    p = Path(image_path)
    return p.with_name(p.stem + ".provenance.json")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def restore_one(
    record: ImageRecord,
    p: ChannelAttenuation,
    params: RestoreParams,
    root,
) -> ImageRecord:
    """Restore a single good-quality record, writing the PNG and its provenance."""
    root = Path(root)
    if record.distance_m is None:
        raise ValueError(f"{record.path}: good-quality record has no assigned distance")
    geom = SceneGeometry(record.distance_m, record.dive_depth_m)
    lo, hi = TYPICAL_DISTANCE_M
    if not lo <= geom.distance_m <= hi:
        warnings.warn(f"{record.path}: distance {geom.distance_m} m outside {lo}-{hi} m", DistanceWarning)
    src = root / record.path
    img, alpha = load_png(src)
    t = transmission(p, geom.distance_m)
    A = airlight(p, geom.dive_depth_m)
    png = encode_png(restore(img, t, A, params), alpha)
    out_rel = restored_path_for(record.path)
    atomic_write_bytes(root / out_rel, png)
    prov = {
        "source": record.path,
        "source_sha256": _sha256(src),
        "site_id": record.site_id,
        "attenuation": {"r": p.r, "g": p.g, "b": p.b},
        "transmission": t.tolist(),
        "airlight": A.tolist(),
        "geometry": {"distance_m": geom.distance_m, "dive_depth_m": geom.dive_depth_m},
        "params": params.to_dict(),
        "output": out_rel,
        "output_sha256": hashlib.sha256(png).hexdigest(),
    }
    atomic_write_text(provenance_path(root / out_rel), _dumps(prov))
    return ImageRecord(
        path=out_rel,
        site_id=record.site_id,
        dive_depth_m=record.dive_depth_m,
        distance_m=record.distance_m,
        quality=Quality.RESTORED,
        source=record.path,
    )


def restore_from_provenance(prov_path, root) -> bytes:
    """Re-run a restoration from its provenance file and return the PNG bytes."""
    prov = json.loads(Path(prov_path).read_text(encoding="utf-8"))
    src = Path(root) / prov["source"]
    if _sha256(src) != prov["source_sha256"]:
        raise ValueError(f"{src}: source changed since restoration")
    img, alpha = load_png(src)
    params = RestoreParams.from_dict(prov["params"])
    return encode_png(restore(img, prov["transmission"], prov["airlight"], params), alpha)


def restore_batch(
    records: Sequence[ImageRecord],
    sites: dict[str, SiteSpectra],
    params: RestoreParams = RestoreParams(),
    root=".",
    threads: int = 1,
    bounds: IntegrationBounds = IntegrationBounds(),
    normalize: bool = True,
    failures: list | None = None,
) -> list[ImageRecord]:
    """Restore every Good record; failures are logged, skipped and appended to ``failures``."""
    coeffs: dict[str, ChannelAttenuation] = {}

    def attenuation_for(site_id):
        if site_id not in coeffs:
            if site_id not in sites:
                raise KeyError(f"unknown site {site_id!r}")
            coeffs[site_id] = sites[site_id].channel_attenuation(bounds, normalize)
        return coeffs[site_id]

    good = [r for r in records if r.quality is Quality.GOOD]
    jobs = []
    for rec in good:
        try:
            jobs.append((rec, attenuation_for(rec.site_id)))
        except (KeyError, ValueError) as exc:
            log.warning("skipping %s: %s", rec.path, exc)
            if failures is not None:
                failures.append((rec.path, str(exc)))

    def work(job):
        rec, p = job
        try:
            return restore_one(rec, p, params, root)
        except (OSError, ValueError) as exc:
            return exc

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(work, jobs))
    out = []
    for (rec, _), res in zip(jobs, results):
        if isinstance(res, Exception):
            log.warning("skipping %s: %s", rec.path, res)
            if failures is not None:
                failures.append((rec.path, str(res)))
        else:
            out.append(res)
    return out


# ---------------------------------------------------------------------- splits


@dataclass
class SplitManifest:
    seed: int
    test_count: int
    unpaired_low: list = field(default_factory=list)
    unpaired_restored: list = field(default_factory=list)
    paired_train: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def _header(self, name: str) -> dict:
        return {"split": name, "seed": self.seed, "prng": PRNG_NAME, "test_count": self.test_count}

    def documents(self) -> dict[str, dict]:
        return {
            "unpaired_train": {
                **self._header("unpaired_train"),
                "low": list(self.unpaired_low),
                "restored": list(self.unpaired_restored),
            },
            "paired_train": {**self._header("paired_train"), "pairs": [list(p) for p in self.paired_train]},
            "test": {**self._header("test"), "pairs": [list(p) for p in self.test]},
        }

    def write(self, directory) -> list[Path]:
        directory = Path(directory)
        paths = []
        for name, doc in self.documents().items():
            path = directory / f"{name}.json"
            atomic_write_text(path, _dumps(doc))
            paths.append(path)
        return paths

    @classmethod
    def read(cls, directory) -> "SplitManifest":
        directory = Path(directory)
        docs = {n: json.loads((directory / f"{n}.json").read_text(encoding="utf-8")) for n in SPLIT_NAMES}
        un = docs["unpaired_train"]
        return cls(
            seed=un["seed"],
            test_count=un["test_count"],
            unpaired_low=list(un["low"]),
            unpaired_restored=list(un["restored"]),
            paired_train=[tuple(p) for p in docs["paired_train"]["pairs"]],
            test=[tuple(p) for p in docs["test"]["pairs"]],
        )


def collect_pairs(records: Iterable[ImageRecord], exclusions: Iterable[str] = ()) -> tuple[list, list]:
    """(good, restored) pairs and low-quality paths, sorted, minus excluded paths."""
    excluded = set(exclusions)
    pairs, lows = [], []
    for r in records:
        if r.quality is Quality.RESTORED:
            if r.path not in excluded and r.source not in excluded:
                pairs.append((r.source, r.path))
        elif r.quality is Quality.LOW and r.path not in excluded:
            lows.append(r.path)
    return sorted(pairs), sorted(lows)


def build_splits(
    records: Iterable[ImageRecord],
    test_count: int = 300,
    seed: int = 0,
    exclusions: Iterable[str] = (),
) -> SplitManifest:
    """Seeded test selection over good/restored pairs.

    Pairs are put in canonical (sorted) order, then the first ``test_count``
    entries of a PCG64 permutation form the test set.  Remaining pairs are the
    paired training set; all low-quality frames plus the non-test restored
    frames form the unpaired training set.
    """
    pairs, lows = collect_pairs(records, exclusions)
    if test_count < 0:
        raise ValueError("test_count must be >= 0")
    if test_count > len(pairs):
        raise ValueError(f"need {test_count} good/restored pairs for the test set, only {len(pairs)} available")
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = set(rng.permutation(len(pairs))[:test_count].tolist())
    test = [pairs[i] for i in range(len(pairs)) if i in chosen]
    train = [pairs[i] for i in range(len(pairs)) if i not in chosen]
    return SplitManifest(
        seed=seed,
        test_count=test_count,
        unpaired_low=lows,
        unpaired_restored=[r for _, r in train],
        paired_train=train,
        test=test,
    )


# ------------------------------------------------------------------ validation


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"violations": self.violations, "warnings": self.warnings}


def _image_size(path: Path):
    with Image.open(path) as im:
        return im.size


def validate_manifest(manifest: SplitManifest, root=".", expected_size=NATIVE_SIZE) -> ValidationReport:
    """Check split invariants; problems are returned as data, never raised.

    Violations: a path used by both train and test, a path listed twice, a
    missing file, a pair whose two images differ in size.  Warnings: an image
    whose size is not ``expected_size`` (width, height).
    """
    root = Path(root)
    report = ValidationReport()

    train_paths = list(manifest.unpaired_low) + list(manifest.unpaired_restored)
    for g, r in manifest.paired_train:
        train_paths += [g, r]
    test_paths = [p for pair in manifest.test for p in pair]

    for path in sorted(set(train_paths) & set(test_paths)):
        report.violations.append({"kind": "disjointness", "path": path})

    def dupes(name, paths):
        seen = set()
        for p in paths:
            if p in seen:
                report.violations.append({"kind": "duplicate", "split": name, "path": p})
            seen.add(p)

    dupes("unpaired_train", list(manifest.unpaired_low) + list(manifest.unpaired_restored))
    dupes("paired_train", [p for pair in manifest.paired_train for p in pair])
    dupes("test", test_paths)

    sizes = {}
    for path in sorted(set(train_paths) | set(test_paths)):
        full = root / path
        if not full.is_file():
            report.violations.append({"kind": "missing", "path": path})
            continue
        try:
            sizes[path] = _image_size(full)
        except OSError as exc:
            report.violations.append({"kind": "unreadable", "path": path, "detail": str(exc)})
            continue
        if expected_size is not None and tuple(sizes[path]) != tuple(expected_size):
            report.warnings.append(
                {"kind": "dimensions", "path": path, "size": list(sizes[path]), "expected": list(expected_size)}
            )

    for split, pairs in (("paired_train", manifest.paired_train), ("test", manifest.test)):
        for g, r in pairs:
            if g in sizes and r in sizes and sizes[g] != sizes[r]:
                report.violations.append(
                    {"kind": "pair_dimensions", "split": split, "path": g, "detail": f"{sizes[g]} vs {sizes[r]}"}
                )
    return report


# -------------------------------------------------------------------- pipeline


def build_dataset(
    root,
    test_count: int = 300,
    seed: int = 0,
    depth_jitter_max: float = DEPTH_JITTER_MAX_M,
    params: RestoreParams = RestoreParams(),
    threads: int = 1,
    expected_size=NATIVE_SIZE,
):
    """label -> restore -> split -> validate for a dataset root.

    Returns ``(manifest, report, failures)``; manifests are written under
    ``root/manifests``.
    """
    root = Path(root)
    records = load_records(root / "records.json")
    for r in records:
        r.quality = label_quality(r, depth_jitter_max)
    sites = load_sites(root)
    failures: list = []
    restored = restore_batch(records, sites, params, root, threads, failures=failures)
    exclusions = read_exclusions(root / "exclusions.txt")
    manifest = build_splits(records + restored, test_count, seed, exclusions)
    manifest.write(root / "manifests")
    report = validate_manifest(manifest, root, expected_size)
    return manifest, report, failures

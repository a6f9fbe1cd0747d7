"""Command line entry point: ``hydroptic {restore,synthesize,evaluate,losscheck,dataset}``.

Exit codes: 0 ok, 1 I/O error, 2 parse/config error, 3 invariant or check failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import dataset, losses, metrics, oracles
from .imaging import (
    RestoreParams,
    SceneGeometry,
    airlight,
    geometry_sidecar,
    restore_with_geometry,
    synthesize,
    transmission,
)
from .images import atomic_write_bytes, atomic_write_text, encode_png, load_png, side_by_side
from .spectral import ChannelAttenuation, IntegrationBounds, load_site_metadata

log = logging.getLogger("hydroptic")

EXIT_OK, EXIT_IO, EXIT_PARSE, EXIT_CHECK = 0, 1, 2, 3
THREADS_ENV = "HYDROPTIC_THREADS"


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ----------------------------------------------------------------- flag types


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = text.split(":")
        return float(lo), float(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None


def _int_range(text: str) -> tuple[int, int]:
    lo, hi = _range(text)
    if lo != int(lo) or hi != int(hi):
        raise argparse.ArgumentTypeError(f"expected integer lo:hi, got {text!r}")
    return int(lo), int(hi)


def _triple(text: str) -> tuple[float, float, float]:
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        vals = ()
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected r,g,b, got {text!r}")
    return vals


def _size(text: str):
    if text.lower() == "none":
        return None
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH or 'none', got {text!r}") from None


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _shapes(text: str) -> list[tuple[int, int]]:
    try:
        out = [tuple(int(x) for x in part.lower().split("x")) for part in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected SxC[,SxC...], got {text!r}") from None
    if any(len(s) != 2 for s in out):
        raise argparse.ArgumentTypeError(f"expected SxC[,SxC...], got {text!r}")
    return out


# -------------------------------------------------------------------- helpers


def _list_inputs(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(p for p in path.glob("*.png") if p.is_file())
        if not files:
            raise CliError(EXIT_IO, f"{path}: no PNG files")
        return files
    if path.is_file():
        return [path]
    raise CliError(EXIT_IO, f"{path}: no such file or directory")


def _restore_params(args) -> RestoreParams:
    try:
        return RestoreParams(t0=args.t0, keep_range=tuple(args.keep_range), rescale=not args.no_rescale)
    except ValueError as exc:
        raise CliError(EXIT_CHECK, str(exc)) from None


def _attenuation(args) -> ChannelAttenuation:
    if args.attenuation is not None:
        try:
            return ChannelAttenuation(*args.attenuation)
        except ValueError as exc:
            raise CliError(EXIT_CHECK, str(exc)) from None
    if args.site is None:
        raise CliError(EXIT_PARSE, "either --site or --attenuation is required")
    try:
        bounds = IntegrationBounds(*args.bounds)
    except ValueError as exc:
        raise CliError(EXIT_CHECK, str(exc)) from None
    try:
        site = load_site_metadata(args.site)
    except OSError as exc:
        raise CliError(EXIT_IO, f"site metadata: {exc}") from None
    except ValueError as exc:
        raise CliError(EXIT_PARSE, f"site metadata: {exc}") from None
    try:
        return site.channel_attenuation(bounds, normalize=not args.raw_integral)
    except ValueError as exc:
        raise CliError(EXIT_CHECK, str(exc)) from None


def _geometry(args, image: Path) -> SceneGeometry:
    distance, depth = args.distance, args.depth
    if distance is None or depth is None:
        sidecar = geometry_sidecar(image)
        try:
            doc = json.loads(sidecar.read_text(encoding="utf-8"))
        except OSError:
            raise CliError(EXIT_IO, f"{image.name}: missing geometry sidecar {sidecar.name}") from None
        except ValueError as exc:
            raise CliError(EXIT_PARSE, f"{sidecar}: {exc}") from None
        try:
            distance = float(doc["distance_m"]) if distance is None else distance
            depth = float(doc["dive_depth_m"]) if depth is None else depth
        except (KeyError, TypeError, ValueError) as exc:
            raise CliError(EXIT_PARSE, f"{sidecar}: bad field {exc}") from None
    try:
        return SceneGeometry(distance, depth)
    except ValueError as exc:
        raise CliError(EXIT_CHECK, f"{image.name}: {exc}") from None


def _run_parallel(fn, items, threads: int):
    """Map ``fn`` over items with a bounded pool; results come back in input order."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _load(path: Path):
    try:
        return load_png(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"{path}: {exc}") from None


def _fmt(x: float) -> str:
    return format(x, ".10g")


# ---------------------------------------------------------------- subcommands


def cmd_restore(args) -> int:
    params = _restore_params(args)
    p = _attenuation(args)
    inputs = _list_inputs(Path(args.input))
    out_dir = Path(args.output)
    jobs = [(f, _geometry(args, f)) for f in inputs]

    def work(job):
        src, geom = job
        img, alpha = _load(src)
        restored = restore_with_geometry(img, p, geom, params)
        t = transmission(p, geom.distance_m)
        A = airlight(p, geom.dive_depth_m)
        png = encode_png(restored, alpha)
        dest = out_dir / (src.stem + ".png")
        atomic_write_bytes(dest, png)
        prov = {
            "source": src.name,
            "source_sha256": hashlib.sha256(src.read_bytes()).hexdigest(),
            "attenuation": {"r": p.r, "g": p.g, "b": p.b},
            "transmission": t.tolist(),
            "airlight": A.tolist(),
            "geometry": {"distance_m": geom.distance_m, "dive_depth_m": geom.dive_depth_m},
            "params": params.to_dict(),
            "output": dest.name,
            "output_sha256": hashlib.sha256(png).hexdigest(),
        }
        atomic_write_text(dataset.provenance_path(dest), json.dumps(prov, indent=2, sort_keys=True) + "\n")
        if args.panel:
            atomic_write_bytes(out_dir / (src.stem + ".panel.png"), encode_png(side_by_side(img, restored)))
        return dest

    for dest in _run_parallel(work, jobs, args.threads):
        log.info("wrote %s", dest)
    print(f"restored {len(jobs)} image(s) -> {out_dir}")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    if args.distance is None or args.depth is None:
        raise CliError(EXIT_PARSE, "synthesize needs --distance and --depth")
    p = _attenuation(args)
    try:
        geom = SceneGeometry(args.distance, args.depth)
    except ValueError as exc:
        raise CliError(EXIT_CHECK, str(exc)) from None
    inputs = _list_inputs(Path(args.input))
    out_dir = Path(args.output)

    def work(src):
        img, alpha = _load(src)
        dest = out_dir / (src.stem + ".png")
        atomic_write_bytes(dest, encode_png(synthesize(img, p, geom), alpha))
        atomic_write_text(geometry_sidecar(dest), geom.to_json())
        return dest

    _run_parallel(work, inputs, args.threads)
    print(f"synthesized {len(inputs)} image(s) -> {out_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    for d in (args.restored, args.reference):
        if not Path(d).is_dir():
            raise CliError(EXIT_IO, f"{d}: not a directory")
    pairs, only_restored, only_reference = metrics.pair_files(args.restored, args.reference)
    if only_restored or only_reference:
        for name in only_restored:
            print(f"unmatched: {name} has no reference", file=sys.stderr)
        for name in only_reference:
            print(f"unmatched: {name} has no restored image", file=sys.stderr)
        raise CliError(EXIT_CHECK, f"{len(only_restored) + len(only_reference)} unmatched file(s)")
    if not pairs:
        raise CliError(EXIT_IO, "no image pairs found")

    def work(item):
        name, a, b = item
        img_a, _ = _load(a)
        img_b, _ = _load(b)
        try:
            return metrics.score_pair(name, img_a, img_b, gray=args.ssim_gray)
        except ValueError as exc:
            raise CliError(EXIT_CHECK, f"{name}: {exc}") from None

    reports = _run_parallel(work, pairs, args.threads)
    summary = metrics.summarize(reports)
    cols = ("mse", "psnr", "ssim", "uicm", "uism", "uiconm", "uiqm")

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("filename",) + cols)
    for r in reports:
        w.writerow([r.filename] + [_fmt(getattr(r, c)) for c in cols])
    w.writerow(["MEAN"] + [_fmt(summary["mean"][c]) for c in cols])
    out = Path(args.output)
    atomic_write_text(out, buf.getvalue())

    doc = {
        "images": [
            {"filename": r.filename, **{c: getattr(r, c) for c in cols}, "psnr_inf": r.psnr_is_inf} for r in reports
        ],
        "summary": summary,
        "ssim_mode": "luma" if args.ssim_gray else "rgb_mean",
        "psnr_cap_db": metrics.PSNR_CAP_DB,
    }
    json_path = Path(args.json) if args.json else out.with_suffix(".json")
    atomic_write_text(json_path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    m = summary["mean"]
    print(f"{len(reports)} pairs: MSE {m['mse']:.2f}  PSNR {m['psnr']:.2f} dB  SSIM {m['ssim']:.4f}  UIQM {m['uiqm']:.3f}")
    return EXIT_OK


DEFAULT_LOSSCHECK_SHAPES = [(8, 16), (6, 12), (4, 8)]


def _load_stack(path) -> losses.FeatureStack:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, f"{path}: {exc}") from None
    try:
        return losses.FeatureStack.from_json(text)
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_CHECK, f"{path}: {exc}") from None


def run_losscheck(fx: losses.FeatureStack, fg: losses.FeatureStack, tau: float, rng: np.random.Generator):
    """Run all self-checks; returns a list of (name, passed, deviation, tolerance)."""
    results = []

    fast = losses.patchnce(fx, fg, tau)
    slow = oracles.patchnce_bruteforce(fx.layers, fg.layers, tau)
    dev = abs(fast - slow)
    results.append(("patchnce_vs_bruteforce", dev <= 1e-10, dev, 1e-10))

    worst = 0.0
    for layer_x, layer_g in zip(fx, fg):
        for s in range(layer_x.shape[0]):
            negs = np.delete(layer_x, s, axis=0)
            worst = max(worst, losses.grad_check_infonce(layer_g[s], layer_x[s], negs, tau))
    results.append(("infonce_grad_vs_central_diff", worst <= 1e-4, worst, 1e-4))

    k = fx[0].shape[1]
    worst = 0.0
    for n in range(1, 17):
        v = rng.standard_normal(k)
        worst = max(worst, abs(losses.infonce(v, v, np.tile(v, (n, 1)), tau) - math.log(n + 1)))
    results.append(("infonce_symmetric_point_log_n_plus_1", worst <= 1e-12, worst, 1e-12))

    layer_x, layer_g = fx[0], fg[0]
    base = losses.infonce(layer_g[0], layer_x[0], layer_x[1:], tau)
    worst = 0.0
    for alpha in (1e-6, 1.0, 1e6):
        val = losses.infonce(alpha * layer_g[0], layer_x[0], layer_x[1:], tau)
        worst = max(worst, abs(val - base) / max(abs(base), 1e-300))
    results.append(("infonce_scale_invariance", worst <= 1e-9, worst, 1e-9))
    return results


def cmd_losscheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.random:
        shapes = args.shapes or DEFAULT_LOSSCHECK_SHAPES
        try:
            fx = losses.FeatureStack.random(rng, shapes)
            fg = losses.FeatureStack.random(rng, shapes)
        except ValueError as exc:
            raise CliError(EXIT_CHECK, str(exc)) from None
    else:
        if not (args.features_x and args.features_gx):
            raise CliError(EXIT_PARSE, "give --random or both --features-x and --features-gx")
        fx, fg = _load_stack(args.features_x), _load_stack(args.features_gx)
    try:
        losses.check_stack_shapes(fx, fg)
    except ValueError as exc:
        raise CliError(EXIT_CHECK, f"feature stacks: {exc}") from None

    results = run_losscheck(fx, fg, args.tau, rng)
    print(f"tau={args.tau}  layers={[tuple(s) for s in fx.shapes]}")
    for name, ok, dev, tol in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name:40s} max_dev={dev:.3e}  tol={tol:.0e}")
    return EXIT_OK if all(r[1] for r in results) else EXIT_CHECK


def cmd_dataset(args) -> int:
    root = Path(args.root)
    if not (root / "records.json").is_file():
        raise CliError(EXIT_IO, f"{root}: records.json not found")
    params = _restore_params(args)
    try:
        manifest, report, failures = dataset.build_dataset(
            root,
            test_count=args.test_count,
            seed=args.seed,
            depth_jitter_max=args.depth_jitter,
            params=params,
            threads=args.threads,
            expected_size=args.expected_size,
        )
    except OSError as exc:
        raise CliError(EXIT_IO, f"dataset: {exc}") from None
    except (KeyError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_PARSE, f"dataset: {exc}") from None
    except ValueError as exc:
        raise CliError(EXIT_CHECK, f"dataset: {exc}") from None
    summary = {
        "unpaired_train": {"low": len(manifest.unpaired_low), "restored": len(manifest.unpaired_restored)},
        "paired_train": len(manifest.paired_train),
        "test": len(manifest.test),
        "restore_failures": [{"path": p, "error": e} for p, e in failures],
        **report.to_dict(),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK if report.ok and not failures else EXIT_CHECK


# --------------------------------------------------------------------- parser


def _add_restore_flags(p, *, restore: bool = True):
    p.add_argument("--input", required=True, help="PNG file or directory of PNGs")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--site", help="site metadata.json (spectra for the attenuation integral)")
    p.add_argument("--attenuation", type=_triple, help="explicit per-channel attenuation r,g,b in 1/m; overrides --site")
    p.add_argument("--bounds", type=_range, default="400:750", help="integration band lo:hi in nm")
    p.add_argument("--raw-integral", action="store_true", help="do not normalize by the response area")
    p.add_argument("--distance", type=float, help="camera-object distance in m (else per-image sidecar)")
    p.add_argument("--depth", type=float, help="dive depth in m (else per-image sidecar)")
    if restore:
        _add_param_flags(p)
        p.add_argument("--panel", action="store_true", help="also write input|restored comparison strips")


def _add_param_flags(p):
    p.add_argument("--t0", type=float, default=0.1, help="lower bound on transmission")
    p.add_argument("--keep-range", type=_int_range, default="13:255", help="8-bit input range lo:hi mapped as-is")
    p.add_argument("--no-rescale", action="store_true", help="skip the per-channel min-max stretch")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="hydroptic", description=__doc__, formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    threads = dict(type=int, default=_default_threads(), help=f"worker threads (env {THREADS_ENV})")

    p = sub.add_parser("restore", help="invert the imaging model", formatter_class=fmt)
    _add_restore_flags(p)
    p.add_argument("--threads", **threads)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("synthesize", help="apply the forward imaging model", formatter_class=fmt)
    _add_restore_flags(p, restore=False)
    p.add_argument("--threads", **threads)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="MSE/PSNR/SSIM/UIQM over paired directories", formatter_class=fmt)
    p.add_argument("--restored", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--output", required=True, help="CSV path")
    p.add_argument("--json", help="JSON summary path (default: CSV path with .json)")
    p.add_argument("--ssim-gray", action="store_true", help="SSIM on BT.601 luma instead of RGB mean")
    p.add_argument("--threads", **threads)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("losscheck", help="verify loss kernels against oracles", formatter_class=fmt)
    p.add_argument("--random", action="store_true", help="use random feature stacks")
    p.add_argument("--seed", type=int, default=0, help="RNG seed for --random")
    p.add_argument("--shapes", type=_shapes, help="layer shapes SxC[,SxC...] for --random (default 8x16,6x12,4x8)")
    p.add_argument("--features-x", help="FeatureStack JSON of the input image")
    p.add_argument("--features-gx", help="FeatureStack JSON of the translated image")
    p.add_argument("--tau", type=float, default=losses.DEFAULT_TAU, help="InfoNCE temperature")
    p.add_argument("--lambda-gan", type=float, default=1.0, help="adversarial weight (validated)")
    p.add_argument("--lambda-nce", type=float, default=1.0, help="PatchNCE weight (validated)")
    p.add_argument("--lambda-idt", type=float, default=10.0, help="identity weight (validated)")
    p.set_defaults(func=cmd_losscheck)

    p = sub.add_parser("dataset", help="label, restore and split a dataset root", formatter_class=fmt)
    p.add_argument("--root", required=True)
    p.add_argument("--seed", type=int, default=0, help="PCG64 seed for the test split")
    p.add_argument("--test-count", type=int, default=300, help="number of test pairs")
    p.add_argument("--depth-jitter", type=float, default=dataset.DEPTH_JITTER_MAX_M, help="max depth spread (m) for good quality")
    p.add_argument("--expected-size", type=_size, default="%dx%d" % dataset.NATIVE_SIZE, help="expected WxH or 'none'")
    _add_param_flags(p)
    p.add_argument("--threads", **threads)
    p.set_defaults(func=cmd_dataset)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if hasattr(args, "threads") and args.threads < 1:
        parser.error("--threads must be >= 1")
    if args.command == "losscheck":
        try:
            losses.LossWeights(args.lambda_gan, args.lambda_nce, args.lambda_idt, args.tau)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CHECK
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

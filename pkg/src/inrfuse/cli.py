"""Command-line entry point: ``inrfuse {fuse,superres,metrics,bench,replay}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InrFuseError
from .fusion import FusionConfig, fuse, loss_history_csv, superres_query
from .imaging import (
    RAW01,
    GrayImage,
    atomic_write_bytes,
    bilinear_resample,
    denormalize,
    encode_image,
    load_image,
    quantize8,
)
from .metrics import FIELDS, evaluate
from .siren import SirenConfig, SirenNetwork

log = logging.getLogger("inrfuse")


class ArgumentError(Exception):
    """Invalid command-line input detected after parsing (exit code 2)."""


_PAIR_RE = re.compile(r"^(ir|vis)_(.+)\.(png|pgm)$", re.IGNORECASE)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".manifest.json")


def _write_manifest(out, payload: dict) -> Path:
    path = _manifest_path(out)
    payload = {"tool": "inrfuse", "version": __version__, **payload}
    atomic_write_bytes(path, (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode())
    return path


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def _nonneg_float(text: str) -> float:
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {text}")
    return value


def _add_fusion_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", type=_positive_int, default=2000)
    p.add_argument("--lr", type=_positive_float, default=1e-3)
    p.add_argument("--lambda", dest="lam", type=_nonneg_float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=_positive_int, default=256)
    p.add_argument("--layers", type=int, default=5)
    p.add_argument("--omega", type=_positive_float, default=30.0)
    p.add_argument("--log-every", type=_positive_int, default=10)
    p.add_argument("--plain-adam", action="store_true", help="disable the AMSGrad second-moment maximum")


def _configs(args) -> tuple[SirenConfig, FusionConfig]:
    if args.layers < 2:
        raise ArgumentError("--layers must be >= 2")
    net = SirenConfig(hidden_width=args.hidden, num_layers=args.layers, omega_first=args.omega,
                      omega_hidden=args.omega, seed=args.seed)
    fcfg = FusionConfig(steps=args.steps, lr=args.lr, lam=args.lam, seed=args.seed, log_every=args.log_every,
                        amsgrad=not args.plain_adam)
    try:
        net.validate()
        fcfg.validate()
    except InrFuseError as exc:
        raise ArgumentError(str(exc)) from exc
    return net, fcfg


def _resolved(net: SirenConfig, fcfg: FusionConfig) -> dict:
    return {"siren": dataclasses.asdict(net), "fusion": dataclasses.asdict(fcfg)}


# -- fuse --------------------------------------------------------------------

def cmd_fuse(args) -> int:
    net_cfg, fcfg = _configs(args)
    if args.out_scale is not None and not args.out_scale > 0:
        raise ArgumentError("--out-scale must be positive")
    ir = load_image(args.ir)
    vis = load_image(args.vis)
    result = fuse(ir, vis, net_cfg, fcfg)
    fused = result.fused
    base_h, base_w = fused.shape
    if args.out_scale is not None:
        fused = superres_query(result.network, base_w, base_h, args.out_scale)
    out = Path(args.out)
    atomic_write_bytes(out, encode_image(denormalize(fused), out.suffix))
    outputs = [str(out)]
    if args.loss_csv:
        atomic_write_bytes(Path(args.loss_csv), loss_history_csv(result.loss_history).encode())
        outputs.append(str(args.loss_csv))
    if args.checkpoint:
        atomic_write_bytes(Path(args.checkpoint), result.network.to_bytes())
        outputs.append(str(args.checkpoint))
    final = result.loss_history[-1]
    _write_manifest(out, {
        "command": "fuse",
        "argv": args.argv,
        "config": _resolved(net_cfg, fcfg),
        "inputs": {"ir": {"path": str(args.ir), "sha256": _sha256(args.ir)},
                   "vis": {"path": str(args.vis), "sha256": _sha256(args.vis)}},
        "outputs": outputs,
        "base_width": base_w,
        "base_height": base_h,
        "output_width": fused.width,
        "output_height": fused.height,
        "final_loss": dataclasses.asdict(final),
        "wall_time": result.wall_time,
    })
    log.info("fused %s (%dx%d), final loss %.6g", out, fused.width, fused.height, final.total)
    return 0


# -- superres ----------------------------------------------------------------

def cmd_superres(args) -> int:
    if not args.scale > 0:
        raise ArgumentError("--scale must be positive")
    base_w, base_h = args.base_w, args.base_h
    if args.manifest:
        meta = json.loads(Path(args.manifest).read_text())
        base_w = base_w or meta["base_width"]
        base_h = base_h or meta["base_height"]
    if not base_w or not base_h:
        raise ArgumentError("base size unknown: pass --manifest or --base-w/--base-h")
    net = SirenNetwork.load(args.checkpoint)
    img = superres_query(net, base_w, base_h, args.scale)
    out = Path(args.out)
    atomic_write_bytes(out, encode_image(denormalize(img), out.suffix))
    _write_manifest(out, {
        "command": "superres",
        "argv": args.argv,
        "inputs": {"checkpoint": {"path": str(args.checkpoint), "sha256": _sha256(args.checkpoint)}},
        "scale": args.scale,
        "base_width": base_w,
        "base_height": base_h,
        "output_width": img.width,
        "output_height": img.height,
        "outputs": [str(out)],
    })
    return 0


# -- metrics -----------------------------------------------------------------

def _metrics_csv(rows: list[tuple[str, object]], label: str | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(([label] if label else []) + list(FIELDS))
    for name, report in rows:
        w.writerow(([name] if label else []) + report.csv_row())
    return buf.getvalue()


def cmd_metrics(args) -> int:
    f, a, b = load_image(args.fused), load_image(args.ir), load_image(args.vis)
    report = evaluate(f, a, b)
    if args.format == "json":
        sys.stdout.write(report.to_json() + "\n")
    else:
        sys.stdout.write(report.to_csv())
    return 0


# -- bench -------------------------------------------------------------------

def find_pairs(directory) -> tuple[list[tuple[str, Path, Path]], list[Path]]:
    """Match ``ir_<key>`` with ``vis_<key>`` files; returns pairs sorted by key and orphans."""
    found: dict[str, dict[str, Path]] = {}
    for p in sorted(Path(directory).iterdir()):
        m = _PAIR_RE.match(p.name)
        if m and p.is_file():
            found.setdefault(m.group(2), {})[m.group(1).lower()] = p
    pairs, orphans = [], []
    for key in sorted(found):
        entry = found[key]
        if "ir" in entry and "vis" in entry:
            pairs.append((key, entry["ir"], entry["vis"]))
        else:
            orphans.extend(entry.values())
    return pairs, orphans


def _bench_one(key: str, ir_path: Path, vis_path: Path, net_cfg: SirenConfig, fcfg: FusionConfig, out_dir: Path):
    ir, vis = load_image(ir_path), load_image(vis_path)
    result = fuse(ir, vis, net_cfg, fcfg)
    fused01 = quantize8(denormalize(result.fused).pixels) / 255.0
    out = out_dir / f"fused_{key}.png"
    atomic_write_bytes(out, encode_image(GrayImage(fused01, RAW01), ".png"))
    h, w = fused01.shape
    # metrics need a common grid; a lower-resolution source is interpolated for scoring only
    src = [s if s.shape == (h, w) else bilinear_resample(s, w, h) for s in (ir, vis)]
    return key, evaluate(fused01, src[0], src[1]), str(out)


def _worker_count() -> int:
    env = os.environ.get("INRFUSE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer INRFUSE_THREADS=%r", env)
    return os.cpu_count() or 1


def cmd_bench(args) -> int:
    net_cfg, fcfg = _configs(args)
    directory = Path(args.dir)
    if not directory.is_dir():
        raise ArgumentError(f"{directory} is not a directory")
    pairs, orphans = find_pairs(directory)
    for p in orphans:
        log.warning("skipping unpaired file %s", p)
    if not pairs:
        log.error("no ir_*/vis_* pairs found in %s", directory)
        return 1
    out_dir = Path(args.out_dir) if args.out_dir else directory / "fused"
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = Path(args.summary) if args.summary else directory / "summary.csv"
    workers = min(_worker_count(), len(pairs))
    start = time.perf_counter()
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_bench_one, k, a, b, net_cfg, fcfg, out_dir) for k, a, b in pairs]
            results = [f.result() for f in futures]
    else:
        results = [_bench_one(k, a, b, net_cfg, fcfg, out_dir) for k, a, b in pairs]
    rows = [(key, report) for key, report, _ in results]
    mean = type(rows[0][1])(**{k: float(np.mean([getattr(r, k) for _, r in rows])) for k in FIELDS})
    atomic_write_bytes(summary, _metrics_csv(rows + [("mean", mean)], label="pair").encode())
    _write_manifest(summary, {
        "command": "bench",
        "argv": args.argv,
        "config": _resolved(net_cfg, fcfg),
        "inputs": {key: {"ir": {"path": str(a), "sha256": _sha256(a)},
                         "vis": {"path": str(b), "sha256": _sha256(b)}} for key, a, b in pairs},
        "outputs": [str(summary)] + [o for _, _, o in results],
        "skipped": [str(p) for p in orphans],
        "wall_time": time.perf_counter() - start,
    })
    log.info("wrote %s (%d pairs)", summary, len(rows))
    return 0


# -- replay ------------------------------------------------------------------

def cmd_replay(args) -> int:
    meta = json.loads(Path(args.manifest).read_text())
    argv = meta.get("argv")
    if not argv:
        raise ArgumentError(f"{args.manifest} does not record a command line")
    return main(argv)


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="inrfuse", description="Infrared/visible image fusion with a sine-activated coordinate network.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fuse", help="fuse one infrared/visible pair")
    p.add_argument("--ir", required=True)
    p.add_argument("--vis", required=True)
    p.add_argument("--out", required=True)
    _add_fusion_flags(p)
    p.add_argument("--loss-csv")
    p.add_argument("--checkpoint")
    p.add_argument("--out-scale", type=_positive_float)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("superres", help="render a trained checkpoint on a denser grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scale", type=_positive_float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.add_argument("--base-w", type=_positive_int)
    p.add_argument("--base-h", type=_positive_int)
    p.set_defaults(func=cmd_superres)

    p = sub.add_parser("metrics", help="score a fused image against its sources")
    p.add_argument("--fused", required=True)
    p.add_argument("--ir", required=True)
    p.add_argument("--vis", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bench", help="fuse and score every ir_*/vis_* pair in a directory")
    p.add_argument("--dir", required=True)
    p.add_argument("--summary")
    p.add_argument("--out-dir")
    _add_fusion_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ArgumentError as exc:
        parser.print_usage(sys.stderr)
        print(f"inrfuse: error: {exc}", file=sys.stderr)
        return 2
    except (InrFuseError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"inrfuse: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

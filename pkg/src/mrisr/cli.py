"""Command-line surface: train | sr | classify | eval | sweep.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 acceptance failure.
Configuration precedence is flags over --config file over defaults; the
fully resolved configuration is echoed to stderr as key=value records.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiment
from .classify import PatchClass, class_map, measurement_matrix_for
from .dictionary import load_dictionary, save_dictionary
from .errors import (
    ConfigurationError,
    DegenerateDataError,
    DictionaryFormatError,
    InsufficientDataError,
    ManifestError,
)
from .fileio import atomic_write_bytes, read_image, write_image
from .image import bicubic_resample

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ACCEPT = 3

_DATA_ERRORS = (
    InsufficientDataError,
    DegenerateDataError,
    DictionaryFormatError,
    ConfigurationError,
    ManifestError,
    FileNotFoundError,
    ValueError,
    OSError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def log_kv(**fields):
    print(" ".join(f"{k}={v}" for k, v in fields.items()), file=sys.stderr)


_PARAM_FLAGS = {
    "scale": ("--scale", int),
    "patch_size": ("--patch-size", int),
    "overlap": ("--overlap", int),
    "atoms": ("--atoms", int),
    "lambda": ("--lambda", float),
    "h": ("--h", float),
    "nmax": ("--nmax", int),
    "t1": ("--t1", float),
    "t2": ("--t2", float),
    "sampling_rate": ("--sampling-rate", float),
    "seed": ("--seed", int),
    "threads": ("--threads", int),
    "block_size": ("--block-size", int),
    "iterations": ("--iterations", int),
    "per_class_cap": ("--per-class-cap", int),
    "stride": ("--stride", int),
    "refine_passes": ("--refine-passes", int),
    "ista_max_iter": ("--ista-max-iter", int),
    "solver": ("--solver", str),
}

_DEFAULTS = {
    "scale": 2,
    "patch_size": 5,
    "overlap": 4,
    "atoms": 512,
    "lambda": 0.1,
    "h": 75.0,
    "nmax": 10,
    "t1": 3e6,
    "t2": 3e7,
    "sampling_rate": 0.4,
    "seed": 0,
    "threads": 1,
    "block_size": 8,
    "iterations": 15,
    "per_class_cap": 20000,
    "stride": 1,
    "refine_passes": 1,
    "ista_max_iter": 200,
    "solver": "ista",
}


def _add_param_flags(parser):
    for key, (flag, typ) in _PARAM_FLAGS.items():
        parser.add_argument(flag, dest=key, type=typ, default=None)
    parser.add_argument("--config", default=None, help="key = value config file")


def _read_config_file(path):
    values = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"bad config line {line!r}")
        key, _, raw = line.partition("=")
        values[key.strip().replace("-", "_")] = raw.strip()
    return values


def resolve_params(args) -> dict:
    """Merge defaults < config file < explicit flags into one flat dict."""
    params = dict(_DEFAULTS)
    if getattr(args, "config", None):
        for key, raw in _read_config_file(args.config).items():
            if key not in _DEFAULTS:
                raise ValueError(f"unknown config key {key!r}")
            params[key] = type(_DEFAULTS[key])(raw)
    for key in _PARAM_FLAGS:
        val = getattr(args, key, None)
        if val is not None:
            params[key] = val
    log_kv(event="config", **params)
    return params


def _recon_config(params, scale=None):
    flat = {k: str(v) for k, v in params.items()}
    return experiment.recon_config_from_params(
        flat, int(scale if scale is not None else params["scale"]), int(params["seed"])
    )


def cmd_train(args) -> int:
    params = resolve_params(args)
    images = [read_image(p) for p in args.images]
    cfg = _recon_config(params)
    dicts = experiment.train_dictionaries(
        images,
        cfg,
        atoms=int(params["atoms"]),
        iterations=int(params["iterations"]),
        per_class_cap=int(params["per_class_cap"]),
        stride=int(params["stride"]),
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {}
    for pc, pair in dicts.items():
        path = out_dir / f"{pc.name.lower()}.dict"
        save_dictionary(pair, path)
        report[pc.name.lower()] = {
            "path": str(path),
            "samples": pair.meta.sample_count,
            "initial_error": pair.meta.initial_error,
            "final_error": pair.meta.final_error,
        }
        log_kv(event="trained", cls=pc.name.lower(), samples=pair.meta.sample_count)
    atomic_write_bytes(
        out_dir / "train_report.json", json.dumps(report, indent=2).encode()
    )
    return EXIT_OK


def _load_dicts(dict_dir, single=None):
    if single is not None:
        pair = load_dictionary(single)
        from .dictionary import DictionaryPair

        return {
            pc: DictionaryPair(
                pc, pair.dh, pair.dl, pair.patch_size, pair.scale, pair.seed
            )
            for pc in PatchClass
        }
    dict_dir = Path(dict_dir)
    out = {}
    for pc in PatchClass:
        path = dict_dir / f"{pc.name.lower()}.dict"
        if not path.exists():
            raise ConfigurationError(f"missing dictionary file {path}")
        out[pc] = load_dictionary(path)
    return out


def cmd_sr(args) -> int:
    from .reconstruct import super_resolve_detailed

    params = resolve_params(args)
    lr = read_image(args.input)
    dicts = _load_dicts(args.dict_dir, args.single_dict)
    cfg = _recon_config(params)
    phi = measurement_matrix_for(cfg.classifier)
    out, report = super_resolve_detailed(
        lr, dicts, cfg, phi, no_nonlocal=args.no_nonlocal
    )
    write_image(out, args.output)
    sidecar = {
        "patch_count": report.patch_count,
        "class_counts": report.class_counts,
        "mean_similar": report.mean_similar,
        "ibp_residuals": report.ibp_residuals,
        "ibp_violations": report.ibp_violations,
        "clamped_pixels": report.clamped_pixels,
    }
    atomic_write_bytes(
        Path(args.output).with_suffix(".json"),
        json.dumps(sidecar, indent=2).encode(),
    )
    if args.dump_classmap:
        mid = bicubic_resample(lr, cfg.scale)
        cmap, _ = class_map(mid, cfg.classifier, phi)
        write_image(cmap, args.dump_classmap)
    log_kv(event="sr", output=args.output, patches=report.patch_count)
    return EXIT_OK


def cmd_classify(args) -> int:
    params = resolve_params(args)
    img = read_image(args.input)
    cfg = _recon_config(params)
    phi = measurement_matrix_for(cfg.classifier)
    cmap, counts = class_map(img, cfg.classifier, phi)
    write_image(cmap, args.output)
    lines = ["class,count"]
    lines += [f"{pc.name.lower()},{counts[pc]}" for pc in PatchClass]
    if args.csv:
        atomic_write_bytes(args.csv, ("\n".join(lines) + "\n").encode())
    else:
        print("\n".join(lines))
    return EXIT_OK


def _parse_sweep(spec):
    key, _, raw = spec.partition("=")
    if not raw:
        raise UsageError(f"bad sweep spec {spec!r}; expected key=v1,v2,...")
    return key.strip(), [v.strip() for v in raw.split(",") if v.strip()]


def _manifest_lists_work(path) -> bool:
    import configparser

    parser = configparser.ConfigParser()
    try:
        parser.read_string(Path(path).read_text())
    except (OSError, configparser.Error):
        return True  # defer to parse_manifest's data-level diagnostics
    return parser.has_section("eval") and bool(
        [s for s in parser["eval"].get("images", "").split(",") if s.strip()]
    )


def cmd_eval(args) -> int:
    if Path(args.manifest).exists() and not _manifest_lists_work(args.manifest):
        raise UsageError("manifest lists no evaluation images")
    manifest = experiment.parse_manifest(args.manifest)
    overrides_list = [None]
    sweep_key = None
    if args.sweep:
        sweep_key, values = _parse_sweep(args.sweep)
        overrides_list = [{sweep_key: v} for v in values]
    all_reports = []
    failures = []
    for overrides in overrides_list:
        reports, fails = experiment.run_experiment(
            manifest, out_dir=None, param_overrides=overrides
        )
        all_reports.extend(reports)
        failures.extend(fails)
    out_dir = Path(args.out_dir) if args.out_dir else None
    csv_text = experiment.reports_csv(all_reports)
    table = experiment.reports_table(all_reports)
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        atomic_write_bytes(out_dir / "results.csv", csv_text.encode())
        atomic_write_bytes(out_dir / "results.txt", table.encode())
    print(table, end="")
    for f in failures:
        log_kv(event="accept_fail", detail=f)
    return EXIT_ACCEPT if failures else EXIT_OK


def cmd_sweep(args) -> int:
    """Classifier threshold sweep for recalibration at other block sizes."""
    from .classify import classify_blocks
    from .patches import extract_patches, grid_origins, patch_matrix

    params = resolve_params(args)
    rows = ["feature_scale,smooth_frac,texture_frac,edge_frac"]
    scales = [float(s) for s in args.feature_scales.split(",")]
    for fscale in scales:
        counts = np.zeros(3)
        for path in args.images:
            img = read_image(path)
            from .classify import ClassifierConfig

            cfg = ClassifierConfig(
                block_size=int(params["block_size"]),
                sampling_rate=float(params["sampling_rate"]),
                t1=float(params["t1"]),
                t2=float(params["t2"]),
                seed=int(params["seed"]),
                feature_scale=fscale,
            )
            phi = measurement_matrix_for(cfg)
            grid = extract_patches(img, cfg.block_size, 0)
            blocks = patch_matrix(img.data, grid_origins(grid), cfg.block_size)
            classes = classify_blocks(blocks, cfg, phi)
            for c in range(3):
                counts[c] += int((classes == c).sum())
        total = counts.sum()
        fracs = counts / total if total else counts
        rows.append(f"{fscale},{fracs[0]:.4f},{fracs[1]:.4f},{fracs[2]:.4f}")
    text = "\n".join(rows) + "\n"
    if args.csv:
        atomic_write_bytes(args.csv, text.encode())
    else:
        print(text, end="")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="mrisr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train per-class dictionaries")
    p.add_argument("images", nargs="+")
    p.add_argument("--out-dir", required=True)
    _add_param_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sr", help="super-resolve one LR image")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--dict-dir")
    p.add_argument("--single-dict", help="use one dictionary file for every class")
    p.add_argument("--no-nonlocal", action="store_true")
    p.add_argument("--dump-classmap", help="write the 3-level class map image here")
    _add_param_flags(p)
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("classify", help="emit a class map image and counts")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--csv")
    _add_param_flags(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("eval", help="run an experiment manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--sweep", help="e.g. lambda=0.01,0.1,0.5")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="classifier feature-scale sweep")
    p.add_argument("images", nargs="+")
    p.add_argument("--feature-scales", default="16,64,256", help="comma list")
    p.add_argument("--csv")
    _add_param_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "sr" and not (args.dict_dir or args.single_dict):
            raise UsageError("sr needs --dict-dir or --single-dict")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

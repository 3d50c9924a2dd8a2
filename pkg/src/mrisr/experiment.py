"""Experiment orchestration: manifests, method variants, CSV and tables.

A manifest is a plain key = value sections file listing training images,
evaluation images, scales, and method variants.  Each (image, scale,
method) cell degrades the ground truth, reconstructs it with the requested
variant, and scores PSNR/SSIM/MSE against the original; rows carry the
seed and a hash of the resolved configuration so runs are reproducible.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classify import ClassifierConfig, PatchClass, measurement_matrix_for
from .dictionary import (
    DictionaryPair,
    TrainingPair,
    build_training_set,
    train_dictionary_pair,
)
from .errors import ManifestError
from .fileio import atomic_write_bytes, read_image
from .image import Image, bicubic_resample, degrade, modcrop
from .metrics import mse, psnr, ssim
from .reconstruct import ReconConfig, super_resolve_detailed
from .selfsim import SearchConfig

METHODS = ("bicubic", "proposed", "proposed-no-nonlocal", "proposed-single-dict")


@dataclass(frozen=True)
class MetricReport:
    dataset: str
    image: str
    scale: int
    method: str
    psnr_db: float
    ssim: float
    mse: float
    runtime_ms: float
    seed: int
    config_hash: str


@dataclass
class Manifest:
    name: str = "experiment"
    dataset: str = "images"
    seed: int = 0
    train_images: list = field(default_factory=list)
    eval_images: list = field(default_factory=list)
    scales: list = field(default_factory=lambda: [2])
    methods: list = field(default_factory=lambda: ["bicubic", "proposed"])
    train_params: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    accept: dict = field(default_factory=dict)


def _split_list(raw: str) -> list:
    return [item.strip() for item in raw.split(",") if item.strip()]


def parse_manifest(path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest {path} does not exist")
    parser = configparser.ConfigParser()
    try:
        parser.read_string(path.read_text())
    except configparser.Error as exc:
        raise ManifestError(f"malformed manifest: {exc}") from exc
    if not parser.has_section("eval"):
        raise ManifestError("manifest needs an [eval] section")

    man = Manifest()
    if parser.has_section("experiment"):
        sec = parser["experiment"]
        man.name = sec.get("name", man.name)
        man.dataset = sec.get("dataset", man.dataset)
        man.seed = sec.getint("seed", man.seed)
    if parser.has_section("train"):
        sec = parser["train"]
        man.train_images = _split_list(sec.get("images", ""))
        man.train_params = {
            k: v for k, v in sec.items() if k != "images"
        }
    sec = parser["eval"]
    man.eval_images = _split_list(sec.get("images", ""))
    man.scales = [int(s) for s in _split_list(sec.get("scales", "2"))]
    man.methods = _split_list(sec.get("methods", "bicubic, proposed"))
    if parser.has_section("params"):
        man.params = dict(parser["params"].items())
    if parser.has_section("accept"):
        man.accept = dict(parser["accept"].items())

    if not man.eval_images:
        raise ManifestError("manifest lists no evaluation images")
    for m in man.methods:
        if m not in METHODS:
            raise ManifestError(f"unknown method {m!r} (choose from {METHODS})")
    needs_dicts = any(m != "bicubic" for m in man.methods)
    if needs_dicts and not man.train_images:
        raise ManifestError("dictionary-based methods need [train] images")

    train_set = {str(Path(p).resolve()) for p in man.train_images}
    eval_set = {str(Path(p).resolve()) for p in man.eval_images}
    overlap = train_set & eval_set
    if overlap:
        raise ManifestError(f"train/test overlap rejected: {sorted(overlap)}")
    missing = [
        p for p in man.train_images + man.eval_images if not Path(p).exists()
    ]
    if missing:
        raise ManifestError(f"missing image files: {missing}")
    return man


def config_hash(pairs: dict) -> str:
    canon = "\n".join(f"{k}={pairs[k]}" for k in sorted(pairs))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def recon_config_from_params(params: dict, scale: int, seed: int) -> ReconConfig:
    """Build a ReconConfig from flat manifest/CLI parameter strings."""
    get = lambda key, default: params.get(key, default)
    search = SearchConfig(
        n_max=int(get("nmax", 10)),
        h=float(get("h", 75.0)),
        spiral_radius=int(get("spiral_radius", 20)),
        far_step_init=int(get("far_step_init", 4)),
    )
    classifier = ClassifierConfig(
        block_size=int(get("block_size", 8)),
        sampling_rate=float(get("sampling_rate", 0.4)),
        t1=float(get("t1", 3e6)),
        t2=float(get("t2", 3e7)),
        seed=seed,
    )
    return ReconConfig(
        patch_size=int(get("patch_size", 5)),
        overlap=int(get("overlap", 4)),
        lam=float(get("lambda", 0.1)),
        scale=scale,
        ibp_iterations=int(get("ibp_iterations", 20)),
        ibp_step=float(get("ibp_step", 1.0)),
        search=search,
        classifier=classifier,
        solver=str(get("solver", "ista")),
        seed=seed,
        feature_mode=str(get("feature_mode", "gradient")),
        ista_max_iter=int(get("ista_max_iter", 200)),
        ista_tol=float(get("ista_tol", 1e-6)),
        refine_passes=int(get("refine_passes", 1)),
        threads=int(get("threads", 1)),
    )


def train_dictionaries(
    hr_images,
    cfg: ReconConfig,
    atoms: int = 512,
    iterations: int = 15,
    sparsity: int = 3,
    per_class_cap: int = 20000,
    stride: int = 1,
    pooled: bool = False,
):
    """Train the per-class dictionary map (or one pooled pair for every class)."""
    phi = measurement_matrix_for(cfg.classifier)
    model = cfg.resolved_model()
    buckets = build_training_set(
        hr_images,
        model,
        cfg.classifier,
        phi,
        patch_size=cfg.patch_size,
        per_class_cap=per_class_cap,
        stride=stride,
        seed=cfg.seed,
        feature_mode=cfg.feature_mode,
        min_per_class=0 if pooled else 1,
    )
    if pooled:
        merged = [p for pc in PatchClass for p in buckets[pc]]
        rng = np.random.default_rng(cfg.seed)
        if len(merged) > per_class_cap:
            keep = np.sort(rng.choice(len(merged), size=per_class_cap, replace=False))
            merged = [merged[i] for i in keep]
        merged = [
            TrainingPair(p.hr_vector, p.lr_feature, PatchClass.SMOOTH) for p in merged
        ]
        pair = train_dictionary_pair(
            merged, atoms, sparsity, iterations, cfg.seed, scale=cfg.scale
        )
        return {
            pc: DictionaryPair(
                pc, pair.dh, pair.dl, pair.patch_size, pair.scale, pair.seed, pair.meta
            )
            for pc in PatchClass
        }
    return {
        pc: train_dictionary_pair(
            buckets[pc], atoms, sparsity, iterations, cfg.seed, scale=cfg.scale
        )
        for pc in PatchClass
    }


def _run_cell(hr: Image, method: str, cfg: ReconConfig, dicts, phi):
    model = cfg.resolved_model()
    reference = modcrop(hr, cfg.scale)
    lr = degrade(reference, model)
    sr_report = None
    start = time.perf_counter()
    if method == "bicubic":
        out = bicubic_resample(lr, cfg.scale)
    elif method == "proposed":
        out, sr_report = super_resolve_detailed(lr, dicts["classed"], cfg, phi)
    elif method == "proposed-no-nonlocal":
        out, sr_report = super_resolve_detailed(
            lr, dicts["classed"], cfg, phi, no_nonlocal=True
        )
    elif method == "proposed-single-dict":
        out, sr_report = super_resolve_detailed(lr, dicts["pooled"], cfg, phi)
    else:
        raise ValueError(f"unknown method {method!r}")
    elapsed_ms = (time.perf_counter() - start) * 1000.0
    return out, reference, elapsed_ms, sr_report


def run_experiment(
    manifest,
    out_dir=None,
    param_overrides: dict | None = None,
    diagnostics: list | None = None,
):
    """Run every (image, scale, method) cell of a manifest.

    Returns (reports, accept_failures); when ``out_dir`` is given, also
    writes ``results.csv`` and ``results.txt`` (aligned table) there.
    When ``diagnostics`` is a list, one (image, scale, method, sr_report,
    output_image) tuple per cell is appended to it.
    """
    if not isinstance(manifest, Manifest):
        manifest = parse_manifest(manifest)
    params = dict(manifest.params)
    if param_overrides:
        params.update({k: str(v) for k, v in param_overrides.items()})

    tp = manifest.train_params
    atoms = int(tp.get("atoms", 512))
    train_iters = int(tp.get("iterations", 15))
    sparsity = int(tp.get("sparsity", 3))
    cap = int(tp.get("per_class_cap", 20000))
    stride = int(tp.get("stride", 1))

    train_imgs = [read_image(p) for p in manifest.train_images]
    eval_pairs = [(Path(p).stem, read_image(p)) for p in manifest.eval_images]

    reports = []
    for scale in manifest.scales:
        cfg = recon_config_from_params(params, scale, manifest.seed)
        phi = measurement_matrix_for(cfg.classifier)
        chash = config_hash(
            {
                **params,
                "scale": scale,
                "seed": manifest.seed,
                "atoms": atoms,
                "train_iterations": train_iters,
            }
        )
        dicts = {}
        needs_classed = any(m.startswith("proposed") and m != "proposed-single-dict"
                            for m in manifest.methods)
        if needs_classed:
            dicts["classed"] = train_dictionaries(
                train_imgs, cfg, atoms, train_iters, sparsity, cap, stride
            )
        if "proposed-single-dict" in manifest.methods:
            dicts["pooled"] = train_dictionaries(
                train_imgs, cfg, atoms, train_iters, sparsity, cap, stride, pooled=True
            )
        for name, hr in eval_pairs:
            for method in manifest.methods:
                out, reference, ms_elapsed, sr_report = _run_cell(
                    hr, method, cfg, dicts, phi
                )
                if diagnostics is not None:
                    diagnostics.append((name, scale, method, sr_report, out))
                reports.append(
                    MetricReport(
                        dataset=manifest.dataset,
                        image=name,
                        scale=scale,
                        method=method,
                        psnr_db=psnr(reference, out),
                        ssim=ssim(reference, out),
                        mse=mse(reference, out),
                        runtime_ms=ms_elapsed,
                        seed=manifest.seed,
                        config_hash=chash,
                    )
                )

    failures = check_acceptance(reports, manifest.accept)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        atomic_write_bytes(out_dir / "results.csv", reports_csv(reports).encode())
        atomic_write_bytes(out_dir / "results.txt", reports_table(reports).encode())
    return reports, failures


def mean_by(reports, scale: int, method: str, attr: str) -> float:
    vals = [getattr(r, attr) for r in reports if r.scale == scale and r.method == method]
    if not vals:
        return float("nan")
    return float(np.mean(vals))


def check_acceptance(reports, accept: dict) -> list:
    """Evaluate manifest [accept] thresholds; returns failure strings."""
    failures = []
    scales = sorted({r.scale for r in reports})
    for scale in scales:
        gain_key = f"min_gain_db_scale{scale}"
        if gain_key in accept:
            need = float(accept[gain_key])
            got = mean_by(reports, scale, "proposed", "psnr_db") - mean_by(
                reports, scale, "bicubic", "psnr_db"
            )
            if not got >= need:
                failures.append(
                    f"x{scale}: PSNR gain {got:.3f} dB below required {need} dB"
                )
        ssim_key = f"min_gain_ssim_scale{scale}"
        if ssim_key in accept:
            need = float(accept[ssim_key])
            got = mean_by(reports, scale, "proposed", "ssim") - mean_by(
                reports, scale, "bicubic", "ssim"
            )
            if not got >= need:
                failures.append(
                    f"x{scale}: SSIM gain {got:.4f} below required {need}"
                )
    return failures


CSV_FIELDS = (
    "dataset",
    "image",
    "scale",
    "method",
    "psnr_db",
    "ssim",
    "mse",
    "runtime_ms",
    "seed",
    "config_hash",
)


def reports_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for r in reports:
        writer.writerow(
            [
                r.dataset,
                r.image,
                r.scale,
                r.method,
                f"{r.psnr_db:.6f}" if np.isfinite(r.psnr_db) else "inf",
                f"{r.ssim:.6f}",
                f"{r.mse:.6f}",
                f"{r.runtime_ms:.3f}",
                r.seed,
                r.config_hash,
            ]
        )
    return buf.getvalue()


def reports_table(reports) -> str:
    """Aligned per-dataset averages, one PSNR and one SSIM line per scale."""
    methods = sorted({r.method for r in reports}, key=METHODS.index)
    scales = sorted({r.scale for r in reports})
    datasets = sorted({r.dataset for r in reports})
    width = max(len(m) for m in methods) + 2
    lines = []
    header = f"{'dataset':<14}{'scale':<7}{'metric':<8}" + "".join(
        f"{m:>{width}}" for m in methods
    )
    lines.append(header)
    lines.append("-" * len(header))
    for ds in datasets:
        for scale in scales:
            for metric, attr, fmt in (("PSNR", "psnr_db", "{:.2f}"), ("SSIM", "ssim", "{:.3f}")):
                cells = []
                for m in methods:
                    vals = [
                        getattr(r, attr)
                        for r in reports
                        if r.dataset == ds and r.scale == scale and r.method == m
                    ]
                    cells.append(fmt.format(float(np.mean(vals))) if vals else "-")
                lines.append(
                    f"{ds:<14}{'x' + str(scale):<7}{metric:<8}"
                    + "".join(f"{c:>{width}}" for c in cells)
                )
    return "\n".join(lines) + "\n"

"""Command-line surface.

Subcommands map one-to-one onto the library workflows: score, calibrate,
evaluate, robustness, sweep-lambda, ablate-noise, landscape, plus
make-fixture for a self-contained synthetic demo. Exit codes: 0 success,
2 validation failure (bad flags, config, or data), 1 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .core import CoreError, Label
from .corruptions import (
    CorruptionError,
    CorruptionKind,
    robustness_sweep,
    sweep_to_csv,
)
from .detector import DetectorError, landscape
from .embedders import EmbedderError, build_embedder, preprocess, select_embedder
from .fixtures import FixtureError, SyntheticDatasetSpec, generate_fixture
from .harness import (
    ConfigError,
    DecodeError,
    ManifestError,
    RunConfig,
    ablate_noise,
    load_image,
    load_manifest,
    load_run_config,
    run_calibrate,
    run_evaluate,
    run_score,
    save_run_config,
    sweep_lambda,
    write_lambda_sweep_csv,
    write_noise_ablation_csv,
)
from .metrics import MetricsError
from .noise import Distribution, NoiseError

VALIDATION_ERRORS = (
    CoreError, NoiseError, EmbedderError, DetectorError, MetricsError,
    CorruptionError, FixtureError, ManifestError, ConfigError, DecodeError,
)


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run configuration file (TOML)")
    p.add_argument("--manifest-real", help="manifest of real samples")
    p.add_argument("--manifest-fake", help="manifest of generated samples")
    p.add_argument("--out", help="output directory")
    p.add_argument("--lambda", dest="lam", type=float, help="noise intensity")
    p.add_argument("--distribution", choices=[d.value for d in Distribution],
                   help="noise family")
    p.add_argument("--tnr", type=float, help="calibration target true-negative rate")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--backbone-config",
                   help="exported model directory or its preprocess.json")


def _config_from_args(args) -> RunConfig:
    overrides = {
        "manifest_real": args.manifest_real,
        "manifest_fake": args.manifest_fake,
        "out_dir": args.out,
        "lambda": args.lam,
        "distribution": args.distribution,
        "target_tnr": args.tnr,
        "seed": args.seed,
        "backbone_config": args.backbone_config,
    }
    return load_run_config(args.config, overrides)


def _report_failures(run) -> int:
    for sample_id, err in run.failures:
        print(f"failed: {sample_id}: {err}", file=sys.stderr)
    if run.failures:
        print(f"{len(run.failures)} sample(s) failed to score", file=sys.stderr)
        return 1
    return 0


def cmd_score(args) -> int:
    config = _config_from_args(args)
    run = run_score(config, max_workers=args.workers)
    print(f"scored {len(run.records)} samples "
          f"({run.n_computed} computed, {run.n_cached} cached)")
    print(f"scores: {run.scores_path}")
    return _report_failures(run)


def cmd_calibrate(args) -> int:
    config = _config_from_args(args)
    payload = run_calibrate(config, max_workers=args.workers)
    print(f"epsilon = {payload['epsilon']} "
          f"(target TNR {payload['target_tnr']}, "
          f"n = {payload['n_calibration']})")
    print(f"calibration: {Path(config.out_dir) / 'calibration.json'}")
    return 0


def cmd_evaluate(args) -> int:
    config = _config_from_args(args)
    report, run = run_evaluate(config, epsilon=args.epsilon,
                               max_workers=args.workers)
    for gen, m in sorted(report.per_generator.items()):
        acc = "" if m.accuracy is None else f"  acc={m.accuracy:.4f}"
        print(f"{gen}: auc={m.auc:.4f}  ap={m.ap:.4f}  n={m.n_fake}{acc}")
    print(f"average: auc={report.average_auc:.4f}  ap={report.average_ap:.4f}")
    print(f"report: {Path(config.out_dir) / 'report.json'}")
    return _report_failures(run)


def _load_image_sets(config: RunConfig):
    """Raw (uncropped) images for the corruption sweep, grouped by class."""
    if config.manifest_real is None or config.manifest_fake is None:
        raise ConfigError("robustness requires both manifests")
    real = [load_image(e.path)
            for e in load_manifest(config.manifest_real).entries
            if e.label is Label.REAL]
    fake_by_gen: dict[str, list] = {}
    for e in load_manifest(config.manifest_fake).entries:
        if e.label is Label.FAKE:
            fake_by_gen.setdefault(e.generator, []).append(load_image(e.path))
    if not real:
        raise ConfigError("real manifest holds no real samples")
    if not fake_by_gen:
        raise ConfigError("fake manifest holds no generated samples")
    return real, fake_by_gen


def cmd_robustness(args) -> int:
    config = _config_from_args(args)
    kinds = ([CorruptionKind(args.kind)] if args.kind != "all"
             else list(CorruptionKind))
    if args.levels is not None and len(kinds) != 1:
        raise ConfigError("--levels requires a single --kind")
    real, fake_by_gen = _load_image_sets(config)
    embedder = build_embedder(config.embedder)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for kind in kinds:
        for gen, fakes in sorted(fake_by_gen.items()):
            rows = robustness_sweep(
                real, fakes, embedder, config.detector, kind,
                levels=args.levels, corruption_seed=config.seed,
            )
            safe_gen = gen.replace("/", "_").replace("\\", "_")
            path = out / f"sweep_{kind.value}_{safe_gen}.csv"
            sweep_to_csv(rows, path)
            print(f"{kind.value} x {gen}: "
                  + ", ".join(
                      f"{'base' if r.level is None else r.level}:{r.auc:.3f}"
                      for r in rows)
                  + f" -> {path}")
    return 0


def cmd_sweep_lambda(args) -> int:
    config = _config_from_args(args)
    rows = sweep_lambda(config, grid=args.grid, max_workers=args.workers)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep_lambda.csv"
    write_lambda_sweep_csv(rows, path)
    for r in rows:
        print(f"lambda={r['lambda']}: auc={r['auc']:.4f} ap={r['ap']:.4f} "
              f"sim_real={r['mean_similarity_real']:.4f} "
              f"sim_fake={r['mean_similarity_fake']:.4f}")
    print(f"sweep: {path}")
    return 0


def cmd_ablate_noise(args) -> int:
    config = _config_from_args(args)
    rows = ablate_noise(config, max_workers=args.workers)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep_noise_ablation.csv"
    write_noise_ablation_csv(rows, path)
    for r in rows:
        print(f"{r['distribution']}: average AP = {r['average']:.4f}")
    print(f"ablation: {path}")
    return 0


def cmd_landscape(args) -> int:
    config = _config_from_args(args)
    label = Label(args.set)
    manifest_path = (config.manifest_real if label is Label.REAL
                     else config.manifest_fake)
    if manifest_path is None:
        raise ConfigError(f"landscape over the {label.value} set requires its manifest")
    entries = [e for e in load_manifest(manifest_path).entries if e.label is label]
    if not entries:
        raise ConfigError(f"manifest holds no {label.value} samples")
    entries = entries[: args.limit]
    embedder = build_embedder(config.embedder)
    emb = select_embedder(embedder, label)
    cfg = getattr(emb, "config", None)
    images = []
    for e in entries:
        img = load_image(e.path)
        images.append(preprocess(img, cfg) if cfg is not None else img)
    grid = landscape(
        images, emb,
        alpha_range=(args.range_min, args.range_max),
        beta_range=(args.range_min, args.range_max),
        step=args.step,
        direction_seed=config.seed,
    )
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "landscape.csv"
    grid.to_csv(path)
    print(f"{grid.values.shape[0]}x{grid.values.shape[1]} grid over "
          f"{len(images)} {label.value} image(s)")
    print(f"landscape: {path}")
    return 0


def cmd_make_fixture(args) -> int:
    spec = SyntheticDatasetSpec(
        n_real=args.n_real,
        n_fake=args.n_fake,
        image_size=args.image_size,
        k_real=args.k_real,
        k_fake=args.k_fake,
        seed=args.seed if args.seed is not None else 0,
        embedding_dim=args.embedding_dim,
    )
    fx = generate_fixture(spec, args.out)

    from .detector import DetectorConfig
    from .embedders import EmbedderKind, synthetic_config
    from .noise import NoiseSpec

    # Paths are written relative to the config file so the fixture
    # directory stays relocatable; loading resolves them against it.
    config = RunConfig(
        embedder=synthetic_config(
            EmbedderKind.RFF_SYNTHETIC,
            image_size=spec.image_size,
            embedding_dim=spec.embedding_dim,
            frequency_scale=spec.k_real,
            frequency_scale_fake=spec.k_fake,
            weight_seed=spec.seed,
        ),
        detector=DetectorConfig(
            noise=NoiseSpec(lam=args.lam if args.lam is not None else 0.05,
                            seed=spec.seed)
        ),
        out_dir="runs",
        manifest_real="manifest_real.csv",
        manifest_fake="manifest_fake.csv",
        seed=spec.seed,
    )
    config_path = fx.out_dir / "config.toml"
    save_run_config(config, config_path)
    print(f"fixture: {fx.out_dir}")
    print(f"config: {config_path}")
    print(f"try: noiseprobe evaluate --config {config_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noiseprobe",
        description=(
            "Training-free detection of AI-generated images by measuring "
            "how far an embedding moves under tiny input noise."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        _add_common_flags(p)
        p.add_argument("--workers", type=int, default=1,
                       help="concurrent scoring workers")
        p.set_defaults(fn=fn)
        return p

    add("score", cmd_score, "score manifests and persist scores.jsonl")

    add("calibrate", cmd_calibrate,
        "calibrate the detection threshold on real samples only")

    p = add("evaluate", cmd_evaluate, "score and report AUC/AP per generator")
    p.add_argument("--epsilon", type=float,
                   help="decision threshold (default: calibration.json if present)")

    p = add("robustness", cmd_robustness,
            "AUC/AP under corruption at increasing severity")
    p.add_argument("--kind", default="all",
                   choices=[*(k.value for k in CorruptionKind), "all"])
    p.add_argument("--levels", type=float, nargs="+",
                   help="override severity levels (single --kind only)")

    p = add("sweep-lambda", cmd_sweep_lambda,
            "detection performance across noise intensities")
    p.add_argument("--grid", type=float, nargs="+",
                   help="noise intensities to sweep")

    add("ablate-noise", cmd_ablate_noise,
        "compare noise families at a fixed intensity")

    p = add("landscape", cmd_landscape,
            "similarity surface along two random directions")
    p.add_argument("--set", choices=["real", "fake"], default="real",
                   help="which population to probe")
    p.add_argument("--limit", type=int, default=8,
                   help="max images to average over")
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--range-min", type=float, default=-0.5)
    p.add_argument("--range-max", type=float, default=0.5)

    p = sub.add_parser("make-fixture",
                       help="generate a deterministic synthetic dataset + config")
    p.add_argument("--out", required=True, help="fixture output directory")
    p.add_argument("--n-real", type=int, default=40)
    p.add_argument("--n-fake", type=int, default=40)
    p.add_argument("--image-size", type=int, default=4)
    p.add_argument("--k-real", type=float, default=0.5)
    p.add_argument("--k-fake", type=float, default=1.0)
    p.add_argument("--embedding-dim", type=int, default=2048)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.05,
                   help="noise intensity for the emitted config")
    p.set_defaults(fn=cmd_make_fixture)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Dataset ingestion, run configuration, score persistence, and the
experiment orchestration shared by the CLI subcommands.

Determinism contract: every random draw is keyed by (run seed, sample id,
draw index), score files are written in manifest order regardless of
completion order, and the cache is keyed by a digest of the resolved
configuration, so identical runs produce byte-identical artifacts.
"""

from __future__ import annotations

import csv
import hashlib
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .core import CoreError, ImageTensor, Label, SampleRecord, ScoreRecord
from .detector import (
    QUANTILE_CONVENTION,
    DetectorConfig,
    calibrate_threshold,
    similarity_score,
)
from .embedders import (
    EmbedderConfig,
    EmbedderError,
    build_embedder,
    load_backbone_config,
    preprocess,
    select_embedder,
)
from .metrics import EvalReport, evaluate_records
from .noise import Distribution, NoiseSpec, stream_from_id


class ManifestError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class DecodeError(ValueError):
    pass


class FormatBiasWarning(UserWarning):
    """Real and fake images stored in different file formats."""


#: Image formats the pipeline ingests. Both classes of one experiment must
#: use the same format; see check_format_bias.
DECODABLE_SUFFIXES = (".png", ".jpg", ".jpeg")

MANIFEST_COLUMNS = ("path", "label", "generator")


@dataclass(frozen=True)
class Manifest:
    """Ordered sample list with unique ids and already-resolved paths."""

    entries: tuple[SampleRecord, ...]
    root: str

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen: dict[str, int] = {}
        for i, e in enumerate(self.entries):
            if e.id in seen:
                raise ManifestError(
                    f"duplicate sample id {e.id!r} (entries {seen[e.id]} and {i})"
                )
            seen[e.id] = i

    def __len__(self) -> int:
        return len(self.entries)


def load_manifest(path, check_files: bool = True) -> Manifest:
    """Parse a CSV manifest: header path,label,generator[,id].

    Relative paths resolve against the manifest's directory. Errors carry
    the offending line number; missing files are listed together.
    """
    p = Path(path)
    if not p.exists():
        raise ManifestError(f"manifest not found: {p}")
    root = p.resolve().parent
    with open(p, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ManifestError(f"{p}: empty manifest")
        fields = [f.strip() for f in reader.fieldnames]
        missing_cols = [c for c in MANIFEST_COLUMNS if c not in fields]
        if missing_cols:
            raise ManifestError(f"{p}: header is missing columns {missing_cols}")
        unknown = [c for c in fields if c not in (*MANIFEST_COLUMNS, "id")]
        if unknown:
            raise ManifestError(f"{p}: unknown manifest columns {unknown}")

        entries: list[SampleRecord] = []
        for row in reader:
            line = reader.line_num
            if any(v is None for v in row.values()):
                raise ManifestError(f"{p}: line {line}: wrong number of fields")
            raw_path = (row["path"] or "").strip()
            if not raw_path:
                raise ManifestError(f"{p}: line {line}: empty path")
            try:
                label = Label((row["label"] or "").strip())
            except ValueError:
                raise ManifestError(
                    f"{p}: line {line}: unknown label {row['label']!r}"
                ) from None
            sample_id = (row.get("id") or raw_path).strip() or raw_path
            resolved = Path(raw_path)
            if not resolved.is_absolute():
                resolved = root / resolved
            try:
                entries.append(SampleRecord(
                    id=sample_id,
                    path=str(resolved),
                    label=label,
                    generator=(row["generator"] or "").strip(),
                ))
            except CoreError as exc:
                raise ManifestError(f"{p}: line {line}: {exc}") from exc

    if not entries:
        raise ManifestError(f"{p}: empty manifest")
    try:
        manifest = Manifest(tuple(entries), str(root))
    except ManifestError as exc:
        raise ManifestError(f"{p}: {exc}") from None
    if check_files:
        missing = [e.path for e in entries if not Path(e.path).exists()]
        if missing:
            shown = ", ".join(missing[:10])
            more = "" if len(missing) <= 10 else f" (+{len(missing) - 10} more)"
            raise ManifestError(f"{p}: {len(missing)} missing files: {shown}{more}")
    return manifest


def merge_manifests(*manifests: Manifest) -> Manifest:
    entries: list[SampleRecord] = []
    for m in manifests:
        entries.extend(m.entries)
    if not entries:
        raise ManifestError("no entries to merge")
    return Manifest(tuple(entries), manifests[0].root)


def check_format_bias(manifest: Manifest) -> str | None:
    """Warn when real and fake samples use different file formats.

    A detector evaluated on JPEG reals versus PNG fakes can key on codec
    traces instead of generation traces, inflating its apparent accuracy.
    """
    def fmts(label: Label) -> set[str]:
        return {
            Path(e.path).suffix.lower().replace(".jpeg", ".jpg")
            for e in manifest.entries if e.label is label
        }
    real, fake = fmts(Label.REAL), fmts(Label.FAKE)
    if real and fake and real != fake:
        msg = (
            f"format bias: real images use {sorted(real)} but fake images "
            f"use {sorted(fake)}; metrics may reflect codec traces"
        )
        warnings.warn(msg, FormatBiasWarning, stacklevel=2)
        return msg
    return None


def load_image(path) -> ImageTensor:
    """Decode a PNG or JPEG file to a [0,1] CHW tensor at native size."""
    p = Path(path)
    if p.suffix.lower() not in DECODABLE_SUFFIXES:
        raise DecodeError(f"unsupported image format: {p}")
    try:
        with Image.open(p) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"cannot decode {p}: {exc}") from exc
    return ImageTensor((arr / 255.0).transpose(2, 0, 1))


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; its digest keys the score cache."""

    embedder: EmbedderConfig
    detector: DetectorConfig
    out_dir: str
    manifest_real: str | None = None
    manifest_fake: str | None = None
    target_tnr: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.target_tnr < 1.0):
            raise ConfigError(f"target_tnr must lie in (0, 1), got {self.target_tnr}")
        if not self.out_dir:
            raise ConfigError("out_dir must be set")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "target_tnr": self.target_tnr,
            "out_dir": self.out_dir,
            "manifest_real": self.manifest_real,
            "manifest_fake": self.manifest_fake,
            "embedder": self.embedder.to_dict(),
            "detector": self.detector.to_dict(),
        }

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


_TOP_KEYS = {
    "seed", "target_tnr", "out_dir", "manifest_real", "manifest_fake",
    "embedder", "detector",
}


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return json.dumps(v)
    if isinstance(v, str):
        # JSON string escaping is a valid TOML basic string for these values.
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize config value {v!r}")


def save_run_config(config: RunConfig, path) -> None:
    """Write the resolved configuration as a TOML document."""
    d = config.to_dict()
    lines: list[str] = []
    for key in ("seed", "target_tnr", "out_dir", "manifest_real", "manifest_fake"):
        if d[key] is not None:
            lines.append(f"{key} = {_toml_value(d[key])}")
    for section in ("embedder", "detector"):
        body = dict(d[section])
        nested = {k: body.pop(k) for k in list(body) if isinstance(body[k], dict)}
        lines.append("")
        lines.append(f"[{section}]")
        for k in sorted(body):
            lines.append(f"{k} = {_toml_value(body[k])}")
        for sub in sorted(nested):
            lines.append("")
            lines.append(f"[{section}.{sub}]")
            for k in sorted(nested[sub]):
                lines.append(f"{k} = {_toml_value(nested[sub][k])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _resolve_path(value: str | None, base: Path) -> str | None:
    if value is None:
        return None
    p = Path(value)
    return str(p if p.is_absolute() else (base / p))


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Parse a TOML run config, then apply CLI overrides.

    Relative paths inside the file resolve against the file's directory;
    override paths resolve against the working directory. The run seed is
    the default for the noise seed and the synthetic weight seed when those
    are not given explicitly.
    """
    data: dict = {}
    base = Path.cwd()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        base = p.resolve().parent
        try:
            with open(p, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: invalid TOML: {exc}") from exc
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    for key in ("manifest_real", "manifest_fake", "out_dir"):
        if key in data:
            data[key] = _resolve_path(data[key], base)
    emb = dict(data.get("embedder", {}))
    if "model_path" in emb:
        emb["model_path"] = _resolve_path(emb["model_path"], base)
    det = dict(data.get("detector", {}))

    ov = dict(overrides or {})
    cwd = Path.cwd()
    for key in ("manifest_real", "manifest_fake", "out_dir"):
        if ov.get(key) is not None:
            data[key] = _resolve_path(ov.pop(key), cwd)
        else:
            ov.pop(key, None)
    if ov.get("backbone_config") is not None:
        emb = load_backbone_config(_resolve_path(ov.pop("backbone_config"), cwd)).to_dict()
    else:
        ov.pop("backbone_config", None)
    if ov.get("seed") is not None:
        data["seed"] = int(ov.pop("seed"))
    else:
        ov.pop("seed", None)
    if ov.get("target_tnr") is not None:
        data["target_tnr"] = float(ov.pop("target_tnr"))
    else:
        ov.pop("target_tnr", None)
    noise = dict(det.get("noise", {}))
    if ov.get("lambda") is not None:
        noise["lambda"] = float(ov.pop("lambda"))
    else:
        ov.pop("lambda", None)
    if ov.get("distribution") is not None:
        noise["distribution"] = str(ov.pop("distribution"))
    else:
        ov.pop("distribution", None)
    if ov:
        raise ConfigError(f"unknown overrides: {sorted(ov)}")

    seed = int(data.get("seed", 0))
    noise.setdefault("seed", seed)
    det["noise"] = noise
    emb.setdefault("weight_seed", seed)

    try:
        embedder = EmbedderConfig.from_dict(emb)
        detector = DetectorConfig.from_dict(det)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    out_dir = data.get("out_dir")
    if not out_dir:
        raise ConfigError("out_dir must be set (config file or --out)")
    for key in ("manifest_real", "manifest_fake"):
        mp = data.get(key)
        if mp is not None and not Path(mp).exists():
            raise ConfigError(f"{key} does not exist: {mp}")
    return RunConfig(
        embedder=embedder,
        detector=detector,
        out_dir=str(out_dir),
        manifest_real=data.get("manifest_real"),
        manifest_fake=data.get("manifest_fake"),
        target_tnr=float(data.get("target_tnr", 0.95)),
        seed=seed,
    )


@dataclass
class ScoreRun:
    """Outcome of scoring one manifest under one configuration."""

    records: list[ScoreRecord]
    failures: list[tuple[str, str]]
    n_computed: int
    n_cached: int
    scores_path: Path
    config_digest: str


def _cache_path(config: RunConfig) -> Path:
    return Path(config.out_dir) / "cache" / f"scores-{config.digest()[:16]}.jsonl"


def _read_cache(path: Path) -> dict[str, ScoreRecord]:
    cache: dict[str, ScoreRecord] = {}
    if not path.exists():
        return cache
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = ScoreRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                warnings.warn(f"{path}: skipping corrupt cache line {n}")
                continue
            cache[rec.sample_id] = rec
    return cache


def score_dataset(
    manifest: Manifest,
    config: RunConfig,
    embedder=None,
    max_workers: int = 1,
    write_scores: bool = True,
) -> ScoreRun:
    """Score every manifest entry, reusing cached results for this config.

    One undecodable image is reported and skipped without disturbing other
    samples: each sample's noise stream is keyed by its id alone. The final
    scores.jsonl lists records in manifest order.
    """
    if embedder is None:
        embedder = build_embedder(config.embedder)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = config.digest()
    cache_file = _cache_path(config)
    cache_file.parent.mkdir(parents=True, exist_ok=True)
    cache = _read_cache(cache_file)

    def fresh(rec: SampleRecord) -> bool:
        hit = cache.get(rec.id)
        return hit is None or hit.label is not rec.label or hit.generator != rec.generator

    worklist = [r for r in manifest.entries if fresh(r)]
    cfg = getattr(embedder, "config", None)

    def score_one(rec: SampleRecord):
        try:
            img = load_image(rec.path)
            tensor = preprocess(img, cfg) if cfg is not None else img
            sim = similarity_score(
                tensor,
                select_embedder(embedder, rec.label),
                config.detector,
                sample_stream=stream_from_id(rec.id),
            )
        except (DecodeError, EmbedderError, OSError) as exc:
            return rec, None, f"{type(exc).__name__}: {exc}"
        return rec, ScoreRecord(
            sample_id=rec.id, similarity=sim, label=rec.label, generator=rec.generator,
        ), None

    if max_workers > 1 and len(worklist) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(score_one, worklist))
    else:
        results = [score_one(r) for r in worklist]

    failures: list[tuple[str, str]] = []
    new_records: list[ScoreRecord] = []
    for rec, scored, err in results:
        if err is not None:
            failures.append((rec.id, err))
        else:
            new_records.append(scored)
            cache[scored.sample_id] = scored

    # Single append of all new lines keeps the cache file a pure function
    # of which samples have ever been scored under this digest.
    if new_records:
        with open(cache_file, "a", encoding="utf-8") as fh:
            for r in new_records:
                fh.write(json.dumps(r.to_dict()) + "\n")

    ordered = [cache[r.id] for r in manifest.entries if r.id in cache]
    scores_path = out / "scores.jsonl"
    if write_scores:
        with open(scores_path, "w", encoding="utf-8") as fh:
            for r in ordered:
                fh.write(json.dumps(r.to_dict()) + "\n")

    return ScoreRun(
        records=ordered,
        failures=failures,
        n_computed=len(new_records),
        n_cached=len(manifest.entries) - len(worklist),
        scores_path=scores_path,
        config_digest=digest,
    )


def load_scores(path) -> list[ScoreRecord]:
    """Read a scores.jsonl file back into records."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(ScoreRecord.from_dict(json.loads(line)))
    return records


def _load_run_manifests(config: RunConfig, need_real=True, need_fake=True) -> Manifest:
    parts = []
    if need_real:
        if config.manifest_real is None:
            raise ConfigError("this command requires manifest_real / --manifest-real")
        parts.append(load_manifest(config.manifest_real))
    if need_fake:
        if config.manifest_fake is None:
            raise ConfigError("this command requires manifest_fake / --manifest-fake")
        parts.append(load_manifest(config.manifest_fake))
    merged = merge_manifests(*parts)
    check_format_bias(merged)
    return merged


def run_score(config: RunConfig, embedder=None, max_workers: int = 1) -> ScoreRun:
    """The `score` workflow: merge manifests, score, persist, save config."""
    if config.manifest_real is None and config.manifest_fake is None:
        raise ConfigError("scoring requires at least one manifest")
    manifest = _load_run_manifests(
        config,
        need_real=config.manifest_real is not None,
        need_fake=config.manifest_fake is not None,
    )
    run = score_dataset(manifest, config, embedder, max_workers)
    save_run_config(config, Path(config.out_dir) / "config.resolved.toml")
    return run


def run_calibrate(config: RunConfig, embedder=None, max_workers: int = 1) -> dict:
    """Calibrate epsilon on the real manifest only; writes calibration.json."""
    manifest = _load_run_manifests(config, need_real=True, need_fake=False)
    run = score_dataset(manifest, config, embedder, max_workers)
    sims = [r.similarity for r in run.records]
    epsilon = calibrate_threshold(sims, config.target_tnr)
    payload = {
        "epsilon": epsilon,
        "target_tnr": config.target_tnr,
        "n_calibration": len(sims),
        "quantile_convention": QUANTILE_CONVENTION,
        "config_digest": run.config_digest,
    }
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "calibration.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return payload


def run_evaluate(
    config: RunConfig,
    epsilon: float | None = None,
    embedder=None,
    max_workers: int = 1,
) -> tuple[EvalReport, ScoreRun]:
    """The `evaluate` workflow: score both manifests, then report.

    Threshold precedence: the explicit argument, then the configured
    detector epsilon, then a calibration.json in the output directory;
    absent all three, threshold accuracy is omitted from the report.
    """
    convention = None
    if epsilon is None:
        epsilon = config.detector.epsilon
    if epsilon is None:
        calib = Path(config.out_dir) / "calibration.json"
        if calib.exists():
            payload = json.loads(calib.read_text())
            epsilon = payload["epsilon"]
            convention = payload.get("quantile_convention")
    run = run_score(config, embedder, max_workers)
    report = evaluate_records(
        run.records, epsilon, run.config_digest, calibration_convention=convention
    )
    out = Path(config.out_dir)
    report.to_json_file(out / "report.json")
    report.to_csv_file(out / "report.csv")
    return report, run


#: Noise intensities for the detection-vs-intensity sweep; spans the
#: moderate range (0 to 0.17) plus the strong tail.
DEFAULT_LAMBDA_GRID = (0.0, 0.01, 0.03, 0.05, 0.08, 0.11, 0.14, 0.17, 0.21, 0.25)


def sweep_lambda(
    config: RunConfig,
    grid=None,
    embedder=None,
    max_workers: int = 1,
) -> list[dict]:
    """Re-score and evaluate at each noise intensity; one row per lambda."""
    grid = DEFAULT_LAMBDA_GRID if grid is None else tuple(grid)
    if not grid:
        raise ConfigError("lambda grid is empty")
    rows = []
    for lam in grid:
        noise = replace(config.detector.noise, lam=float(lam))
        cfg = replace(config, detector=replace(config.detector, noise=noise))
        manifest = _load_run_manifests(cfg)
        run = score_dataset(manifest, cfg, embedder, max_workers, write_scores=False)
        report = evaluate_records(run.records, config_digest=run.config_digest)
        real = [r.similarity for r in run.records if r.label is Label.REAL]
        fake = [r.similarity for r in run.records if r.label is Label.FAKE]
        rows.append({
            "lambda": float(lam),
            "auc": report.average_auc,
            "ap": report.average_ap,
            "mean_similarity_real": float(np.mean(real)),
            "mean_similarity_fake": float(np.mean(fake)),
        })
    return rows


def write_lambda_sweep_csv(rows: list[dict], path) -> None:
    cols = ("lambda", "auc", "ap", "mean_similarity_real", "mean_similarity_fake")
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join(str(row[c]) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def ablate_noise(
    config: RunConfig,
    lam: float | None = None,
    embedder=None,
    max_workers: int = 1,
) -> list[dict]:
    """Evaluate each noise family at one fixed intensity.

    Rows carry per-generator AP plus the unweighted average, one row per
    distribution.
    """
    base_lam = config.detector.noise.lam if lam is None else float(lam)
    rows = []
    for dist in Distribution:
        noise = NoiseSpec(dist, lam=base_lam, seed=config.detector.noise.seed)
        cfg = replace(config, detector=replace(config.detector, noise=noise))
        manifest = _load_run_manifests(cfg)
        run = score_dataset(manifest, cfg, embedder, max_workers, write_scores=False)
        report = evaluate_records(run.records, config_digest=run.config_digest)
        row = {"distribution": dist.value, "lambda": base_lam}
        for gen, m in sorted(report.per_generator.items()):
            row[gen] = m.ap
        row["average"] = report.average_ap
        rows.append(row)
    return rows


def write_noise_ablation_csv(rows: list[dict], path) -> None:
    generators = [k for k in rows[0] if k not in ("distribution", "lambda", "average")]
    cols = ["distribution", "lambda", *generators, "average"]
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join(str(row[c]) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

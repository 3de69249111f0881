"""Deterministic synthetic fixtures: seeded images plus analytic
expectations, so pipeline behavior is checkable without real models or
datasets.

Real and fake fixture pixels are drawn from the SAME distribution; the
populations differ only through the two-population embedder's frequency
scales. That isolates exactly the property under test: generated samples
are the ones whose embeddings react more strongly to tiny noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.stats import f as f_dist

from .core import Label, SampleRecord
from .embedders import (
    EmbedderKind,
    PopulationRffEmbedder,
    RffParams,
    synthetic_config,
)
from .noise import substream_rng


class FixtureError(ValueError):
    pass


#: Noise scales the expectations file tabulates.
EXPECTATION_LAMBDAS = (0.05, 0.1, 0.25)


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    """Two-population dataset recipe; fully determines every emitted byte."""

    n_real: int = 40
    n_fake: int = 40
    image_size: int = 4
    k_real: float = 0.5
    k_fake: float = 1.0
    seed: int = 0
    embedding_dim: int = 2048
    fake_generator: str = "synthetic"

    def __post_init__(self):
        if self.n_real < 1 or self.n_fake < 1:
            raise FixtureError("population counts must be >= 1")
        if self.image_size < 1:
            raise FixtureError(f"image_size must be >= 1, got {self.image_size}")
        if not (self.k_fake >= self.k_real > 0):
            raise FixtureError(
                f"need k_fake >= k_real > 0, got {self.k_real}, {self.k_fake}"
            )
        if self.embedding_dim < 1:
            raise FixtureError(f"embedding_dim must be >= 1, got {self.embedding_dim}")
        if self.fake_generator == "real":
            raise FixtureError("fake_generator must not be named 'real'")

    @property
    def input_dim(self) -> int:
        return 3 * self.image_size * self.image_size

    def expected_mean_similarity(self, k: float, lam: float) -> float:
        """Analytic mean perturbed similarity of the feature map:
        exp(-k^2 lam^2 n / 2) for unit-variance noise in n dimensions."""
        return math.exp(-(k**2) * lam**2 * self.input_dim / 2.0)

    def expected_auc(self) -> float:
        """Separation of the two populations, independent of lam > 0.

        Pairwise, a fake sample outscores a real one iff
        k_fake^2 * ||delta_f||^2 > k_real^2 * ||delta_r||^2 with chi-square
        norms, which is an F(n, n) tail event: AUC = F_cdf(ratio^2).
        Equal scales give exactly 0.5.
        """
        if self.k_real == self.k_fake:
            return 0.5
        ratio = self.k_fake / self.k_real
        return float(f_dist.cdf(ratio**2, self.input_dim, self.input_dim))


@dataclass(frozen=True)
class FixtureSet:
    out_dir: Path
    manifest_path: Path
    manifest_real_path: Path
    manifest_fake_path: Path
    expectations_path: Path
    records: tuple[SampleRecord, ...]
    spec: SyntheticDatasetSpec


def population_embedder_for(spec: SyntheticDatasetSpec) -> PopulationRffEmbedder:
    """The two-population embedder whose statistics the expectations file
    describes."""
    params = RffParams(
        input_dim=spec.input_dim,
        output_dim=spec.embedding_dim,
        frequency_scale=spec.k_real,
        seed=spec.seed,
    )
    config = synthetic_config(
        EmbedderKind.RFF_SYNTHETIC,
        image_size=spec.image_size,
        embedding_dim=spec.embedding_dim,
        frequency_scale=spec.k_real,
        frequency_scale_fake=spec.k_fake,
        weight_seed=spec.seed,
    )
    return PopulationRffEmbedder(spec.k_real, spec.k_fake, params, config)


def _expectations_payload(spec: SyntheticDatasetSpec) -> dict:
    means = {
        str(lam): {
            "real": spec.expected_mean_similarity(spec.k_real, lam),
            "fake": spec.expected_mean_similarity(spec.k_fake, lam),
        }
        for lam in EXPECTATION_LAMBDAS
    }
    return {
        "image_size": spec.image_size,
        "input_dim": spec.input_dim,
        "embedding_dim": spec.embedding_dim,
        "k_real": spec.k_real,
        "k_fake": spec.k_fake,
        "seed": spec.seed,
        "n_real": spec.n_real,
        "n_fake": spec.n_fake,
        "num_noise_samples": 1,
        "distribution": "gaussian",
        "tolerance": 0.05,
        "expected_mean_similarity": means,
        "expected_auc": spec.expected_auc(),
    }


def generate_fixture(spec: SyntheticDatasetSpec, out_dir) -> FixtureSet:
    """Write images/, manifest.csv, and expectations.json under out_dir.

    Every byte is a pure function of ``spec``: pixels come from seeded
    substreams, images are stored as lossless PNG (both classes share one
    format, avoiding codec bias), and the expectations are computed
    analytically, never from a pipeline run.
    """
    out = Path(out_dir)
    image_dir = out / "images"
    image_dir.mkdir(parents=True, exist_ok=True)

    records: list[SampleRecord] = []
    plan = [(Label.REAL, "real", i) for i in range(spec.n_real)] + [
        (Label.FAKE, spec.fake_generator, i) for i in range(spec.n_fake)
    ]
    for idx, (label, generator, i) in enumerate(plan):
        rng = substream_rng(spec.seed, (idx, 0))
        pixels = rng.integers(0, 256, (spec.image_size, spec.image_size, 3),
                              dtype=np.uint8)
        name = f"{label.value}_{i:04d}.png"
        Image.fromarray(pixels, mode="RGB").save(image_dir / name, format="PNG")
        records.append(SampleRecord(
            id=f"{label.value}_{i:04d}",
            path=str(image_dir / name),
            label=label,
            generator=generator,
        ))

    def _write_manifest(name: str, rows: list[SampleRecord]) -> Path:
        path = out / name
        lines = ["path,label,generator,id"]
        for r in rows:
            rel = Path(r.path).relative_to(out)
            lines.append(f"{rel},{r.label.value},{r.generator},{r.id}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    # The combined manifest serves scoring; the per-class ones serve the
    # calibrate-on-reals-only workflow.
    manifest_path = _write_manifest("manifest.csv", records)
    manifest_real_path = _write_manifest(
        "manifest_real.csv", [r for r in records if r.label is Label.REAL])
    manifest_fake_path = _write_manifest(
        "manifest_fake.csv", [r for r in records if r.label is Label.FAKE])

    expectations_path = out / "expectations.json"
    with open(expectations_path, "w", encoding="utf-8") as fh:
        json.dump(_expectations_payload(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")

    return FixtureSet(
        out_dir=out,
        manifest_path=manifest_path,
        manifest_real_path=manifest_real_path,
        manifest_fake_path=manifest_fake_path,
        expectations_path=expectations_path,
        records=tuple(records),
        spec=spec,
    )

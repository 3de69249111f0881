"""Evaluation-time image corruptions and the robustness sweep.

Corruptions model transport and storage damage applied to the stored
image, so the order of operations is corrupt, then preprocess, then the
detection perturbation. Each corruption maps a [0,1] image to a [0,1]
image of the same shape.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .core import ImageTensor, Label
from .detector import DetectorConfig, similarity_score
from .embedders import preprocess, select_embedder
from .metrics import average_precision, roc_auc
from .noise import stream_from_id, substream_rng


class CorruptionError(ValueError):
    pass


class CorruptionKind(str, Enum):
    GAUSSIAN_NOISE = "gaussian_noise"
    JPEG = "jpeg"
    GAUSSIAN_BLUR = "gaussian_blur"


#: Five standard levels per corruption for the robustness protocol.
STANDARD_LEVELS: dict[CorruptionKind, tuple[float, ...]] = {
    CorruptionKind.GAUSSIAN_NOISE: (0.05, 0.1, 0.15, 0.2, 0.25),
    CorruptionKind.JPEG: (90, 80, 70, 60, 50),
    CorruptionKind.GAUSSIAN_BLUR: (1, 2, 3, 4, 5),
}


@dataclass(frozen=True)
class CorruptionSpec:
    """One corruption at one severity. ``level`` is the noise scale, the
    JPEG quality, or the blur sigma depending on kind."""

    kind: CorruptionKind
    level: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", CorruptionKind(self.kind))
        lv = float(self.level)
        if not math.isfinite(lv):
            raise CorruptionError(f"level must be finite, got {self.level}")
        if self.kind is CorruptionKind.JPEG:
            if lv != int(lv) or not (1 <= lv <= 100):
                raise CorruptionError(
                    f"jpeg quality must be an integer in [1, 100], got {self.level}"
                )
        elif lv < 0:
            raise CorruptionError(f"{self.kind.value} level must be >= 0, got {self.level}")
        object.__setattr__(self, "level", lv)


def _corrupt_gaussian_noise(arr: np.ndarray, spec: CorruptionSpec, stream: int) -> np.ndarray:
    rng = substream_rng(spec.seed, (stream, 0))
    noisy = arr + spec.level * rng.standard_normal(arr.shape)
    return np.clip(noisy, 0.0, 1.0)


def _corrupt_jpeg(arr: np.ndarray, spec: CorruptionSpec) -> np.ndarray:
    hwc8 = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    buf = io.BytesIO()
    # Baseline sequential JPEG with 4:2:0 chroma subsampling, the dominant
    # default in consumer pipelines.
    Image.fromarray(hwc8, mode="RGB").save(
        buf, format="JPEG", quality=int(spec.level), subsampling=2
    )
    buf.seek(0)
    decoded = np.asarray(Image.open(buf).convert("RGB"), dtype=np.float64) / 255.0
    return decoded.transpose(2, 0, 1)


def _corrupt_gaussian_blur(arr: np.ndarray, spec: CorruptionSpec) -> np.ndarray:
    sigma = spec.level
    if sigma == 0.0:
        return arr.copy()
    radius = math.ceil(3.0 * sigma)
    out = np.empty_like(arr)
    for c in range(3):
        out[c] = gaussian_filter(arr[c], sigma=sigma, mode="reflect", radius=radius)
    return np.clip(out, 0.0, 1.0)


def corrupt(x: ImageTensor, spec: CorruptionSpec, stream_index: int = 0) -> ImageTensor:
    """Apply one corruption; the result stays a valid unperturbed image.

    ``stream_index`` separates the noise corruption's randomness across
    samples; it is ignored by the deterministic kinds.
    """
    if x.perturbed:
        raise CorruptionError("corruptions apply to stored images, not perturbed ones")
    if spec.kind is CorruptionKind.GAUSSIAN_NOISE:
        out = _corrupt_gaussian_noise(x.data, spec, stream_index)
    elif spec.kind is CorruptionKind.JPEG:
        out = _corrupt_jpeg(x.data, spec)
    else:
        out = _corrupt_gaussian_blur(x.data, spec)
    return ImageTensor(out)


@dataclass(frozen=True)
class RobustnessRow:
    """One sweep row; level None marks the uncorrupted baseline."""

    kind: CorruptionKind
    level: float | None
    auc: float
    ap: float


def _score_set(images, label: Label, embedder, detector_cfg: DetectorConfig,
               spec: CorruptionSpec | None, tag: str) -> list[float]:
    emb = select_embedder(embedder, label)
    cfg = getattr(emb, "config", None)
    sims = []
    for i, img in enumerate(images):
        x = img if isinstance(img, ImageTensor) else ImageTensor(np.asarray(img))
        if spec is not None:
            # Distinct stream id namespace so corruption noise can never
            # reuse a detection-noise substream.
            x = corrupt(x, spec, stream_index=stream_from_id(f"corrupt:{tag}:{i}"))
        if cfg is not None:
            x = preprocess(x, cfg)
        sims.append(
            similarity_score(x, emb, detector_cfg,
                             sample_stream=stream_from_id(f"{tag}:{i}"))
        )
    return sims


def robustness_sweep(
    real_images,
    fake_images,
    embedder,
    detector_cfg: DetectorConfig,
    kind: CorruptionKind,
    levels=None,
    corruption_seed: int = 0,
) -> list[RobustnessRow]:
    """AUC/AP per corruption level, applied to BOTH real and fake images.

    Emits the uncorrupted baseline first, then one row per level. Detection
    noise streams are keyed per sample, not per level, so the baseline row
    matches a plain evaluation run and level rows isolate the corruption's
    effect.
    """
    kind = CorruptionKind(kind)
    if not real_images or not fake_images:
        raise CorruptionError("robustness sweep needs non-empty real and fake sets")
    if levels is None:
        levels = STANDARD_LEVELS[kind]

    def _evaluate(spec: CorruptionSpec | None) -> tuple[float, float]:
        real = _score_set(real_images, Label.REAL, embedder, detector_cfg, spec, "real")
        fake = _score_set(fake_images, Label.FAKE, embedder, detector_cfg, spec, "fake")
        scores = [1.0 - s for s in real + fake]
        labels = [Label.REAL] * len(real) + [Label.FAKE] * len(fake)
        return roc_auc(scores, labels), average_precision(scores, labels)

    auc, ap = _evaluate(None)
    rows = [RobustnessRow(kind, None, auc, ap)]
    for level in levels:
        spec = CorruptionSpec(kind, level, seed=corruption_seed)
        auc, ap = _evaluate(spec)
        rows.append(RobustnessRow(kind, spec.level, auc, ap))
    return rows


def sweep_to_csv(rows: list[RobustnessRow], path) -> None:
    """kind, level, auc, ap; the baseline row has an empty level field."""
    lines = ["kind,level,auc,ap"]
    for r in rows:
        level = "" if r.level is None else str(r.level)
        lines.append(f"{r.kind.value},{level},{r.auc},{r.ap}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

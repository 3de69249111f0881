"""Feature extractors: preprocessing, synthetic test embedders, and the
portable-model-file inference backend.

Synthetic embedders operate directly in [0,1] pixel space (no channel
normalization) so their analytic similarity expectations stay exact. The
model-file backend applies per-channel normalization inside ``embed``,
after any perturbation, so noise intensity always refers to a fixed pixel
scale.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .core import CoreError, Embedding, ImageTensor, Label
from .noise import substream_rng


class EmbedderKind(str, Enum):
    MODEL_FILE = "model_file"
    LINEAR_SYNTHETIC = "linear_synthetic"
    RFF_SYNTHETIC = "rff_synthetic"


class Pooling(str, Enum):
    CLASS_TOKEN = "class_token"
    MEAN_POOL = "mean_pool"


class EmbedderError(ValueError):
    pass


@dataclass(frozen=True)
class EmbedderConfig:
    """Geometry, normalization, and backend selection for an embedder.

    Defaults mirror the DINOv2 ViT-L/14 setup: 224px crop from a 256px
    short side, ImageNet channel statistics, 1024-dim output.
    """

    kind: EmbedderKind = EmbedderKind.MODEL_FILE
    embedding_dim: int = 1024
    input_size: int = 224
    resize_short_side: int = 256
    norm_mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    norm_std: tuple[float, float, float] = (0.229, 0.224, 0.225)
    pooling: Pooling = Pooling.CLASS_TOKEN
    model_path: str | None = None
    frequency_scale: float = 1.0
    frequency_scale_fake: float | None = None
    weight_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", EmbedderKind(self.kind))
        object.__setattr__(self, "pooling", Pooling(self.pooling))
        object.__setattr__(self, "norm_mean", tuple(float(v) for v in self.norm_mean))
        object.__setattr__(self, "norm_std", tuple(float(v) for v in self.norm_std))
        if self.input_size <= 0:
            raise EmbedderError(f"input_size must be > 0, got {self.input_size}")
        if self.input_size > self.resize_short_side:
            raise EmbedderError(
                f"input_size ({self.input_size}) must not exceed "
                f"resize_short_side ({self.resize_short_side})"
            )
        if self.embedding_dim <= 0:
            raise EmbedderError(f"embedding_dim must be > 0, got {self.embedding_dim}")
        if len(self.norm_mean) != 3 or len(self.norm_std) != 3:
            raise EmbedderError("norm_mean and norm_std must each have 3 components")
        if any(s <= 0 for s in self.norm_std):
            raise EmbedderError(f"norm_std components must be > 0, got {self.norm_std}")

    @property
    def input_dim(self) -> int:
        """Flattened pixel count of a model-ready tensor."""
        return 3 * self.input_size * self.input_size

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind.value,
            "embedding_dim": self.embedding_dim,
            "input_size": self.input_size,
            "resize_short_side": self.resize_short_side,
            "norm_mean": list(self.norm_mean),
            "norm_std": list(self.norm_std),
            "pooling": self.pooling.value,
            "frequency_scale": self.frequency_scale,
            "weight_seed": self.weight_seed,
        }
        if self.model_path is not None:
            d["model_path"] = self.model_path
        if self.frequency_scale_fake is not None:
            d["frequency_scale_fake"] = self.frequency_scale_fake
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EmbedderConfig":
        known = {
            "kind", "embedding_dim", "input_size", "resize_short_side",
            "norm_mean", "norm_std", "pooling", "model_path",
            "frequency_scale", "frequency_scale_fake", "weight_seed",
        }
        unknown = set(d) - known
        if unknown:
            raise EmbedderError(f"unknown embedder config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "norm_mean" in kwargs:
            kwargs["norm_mean"] = tuple(kwargs["norm_mean"])
        if "norm_std" in kwargs:
            kwargs["norm_std"] = tuple(kwargs["norm_std"])
        return cls(**kwargs)


def synthetic_config(
    kind: EmbedderKind,
    image_size: int,
    embedding_dim: int,
    frequency_scale: float = 1.0,
    frequency_scale_fake: float | None = None,
    weight_seed: int = 0,
) -> EmbedderConfig:
    """Config for a synthetic embedder on images of a fixed square size."""
    return EmbedderConfig(
        kind=kind,
        embedding_dim=embedding_dim,
        input_size=image_size,
        resize_short_side=image_size,
        norm_mean=(0.0, 0.0, 0.0),
        norm_std=(1.0, 1.0, 1.0),
        frequency_scale=frequency_scale,
        frequency_scale_fake=frequency_scale_fake,
        weight_seed=weight_seed,
    )


def _to_chw01(raw) -> np.ndarray:
    """Coerce a decoded image (PIL, HWC uint8/float, CHW float) to CHW [0,1]."""
    if isinstance(raw, ImageTensor):
        return raw.data
    if isinstance(raw, Image.Image):
        raw = np.asarray(raw.convert("RGB"))
    arr = np.asarray(raw)
    if arr.ndim != 3:
        raise EmbedderError(f"expected a 3-dimensional image array, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    else:
        arr = arr.astype(np.float64)
    if arr.shape[0] == 3:
        return arr
    if arr.shape[2] == 3:
        return np.transpose(arr, (2, 0, 1))
    raise EmbedderError(f"cannot infer channel layout of image with shape {arr.shape}")


def _resize_short_side(chw: np.ndarray, target: int) -> np.ndarray:
    h, w = chw.shape[1], chw.shape[2]
    short = min(h, w)
    if short == target:
        return chw
    scale = target / short
    new_h = target if h <= w else max(1, round(h * scale))
    new_w = target if w < h else max(1, round(w * scale))
    out = np.empty((3, new_h, new_w), dtype=np.float64)
    for c in range(3):
        # PIL's bilinear resampler is antialiased (kernel support scales
        # with the reduction factor), matching common vision defaults.
        band = Image.fromarray(chw[c].astype(np.float32), mode="F")
        out[c] = np.asarray(band.resize((new_w, new_h), Image.BILINEAR), dtype=np.float64)
    return out


def preprocess(raw, config: EmbedderConfig) -> ImageTensor:
    """Resize the shorter side, center-crop, and scale to [0,1].

    Channel normalization is NOT applied here; it happens inside ``embed``,
    after the detection perturbation.
    """
    chw = _to_chw01(raw)
    chw = _resize_short_side(chw, config.resize_short_side)
    h, w = chw.shape[1], chw.shape[2]
    s = config.input_size
    if h < s or w < s:
        raise EmbedderError(
            f"image of size {h}x{w} after resize is smaller than the {s}x{s} crop"
        )
    top = (h - s) // 2
    left = (w - s) // 2
    crop = chw[:, top : top + s, left : left + s]
    return ImageTensor(np.clip(crop, 0.0, 1.0))


class Embedder(ABC):
    """Maps batches of model-ready tensors to embedding rows.

    Embedders are read-only once constructed and safe to share across
    threads; ``embed_batch`` must be a pure function of its input.
    """

    config: EmbedderConfig | None = None

    @property
    @abstractmethod
    def embedding_dim(self) -> int: ...

    @abstractmethod
    def embed_batch(self, batch: np.ndarray) -> np.ndarray:
        """(m, *input_shape) -> (m, embedding_dim)."""


def embed(batch: Sequence[ImageTensor], embedder: Embedder) -> list[Embedding]:
    """Embed a list of images, order-preserving, one Embedding per input."""
    if not batch:
        return []
    cfg = embedder.config
    if cfg is not None:
        want = (3, cfg.input_size, cfg.input_size)
        for i, t in enumerate(batch):
            if t.shape != want:
                raise EmbedderError(
                    f"batch[{i}] has shape {t.shape}, embedder expects {want}"
                )
    stacked = np.stack([t.data for t in batch])
    out = embedder.embed_batch(stacked)
    if out.shape != (len(batch), embedder.embedding_dim):
        raise EmbedderError(
            f"backend returned shape {out.shape}, expected "
            f"({len(batch)}, {embedder.embedding_dim})"
        )
    try:
        return [Embedding(row) for row in out]
    except CoreError as exc:
        raise EmbedderError(f"invalid embedding produced: {exc}") from exc


class LinearEmbedder(Embedder):
    """E(x) = W @ flatten(x) for a fixed random W. A controllable oracle:
    its perturbation sensitivity scales inversely with the input's norm in
    the row space of W.
    """

    def __init__(
        self,
        input_dim: int,
        embedding_dim: int,
        seed: int = 0,
        weight: np.ndarray | None = None,
        orthonormal: bool = False,
        config: EmbedderConfig | None = None,
    ):
        if weight is not None:
            weight = np.asarray(weight, dtype=np.float64)
            if weight.shape != (embedding_dim, input_dim):
                raise EmbedderError(
                    f"weight shape {weight.shape} != ({embedding_dim}, {input_dim})"
                )
        else:
            rng = substream_rng(seed, 0)
            weight = rng.standard_normal((embedding_dim, input_dim))
            if orthonormal:
                if embedding_dim > input_dim:
                    raise EmbedderError("orthonormal rows require embedding_dim <= input_dim")
                q, _ = np.linalg.qr(weight.T)
                weight = q.T
        self._weight = weight
        self._input_dim = input_dim
        self.config = config

    @property
    def embedding_dim(self) -> int:
        return self._weight.shape[0]

    def embed_batch(self, batch: np.ndarray) -> np.ndarray:
        flat = np.asarray(batch, dtype=np.float64).reshape(batch.shape[0], -1)
        if flat.shape[1] != self._input_dim:
            raise EmbedderError(f"input flattens to {flat.shape[1]}, expected {self._input_dim}")
        return flat @ self._weight.T


@dataclass(frozen=True)
class RffParams:
    """Random-Fourier-feature map parameters.

    Frequencies are drawn once from N(0, frequency_scale^2 I) and phases
    uniformly on [0, 2pi); both are fixed thereafter. The expected cosine
    similarity between phi(x) and phi(x + lam*delta) for unit-variance delta
    is exp(-frequency_scale^2 * lam^2 * input_dim / 2).
    """

    input_dim: int
    output_dim: int
    frequency_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise EmbedderError("RFF dimensions must be positive")
        if not (math.isfinite(self.frequency_scale) and self.frequency_scale > 0):
            raise EmbedderError(f"frequency_scale must be > 0, got {self.frequency_scale}")

    def expected_similarity(self, lam: float) -> float:
        return math.exp(-(self.frequency_scale**2) * lam**2 * self.input_dim / 2.0)


class RffEmbedder(Embedder):
    """phi(x)_i = sqrt(2/d) * cos(<omega_i, x> + b_i).

    The base frequency draw depends only on the seed, so two embedders that
    share a seed but differ in frequency_scale probe the same directions at
    different sensitivities.
    """

    def __init__(self, params: RffParams, config: EmbedderConfig | None = None):
        self.params = params
        base = substream_rng(params.seed, 0).standard_normal(
            (params.output_dim, params.input_dim)
        )
        self._omega = params.frequency_scale * base
        self._phase = substream_rng(params.seed, 1).uniform(
            0.0, 2.0 * math.pi, params.output_dim
        )
        self.config = config

    @property
    def embedding_dim(self) -> int:
        return self.params.output_dim

    def embed_batch(self, batch: np.ndarray) -> np.ndarray:
        flat = np.asarray(batch, dtype=np.float64).reshape(batch.shape[0], -1)
        if flat.shape[1] != self.params.input_dim:
            raise EmbedderError(
                f"input flattens to {flat.shape[1]}, expected {self.params.input_dim}"
            )
        d = self.params.output_dim
        return np.sqrt(2.0 / d) * np.cos(flat @ self._omega.T + self._phase)


class PopulationRffEmbedder:
    """Pair of RFF embedders sharing one frequency draw: samples tagged real
    are embedded at frequency scale k_real, fakes at k_fake >= k_real.

    Higher frequency scale means higher sensitivity to perturbations, which
    makes this the controllable stand-in for the observation that generated
    images react more strongly to tiny noise.
    """

    def __init__(self, k_real: float, k_fake: float, params: RffParams,
                 config: EmbedderConfig | None = None):
        if not (k_fake >= k_real > 0):
            raise EmbedderError(f"need k_fake >= k_real > 0, got {k_real}, {k_fake}")
        self.real = RffEmbedder(replace(params, frequency_scale=k_real), config)
        self.fake = RffEmbedder(replace(params, frequency_scale=k_fake), config)
        self.config = config

    @property
    def embedding_dim(self) -> int:
        return self.real.embedding_dim

    def for_label(self, label: Label | str) -> RffEmbedder:
        return self.real if Label(label) is Label.REAL else self.fake


def make_rff_population_embedder(
    k_real: float, k_fake: float, params: RffParams,
    config: EmbedderConfig | None = None,
) -> PopulationRffEmbedder:
    return PopulationRffEmbedder(k_real, k_fake, params, config)


def select_embedder(embedder, label: Label | str) -> Embedder:
    """Resolve the per-population embedder; a plain embedder is returned as-is."""
    if isinstance(embedder, PopulationRffEmbedder):
        return embedder.for_label(label)
    return embedder


class ModelFileEmbedder(Embedder):
    """Inference backend over an exported TorchScript graph.

    Graph contract: input (N, 3, H, W) float32, already channel-normalized;
    output (N, d) float32. Pooling is baked into the exported graph.
    """

    def __init__(self, config: EmbedderConfig):
        if config.model_path is None:
            raise EmbedderError("model_file embedder requires model_path")
        path = Path(config.model_path)
        if not path.exists():
            raise EmbedderError(f"model file not found: {path}")
        try:
            import torch
        except ImportError as exc:  # pragma: no cover - environment dependent
            raise EmbedderError(
                "the model_file backend requires torch (pip install noiseprobe[model])"
            ) from exc
        self._torch = torch
        try:
            self._module = torch.jit.load(str(path), map_location="cpu").eval()
        except Exception as exc:
            raise EmbedderError(f"failed to load model file {path}: {exc}") from exc
        self.config = config
        self._mean = np.asarray(config.norm_mean, dtype=np.float64).reshape(1, 3, 1, 1)
        self._std = np.asarray(config.norm_std, dtype=np.float64).reshape(1, 3, 1, 1)

    @property
    def embedding_dim(self) -> int:
        return self.config.embedding_dim

    def embed_batch(self, batch: np.ndarray) -> np.ndarray:
        arr = np.asarray(batch, dtype=np.float64)
        if arr.ndim != 4 or arr.shape[1] != 3:
            raise EmbedderError(f"model input must be (N, 3, H, W), got {arr.shape}")
        arr = (arr - self._mean) / self._std
        torch = self._torch
        with torch.no_grad():
            out = self._module(torch.from_numpy(arr.astype(np.float32)))
        out = out.detach().cpu().numpy().astype(np.float64)
        if out.ndim != 2 or out.shape != (arr.shape[0], self.config.embedding_dim):
            raise EmbedderError(
                f"model returned shape {out.shape}, expected "
                f"({arr.shape[0]}, {self.config.embedding_dim})"
            )
        return out


#: Keys the exported preprocessing sidecar must provide.
PREPROCESS_SIDECAR_KEYS = (
    "input_size", "resize_short_side", "norm_mean", "norm_std",
    "embedding_dim", "pooling",
)


def load_backbone_config(path: str | Path) -> EmbedderConfig:
    """Build a model_file config from an export directory.

    ``path`` may be the directory, the ``preprocess.json`` sidecar, or the
    model file itself; the other artifact is located by convention
    (``model.pt`` next to ``preprocess.json``).
    """
    p = Path(path)
    if p.is_dir():
        sidecar, model = p / "preprocess.json", p / "model.pt"
    elif p.suffix == ".json":
        sidecar, model = p, p.with_name("model.pt")
    else:
        sidecar, model = p.with_name("preprocess.json"), p
    if not sidecar.exists():
        raise EmbedderError(f"preprocessing sidecar not found: {sidecar}")
    if not model.exists():
        raise EmbedderError(f"model file not found: {model}")
    try:
        meta = json.loads(sidecar.read_text())
    except json.JSONDecodeError as exc:
        raise EmbedderError(f"invalid JSON in {sidecar}: {exc}") from exc
    missing = [k for k in PREPROCESS_SIDECAR_KEYS if k not in meta]
    if missing:
        raise EmbedderError(f"{sidecar} is missing keys: {missing}")
    return EmbedderConfig(
        kind=EmbedderKind.MODEL_FILE,
        embedding_dim=int(meta["embedding_dim"]),
        input_size=int(meta["input_size"]),
        resize_short_side=int(meta["resize_short_side"]),
        norm_mean=tuple(meta["norm_mean"]),
        norm_std=tuple(meta["norm_std"]),
        pooling=Pooling(meta["pooling"]),
        model_path=str(model),
    )


def build_embedder(config: EmbedderConfig):
    """Construct the backend an EmbedderConfig describes.

    For rff_synthetic configs with ``frequency_scale_fake`` set, this
    returns a two-population embedder.
    """
    if config.kind is EmbedderKind.MODEL_FILE:
        return ModelFileEmbedder(config)
    if config.kind is EmbedderKind.LINEAR_SYNTHETIC:
        return LinearEmbedder(
            config.input_dim, config.embedding_dim, seed=config.weight_seed, config=config
        )
    params = RffParams(
        input_dim=config.input_dim,
        output_dim=config.embedding_dim,
        frequency_scale=config.frequency_scale,
        seed=config.weight_seed,
    )
    if config.frequency_scale_fake is not None:
        return PopulationRffEmbedder(
            config.frequency_scale, config.frequency_scale_fake, params, config
        )
    return RffEmbedder(params, config)

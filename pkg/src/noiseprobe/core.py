"""Shared domain types and the cosine-similarity primitive.

Everything here is an immutable value type; all functions are pure and safe
to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class Label(str, Enum):
    REAL = "real"
    FAKE = "fake"


#: Generator tag reserved for real images.
REAL_GENERATOR = "real"


class CoreError(ValueError):
    """Invalid domain value (bad shape, non-finite data, zero norm, ...)."""


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, order="C")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ImageTensor:
    """A 3-channel float image, values nominally in [0, 1].

    ``perturbed`` marks tensors that carry additive detection noise; only
    those may hold values outside [0, 1].
    """

    data: np.ndarray
    perturbed: bool = False

    def __post_init__(self):
        arr = _frozen_array(self.data)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise CoreError(f"image must have shape (3, H, W), got {arr.shape}")
        if arr.shape[1] < 1 or arr.shape[2] < 1:
            raise CoreError(f"image must be non-empty, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise CoreError("image contains non-finite values")
        if not self.perturbed and (arr.min() < 0.0 or arr.max() > 1.0):
            raise CoreError(
                "unperturbed image values must lie in [0, 1]; "
                f"got range [{arr.min():.4g}, {arr.max():.4g}]"
            )
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return 3

    @property
    def height(self) -> int:
        return int(self.data.shape[1])

    @property
    def width(self) -> int:
        return int(self.data.shape[2])

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class Embedding:
    """A d-dimensional feature vector. Zero embeddings are rejected."""

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values)
        if arr.ndim != 1 or arr.size < 1:
            raise CoreError(f"embedding must be a non-empty vector, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise CoreError("embedding contains non-finite values")
        if not np.any(arr):
            raise CoreError("embedding has zero norm")
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class SampleRecord:
    """One dataset entry: where the image lives and what population it is from."""

    id: str
    path: str
    label: Label
    generator: str

    def __post_init__(self):
        if not self.id:
            raise CoreError("sample id must be non-empty")
        label = Label(self.label)
        object.__setattr__(self, "label", label)
        is_real = label is Label.REAL
        if is_real != (self.generator == REAL_GENERATOR):
            raise CoreError(
                f"sample {self.id!r}: label {label.value!r} inconsistent with "
                f"generator {self.generator!r} (label=real <=> generator='real')"
            )


@dataclass(frozen=True)
class ScoreRecord:
    """Per-sample similarity with its metadata.

    ``detection_score`` is defined as ``1 - similarity`` so that higher
    scores mean "more likely fake" (the positive class for AUC/AP).
    """

    sample_id: str
    similarity: float
    detection_score: float | None = None
    label: Label = Label.REAL
    generator: str = REAL_GENERATOR

    def __post_init__(self):
        if not -1.0 <= self.similarity <= 1.0:
            raise CoreError(f"similarity must be in [-1, 1], got {self.similarity}")
        expected = 1.0 - self.similarity
        if self.detection_score is None:
            object.__setattr__(self, "detection_score", expected)
        elif self.detection_score != expected:
            raise CoreError(
                f"detection_score must equal 1 - similarity exactly "
                f"({self.detection_score!r} != {expected!r})"
            )
        object.__setattr__(self, "label", Label(self.label))

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "similarity": self.similarity,
            "detection_score": self.detection_score,
            "label": self.label.value,
            "generator": self.generator,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreRecord":
        return cls(
            sample_id=d["sample_id"],
            similarity=d["similarity"],
            detection_score=d["detection_score"],
            label=Label(d["label"]),
            generator=d["generator"],
        )


def cosine_similarity(a: Embedding | np.ndarray, b: Embedding | np.ndarray) -> float:
    """Cosine similarity ``<a,b> / (||a|| ||b||)``, clamped to [-1, 1].

    Identical inputs return exactly 1.0; the clamp absorbs the ~1e-16
    floating-point overshoot of the dot/norm ratio.
    """
    va = a.values if isinstance(a, Embedding) else np.asarray(a, dtype=np.float64)
    vb = b.values if isinstance(b, Embedding) else np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise CoreError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise CoreError("cosine similarity undefined for zero-norm input")
    if va is vb or np.array_equal(va, vb):
        return 1.0
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


def cosine_similarity_batch(reference: np.ndarray, batch: np.ndarray) -> np.ndarray:
    """Cosine similarity of each row of ``batch`` against one reference vector.

    Rows bitwise-equal to the reference return exactly 1.0, matching
    :func:`cosine_similarity`.
    """
    ref = np.asarray(reference, dtype=np.float64)
    mat = np.asarray(batch, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] != ref.size:
        raise CoreError(f"batch shape {mat.shape} incompatible with reference dim {ref.size}")
    ref_norm = np.linalg.norm(ref)
    row_norms = np.linalg.norm(mat, axis=1)
    if ref_norm == 0.0 or (row_norms == 0.0).any():
        raise CoreError("cosine similarity undefined for zero-norm input")
    sims = np.clip((mat @ ref) / (row_norms * ref_norm), -1.0, 1.0)
    exact = np.all(mat == ref, axis=1)
    if exact.any():
        sims = np.where(exact, 1.0, sims)
    return sims

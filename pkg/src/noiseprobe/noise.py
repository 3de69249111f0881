"""Additive-noise sampling for the detection perturbation.

Every supported distribution is standardized analytically to zero mean and
unit variance per component, so the intensity parameter means the same
per-pixel standard deviation regardless of the family. Draws are fully
determined by ``(seed, stream_index)``; distinct stream indices yield
independent substreams, so batch order and parallelism never change results.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import ImageTensor


class Distribution(str, Enum):
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"
    GAMMA = "gamma"
    CHI_SQUARE = "chi_square"


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    """Noise family, per-pixel intensity, and the seed governing all draws."""

    distribution: Distribution = Distribution.GAUSSIAN
    lam: float = 0.05
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "distribution", Distribution(self.distribution))
        if not (math.isfinite(self.lam) and self.lam >= 0.0):
            raise NoiseError(f"noise intensity must be finite and >= 0, got {self.lam}")

    def to_dict(self) -> dict:
        return {
            "distribution": self.distribution.value,
            "lambda": self.lam,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(
            distribution=Distribution(d.get("distribution", "gaussian")),
            lam=float(d.get("lambda", 0.05)),
            seed=int(d.get("seed", 0)),
        )


def stream_from_id(sample_id: str) -> int:
    """Stable 64-bit stream index for a sample id (independent of run order)."""
    digest = hashlib.sha256(sample_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def substream_rng(seed: int, stream_index: int | tuple[int, ...]) -> np.random.Generator:
    """Independent generator for (seed, *stream): the substream scheme every
    random draw in the package goes through."""
    parts = (stream_index,) if isinstance(stream_index, int) else tuple(stream_index)
    entropy = tuple(p % (1 << 64) for p in (seed, *parts))
    return np.random.default_rng(entropy)


def sample_noise(
    shape: tuple[int, ...],
    spec: NoiseSpec,
    stream_index: int | tuple[int, ...] = 0,
) -> np.ndarray:
    """Draw an i.i.d. noise field of ``shape``, scaled by the intensity.

    Per component the raw draw is standardized to mean 0 / variance 1 using
    the analytic moments of each family:

    * gaussian: standard normal as-is
    * laplace: location 0, scale 1/sqrt(2) (unit variance natively)
    * gamma: shape 2, scale 1, standardized as (raw - 2) / sqrt(2)
    * chi_square: 4 degrees of freedom, standardized as (raw - 4) / sqrt(8)
    """
    if any(int(s) < 0 for s in shape):
        raise NoiseError(f"invalid shape {shape}")
    if spec.lam == 0.0:
        return np.zeros(shape, dtype=np.float64)
    rng = substream_rng(spec.seed, stream_index)
    dist = spec.distribution
    if dist is Distribution.GAUSSIAN:
        z = rng.standard_normal(shape)
    elif dist is Distribution.LAPLACE:
        z = rng.laplace(0.0, 1.0 / math.sqrt(2.0), shape)
    elif dist is Distribution.GAMMA:
        z = (rng.gamma(2.0, 1.0, shape) - 2.0) / math.sqrt(2.0)
    elif dist is Distribution.CHI_SQUARE:
        z = (rng.chisquare(4.0, shape) - 4.0) / math.sqrt(8.0)
    else:  # pragma: no cover - enum is exhaustive
        raise NoiseError(f"unknown distribution {dist}")
    return spec.lam * z


def add_noise(
    x: np.ndarray,
    spec: NoiseSpec,
    stream_index: int | tuple[int, ...] = 0,
) -> np.ndarray:
    """``x + lam * delta`` on a raw array; the input is never modified."""
    x = np.asarray(x, dtype=np.float64)
    noise = sample_noise(x.shape, spec, stream_index)
    return x + noise


def perturb(
    x: ImageTensor,
    spec: NoiseSpec,
    stream_index: int | tuple[int, ...] = 0,
) -> ImageTensor:
    """Additively perturb an image. Values are NOT clamped to [0, 1].

    Clamping would bias the noise distribution near the 0/1 boundaries, so
    the result is flagged ``perturbed`` instead.
    """
    return ImageTensor(add_noise(x.data, spec, stream_index), perturbed=True)

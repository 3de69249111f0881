"""Detection scoring and its analysis probes.

The detection statistic is the cosine similarity between an image's
embedding and the embedding of a noise-perturbed copy; generated images
tend to sit at sharper points of the embedding landscape, so their
similarity drops further. Everything here is training-free: the only
fitted quantity is a threshold calibrated on real images alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import ImageTensor, Label, cosine_similarity_batch, _frozen_array
from .embedders import Embedder
from .noise import Distribution, NoiseSpec, sample_noise, substream_rng


class DetectorError(ValueError):
    pass


#: Quantile convention used by calibrate_threshold: interpolation of the
#: inverted empirical CDF (rank h = m*q, linear between adjacent order
#: statistics), the convention under which the counting property holds: at
#: least a target_tnr fraction of the calibration similarities lie strictly
#: above the returned value, and less than target_tnr + 1/m.
QUANTILE_CONVENTION = "interpolated_inverted_cdf"

#: Minimum calibration sample size; below this the empirical quantile is too
#: coarse for the 1/m guarantee to mean anything.
MIN_CALIBRATION_SAMPLES = 20


@dataclass(frozen=True)
class DetectorConfig:
    """Noise recipe plus decision threshold for one detector run."""

    noise: NoiseSpec = field(default_factory=NoiseSpec)
    num_noise_samples: int = 1
    epsilon: float | None = None

    def __post_init__(self):
        if not isinstance(self.noise, NoiseSpec):
            object.__setattr__(self, "noise", NoiseSpec.from_dict(dict(self.noise)))
        if self.num_noise_samples < 1:
            raise DetectorError(
                f"num_noise_samples must be >= 1, got {self.num_noise_samples}"
            )
        if self.epsilon is not None:
            eps = float(self.epsilon)
            if not (math.isfinite(eps) and -1.0 <= eps <= 1.0):
                raise DetectorError(f"epsilon must lie in [-1, 1], got {self.epsilon}")
            object.__setattr__(self, "epsilon", eps)

    def to_dict(self) -> dict:
        d = {"noise": self.noise.to_dict(), "num_noise_samples": self.num_noise_samples}
        if self.epsilon is not None:
            d["epsilon"] = self.epsilon
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        known = {"noise", "num_noise_samples", "epsilon"}
        unknown = set(d) - known
        if unknown:
            raise DetectorError(f"unknown detector config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "noise" in kwargs:
            kwargs["noise"] = NoiseSpec.from_dict(kwargs["noise"])
        return cls(**kwargs)


def _similarities_to_base(
    arr: np.ndarray, stack: np.ndarray, embedder: Embedder, base_embedding: np.ndarray
) -> np.ndarray:
    """Cosine similarity of each stacked input against the base input.

    A stack row that is bitwise identical to the base input scores exactly
    1.0, regardless of how the embedding backend's batched arithmetic
    rounds: identical inputs mean identical embeddings mathematically, and
    the contract (zero perturbation gives similarity 1) must hold exactly.
    """
    sims = cosine_similarity_batch(base_embedding, embedder.embed_batch(stack))
    for i in range(stack.shape[0]):
        if np.array_equal(stack[i], arr):
            sims[i] = 1.0
    return sims


def similarity_score(
    x: ImageTensor | np.ndarray,
    embedder: Embedder,
    config: DetectorConfig,
    sample_stream: int = 0,
) -> float:
    """cos(f(x), f(x + noise)), averaged over num_noise_samples draws.

    Noise draw k for this sample comes from substream (sample_stream, k),
    so scores are reproducible per sample and independent across samples.
    With lam = 0 the perturbed copy is bitwise identical to the input and
    the score is exactly 1.0.
    """
    arr = x.data if isinstance(x, ImageTensor) else np.asarray(x, dtype=np.float64)
    k = config.num_noise_samples
    perturbed = np.stack(
        [arr + sample_noise(arr.shape, config.noise, (sample_stream, i)) for i in range(k)]
    )
    base = embedder.embed_batch(arr[np.newaxis])[0]
    sims = _similarities_to_base(arr, perturbed, embedder, base)
    return float(np.mean(sims))


def detection_score(similarity: float) -> float:
    """Positive-class (generated) score: 1 - similarity."""
    return 1.0 - similarity


def detect(similarity: float, epsilon: float) -> Label:
    """FAKE iff similarity <= epsilon; the boundary counts as fake."""
    if epsilon is None:
        raise DetectorError("detection threshold epsilon is unset")
    sim = float(similarity)
    eps = float(epsilon)
    for name, v in (("similarity", sim), ("epsilon", eps)):
        if not (math.isfinite(v) and -1.0 <= v <= 1.0):
            raise DetectorError(f"{name} must lie in [-1, 1], got {v}")
    return Label.FAKE if sim <= eps else Label.REAL


def calibrate_threshold(
    real_similarities, target_tnr: float = 0.95
) -> float:
    """Threshold such that at least target_tnr of the calibration
    similarities (all from real images) exceed it.

    Uses the interpolated-inverted-CDF quantile at rank h = m * (1 -
    target_tnr). On tie-free data with m * (1 - target_tnr) >= 1, the
    counting guarantee holds exactly: the fraction of calibration points
    strictly above the result is >= target_tnr and < target_tnr + 1/m.
    Below that sample size the threshold clamps to the smallest
    similarity and the guarantee degrades to (m-1)/m.

    The rank is computed with a snap to the nearest integer (relative
    tolerance 1e-9), because 1 - target_tnr is typically not exactly
    representable and an integer rank landing one ulp low would shift the
    threshold a whole order statistic.
    """
    sims = np.asarray(list(real_similarities), dtype=np.float64)
    if sims.ndim != 1 or sims.size < MIN_CALIBRATION_SAMPLES:
        raise DetectorError(
            f"calibration needs at least {MIN_CALIBRATION_SAMPLES} real "
            f"similarities, got {sims.size}"
        )
    if not np.all(np.isfinite(sims)):
        raise DetectorError("calibration similarities must be finite")
    if not (0.0 < target_tnr < 1.0):
        raise DetectorError(f"target_tnr must lie in (0, 1), got {target_tnr}")
    sims = np.sort(sims)
    m = sims.size
    h = m * (1.0 - target_tnr)
    nearest = round(h)
    if abs(h - nearest) <= 1e-9 * max(1.0, abs(h)):
        h = float(nearest)
    i = math.floor(h)
    g = h - i
    if i < 1:
        return float(sims[0])
    if i >= m:
        return float(sims[-1])
    lo = float(sims[i - 1])
    if g == 0.0:
        return lo
    return lo + g * (float(sims[i]) - lo)


def _as_gaussian_spec(noise: NoiseSpec | float) -> NoiseSpec:
    if isinstance(noise, NoiseSpec):
        return noise
    return NoiseSpec(Distribution.GAUSSIAN, lam=float(noise), seed=0)


def smoothed_similarity(
    x: ImageTensor | np.ndarray,
    embedder: Embedder,
    noise: NoiseSpec | float,
    n_draws: int,
    sample_stream: int = 0,
) -> float:
    """Monte-Carlo estimate of E_delta[cos(f(x), f(x + lam*delta))].

    Gaussian smoothing only: the gradient identity behind this probe is
    specific to isotropic gaussian perturbations. ``noise`` may be a bare
    scale, meaning gaussian at that scale with seed 0.
    """
    noise = _as_gaussian_spec(noise)
    if noise.distribution is not Distribution.GAUSSIAN:
        raise DetectorError(
            f"smoothing requires gaussian noise, got {noise.distribution.value}"
        )
    if n_draws < 1:
        raise DetectorError(f"n_draws must be >= 1, got {n_draws}")
    cfg = DetectorConfig(noise=noise, num_noise_samples=n_draws)
    return similarity_score(x, embedder, cfg, sample_stream=sample_stream)


def smoothed_gradient_estimate(
    fn: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    lam: float,
    n_draws: int,
    seed: int = 0,
    sample_stream: int = 0,
    chunk_size: int = 8192,
) -> np.ndarray:
    """Stein estimator of the gradient of the gaussian-smoothed version of fn:

        grad G(x) ~= (1 / (N * lam^2)) * sum_i delta_i * fn(x + delta_i)

    with delta_i ~ N(0, lam^2 I). ``fn`` maps a (c, *x.shape) stack to (c,)
    values. Deterministic for fixed (seed, sample_stream, chunk_size); the
    chunk size only changes how draws are partitioned across substreams.
    """
    x = np.asarray(x, dtype=np.float64)
    if not (math.isfinite(lam) and lam > 0):
        raise DetectorError(f"smoothing scale must be > 0, got {lam}")
    if n_draws < 1:
        raise DetectorError(f"n_draws must be >= 1, got {n_draws}")
    if chunk_size < 1:
        raise DetectorError(f"chunk_size must be >= 1, got {chunk_size}")
    spec = NoiseSpec(Distribution.GAUSSIAN, lam=lam, seed=seed)
    grad_sum = np.zeros_like(x)
    done = 0
    chunk_idx = 0
    while done < n_draws:
        c = min(chunk_size, n_draws - done)
        deltas = sample_noise((c, *x.shape), spec, (sample_stream, chunk_idx))
        values = np.asarray(fn(x[np.newaxis] + deltas), dtype=np.float64)
        if values.shape != (c,):
            raise DetectorError(
                f"fn returned shape {values.shape}, expected ({c},)"
            )
        grad_sum += np.tensordot(values, deltas, axes=(0, 0))
        done += c
        chunk_idx += 1
    return grad_sum / (n_draws * lam * lam)


def stein_gradient(
    x: ImageTensor | np.ndarray,
    embedder: Embedder,
    noise: NoiseSpec | float,
    n_draws: int,
    sample_stream: int = 0,
    chunk_size: int = 8192,
) -> np.ndarray:
    """Smoothed gradient of g(y) = cos(f(x), f(y)) at y = x, input-shaped.

    Its L2 norm (see stein_gradient_norm) measures how steeply the
    similarity landscape falls away from the image; generated images show
    larger norms under this probe.
    """
    noise = _as_gaussian_spec(noise)
    if noise.distribution is not Distribution.GAUSSIAN:
        raise DetectorError(
            f"the gradient estimator requires gaussian noise, got "
            f"{noise.distribution.value}"
        )
    arr = x.data if isinstance(x, ImageTensor) else np.asarray(x, dtype=np.float64)
    base = embedder.embed_batch(arr[np.newaxis])[0]

    def fn(stack: np.ndarray) -> np.ndarray:
        return cosine_similarity_batch(base, embedder.embed_batch(stack))

    return smoothed_gradient_estimate(
        fn, arr, noise.lam, n_draws,
        seed=noise.seed, sample_stream=sample_stream, chunk_size=chunk_size,
    )


def stein_gradient_norm(
    x: ImageTensor | np.ndarray,
    embedder: Embedder,
    noise: NoiseSpec | float,
    n_draws: int,
    sample_stream: int = 0,
    chunk_size: int = 8192,
) -> float:
    """L2 norm of the estimated smoothed gradient: the sensitivity statistic."""
    grad = stein_gradient(x, embedder, noise, n_draws, sample_stream, chunk_size)
    return float(np.linalg.norm(grad))


@dataclass(frozen=True)
class LandscapeGrid:
    """Mean cosine similarity over a 2-D slice of input space.

    values[i, j] is the similarity at displacement alphas[i]*u + betas[j]*v
    averaged over the probed images, where u and v are the fixed random
    directions identified by direction_seed.
    """

    alphas: np.ndarray
    betas: np.ndarray
    values: np.ndarray
    direction_seed: int

    def __post_init__(self):
        object.__setattr__(self, "alphas", _frozen_array(self.alphas))
        object.__setattr__(self, "betas", _frozen_array(self.betas))
        object.__setattr__(self, "values", _frozen_array(self.values))
        if self.alphas.ndim != 1 or self.betas.ndim != 1:
            raise DetectorError("landscape axes must be 1-dimensional")
        if self.values.shape != (self.alphas.size, self.betas.size):
            raise DetectorError(
                f"values shape {self.values.shape} does not match axes "
                f"({self.alphas.size}, {self.betas.size})"
            )
        for name, ax in (("alphas", self.alphas), ("betas", self.betas)):
            if np.any(np.diff(ax) <= 0):
                raise DetectorError(f"{name} must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise DetectorError("landscape values must be finite")
        if np.any(self.values < -1.0) or np.any(self.values > 1.0):
            raise DetectorError("landscape values must lie in [-1, 1]")
        ia = np.nonzero(self.alphas == 0.0)[0]
        ib = np.nonzero(self.betas == 0.0)[0]
        if ia.size and ib.size and self.values[ia[0], ib[0]] != 1.0:
            raise DetectorError(
                "landscape value at the origin must be exactly 1.0, got "
                f"{self.values[ia[0], ib[0]]}"
            )

    def to_csv(self, path) -> None:
        """First column: alpha; header row: beta; body: similarity values."""
        lines = ["alpha/beta," + ",".join(str(b) for b in self.betas)]
        for i, a in enumerate(self.alphas):
            lines.append(str(a) + "," + ",".join(str(v) for v in self.values[i]))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


def _grid_axis(lo: float, hi: float, step: float) -> np.ndarray:
    if not (math.isfinite(step) and step > 0):
        raise DetectorError(f"step must be > 0, got {step}")
    if not hi > lo:
        raise DetectorError(f"range must satisfy hi > lo, got [{lo}, {hi}]")
    count = round((hi - lo) / step) + 1
    if count < 2 or not math.isclose(lo + (count - 1) * step, hi, rel_tol=1e-9):
        raise DetectorError(f"[{lo}, {hi}] is not an integer number of steps of {step}")
    # Integer-multiples-of-step construction so a grid spanning zero hits it
    # exactly (0 * step == 0.0), which the origin-value invariant needs.
    k0 = round(lo / step)
    return (k0 + np.arange(count)) * step


def landscape(
    images,
    embedder: Embedder,
    alpha_range: tuple[float, float] = (-0.5, 0.5),
    beta_range: tuple[float, float] = (-0.5, 0.5),
    step: float = 0.01,
    direction_seed: int = 0,
    chunk_size: int = 4096,
) -> LandscapeGrid:
    """Similarity surface along two fixed random directions.

    Directions u, v are standard-normal draws standardized to zero mean and
    unit variance per direction, shared across all probed images. At the
    origin the displaced image is bitwise the original, so the surface value
    there is exactly 1.
    """
    imgs = [im.data if isinstance(im, ImageTensor) else np.asarray(im, dtype=np.float64)
            for im in images]
    if not imgs:
        raise DetectorError("landscape requires at least one image")
    shape = imgs[0].shape
    for i, im in enumerate(imgs):
        if im.shape != shape:
            raise DetectorError(
                f"images[{i}] has shape {im.shape}, expected {shape}"
            )
    alphas = _grid_axis(*alpha_range, step)
    betas = _grid_axis(*beta_range, step)

    def _direction(stream: int) -> np.ndarray:
        raw = substream_rng(direction_seed, stream).standard_normal(shape)
        sd = raw.std()
        if sd == 0.0:
            raise DetectorError("degenerate direction draw (zero variance)")
        return (raw - raw.mean()) / sd

    u = _direction(0)
    v = _direction(1)

    cells = [(i, j) for i in range(alphas.size) for j in range(betas.size)]
    per_image = np.empty((len(imgs), alphas.size, betas.size))
    for n, arr in enumerate(imgs):
        base = embedder.embed_batch(arr[np.newaxis])[0]
        for start in range(0, len(cells), chunk_size):
            chunk = cells[start : start + chunk_size]
            stack = np.stack(
                [arr + alphas[i] * u + betas[j] * v for i, j in chunk]
            )
            sims = _similarities_to_base(arr, stack, embedder, base)
            for (i, j), s in zip(chunk, sims):
                per_image[n, i, j] = s
    # Per-cell values are sorted before summing so the mean is bit-identical
    # under any reordering of the probed images.
    values = np.sort(per_image, axis=0).sum(axis=0) / len(imgs)
    return LandscapeGrid(alphas, betas, values, direction_seed)

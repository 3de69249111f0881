import numpy as np
import pytest

from noiseprobe import (
    CorruptionError,
    CorruptionKind,
    CorruptionSpec,
    DetectorConfig,
    EmbedderKind,
    ImageTensor,
    Label,
    LinearEmbedder,
    NoiseSpec,
    RobustnessRow,
    STANDARD_LEVELS,
    corrupt,
    perturb,
    robustness_sweep,
    similarity_score,
    stream_from_id,
    substream_rng,
    sweep_to_csv,
    synthetic_config,
)
from noiseprobe.corruptions import _corrupt_gaussian_blur


def smooth_image(size=16, seed=0):
    """Low-frequency [0,1] image; JPEG handles it almost losslessly."""
    t = np.linspace(0.0, np.pi, size)
    base = 0.5 + 0.3 * np.outer(np.sin(t), np.cos(t))
    jitter = 0.01 * substream_rng(seed, 0).random((3, size, size))
    return ImageTensor(np.clip(base[None] + jitter, 0.0, 1.0))


class TestCorruptionSpec:
    def test_standard_levels(self):
        assert STANDARD_LEVELS[CorruptionKind.GAUSSIAN_NOISE] == (0.05, 0.1, 0.15, 0.2, 0.25)
        assert STANDARD_LEVELS[CorruptionKind.JPEG] == (90, 80, 70, 60, 50)
        assert STANDARD_LEVELS[CorruptionKind.GAUSSIAN_BLUR] == (1, 2, 3, 4, 5)

    def test_jpeg_quality_must_be_integer_in_range(self):
        CorruptionSpec(CorruptionKind.JPEG, 90)
        for bad in (0, 101, 75.5):
            with pytest.raises(CorruptionError, match="quality"):
                CorruptionSpec(CorruptionKind.JPEG, bad)

    def test_levels_must_be_finite_nonnegative(self):
        with pytest.raises(CorruptionError):
            CorruptionSpec(CorruptionKind.GAUSSIAN_NOISE, -0.1)
        with pytest.raises(CorruptionError):
            CorruptionSpec(CorruptionKind.GAUSSIAN_BLUR, float("inf"))

    def test_accepts_string_kind(self):
        assert CorruptionSpec("jpeg", 80).kind is CorruptionKind.JPEG


class TestCorrupt:
    def test_rejects_perturbed_input(self):
        img = perturb(smooth_image(), NoiseSpec(lam=0.1))
        with pytest.raises(CorruptionError, match="perturbed"):
            corrupt(img, CorruptionSpec(CorruptionKind.JPEG, 90))

    @pytest.mark.parametrize("kind,level", [
        ("gaussian_noise", 0.25), ("jpeg", 50), ("gaussian_blur", 3),
    ])
    def test_output_is_valid_unit_range_image(self, kind, level):
        img = smooth_image()
        out = corrupt(img, CorruptionSpec(kind, level))
        assert out.shape == img.shape
        assert not out.perturbed
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_gaussian_noise_deterministic_per_stream(self):
        img = smooth_image()
        spec = CorruptionSpec(CorruptionKind.GAUSSIAN_NOISE, 0.1, seed=3)
        a = corrupt(img, spec, stream_index=7)
        b = corrupt(img, spec, stream_index=7)
        c = corrupt(img, spec, stream_index=8)
        assert np.array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)

    def test_gaussian_noise_statistics_on_gray(self):
        # constant 0.5 keeps clipping rare at level 0.1, so the empirical std
        # is close to the level
        img = ImageTensor(np.full((3, 64, 64), 0.5))
        out = corrupt(img, CorruptionSpec(CorruptionKind.GAUSSIAN_NOISE, 0.1))
        resid = out.data - 0.5
        assert abs(resid.std() - 0.1) < 0.005
        assert abs(resid.mean()) < 0.005

    def test_jpeg_high_quality_near_lossless_on_achromatic(self):
        # gray inputs dodge 4:2:0 chroma subsampling error, so q=100 should
        # round-trip within quantization error
        img = ImageTensor(np.repeat(smooth_image().data[:1], 3, axis=0))
        out = corrupt(img, CorruptionSpec(CorruptionKind.JPEG, 100))
        assert np.abs(out.data - img.data).max() <= 2.0 / 255.0

    def test_jpeg_twice_close_to_once(self):
        img = smooth_image()
        spec = CorruptionSpec(CorruptionKind.JPEG, 80)
        once = corrupt(img, spec)
        twice = corrupt(once, spec)
        assert np.abs(twice.data - once.data).max() <= 4.0 / 255.0

    def test_jpeg_low_quality_actually_degrades(self):
        img = ImageTensor(substream_rng(1, 0).random((3, 16, 16)))
        out = corrupt(img, CorruptionSpec(CorruptionKind.JPEG, 10))
        assert np.abs(out.data - img.data).max() > 0.05

    def test_blur_zero_sigma_is_identity(self):
        img = smooth_image()
        out = corrupt(img, CorruptionSpec(CorruptionKind.GAUSSIAN_BLUR, 0))
        assert np.array_equal(out.data, img.data)

    def test_blur_constant_image_is_identity(self):
        img = ImageTensor(np.full((3, 16, 16), 0.625))
        out = corrupt(img, CorruptionSpec(CorruptionKind.GAUSSIAN_BLUR, 3))
        assert np.abs(out.data - img.data).max() <= 1e-6

    def test_blur_kernel_preserves_mass(self):
        # an all-ones image must stay all-ones if the kernel sums to 1
        raw = np.ones((3, 32, 32))
        out = _corrupt_gaussian_blur(raw, CorruptionSpec(CorruptionKind.GAUSSIAN_BLUR, 2))
        assert np.abs(out - 1.0).max() <= 1e-9

    def test_blur_reduces_variance(self):
        img = ImageTensor(substream_rng(2, 0).random((3, 32, 32)))
        out = corrupt(img, CorruptionSpec(CorruptionKind.GAUSSIAN_BLUR, 2))
        assert out.data.var() < 0.25 * img.data.var()


class TestRobustnessSweep:
    @staticmethod
    def _testbed(n=8, size=4):
        cfg = synthetic_config(EmbedderKind.LINEAR_SYNTHETIC, size, 32, weight_seed=0)
        emb = LinearEmbedder(cfg.input_dim, 32, seed=0, config=cfg)
        det = DetectorConfig(noise=NoiseSpec(lam=0.05, seed=1))
        rng = substream_rng(4, 0)
        reals = [ImageTensor(rng.random((3, size, size))) for _ in range(n)]
        fakes = [ImageTensor(np.clip(0.5 + 0.1 * rng.standard_normal((3, size, size)), 0, 1))
                 for _ in range(n)]
        return reals, fakes, emb, det

    def test_baseline_row_matches_manual_scoring(self):
        reals, fakes, emb, det = self._testbed()
        rows = robustness_sweep(reals, fakes, emb, det, "jpeg", levels=(90,))
        assert rows[0].level is None and rows[0].kind is CorruptionKind.JPEG

        from noiseprobe import preprocess, roc_auc, average_precision

        sims_real = [
            similarity_score(preprocess(img, emb.config), emb, det,
                             sample_stream=stream_from_id(f"real:{i}"))
            for i, img in enumerate(reals)
        ]
        sims_fake = [
            similarity_score(preprocess(img, emb.config), emb, det,
                             sample_stream=stream_from_id(f"fake:{i}"))
            for i, img in enumerate(fakes)
        ]
        scores = [1.0 - s for s in sims_real + sims_fake]
        labels = [Label.REAL] * len(reals) + [Label.FAKE] * len(fakes)
        assert rows[0].auc == roc_auc(scores, labels)
        assert rows[0].ap == average_precision(scores, labels)

    def test_default_levels_and_row_order(self):
        reals, fakes, emb, det = self._testbed(n=4)
        rows = robustness_sweep(reals, fakes, emb, det, CorruptionKind.GAUSSIAN_BLUR)
        assert [r.level for r in rows] == [None, 1, 2, 3, 4, 5]
        for r in rows:
            assert 0.0 <= r.auc <= 1.0 and 0.0 <= r.ap <= 1.0

    def test_deterministic(self):
        reals, fakes, emb, det = self._testbed(n=4)
        a = robustness_sweep(reals, fakes, emb, det, "gaussian_noise", levels=(0.1,))
        b = robustness_sweep(reals, fakes, emb, det, "gaussian_noise", levels=(0.1,))
        assert a == b

    def test_empty_sets_rejected(self):
        reals, fakes, emb, det = self._testbed(n=2)
        with pytest.raises(CorruptionError, match="non-empty"):
            robustness_sweep([], fakes, emb, det, "jpeg")
        with pytest.raises(CorruptionError, match="non-empty"):
            robustness_sweep(reals, [], emb, det, "jpeg")

    def test_csv_writer(self, tmp_path):
        rows = [
            RobustnessRow(CorruptionKind.JPEG, None, 0.9, 0.8),
            RobustnessRow(CorruptionKind.JPEG, 90.0, 0.85, 0.75),
        ]
        path = tmp_path / "sweep.csv"
        sweep_to_csv(rows, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "kind,level,auc,ap"
        assert lines[1] == "jpeg,,0.9,0.8"
        assert lines[2] == "jpeg,90.0,0.85,0.75"

import json
import math

import numpy as np
import pytest
from PIL import Image

from noiseprobe import (
    Embedding,
    EmbedderConfig,
    EmbedderError,
    EmbedderKind,
    ImageTensor,
    Label,
    LinearEmbedder,
    ModelFileEmbedder,
    Pooling,
    PopulationRffEmbedder,
    RffEmbedder,
    RffParams,
    build_embedder,
    embed,
    load_backbone_config,
    make_rff_population_embedder,
    preprocess,
    select_embedder,
    substream_rng,
    synthetic_config,
)


class TestEmbedderConfig:
    def test_defaults_match_vit_l14_setup(self):
        cfg = EmbedderConfig()
        assert cfg.kind is EmbedderKind.MODEL_FILE
        assert cfg.embedding_dim == 1024
        assert cfg.input_size == 224
        assert cfg.resize_short_side == 256
        assert cfg.norm_mean == (0.485, 0.456, 0.406)
        assert cfg.norm_std == (0.229, 0.224, 0.225)
        assert cfg.pooling is Pooling.CLASS_TOKEN
        assert cfg.input_dim == 3 * 224 * 224

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"input_size": 0},
            {"input_size": 300},  # exceeds resize_short_side
            {"embedding_dim": 0},
            {"norm_std": (0.0, 1.0, 1.0)},
            {"norm_mean": (0.5, 0.5)},
        ],
    )
    def test_rejects_bad_geometry(self, kwargs):
        with pytest.raises(EmbedderError):
            EmbedderConfig(**kwargs)

    def test_round_trip(self):
        cfg = synthetic_config(EmbedderKind.RFF_SYNTHETIC, 8, 64,
                               frequency_scale=0.5, frequency_scale_fake=2.0,
                               weight_seed=3)
        assert EmbedderConfig.from_dict(cfg.to_dict()) == cfg

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(EmbedderError, match="unknown"):
            EmbedderConfig.from_dict({"kind": "model_file", "learning_rate": 0.1})

    def test_synthetic_config_uses_identity_normalization(self):
        cfg = synthetic_config(EmbedderKind.LINEAR_SYNTHETIC, 4, 16)
        assert cfg.norm_mean == (0.0, 0.0, 0.0)
        assert cfg.norm_std == (1.0, 1.0, 1.0)
        assert cfg.input_size == cfg.resize_short_side == 4


class TestPreprocess:
    def test_identity_when_already_target_size(self):
        cfg = synthetic_config(EmbedderKind.LINEAR_SYNTHETIC, 4, 16)
        data = substream_rng(0, 0).random((3, 4, 4))
        out = preprocess(ImageTensor(data), cfg)
        assert np.array_equal(out.data, data)

    def test_center_crop_matches_manual_slice(self):
        # resize is a no-op when the short side already matches, so the crop
        # offsets are directly checkable
        cfg = EmbedderConfig(
            kind=EmbedderKind.LINEAR_SYNTHETIC, embedding_dim=8,
            input_size=4, resize_short_side=6,
            norm_mean=(0, 0, 0), norm_std=(1, 1, 1),
        )
        data = substream_rng(1, 0).random((3, 6, 10))
        out = preprocess(ImageTensor(data), cfg)
        assert np.array_equal(out.data, data[:, 1:5, 3:7])

    def test_resizes_short_side_preserving_aspect(self):
        cfg = EmbedderConfig(input_size=224, resize_short_side=256)
        tall = np.zeros((3, 512, 256))
        out = preprocess(ImageTensor(tall), cfg)
        assert out.shape == (3, 224, 224)

    def test_accepts_hwc_uint8_and_pil(self):
        cfg = synthetic_config(EmbedderKind.LINEAR_SYNTHETIC, 4, 16)
        hwc = substream_rng(2, 0).integers(0, 256, (4, 4, 3), dtype=np.uint8)
        a = preprocess(hwc, cfg)
        b = preprocess(Image.fromarray(hwc), cfg)
        assert np.array_equal(a.data, hwc.transpose(2, 0, 1) / 255.0)
        assert np.array_equal(a.data, b.data)

    def test_wide_image_crops_to_square(self):
        cfg = EmbedderConfig(input_size=224, resize_short_side=256)
        out = preprocess(ImageTensor(np.zeros((3, 256, 700))), cfg)
        assert out.shape == (3, 224, 224)

    def test_output_clipped_to_unit_range(self):
        cfg = EmbedderConfig(input_size=2, resize_short_side=2,
                             kind=EmbedderKind.LINEAR_SYNTHETIC, embedding_dim=4)
        out = preprocess(np.full((5, 5, 3), 2.0), cfg)  # float HWC above range
        assert out.data.max() <= 1.0


class TestLinearEmbedder:
    def test_matches_manual_matmul(self):
        emb = LinearEmbedder(6, 4, seed=5)
        want = substream_rng(5, 0).standard_normal((4, 6))
        x = substream_rng(6, 0).random((2, 6))
        assert np.array_equal(emb.embed_batch(x), x @ want.T)

    def test_explicit_weight(self):
        w = np.eye(3)
        emb = LinearEmbedder(3, 3, weight=w)
        x = np.array([[1.0, 2.0, 3.0]])
        assert np.array_equal(emb.embed_batch(x), x)

    def test_orthonormal_rows(self):
        emb = LinearEmbedder(16, 4, seed=0, orthonormal=True)
        w = emb.embed_batch(np.eye(16))  # rows of W, transposed view
        gram = w.T @ w
        assert np.allclose(gram, np.eye(4), atol=1e-12)

    def test_errors(self):
        with pytest.raises(EmbedderError, match="weight shape"):
            LinearEmbedder(3, 2, weight=np.eye(3))
        with pytest.raises(EmbedderError, match="orthonormal"):
            LinearEmbedder(2, 4, orthonormal=True)
        with pytest.raises(EmbedderError, match="flattens"):
            LinearEmbedder(3, 2).embed_batch(np.ones((1, 4)))


class TestRffEmbedder:
    def test_shape_bound_and_determinism(self):
        emb = RffEmbedder(RffParams(8, 32, 1.0, seed=0))
        x = substream_rng(1, 0).random((5, 8))
        out = emb.embed_batch(x)
        assert out.shape == (5, 32)
        assert np.abs(out).max() <= math.sqrt(2.0 / 32) + 1e-15
        emb2 = RffEmbedder(RffParams(8, 32, 1.0, seed=0))
        assert np.array_equal(out, emb2.embed_batch(x))

    def test_frequency_scale_multiplies_shared_base(self):
        e1 = RffEmbedder(RffParams(8, 16, 1.0, seed=3))
        e2 = RffEmbedder(RffParams(8, 16, 2.0, seed=3))
        assert np.array_equal(e2._omega, 2.0 * e1._omega)
        assert np.array_equal(e2._phase, e1._phase)

    def test_map_formula(self):
        params = RffParams(4, 8, 1.5, seed=7)
        emb = RffEmbedder(params)
        x = substream_rng(9, 0).random((1, 4))
        omega = 1.5 * substream_rng(7, 0).standard_normal((8, 4))
        phase = substream_rng(7, 1).uniform(0.0, 2.0 * math.pi, 8)
        want = math.sqrt(2.0 / 8) * np.cos(x @ omega.T + phase)
        assert np.array_equal(emb.embed_batch(x), want)

    def test_expected_similarity_formula(self):
        p = RffParams(16, 64, 2.0)
        assert p.expected_similarity(0.1) == pytest.approx(
            math.exp(-4.0 * 0.01 * 16 / 2.0), abs=1e-15
        )
        assert p.expected_similarity(0.0) == 1.0

    def test_param_validation(self):
        with pytest.raises(EmbedderError):
            RffParams(0, 8)
        with pytest.raises(EmbedderError):
            RffParams(8, 8, frequency_scale=0.0)


class TestPopulationEmbedder:
    def test_for_label_routes_by_population(self):
        pop = make_rff_population_embedder(0.5, 2.0, RffParams(8, 16, seed=0))
        assert pop.for_label(Label.REAL) is pop.real
        assert pop.for_label("fake") is pop.fake
        assert pop.real.params.frequency_scale == 0.5
        assert pop.fake.params.frequency_scale == 2.0

    def test_populations_share_frequency_directions(self):
        pop = PopulationRffEmbedder(0.5, 2.0, RffParams(8, 16, seed=0))
        assert np.array_equal(pop.fake._omega, 4.0 * pop.real._omega)

    def test_rejects_inverted_scales(self):
        with pytest.raises(EmbedderError):
            PopulationRffEmbedder(2.0, 0.5, RffParams(8, 16))

    def test_select_embedder(self):
        pop = PopulationRffEmbedder(0.5, 2.0, RffParams(8, 16))
        assert select_embedder(pop, "real") is pop.real
        plain = LinearEmbedder(4, 2)
        assert select_embedder(plain, "fake") is plain


class TestEmbedFunction:
    def test_order_preserving(self):
        emb = LinearEmbedder(12, 4, seed=0)
        imgs = [ImageTensor(substream_rng(0, i).random((3, 2, 2))) for i in range(4)]
        out = embed(imgs, emb)
        assert len(out) == 4
        for img, e in zip(imgs, out):
            assert isinstance(e, Embedding)
            single = emb.embed_batch(img.data[None])[0]
            assert np.allclose(e.values, single, atol=1e-12)

    def test_empty_batch(self):
        assert embed([], LinearEmbedder(4, 2)) == []

    def test_geometry_check_uses_config(self):
        cfg = synthetic_config(EmbedderKind.LINEAR_SYNTHETIC, 4, 8)
        emb = LinearEmbedder(cfg.input_dim, 8, config=cfg)
        with pytest.raises(EmbedderError, match="expects"):
            embed([ImageTensor(np.zeros((3, 2, 2)))], emb)

    def test_zero_embedding_rejected(self):
        emb = LinearEmbedder(12, 2, weight=np.zeros((2, 12)))
        with pytest.raises(EmbedderError, match="invalid embedding"):
            embed([ImageTensor(np.ones((3, 2, 2)))], emb)


@pytest.fixture(scope="module")
def exported_dir(tmp_path_factory):
    torch = pytest.importorskip("torch")
    out = tmp_path_factory.mktemp("export")

    class Flat(torch.nn.Module):
        def __init__(self):
            super().__init__()
            g = torch.Generator().manual_seed(0)
            self.w = torch.nn.Parameter(torch.randn(5, 3 * 4 * 4, generator=g))

        def forward(self, x):
            return torch.flatten(x, 1) @ self.w.T

    module = torch.jit.script(Flat().eval())
    module.save(str(out / "model.pt"))
    meta = {
        "input_size": 4, "resize_short_side": 4,
        "norm_mean": [0.5, 0.5, 0.5], "norm_std": [0.25, 0.25, 0.25],
        "embedding_dim": 5, "pooling": "mean_pool",
    }
    (out / "preprocess.json").write_text(json.dumps(meta))
    return out


class TestModelFileBackend:
    def test_load_backbone_config_accepts_three_path_forms(self, exported_dir):
        for p in (exported_dir, exported_dir / "preprocess.json", exported_dir / "model.pt"):
            cfg = load_backbone_config(p)
            assert cfg.kind is EmbedderKind.MODEL_FILE
            assert cfg.embedding_dim == 5
            assert cfg.input_size == 4
            assert cfg.norm_mean == (0.5, 0.5, 0.5)
            assert cfg.pooling is Pooling.MEAN_POOL
            assert cfg.model_path == str(exported_dir / "model.pt")

    def test_embeds_with_channel_normalization(self, exported_dir):
        torch = pytest.importorskip("torch")
        cfg = load_backbone_config(exported_dir)
        emb = ModelFileEmbedder(cfg)
        assert emb.embedding_dim == 5
        x = substream_rng(4, 0).random((2, 3, 4, 4))
        got = emb.embed_batch(x)
        normed = (x - 0.5) / 0.25
        module = torch.jit.load(str(exported_dir / "model.pt"))
        with torch.no_grad():
            want = module(torch.from_numpy(normed.astype(np.float32))).numpy()
        assert np.allclose(got, want, atol=1e-6)

    def test_wrong_embedding_dim_detected(self, exported_dir):
        pytest.importorskip("torch")
        cfg = load_backbone_config(exported_dir)
        bad = EmbedderConfig.from_dict({**cfg.to_dict(), "embedding_dim": 7})
        emb = ModelFileEmbedder(bad)
        with pytest.raises(EmbedderError, match="returned shape"):
            emb.embed_batch(np.zeros((1, 3, 4, 4)))

    def test_missing_artifacts(self, tmp_path):
        with pytest.raises(EmbedderError, match="sidecar"):
            load_backbone_config(tmp_path)
        (tmp_path / "preprocess.json").write_text("{}")
        with pytest.raises(EmbedderError, match="model file"):
            load_backbone_config(tmp_path)

    def test_sidecar_validation(self, tmp_path):
        (tmp_path / "model.pt").write_bytes(b"")
        (tmp_path / "preprocess.json").write_text("not json")
        with pytest.raises(EmbedderError, match="invalid JSON"):
            load_backbone_config(tmp_path)
        (tmp_path / "preprocess.json").write_text(json.dumps({"input_size": 4}))
        with pytest.raises(EmbedderError, match="missing keys"):
            load_backbone_config(tmp_path)

    def test_requires_model_path(self):
        with pytest.raises(EmbedderError, match="model_path"):
            ModelFileEmbedder(EmbedderConfig())


class TestBuildEmbedder:
    def test_linear_dispatch(self):
        cfg = synthetic_config(EmbedderKind.LINEAR_SYNTHETIC, 4, 8, weight_seed=2)
        emb = build_embedder(cfg)
        assert isinstance(emb, LinearEmbedder)
        want = substream_rng(2, 0).standard_normal((8, cfg.input_dim))
        x = np.zeros((1, cfg.input_dim))
        x[0, 0] = 1.0
        assert np.array_equal(emb.embed_batch(x)[0], want[:, 0])

    def test_rff_dispatch(self):
        cfg = synthetic_config(EmbedderKind.RFF_SYNTHETIC, 4, 8, frequency_scale=1.5)
        emb = build_embedder(cfg)
        assert isinstance(emb, RffEmbedder)
        assert emb.params.frequency_scale == 1.5
        assert emb.params.input_dim == 48

    def test_population_dispatch(self):
        cfg = synthetic_config(EmbedderKind.RFF_SYNTHETIC, 4, 8,
                               frequency_scale=0.5, frequency_scale_fake=1.5)
        emb = build_embedder(cfg)
        assert isinstance(emb, PopulationRffEmbedder)
        assert emb.real.params.frequency_scale == 0.5
        assert emb.fake.params.frequency_scale == 1.5

"""Training-free detection of AI-generated images.

The detection statistic is the cosine similarity between an image's
embedding and the embedding of a noise-perturbed copy of the same image;
generated images sit at sharper points of the embedding landscape and lose
more similarity under the same tiny perturbation.
"""

from .core import (
    CoreError,
    Embedding,
    ImageTensor,
    Label,
    REAL_GENERATOR,
    SampleRecord,
    ScoreRecord,
    cosine_similarity,
    cosine_similarity_batch,
)
from .corruptions import (
    CorruptionError,
    CorruptionKind,
    CorruptionSpec,
    RobustnessRow,
    STANDARD_LEVELS,
    corrupt,
    robustness_sweep,
    sweep_to_csv,
)
from .detector import (
    DetectorConfig,
    DetectorError,
    LandscapeGrid,
    MIN_CALIBRATION_SAMPLES,
    QUANTILE_CONVENTION,
    calibrate_threshold,
    detect,
    detection_score,
    landscape,
    similarity_score,
    smoothed_gradient_estimate,
    smoothed_similarity,
    stein_gradient,
    stein_gradient_norm,
)
from .embedders import (
    Embedder,
    EmbedderConfig,
    EmbedderError,
    EmbedderKind,
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
    synthetic_config,
)
from .fixtures import (
    FixtureError,
    FixtureSet,
    SyntheticDatasetSpec,
    generate_fixture,
    population_embedder_for,
)
from .harness import (
    ConfigError,
    DecodeError,
    DEFAULT_LAMBDA_GRID,
    FormatBiasWarning,
    Manifest,
    ManifestError,
    RunConfig,
    ScoreRun,
    ablate_noise,
    check_format_bias,
    load_image,
    load_manifest,
    load_run_config,
    load_scores,
    merge_manifests,
    run_calibrate,
    run_evaluate,
    run_score,
    save_run_config,
    score_dataset,
    sweep_lambda,
)
from .metrics import (
    EvalReport,
    GeneratorMetrics,
    MetricsError,
    average_precision,
    evaluate,
    evaluate_records,
    roc_auc,
)
from .noise import (
    Distribution,
    NoiseError,
    NoiseSpec,
    add_noise,
    perturb,
    sample_noise,
    stream_from_id,
    substream_rng,
)

__version__ = "0.1.0"

__all__ = [
    "CoreError", "Embedding", "ImageTensor", "Label", "REAL_GENERATOR",
    "SampleRecord", "ScoreRecord", "cosine_similarity", "cosine_similarity_batch",
    "CorruptionError", "CorruptionKind", "CorruptionSpec", "RobustnessRow",
    "STANDARD_LEVELS", "corrupt", "robustness_sweep", "sweep_to_csv",
    "DetectorConfig", "DetectorError", "LandscapeGrid", "MIN_CALIBRATION_SAMPLES",
    "QUANTILE_CONVENTION", "calibrate_threshold", "detect", "detection_score",
    "landscape", "similarity_score", "smoothed_gradient_estimate",
    "smoothed_similarity", "stein_gradient", "stein_gradient_norm",
    "Embedder", "EmbedderConfig", "EmbedderError", "EmbedderKind",
    "LinearEmbedder", "ModelFileEmbedder", "Pooling", "PopulationRffEmbedder",
    "RffEmbedder", "RffParams", "build_embedder", "embed", "load_backbone_config",
    "make_rff_population_embedder", "preprocess", "select_embedder",
    "synthetic_config",
    "FixtureError", "FixtureSet", "SyntheticDatasetSpec", "generate_fixture",
    "population_embedder_for",
    "ConfigError", "DecodeError", "DEFAULT_LAMBDA_GRID", "FormatBiasWarning",
    "Manifest", "ManifestError", "RunConfig", "ScoreRun", "ablate_noise",
    "check_format_bias", "load_image", "load_manifest", "load_run_config",
    "load_scores", "merge_manifests", "run_calibrate", "run_evaluate",
    "run_score", "save_run_config", "score_dataset", "sweep_lambda",
    "EvalReport", "GeneratorMetrics", "MetricsError", "average_precision",
    "evaluate", "evaluate_records", "roc_auc",
    "Distribution", "NoiseError", "NoiseSpec", "add_noise", "perturb",
    "sample_noise", "stream_from_id", "substream_rng",
    "__version__",
]

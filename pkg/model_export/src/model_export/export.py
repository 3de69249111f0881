"""One-shot backbone export.

``export_backbone`` turns a registry entry into three files in the output
directory:

``model.pt``
    TorchScript graph mapping a channel-normalized float32 batch
    ``(N, 3, input_size, input_size)`` to embeddings ``(N, embedding_dim)``.
    Pooling is baked into the graph.
``preprocess.json``
    The six preprocessing values a consumer needs to feed the graph.
``manifest.json``
    Provenance record: source checkpoint, tool versions, the model file's
    sha256, and the verification result.

The model file is staged in a scratch subdirectory and only moved to its
final name after the reloaded graph reproduces the source module's output
on a seeded probe batch, so a ``model.pt`` that exists was never left
unverified.  The staged file keeps the final basename because TorchScript
derives the archive's internal root prefix from the file name it is saved
under; renaming after the fact would change the bytes and break re-export
sha256 stability.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
import tempfile
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .registry import BackboneSpec, ExportError, ExportWarning, get_backbone

__all__ = [
    "ExportResult",
    "MODEL_FILENAME",
    "PREPROCESS_FILENAME",
    "MANIFEST_FILENAME",
    "VERIFY_TOLERANCE",
    "export_backbone",
    "verify_outputs",
    "load_schema",
]

MODEL_FILENAME = "model.pt"
PREPROCESS_FILENAME = "preprocess.json"
MANIFEST_FILENAME = "manifest.json"

VERIFY_TOLERANCE = 1e-3
VERIFY_BATCH = 4
VERIFY_SEED = 0


@dataclass(frozen=True)
class ExportResult:
    """Paths and provenance for one completed export."""

    out_dir: Path
    model_path: Path
    preprocess_path: Path
    manifest_path: Path
    manifest: dict
    max_abs_diff: float


def load_schema(filename: str) -> dict:
    """Load one of the packaged JSON schemas by file name."""
    text = resources.files("model_export").joinpath(filename).read_text(
        encoding="utf-8"
    )
    return json.loads(text)


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _probe_batch(spec: BackboneSpec, seed: int):
    import torch

    gen = torch.Generator().manual_seed(seed)
    return torch.randn(
        VERIFY_BATCH, 3, spec.input_size, spec.input_size, generator=gen
    )


def verify_outputs(source, exported, spec: BackboneSpec, seed: int = VERIFY_SEED) -> float:
    """Compare two modules on a seeded probe batch.

    Returns the max absolute output deviation.  Raises ExportError when
    either module's output shape disagrees with the registry entry, since
    a tolerance check over mismatched tensors would be meaningless.
    """
    import torch

    probe = _probe_batch(spec, seed)
    expected_shape = (VERIFY_BATCH, spec.embedding_dim)
    with torch.no_grad():
        want = source(probe)
        got = exported(probe)
    if tuple(want.shape) != expected_shape:
        raise ExportError(
            f"source module produced shape {tuple(want.shape)}, registry "
            f"declares {expected_shape}"
        )
    if tuple(got.shape) != expected_shape:
        raise ExportError(
            f"exported graph produced shape {tuple(got.shape)}, registry "
            f"declares {expected_shape}"
        )
    return float((want - got).abs().max())


def _compile(module, spec: BackboneSpec):
    """TorchScript the module, preferring script over trace."""
    import torch

    try:
        return torch.jit.script(module), "script"
    except Exception:
        gen = torch.Generator().manual_seed(VERIFY_SEED + 1)
        example = torch.randn(
            2, 3, spec.input_size, spec.input_size, generator=gen
        )
        with torch.no_grad():
            return torch.jit.trace(module, example), "trace"


def _tool_versions() -> dict:
    import torch
    import torchvision

    try:
        from importlib.metadata import version

        own = version("model-export")
    except Exception:
        own = "0.1.0"
    return {
        "python": ".".join(str(part) for part in sys.version_info[:3]),
        "torch": torch.__version__,
        "torchvision": torchvision.__version__,
        "model_export": own,
    }


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _validate(payload: dict, schema_filename: str, label: str) -> None:
    import jsonschema

    try:
        jsonschema.validate(payload, load_schema(schema_filename))
    except jsonschema.ValidationError as exc:
        raise ExportError(f"{label} failed schema validation: {exc.message}") from exc


def export_backbone(
    name: str, out_dir: str | os.PathLike, pretrained: bool = True
) -> ExportResult:
    """Export one registered backbone into ``out_dir``.

    ``pretrained=False`` builds the architecture with fresh weights, which
    is only useful for exercising the pipeline without downloads.  Raises
    ExportError when the backbone is unknown, cannot be built, or the
    reloaded graph deviates from the source module by more than
    ``VERIFY_TOLERANCE`` on the probe batch.
    """
    import torch

    spec = get_backbone(name)
    module = spec.build(pretrained)
    scripted, export_method = _compile(module, spec)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    final_model = out / MODEL_FILENAME
    previous_sha = _sha256_file(final_model) if final_model.exists() else None

    # Stage next to the destination so os.replace stays on one filesystem.
    with tempfile.TemporaryDirectory(dir=out, prefix=".partial-") as staging:
        staged = Path(staging) / MODEL_FILENAME
        scripted.save(str(staged))
        reloaded = torch.jit.load(str(staged)).eval()
        max_abs_diff = verify_outputs(module, reloaded, spec)
        if max_abs_diff > VERIFY_TOLERANCE:
            raise ExportError(
                f"exported graph deviates from the source module by "
                f"{max_abs_diff:.3e} (tolerance {VERIFY_TOLERANCE:.0e}); "
                f"nothing was written to {final_model}"
            )
        os.replace(staged, final_model)

    model_sha256 = _sha256_file(final_model)
    if previous_sha is not None and previous_sha != model_sha256:
        warnings.warn(
            f"re-export of {name!r} replaced {final_model} with different "
            f"bytes (sha256 {previous_sha[:12]}... -> {model_sha256[:12]}...); "
            f"identical bytes are only expected when torch and torchvision "
            f"versions and the checkpoint are unchanged",
            ExportWarning,
            stacklevel=2,
        )

    preprocess = {
        "input_size": spec.input_size,
        "resize_short_side": spec.resize_short_side,
        "norm_mean": list(spec.norm_mean),
        "norm_std": list(spec.norm_std),
        "embedding_dim": spec.embedding_dim,
        "pooling": spec.pooling,
    }
    _validate(preprocess, "preprocess.schema.json", "preprocess sidecar")

    manifest = {
        "backbone": spec.name,
        "source": spec.source,
        "pretrained": bool(pretrained),
        "embedding_dim": spec.embedding_dim,
        "pooling": spec.pooling,
        "input_size": spec.input_size,
        "resize_short_side": spec.resize_short_side,
        "norm_mean": list(spec.norm_mean),
        "norm_std": list(spec.norm_std),
        "model_file": MODEL_FILENAME,
        "model_sha256": model_sha256,
        "export_method": export_method,
        "verification": {
            "probe_seed": VERIFY_SEED,
            "probe_batch": VERIFY_BATCH,
            "max_abs_diff": max_abs_diff,
            "tolerance": VERIFY_TOLERANCE,
        },
        "tool_versions": _tool_versions(),
    }
    _validate(manifest, "manifest.schema.json", "export manifest")

    preprocess_path = out / PREPROCESS_FILENAME
    manifest_path = out / MANIFEST_FILENAME
    _write_json(preprocess_path, preprocess)
    _write_json(manifest_path, manifest)

    return ExportResult(
        out_dir=out,
        model_path=final_model,
        preprocess_path=preprocess_path,
        manifest_path=manifest_path,
        manifest=manifest,
        max_abs_diff=max_abs_diff,
    )

"""Export pretrained vision backbones to a portable embedding graph.

The output of :func:`export_backbone` is a directory holding a
TorchScript ``model.pt``, a ``preprocess.json`` sidecar describing how to
feed it, and a ``manifest.json`` recording provenance.  That directory is
exactly what noiseprobe's ``model_file`` embedder consumes.
"""

from .export import (
    MANIFEST_FILENAME,
    MODEL_FILENAME,
    PREPROCESS_FILENAME,
    VERIFY_TOLERANCE,
    ExportResult,
    export_backbone,
    load_schema,
    verify_outputs,
)
from .registry import (
    REGISTRY,
    BackboneSpec,
    ExportError,
    ExportWarning,
    get_backbone,
    list_backbones,
)

__version__ = "0.1.0"

__all__ = [
    "BackboneSpec",
    "ExportError",
    "ExportResult",
    "ExportWarning",
    "MANIFEST_FILENAME",
    "MODEL_FILENAME",
    "PREPROCESS_FILENAME",
    "REGISTRY",
    "VERIFY_TOLERANCE",
    "export_backbone",
    "get_backbone",
    "list_backbones",
    "load_schema",
    "verify_outputs",
]

"""Command-line entry point for one-shot backbone exports."""

from __future__ import annotations

import argparse
import sys

from .export import export_backbone
from .registry import ExportError, list_backbones


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="model-export",
        description="Export a pretrained vision backbone to a portable "
        "TorchScript model file plus preprocessing sidecar.",
    )
    parser.add_argument(
        "--backbone",
        metavar="NAME",
        help="registered backbone to export (see --list)",
    )
    parser.add_argument(
        "--out",
        metavar="DIR",
        help="output directory for model.pt, preprocess.json, manifest.json",
    )
    parser.add_argument(
        "--random-weights",
        action="store_true",
        help="export the architecture with freshly initialized weights "
        "instead of the pretrained checkpoint (no download; only useful "
        "for pipeline tests)",
    )
    parser.add_argument(
        "--list",
        action="store_true",
        help="list registered backbones and exit",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.list:
        for spec in list_backbones():
            download = "download" if spec.requires_download else "offline"
            print(
                f"{spec.name:<16} {spec.embedding_dim:>5}-d  "
                f"{spec.input_size}px  {spec.pooling:<11} {download:<8} "
                f"{spec.description}"
            )
        return 0

    if not args.backbone or not args.out:
        parser.error("--backbone and --out are required (or use --list)")

    try:
        result = export_backbone(
            args.backbone, args.out, pretrained=not args.random_weights
        )
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # keep tracebacks out of normal CLI use
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1

    print(f"model:      {result.model_path}")
    print(f"preprocess: {result.preprocess_path}")
    print(f"manifest:   {result.manifest_path}")
    print(f"sha256:     {result.manifest['model_sha256']}")
    print(f"verified:   max abs diff {result.max_abs_diff:.3e} on probe batch")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

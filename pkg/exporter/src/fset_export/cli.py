"""fset-export: dump frozen-backbone embeddings as FSET1 feature files."""

from __future__ import annotations

import argparse
import sys

from .backbones import DECLARED_DIMS, DimensionMismatchError, WeightsUnavailableError
from .datasets import DatasetUnavailableError
from .export import ExportSpec, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fset-export",
        description="Export penultimate-layer activations of a frozen backbone to FSET1",
    )
    parser.add_argument("--dataset", required=True,
                        help="cifar10 | cifar100 | path to a core50-style directory")
    parser.add_argument("--backbone", required=True, choices=sorted(DECLARED_DIMS))
    parser.add_argument("--split", default="train", choices=["train", "test"])
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--out", required=True)
    parser.add_argument("--no-pretrained", dest="pretrained", action="store_false",
                        help="random frozen weights (testing only)")
    parser.add_argument("--labels", default="category", choices=["category", "object"],
                        help="core50-style class annotation")
    parser.add_argument("--domains", default="session", choices=["session", "object"],
                        help="core50-style domain annotation")
    parser.add_argument("--data-root", default="datasets",
                        help="download/cache directory for cifar datasets")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = ExportSpec(
        dataset=args.dataset, backbone=args.backbone, split=args.split,
        batch_size=args.batch_size, device=args.device, out=args.out,
        pretrained=args.pretrained, labels=args.labels, domains=args.domains,
        data_root=args.data_root,
    )
    try:
        out = export(spec)
    except (DatasetUnavailableError, WeightsUnavailableError) as exc:
        print(f"error (retryable): {exc}", file=sys.stderr)
        return 3
    except DimensionMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out} (backbone {spec.backbone}, dim {spec.declared_dim()}, split {spec.split})")
    return 0


if __name__ == "__main__":
    sys.exit(main())

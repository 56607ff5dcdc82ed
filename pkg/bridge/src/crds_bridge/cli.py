"""CLI: export real-encoder hidden states as engine-ready shard files.

    bridge export --model <id> --layers last:18 --truncate 2048 \
                  --shards 8 --pool pool.jsonl --out shards/
"""

from __future__ import annotations

import argparse
import sys

from crds.provider import load_pool_items

from .extract import export_shards, extract_hidden_states, load_encoder, parse_layer_spec


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bridge",
                                     description="Causal-LM hidden states to embedding shards")
    commands = parser.add_subparsers(dest="command", required=True)
    export = commands.add_parser("export", help="embed a pool file and write shards")
    export.add_argument("--model", required=True, help="checkpoint id or local path")
    export.add_argument("--layers", default="last",
                        help="layer spec: last | last:K | all | comma-separated ids")
    export.add_argument("--truncate", type=int, default=2048, help="max tokens per item")
    export.add_argument("--shards", type=int, default=1, help="number of shard files")
    export.add_argument("--pool", required=True, help="JSONL records with a text field")
    export.add_argument("--out", required=True, help="output directory")
    export.add_argument("--pooling", choices=("last", "mean"), default="last",
                        help="token position convention (recorded in the manifest)")
    export.add_argument("--batch-size", type=int, default=8)
    export.add_argument("--device", default="cpu")
    return parser


def cmd_export(args) -> int:
    items = load_pool_items(args.pool)
    if not items:
        print(f"error: {args.pool} holds no records", file=sys.stderr)
        return 1
    encoder = load_encoder(args.model, args.device)
    layer_ids = parse_layer_spec(args.layers, encoder.num_layers)
    stacks = extract_hidden_states(encoder, [item.text for item in items], layer_ids,
                                   truncation_length=args.truncate, pooling=args.pooling,
                                   batch_size=args.batch_size, device=args.device)
    paths = export_shards(stacks, args.shards, args.out, manifest_extra={
        "model": args.model,
        "pooling": args.pooling,
        "truncation_length": args.truncate,
    })
    print(f"exported {len(stacks)} items x {len(layer_ids)} layers "
          f"(hidden {encoder.hidden_size}) into {len(paths)} shards under {args.out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            return cmd_export(args)
        raise ValueError(f"unknown command {args.command!r}")
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

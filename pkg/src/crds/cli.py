"""Pipeline driver: embed -> (fit-whiten | project) -> similarity -> select.

Each stage is one subcommand, resumable from the artifacts the previous stage
persisted in the work directory:

    embed       synthetic-encode the pool and write its embedding shards
    ingest      validate externally produced shard files and register them
    fit-whiten  draw the fit sample and persist the whitening transformer
    similarity  compute and persist the full score matrix (plus provenance)
    select      turn scores (or lengths, or randomness) into a selection
    overlap     compare two selection files
    pipeline    run all stages for the configured method in order

Exit codes: 0 success, 1 validation error, 2 I/O or format error, 3 numeric
error.
"""

from __future__ import annotations

import argparse
import glob
import json
import sys
from pathlib import Path

import numpy as np

from . import storage
from .compression import default_projection_dim, make_projection_bank
from .config import PipelineConfig, load_config
from .engine import MethodConfig, WorkerPlan, compute_similarity, load_similarity
from .errors import (
    ConfigError,
    CRDSError,
    FormatError,
    InvalidArgumentError,
    NumericError,
    StageInputError,
    StateError,
)
from .provider import (
    encode_rows,
    ingest_shards,
    interleaved_split,
    load_pool_items,
    load_test_items,
)
from .selection import (
    length_select,
    random_select,
    read_selection,
    round_robin_select,
    selection_overlap,
    write_selection,
)
from .whitening import fit_sample_draw, whitening_fit

SHARDSET_FILE = "shardset.json"
TRANSFORMER_FILE = "whitening.crdw"
SIMILARITY_FILE = "similarity.crsm"
SELECTION_FILE = "selection.jsonl"


class _UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage problems; the contract wants 1 for validation
    def error(self, message):
        raise _UsageError(message)


# ---------------------------------------------------------------------------
# artifact plumbing
# ---------------------------------------------------------------------------

def _workdir(cfg: PipelineConfig) -> Path:
    path = Path(cfg.workdir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _shard_name(i: int, n: int) -> str:
    return f"pool_{i:04d}_of_{n:04d}.crds"


def _write_shardset(workdir: Path, files: list[str], cfg: PipelineConfig, source: str):
    payload = {
        "files": files,
        "source": source,
        "encoder_digest": cfg.encoder.digest(),
    }
    (workdir / SHARDSET_FILE).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_shardset(cfg: PipelineConfig):
    descriptor = Path(cfg.workdir) / SHARDSET_FILE
    if not descriptor.exists():
        raise StageInputError(
            f"{descriptor}: shard set not found; run `crds embed` (synthetic pool) "
            f"or `crds ingest` (pre-built shards) first"
        )
    payload = json.loads(descriptor.read_text())
    base = descriptor.parent
    paths = [p if Path(p).is_absolute() else str(base / p) for p in payload["files"]]
    return ingest_shards(paths, cfg.encoder)


def _similarity_path(cfg: PipelineConfig) -> Path:
    return Path(cfg.workdir) / SIMILARITY_FILE


def _transformer_path(cfg: PipelineConfig) -> Path:
    return Path(cfg.workdir) / TRANSFORMER_FILE


def _method_config(cfg: PipelineConfig) -> MethodConfig:
    bank = None
    transformer = None
    if cfg.method == "crds_r":
        w = cfg.projection.w or default_projection_dim(cfg.encoder.v, cfg.encoder.num_layers)
        bank = make_projection_bank(cfg.projection.seed, cfg.encoder.v, w,
                                    cfg.encoder.num_layers, cfg.projection.entry_mode)
    elif cfg.method == "crds_w":
        path = _transformer_path(cfg)
        if not path.exists():
            raise StageInputError(
                f"{path}: whitening transformer not found; run `crds fit-whiten` first"
            )
        transformer = storage.read_transformer(path)
    return MethodConfig(method=cfg.method, normalize=cfg.normalize,
                        bank=bank, transformer=transformer)


def _base_provenance(cfg: PipelineConfig) -> dict:
    prov = {
        "encoder": {
            "mode": cfg.encoder.mode,
            "v": cfg.encoder.v,
            "num_layers": cfg.encoder.num_layers,
            "layer_ids": list(cfg.encoder.layer_ids),
            "truncation_length": cfg.encoder.truncation_length,
            "seed": cfg.encoder.seed,
        },
        "encoder_digest": cfg.encoder.digest(),
        "seeds": {"encoder": cfg.encoder.seed},
    }
    if cfg.method == "crds_r":
        prov["seeds"]["projection"] = cfg.projection.seed
    if cfg.method == "crds_w":
        prov["seeds"]["whitening_fit"] = cfg.whitening.seed
    return prov


def _load_test_rows(cfg: PipelineConfig) -> np.ndarray:
    if cfg.test_shards:
        paths = _expand_paths(cfg.test_shards)
        return ingest_shards(paths, cfg.encoder).load_all()
    if cfg.tests is None:
        raise ConfigError("config needs `tests` (JSONL) or `test_shards`")
    items = load_test_items(cfg.tests)
    if not items:
        raise InvalidArgumentError(f"{cfg.tests}: test set is empty")
    return encode_rows([t.text for t in items], cfg.encoder)


def _expand_paths(patterns) -> list[str]:
    paths: list[str] = []
    for pattern in patterns:
        matched = sorted(glob.glob(pattern))
        paths.extend(matched if matched else [pattern])
    return paths


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_embed(cfg: PipelineConfig) -> int:
    if cfg.pool is None:
        raise ConfigError("config needs `pool` (JSONL records) for the embed stage")
    if cfg.encoder.mode != "synthetic":
        raise ConfigError("embed runs the synthetic encoder; for real encoders use `crds ingest`")
    items = load_pool_items(cfg.pool)
    workdir = _workdir(cfg)
    shard_dir = workdir / "shards"
    shard_dir.mkdir(exist_ok=True)
    n = cfg.shards
    names = []
    for i, indices in enumerate(interleaved_split(len(items), n)):
        rows = encode_rows([items[j].text for j in indices], cfg.encoder)
        name = _shard_name(i, n)
        storage.write_shard(shard_dir / name, rows, shard_index=i, num_shards=n,
                            layer_count=cfg.encoder.num_layers)
        names.append(f"shards/{name}")
    _write_shardset(workdir, names, cfg, source="synthetic")
    print(f"embedded {len(items)} items into {n} shards "
          f"(dim {cfg.encoder.dim}) under {shard_dir}")
    return 0


def cmd_ingest(cfg: PipelineConfig, extra_paths) -> int:
    patterns = list(extra_paths or []) or list(cfg.pool_shards or [])
    if not patterns:
        raise ConfigError("ingest needs shard paths (config `pool_shards` or arguments)")
    paths = _expand_paths(patterns)
    shards = ingest_shards(paths, cfg.encoder)
    workdir = _workdir(cfg)
    _write_shardset(workdir, [str(Path(p).resolve()) for p in shards.paths], cfg, source="ingest")
    print(f"ingested {shards.num_shards} shards covering {shards.total_count} items "
          f"(dim {shards.dim}, layers {shards.layer_count})")
    return 0


def cmd_fit_whiten(cfg: PipelineConfig) -> int:
    if cfg.method != "crds_w":
        raise ConfigError(f"fit-whiten applies to method crds_w (configured: {cfg.method})")
    shards = _load_shardset(cfg)
    sample = fit_sample_draw(shards, cfg.whitening.fit_size, cfg.whitening.seed)
    last = sample[:, (shards.layer_count - 1) * shards.v:]
    transformer = whitening_fit(last, cfg.whitening.beta, cfg.whitening.eigen_floor)
    storage.write_transformer(_transformer_path(cfg), transformer)
    print(f"fit whitening transformer on {transformer.fit_count} rows "
          f"(v={transformer.v}, beta={transformer.beta}) -> {_transformer_path(cfg)}")
    return 0


def cmd_similarity(cfg: PipelineConfig) -> int:
    shards = _load_shardset(cfg)
    tests = _load_test_rows(cfg)
    method = _method_config(cfg)
    plan = WorkerPlan(n_workers=shards.num_shards, pool_size=shards.total_count,
                      block_size=cfg.block_size)
    out = _similarity_path(cfg)
    result = compute_similarity(shards, tests, method, plan,
                                exec_workers=cfg.workers, out_path=out,
                                provenance=_base_provenance(cfg))
    print(f"similarity {result.rows} x {result.cols} ({cfg.method}) -> {out}")
    return 0


def cmd_select(cfg: PipelineConfig) -> int:
    if cfg.selection.k is None:
        raise ConfigError("config needs `selection.k` (the budget) for the select stage")
    k = cfg.selection.k
    selector = cfg.selection.selector
    if selector == "round_robin":
        path = _similarity_path(cfg)
        if not path.exists():
            raise StageInputError(
                f"{path}: similarity matrix not found; run `crds similarity` first"
            )
        result = round_robin_select(load_similarity(path), k)
        result.seeds.update({"encoder": cfg.encoder.seed})
    elif selector == "random":
        result = random_select(_pool_size(cfg), k, cfg.selection.seed)
    else:
        if cfg.pool is None:
            raise ConfigError("length selection needs `pool` (JSONL) for response lengths")
        result = length_select(load_pool_items(cfg.pool), k)
    out = Path(cfg.workdir) / SELECTION_FILE
    _workdir(cfg)
    write_selection(out, result)
    print(f"selected {result.k} of {result.pool_size} items ({result.method}) -> {out}")
    return 0


def _pool_size(cfg: PipelineConfig) -> int:
    descriptor = Path(cfg.workdir) / SHARDSET_FILE
    if descriptor.exists():
        return _load_shardset(cfg).total_count
    if cfg.pool is not None:
        return len(load_pool_items(cfg.pool))
    raise StageInputError(
        "pool size unknown: run `crds embed`/`crds ingest`, or set `pool` in the config"
    )


def cmd_overlap(path_a, path_b, out) -> int:
    report = selection_overlap(read_selection(path_a), read_selection(path_b))
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    print(text)
    if out:
        Path(out).write_text(text + "\n")
    return 0


def cmd_pipeline(cfg: PipelineConfig) -> int:
    cmd_embed(cfg)
    if cfg.method == "crds_w":
        cmd_fit_whiten(cfg)
    cmd_similarity(cfg)
    cmd_select(cfg)
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--config", "-c", help="YAML or JSON config file")
    sub.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE",
                     help="override a config value (dotted path, YAML scalar)")
    sub.add_argument("--workers", type=int, help="execution concurrency "
                     "(never changes output bytes)")
    sub.add_argument("--workdir", help="artifact directory (default: $CRDS_WORKDIR)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crds",
                     description="Representation-similarity data selection pipeline")
    commands = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [
        ("embed", "synthetic-encode the pool into embedding shards"),
        ("ingest", "validate and register externally produced shards"),
        ("fit-whiten", "fit and persist the whitening transformer"),
        ("similarity", "compute the full pool-vs-test score matrix"),
        ("select", "select k items from scores, lengths, or at random"),
        ("pipeline", "run every stage for the configured method"),
    ]:
        sub = commands.add_parser(name, help=help_text)
        _add_common(sub)
        if name == "ingest":
            sub.add_argument("shard_paths", nargs="*", help="shard files or globs")

    overlap = commands.add_parser("overlap", help="compare two selection files")
    overlap.add_argument("selection_a")
    overlap.add_argument("selection_b")
    overlap.add_argument("--out", help="also write the JSON report here")
    return parser


def _config_from_args(args) -> PipelineConfig:
    overrides = list(args.overrides or [])
    if args.workdir:
        overrides.append(f"workdir={args.workdir}")
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "overlap":
            return cmd_overlap(args.selection_a, args.selection_b, args.out)
        cfg = _config_from_args(args)
        if args.command == "embed":
            return cmd_embed(cfg)
        if args.command == "ingest":
            return cmd_ingest(cfg, args.shard_paths)
        if args.command == "fit-whiten":
            return cmd_fit_whiten(cfg)
        if args.command == "similarity":
            return cmd_similarity(cfg)
        if args.command == "select":
            return cmd_select(cfg)
        if args.command == "pipeline":
            return cmd_pipeline(cfg)
        raise _UsageError(f"unknown command {args.command!r}")
    except (ConfigError, InvalidArgumentError, StateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (FormatError, StageInputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CRDSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Pipeline configuration: one structured key-value file plus CLI overrides.

Defaults mirror the reference setting: truncation length 2048, 18 hidden
layers, whitening target dimension 512 (512 and 1024 are the recommended
sweep), fit sample of 500,000 rows drawn across 8 shard workers. ``shards``
fixes the logical worker layout that artifacts are keyed to; ``workers`` only
bounds execution concurrency and never changes output bytes.

Method-specific sections are mutually exclusive with other methods: setting
whitening keys with method crds_r (or projection keys with crds_w) is a
configuration error rather than something to silently ignore.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .engine import METHODS
from .errors import ConfigError
from .provider import EncoderConfig

SELECTORS = ("round_robin", "random", "length")

_PROJECTION_KEYS = {"w", "seed", "entry_mode"}
_WHITENING_KEYS = {"beta", "fit_size", "seed", "eigen_floor"}


@dataclass(frozen=True)
class ProjectionSettings:
    w: int | None = None  # None -> floor(v / num_layers)
    seed: int = 0
    entry_mode: str = "uniform"


@dataclass(frozen=True)
class WhiteningSettings:
    beta: int = 512
    fit_size: int = 500_000
    seed: int = 0
    eigen_floor: float = 1e-10


@dataclass(frozen=True)
class SelectionSettings:
    k: int | None = None
    selector: str = "round_robin"
    seed: int = 0


@dataclass(frozen=True)
class PipelineConfig:
    workdir: str
    pool: str | None = None
    tests: str | None = None
    pool_shards: tuple[str, ...] | None = None
    test_shards: tuple[str, ...] | None = None
    method: str = "plain"
    normalize: bool = True
    shards: int = 8
    workers: int = 8
    block_size: int = 8192
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    projection: ProjectionSettings = field(default_factory=ProjectionSettings)
    whitening: WhiteningSettings = field(default_factory=WhiteningSettings)
    selection: SelectionSettings = field(default_factory=SelectionSettings)


def default_workdir() -> str:
    return os.environ.get("CRDS_WORKDIR", "./crds_artifacts")


def _as_mapping(raw, name: str) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return dict(raw)


def _reject_unknown(section: dict, allowed: set, name: str):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")


def parse_config(raw: dict | None) -> PipelineConfig:
    """Build a validated PipelineConfig from a raw mapping."""
    raw = _as_mapping(raw, "config")
    _reject_unknown(raw, {
        "workdir", "pool", "tests", "pool_shards", "test_shards", "method",
        "normalize", "shards", "workers", "block_size", "encoder",
        "projection", "whitening", "selection",
    }, "config")

    method = raw.get("method", "plain")
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")

    proj_raw = _as_mapping(raw.get("projection"), "projection")
    whit_raw = _as_mapping(raw.get("whitening"), "whitening")
    _reject_unknown(proj_raw, _PROJECTION_KEYS, "projection")
    _reject_unknown(whit_raw, _WHITENING_KEYS, "whitening")
    if proj_raw and method != "crds_r":
        raise ConfigError(
            f"projection settings {sorted(proj_raw)} are exclusive to method crds_r "
            f"(configured method: {method})"
        )
    if whit_raw and method != "crds_w":
        raise ConfigError(
            f"whitening settings {sorted(whit_raw)} are exclusive to method crds_w "
            f"(configured method: {method})"
        )

    enc_raw = _as_mapping(raw.get("encoder"), "encoder")
    _reject_unknown(enc_raw, {"mode", "v", "num_layers", "layer_ids",
                              "truncation_length", "seed"}, "encoder")
    if "layer_ids" in enc_raw and enc_raw["layer_ids"] is not None:
        enc_raw["layer_ids"] = tuple(int(i) for i in enc_raw["layer_ids"])
    try:
        encoder = EncoderConfig(**enc_raw)
    except Exception as exc:
        raise ConfigError(f"invalid encoder section: {exc}") from exc

    sel_raw = _as_mapping(raw.get("selection"), "selection")
    _reject_unknown(sel_raw, {"k", "selector", "seed"}, "selection")
    selection = SelectionSettings(**sel_raw)
    if selection.selector not in SELECTORS:
        raise ConfigError(f"unknown selector {selection.selector!r}; choose from {SELECTORS}")

    shards = int(raw.get("shards", 8))
    workers = int(raw.get("workers", 8))
    block_size = int(raw.get("block_size", 8192))
    if shards < 1 or workers < 1 or block_size < 1:
        raise ConfigError("shards, workers, and block_size must all be >= 1")

    def _paths(key):
        value = raw.get(key)
        if value is None:
            return None
        if isinstance(value, str):
            return (value,)
        return tuple(str(p) for p in value)

    return PipelineConfig(
        workdir=str(raw.get("workdir", default_workdir())),
        pool=raw.get("pool"),
        tests=raw.get("tests"),
        pool_shards=_paths("pool_shards"),
        test_shards=_paths("test_shards"),
        method=method,
        normalize=bool(raw.get("normalize", True)),
        shards=shards,
        workers=workers,
        block_size=block_size,
        encoder=encoder,
        projection=ProjectionSettings(**proj_raw),
        whitening=WhiteningSettings(**whit_raw),
        selection=selection,
    )


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply dotted-path key=value overrides; values parse as YAML scalars."""
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, _, value = item.partition("=")
        keys = [k for k in dotted.strip().split(".") if k]
        if not keys:
            raise ConfigError(f"override {item!r} has an empty key path")
        node = raw
        for key in keys[:-1]:
            nxt = node.get(key)
            if nxt is None:
                nxt = node[key] = {}
            elif not isinstance(nxt, dict):
                raise ConfigError(f"override {item!r} descends into non-mapping key {key!r}")
            node = nxt
        node[keys[-1]] = yaml.safe_load(value)
    return raw


def load_config(path=None, overrides=None) -> PipelineConfig:
    """Load YAML (or JSON) config from disk, apply overrides, validate."""
    raw: dict = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        try:
            if str(path).endswith(".json"):
                loaded = json.loads(text)
            else:
                loaded = yaml.safe_load(text)
        except Exception as exc:
            raise ConfigError(f"{path}: cannot parse config: {exc}") from exc
        raw = _as_mapping(loaded, "config")
    raw = apply_overrides(raw, overrides)
    return parse_config(raw)

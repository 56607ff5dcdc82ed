"""Acceptance criterion 10: bridge conformance against a small checkpoint."""

import json
import warnings

from crds.provider import EncoderConfig, ingest_shards
from crds.storage import read_shard

from crds_bridge import export_shards, extract_hidden_states, parse_layer_spec
from conftest import HIDDEN_SIZE, NUM_LAYERS


def test_bridge_conformance(tiny_encoder, tmp_path):
    try:
        texts = [f"pool item {i} with some words" for i in range(13)]
        layer_ids = parse_layer_spec("last:2", NUM_LAYERS)
        truncation = 24
        stacks = extract_hidden_states(tiny_encoder, texts, layer_ids,
                                       truncation_length=truncation)
        paths = export_shards(stacks, 4, tmp_path / "shards", manifest_extra={
            "model": tiny_encoder.model_id,
            "pooling": "last",
            "truncation_length": truncation,
        })

        # produced files pass the engine's ingest validation, no warnings
        expected = EncoderConfig(mode="ingest", v=HIDDEN_SIZE, num_layers=len(layer_ids))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            shards = ingest_shards(paths, expected)
        assert shards.total_count == 13

        # header dims equal the model's hidden size; H echoed in the header
        for path in paths:
            header, _ = read_shard(path)
            assert header.dim == len(layer_ids) * HIDDEN_SIZE
            assert header.dim // header.layer_count == tiny_encoder.hidden_size
            assert header.layer_count == len(layer_ids)

        # truncation and H echoed in the export manifest
        manifest = json.loads((tmp_path / "shards" / "export.json").read_text())
        assert manifest["truncation_length"] == truncation
        assert manifest["num_layers"] == len(layer_ids)
        assert manifest["hidden_size"] == tiny_encoder.hidden_size
    except BaseException:
        print("FAIL criterion 10: bridge shards conform to the engine's ingest contract")
        raise
    print("PASS criterion 10: bridge shards conform to the engine's ingest contract")

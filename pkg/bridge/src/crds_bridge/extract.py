"""Hidden-state extraction from a causal-LM checkpoint into layer stacks.

Layer indexing convention: layer id L in [0, num_hidden_layers) names the
output of transformer block L (the model's embedding output is not
addressable), so "the last 18 layers of a 36-layer model" is ids 18..35.

Per requested layer the per-item embedding is either the hidden state at the
final non-padding token (default) or the mean over non-padding positions
("mean" pooling). Inference runs in deterministic evaluation mode and the
output is float32 regardless of compute precision. Texts that tokenize to
nothing are encoded as a single end-of-sequence (or pad) token, the closest
thing to an empty prompt the tokenizer offers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from transformers import AutoModelForCausalLM, AutoTokenizer

from crds.provider import LayerStack, interleaved_split
from crds.storage import write_shard

POOLING_MODES = ("last", "mean")

MANIFEST_NAME = "export.json"


@dataclass
class LoadedEncoder:
    model_id: str
    tokenizer: object
    model: object

    @property
    def num_layers(self) -> int:
        return self.model.config.num_hidden_layers

    @property
    def hidden_size(self) -> int:
        return self.model.config.hidden_size


def load_encoder(model_id: str, device: str = "cpu") -> LoadedEncoder:
    tokenizer = AutoTokenizer.from_pretrained(model_id)
    model = AutoModelForCausalLM.from_pretrained(model_id, dtype=torch.float32)
    model.to(device)
    model.eval()
    if tokenizer.pad_token_id is None:
        # batching needs a pad token; eos is the usual stand-in
        tokenizer.pad_token = tokenizer.eos_token
    return LoadedEncoder(model_id=model_id, tokenizer=tokenizer, model=model)


def parse_layer_spec(spec: str, num_layers: int) -> tuple[int, ...]:
    """Parse a --layers value: "last", "last:K", "all", or comma-separated ids."""
    spec = spec.strip()
    if spec == "last":
        return (num_layers - 1,)
    if spec == "all":
        return tuple(range(num_layers))
    if spec.startswith("last:"):
        k = int(spec.split(":", 1)[1])
        if not (1 <= k <= num_layers):
            raise ValueError(f"last:{k} out of range for a {num_layers}-layer model")
        return tuple(range(num_layers - k, num_layers))
    ids = tuple(int(part) for part in spec.split(","))
    if any(b <= a for a, b in zip(ids, ids[1:])):
        raise ValueError(f"layer ids must be strictly increasing, got {ids}")
    return ids


def _validate_layer_ids(layer_ids, num_layers: int):
    for layer_id in layer_ids:
        if not (0 <= layer_id < num_layers):
            raise ValueError(
                f"layer id {layer_id} invalid for a model with {num_layers} hidden layers"
            )


def extract_hidden_states(model_id, texts, layer_ids, truncation_length: int = 2048,
                          pooling: str = "last", batch_size: int = 8,
                          device: str = "cpu") -> list[LayerStack]:
    """Encode texts and return one LayerStack per text, in input order.

    ``model_id`` may be a hub id, a local checkpoint path, or an already
    constructed LoadedEncoder.
    """
    if pooling not in POOLING_MODES:
        raise ValueError(f"unknown pooling mode {pooling!r}; choose from {POOLING_MODES}")
    if truncation_length < 1:
        raise ValueError("truncation_length must be >= 1")
    encoder = model_id if isinstance(model_id, LoadedEncoder) else load_encoder(model_id, device)
    layer_ids = tuple(int(i) for i in layer_ids)
    _validate_layer_ids(layer_ids, encoder.num_layers)

    tokenizer, model = encoder.tokenizer, encoder.model
    filler_id = tokenizer.eos_token_id
    if filler_id is None:
        filler_id = tokenizer.pad_token_id

    stacks: list[LayerStack] = []
    for batch_start in range(0, len(texts), batch_size):
        batch = list(texts[batch_start:batch_start + batch_size])
        enc = tokenizer(batch, return_tensors="pt", padding=True,
                        truncation=True, max_length=truncation_length)
        input_ids = enc["input_ids"].to(model.device)
        mask = enc["attention_mask"].to(model.device)
        if input_ids.shape[1] == 0:  # every text in the batch was empty
            input_ids = torch.full((len(batch), 1), filler_id,
                                   dtype=torch.long, device=model.device)
            mask = torch.ones_like(input_ids)
        empty = mask.sum(dim=1) == 0
        if empty.any():
            input_ids[empty, 0] = filler_id
            mask[empty, 0] = 1

        with torch.inference_mode():
            out = model(input_ids=input_ids, attention_mask=mask, output_hidden_states=True)

        lengths = mask.sum(dim=1)
        last_pos = (lengths - 1).clamp(min=0)
        rows_idx = torch.arange(input_ids.shape[0], device=model.device)
        per_layer = []
        for layer_id in layer_ids:
            hidden = out.hidden_states[layer_id + 1]  # +1 skips the embedding output
            if pooling == "last":
                vecs = hidden[rows_idx, last_pos]
            else:
                weights = mask.unsqueeze(-1).to(hidden.dtype)
                vecs = (hidden * weights).sum(dim=1) / lengths.unsqueeze(-1).to(hidden.dtype)
            per_layer.append(vecs.to(torch.float32).cpu().numpy())

        for i in range(input_ids.shape[0]):
            layers = np.stack([layer[i] for layer in per_layer])
            stacks.append(LayerStack(item_index=batch_start + i, layers=layers,
                                     layer_ids=layer_ids))
    return stacks


def export_shards(stacks, n_shards: int, out_dir, *, prefix: str = "pool",
                  manifest_extra: dict | None = None) -> list[str]:
    """Write layer stacks as interleaved shard files in the engine's format.

    The assignment is exactly interleaved_split (shard i owns stack positions
    i, i+n, ...), so the files validate under the engine's ingest path.
    """
    stacks = list(stacks)
    if not stacks:
        raise ValueError("no layer stacks to export")
    num_layers = stacks[0].num_layers
    v = stacks[0].v
    layer_ids = stacks[0].layer_ids
    for s in stacks:
        if s.num_layers != num_layers or s.v != v or s.layer_ids != layer_ids:
            raise ValueError("all layer stacks must share the same geometry")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, indices in enumerate(interleaved_split(len(stacks), n_shards)):
        rows = np.stack([stacks[j].as_row() for j in indices]) if len(indices) else (
            np.empty((0, num_layers * v), np.float32))
        path = out_dir / f"{prefix}_{i:04d}_of_{n_shards:04d}.crds"
        write_shard(path, rows, shard_index=i, num_shards=n_shards, layer_count=num_layers)
        paths.append(str(path))

    manifest = {
        "count": len(stacks),
        "num_shards": n_shards,
        "hidden_size": v,
        "num_layers": num_layers,
        "layer_ids": list(layer_ids),
        "files": [Path(p).name for p in paths],
    }
    manifest.update(manifest_extra or {})
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return paths

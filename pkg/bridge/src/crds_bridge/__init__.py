"""Bridge from real causal-LM checkpoints to engine-ready embedding shards."""

from .extract import (
    LoadedEncoder,
    export_shards,
    extract_hidden_states,
    load_encoder,
    parse_layer_spec,
)

__version__ = "0.1.0"

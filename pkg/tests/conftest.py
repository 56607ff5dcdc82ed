import numpy as np
import pytest

from crds import EncoderConfig
from crds.provider import ingest_shards, interleaved_split
from crds.storage import write_shard


@pytest.fixture
def small_config():
    return EncoderConfig(v=32, num_layers=2, seed=7)


@pytest.fixture
def make_shards(tmp_path):
    """Write an in-memory row matrix as an n-way interleaved shard set."""

    def build(rows: np.ndarray, n: int, config: EncoderConfig, name: str = "pool"):
        paths = []
        for i, idx in enumerate(interleaved_split(rows.shape[0], n)):
            path = tmp_path / f"{name}_{i:02d}_of_{n:02d}.crds"
            write_shard(path, rows[idx], shard_index=i, num_shards=n,
                        layer_count=config.num_layers)
            paths.append(str(path))
        return ingest_shards(paths, config)

    return build

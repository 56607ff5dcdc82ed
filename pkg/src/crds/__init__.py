"""Sharded representation-similarity data selection.

Ranks a large candidate pool by cosine similarity to a small test set using
compressed embedding representations (per-layer random projection with
concatenation, or a truncated whitening transform), computed under a
deterministic worker-sharded pattern and selected with round-robin greedy
retrieval.
"""

from .compression import (
    ProjectionBank,
    average_pool,
    binarize,
    crds_r_compose,
    default_projection_dim,
    make_projection_bank,
    project,
)
from .engine import (
    MethodConfig,
    SimilarityMatrix,
    WorkerPlan,
    compute_similarity,
    l2_normalize,
    load_similarity,
    rearrange_rows,
    similarity_block,
)
from .errors import (
    ConfigError,
    CoverageError,
    CRDSError,
    FormatError,
    InvalidArgumentError,
    LengthError,
    NumericError,
    StageInputError,
    StateError,
    VersionError,
)
from .provider import (
    EncoderConfig,
    LayerStack,
    PoolItem,
    ShardSet,
    TestItem,
    ingest_shards,
    interleaved_split,
    synthetic_encode,
)
from .selection import (
    OverlapReport,
    SelectionEntry,
    SelectionResult,
    length_select,
    random_select,
    read_selection,
    round_robin_select,
    selection_overlap,
    write_selection,
)
from .whitening import (
    WhiteningTransformer,
    fit_sample_draw,
    whitening_apply,
    whitening_fit,
    worker_fit_quota,
)

__version__ = "0.1.0"

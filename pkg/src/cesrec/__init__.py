"""Conversation-enhanced sequential recommendation.

A self-attention recommender whose input sequence is refined per feedback
round: outlier items are masked via semantic-collaborative alignment, and
disliked items are rewritten into a pseudo-interaction sequence that folds
real-time preferences into the history.
"""

from .catalog import (
    Catalog,
    CandidateSet,
    InteractionSequence,
    Item,
    SplitTriple,
    leave_one_out_split,
    load_amazon,
    load_movielens,
    sample_candidates,
)
from .alignment import (
    AdapterHyper,
    AdapterParams,
    MaskingReport,
    apply_adapter,
    build_hybrid_table,
    detect_and_mask,
    fuse_user,
    similarity,
    train_adapter,
)
from .constructor import (
    ConstructorBackend,
    PseudoSequence,
    RemoteChatBackend,
    RuleBasedBackend,
    TuningRecord,
    construct_pseudo,
    generate_tuning_data,
    parse_llm_sequence,
    rule_based_construct,
)
from .evaluation import (
    LoopConfig,
    MetricReport,
    PipelineComponents,
    SessionTrace,
    hr_at_k,
    make_preference_shift_dataset,
    ndcg_at_k,
    run_cesrec_loop,
    run_experiment,
    run_sweeps,
    run_table,
)
from .feedback import Feedback, check_acceptance, parse_feedback_text, simulate_feedback
from .semantic import (
    EmbeddingProvider,
    EmbeddingTable,
    MockAttributeProvider,
    MockHashProvider,
    RemoteEmbeddingProvider,
    embed_catalog,
    extract_semantic,
)
from .srs import (
    RankedResult,
    SRSConfig,
    SRSModel,
    export_collaborative_embeddings,
    rank_items,
    score_candidates,
    train_srs,
)

__version__ = "0.1.0"

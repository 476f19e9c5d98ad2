"""simtrainer: a training simulator for newly hired customer-service agents.

Mines intent scenes and exemplar scripts from raw conversation logs, runs
interactive practice sessions where a bot plays the customer, and scores each
session on fluency, consistency, and compliance.
"""

__version__ = "0.1.0"

from .corpus import (
    CorpusStats,
    Dialogue,
    DialogueScript,
    Role,
    Turn,
    corpus_stats,
    ingest_log,
    validate_script,
)
from .intentcluster import ClusterParams, HdbscanClusterer, Scene, hdbscan, select_representatives
from .respond import (
    CandidateResponse,
    CandidateSource,
    NGramLM,
    ResponseRanker,
    bleu2,
    generate_candidates,
    rank_candidates,
    retrieve_candidates,
    train_ngram,
)
from .scorecard import (
    ComplianceRule,
    SessionScore,
    TrainingMetrics,
    aggregate_metrics,
    build_feedback,
    compliance_score,
    consistency_score,
    final_score,
    fluency_score,
    pearson,
    score_session,
)
from .simcore import (
    BotTurnResult,
    CloseReason,
    SessionPhase,
    SessionRecord,
    SessionState,
    SimPolicy,
    SimulatorEngine,
)
from .textenc import (
    EmbeddingMatrix,
    HybridMatcher,
    SgnsConfig,
    SgnsEmbedder,
    Vocabulary,
    build_vocab,
    cosine,
    embed_text,
    tokenize,
    train_sgns,
)
from .vindex import ContextPayload, IndexEntry, VectorIndex, make_entries

__all__ = [
    "__version__",
    "BotTurnResult",
    "CandidateResponse",
    "CandidateSource",
    "CloseReason",
    "ClusterParams",
    "ComplianceRule",
    "ContextPayload",
    "CorpusStats",
    "Dialogue",
    "DialogueScript",
    "EmbeddingMatrix",
    "HdbscanClusterer",
    "HybridMatcher",
    "IndexEntry",
    "NGramLM",
    "ResponseRanker",
    "Role",
    "Scene",
    "SessionPhase",
    "SessionRecord",
    "SessionScore",
    "SessionState",
    "SgnsConfig",
    "SgnsEmbedder",
    "SimPolicy",
    "SimulatorEngine",
    "TrainingMetrics",
    "Turn",
    "VectorIndex",
    "Vocabulary",
    "aggregate_metrics",
    "bleu2",
    "build_feedback",
    "build_vocab",
    "compliance_score",
    "consistency_score",
    "corpus_stats",
    "cosine",
    "embed_text",
    "final_score",
    "fluency_score",
    "generate_candidates",
    "hdbscan",
    "ingest_log",
    "make_entries",
    "pearson",
    "rank_candidates",
    "retrieve_candidates",
    "score_session",
    "select_representatives",
    "tokenize",
    "train_ngram",
    "train_sgns",
    "validate_script",
]

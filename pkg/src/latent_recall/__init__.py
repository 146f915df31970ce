"""Toolkit for measuring stored versus expressed knowledge in language models.

Probes the top-k token candidates a model considers while answering,
scores how often a correct answer is present even when the final output is
wrong or evasive (Hits@k), and recovers latent answers by filtering
uninformative candidates and re-prompting with the best survivor.
"""

from .backends import (
    BackendError,
    CapabilityError,
    GapModelSpec,
    HttpBackend,
    LMBackend,
    MockBackend,
    ScriptedReply,
    WireSchemaError,
    load_gap_spec,
    read_logit_dump,
    write_logit_dump,
)
from .dataset import (
    DatasetError,
    load_dataset,
    partition_by_popularity,
    write_dataset,
)
from .filtering import (
    FilterVerdict,
    classify_response,
    has_consecutive_repetition,
    is_uninformative_token,
)
from .matching import (
    MatchResult,
    answer_correct,
    longest_common_substring_len,
    token_matches,
)
from .metrics import (
    BucketMetrics,
    MetricsReport,
    aggregate,
    classify_answer,
    compute_hits_at_k,
    compute_rank_cdf,
    hit_rank,
    score_record,
)
from .mockserver import MockCompletionServer, serve_until_signal
from .recall import (
    BatchRecallResult,
    RecallTrace,
    batch_recall,
    recall_decode,
    select_recovery_token,
)
from .stopwords import default_stopwords, load_stopword_file
from .types import (
    AnswerDistribution,
    EvalOutcome,
    MetricConfig,
    QARecord,
    TokenCandidate,
    normalize_text,
    rank_candidates,
)

__version__ = "0.1.0"

__all__ = [
    "AnswerDistribution",
    "BackendError",
    "BatchRecallResult",
    "BucketMetrics",
    "CapabilityError",
    "DatasetError",
    "EvalOutcome",
    "FilterVerdict",
    "GapModelSpec",
    "HttpBackend",
    "LMBackend",
    "MatchResult",
    "MetricConfig",
    "MetricsReport",
    "MockBackend",
    "MockCompletionServer",
    "QARecord",
    "RecallTrace",
    "ScriptedReply",
    "TokenCandidate",
    "WireSchemaError",
    "aggregate",
    "answer_correct",
    "batch_recall",
    "classify_answer",
    "classify_response",
    "compute_hits_at_k",
    "compute_rank_cdf",
    "default_stopwords",
    "has_consecutive_repetition",
    "hit_rank",
    "is_uninformative_token",
    "load_dataset",
    "load_gap_spec",
    "load_stopword_file",
    "longest_common_substring_len",
    "normalize_text",
    "partition_by_popularity",
    "rank_candidates",
    "read_logit_dump",
    "recall_decode",
    "score_record",
    "select_recovery_token",
    "serve_until_signal",
    "token_matches",
    "write_dataset",
    "write_logit_dump",
    "__version__",
]

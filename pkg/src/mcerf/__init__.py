"""Multi-vector document retrieval and reasoning for engineering QA.

Pages are stored as per-patch embedding matrices and ranked by late
interaction (sum over query rows of the max inner product across page
rows), with a BM25 lexical channel and rank fusion on top. Five reasoning
pipeline variants consume the retrieved pages; two routers pick a variant
per task or per question; the harness scores answers with task-specific
F1/accuracy metrics and writes deterministic reports.
"""

from .backends import (
    BackendConfig,
    BackendSet,
    ChatBackend,
    ChatOcr,
    ChatRequest,
    ChatResponse,
    Effort,
    ImagePart,
    OfflineChatBackend,
    OfflineEmbeddingStore,
    OpenAICompatibleBackend,
    ScriptedChatBackend,
    ScriptedEmbedder,
    ScriptedOcr,
    TextPart,
)
from .corpus import (
    BundlePage,
    Corpus,
    CorpusMeta,
    EmbeddingBundle,
    PageRecord,
    ingest_embeddings,
    load_corpus,
    normalize_rows,
    save_corpus,
)
from .errors import McerfError
from .harness import (
    MetricReport,
    import_dataset,
    load_dataset,
    render_table,
    run_benchmark,
)
from .keywords import (
    Bm25Index,
    KeywordSet,
    KeywordSource,
    bm25_rank,
    build_bm25,
    extract_keywords,
    heuristic_keywords,
    hybrid_merge,
    tokenize,
)
from .metrics import (
    bleu2,
    f1_boc,
    f1_bow,
    f1_rules,
    extract_rule_ids,
    parse_yesno,
    rouge_l,
    score_example,
    yesno_accuracy,
)
from .pipelines import (
    Citation,
    PipelineOutput,
    PipelineSettings,
    QueryTask,
    Task,
    TraceEvent,
    Variant,
    run_variant,
)
from .retrieval import (
    QueryEmbedding,
    RetrievalHit,
    maxsim_score,
    prefilter_rank,
    rank_pages,
    summarize_page,
)
from .routing import (
    RouteDecision,
    RouteMode,
    SupervisorState,
    route_question_r2,
    route_task_r1,
)
from .vision import (
    ImageDescription,
    ImageRef,
    QuadrantSpec,
    describe_image,
    split_quadrants,
    upscale_spec,
)

__version__ = "0.1.0"

__all__ = [
    "BackendConfig",
    "BackendSet",
    "Bm25Index",
    "BundlePage",
    "ChatBackend",
    "ChatOcr",
    "ChatRequest",
    "ChatResponse",
    "Citation",
    "Corpus",
    "CorpusMeta",
    "Effort",
    "EmbeddingBundle",
    "ImageDescription",
    "ImagePart",
    "ImageRef",
    "KeywordSet",
    "KeywordSource",
    "McerfError",
    "MetricReport",
    "OfflineChatBackend",
    "OfflineEmbeddingStore",
    "OpenAICompatibleBackend",
    "PageRecord",
    "PipelineOutput",
    "PipelineSettings",
    "QuadrantSpec",
    "QueryEmbedding",
    "QueryTask",
    "RetrievalHit",
    "RouteDecision",
    "RouteMode",
    "ScriptedChatBackend",
    "ScriptedEmbedder",
    "ScriptedOcr",
    "SupervisorState",
    "Task",
    "TextPart",
    "TraceEvent",
    "Variant",
    "bleu2",
    "bm25_rank",
    "build_bm25",
    "describe_image",
    "extract_keywords",
    "extract_rule_ids",
    "f1_boc",
    "f1_bow",
    "f1_rules",
    "heuristic_keywords",
    "hybrid_merge",
    "import_dataset",
    "ingest_embeddings",
    "load_corpus",
    "load_dataset",
    "maxsim_score",
    "normalize_rows",
    "parse_yesno",
    "prefilter_rank",
    "rank_pages",
    "render_table",
    "rouge_l",
    "route_question_r2",
    "route_task_r1",
    "run_benchmark",
    "run_variant",
    "save_corpus",
    "score_example",
    "split_quadrants",
    "summarize_page",
    "tokenize",
    "upscale_spec",
    "yesno_accuracy",
]

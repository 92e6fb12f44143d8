"""benchcard: generate, validate, and review benchmark documentation cards."""

from .card_model import (
    BenchmarkCard,
    CardSchema,
    FieldValue,
    SectionSpec,
    check_completeness,
    parse_card,
    serialize_card,
)
from .extraction import KnowledgeBase, SourceDocument
from .gateway import ChatRequest, EmbeddingVector, Gateway, GatewayConfig, build_gateway
from .retrieval import ChunkPolicy, HybridIndex, KnowledgeChunk, build_index, chunk_document
from .validation import (
    AtomicStatement,
    AtomScore,
    EntailmentVerdict,
    ValidationConfig,
    ValidationReport,
    aggregate_score,
)

__version__ = "0.1.0"

__all__ = [
    "AtomScore",
    "AtomicStatement",
    "BenchmarkCard",
    "CardSchema",
    "ChatRequest",
    "ChunkPolicy",
    "EmbeddingVector",
    "EntailmentVerdict",
    "FieldValue",
    "Gateway",
    "GatewayConfig",
    "HybridIndex",
    "KnowledgeBase",
    "KnowledgeChunk",
    "SectionSpec",
    "SourceDocument",
    "ValidationConfig",
    "ValidationReport",
    "aggregate_score",
    "build_gateway",
    "build_index",
    "check_completeness",
    "chunk_document",
    "parse_card",
    "serialize_card",
    "__version__",
]

"""Hybrid evidence retrieval over chunked knowledge-base documents.

Documents split on markdown headings, oversized segments get windowed with
overlap, and the resulting chunks serve two search paths: Okapi BM25 over
punctuation-stripped tokens and exhaustive cosine over unit embeddings.
Rankings merge by reciprocal rank fusion, then an LLM grades the top
candidates for relevance.

The index is immutable once built and persists as chunks.json, terms.json,
and embeddings.f32 (row-major little-endian float32).
"""

from __future__ import annotations

import json
import math
import re
import string
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyIndex
from .extraction import SourceDocument
from .gateway import ChatRequest, EmbeddingVector, Gateway, block, task_tag

BM25_K1 = 1.2
BM25_B = 0.75
DEFAULT_RRF_K = 60
DEFAULT_GRADE_TOP_M = 8

_HEADING_RE = re.compile(r"^(#{1,6})\s+(.*)$")
_TOKEN_RE = re.compile(r"\S+")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)

_GRADE_SYSTEM = (
    "You grade retrieved evidence chunks for relevance to a statement. "
    "Mark a chunk relevant only if it supports, contradicts, or directly "
    "concerns the statement. Reply with JSON only."
)


@dataclass(frozen=True)
class ChunkPolicy:
    max_chunk_tokens: int = 512
    overlap_tokens: int = 64

    def __post_init__(self) -> None:
        if not self.max_chunk_tokens > self.overlap_tokens >= 0:
            raise ValueError("require max_chunk_tokens > overlap_tokens >= 0")


@dataclass(frozen=True)
class KnowledgeChunk:
    chunk_id: str
    source_id: str
    heading_path: tuple[str, ...]
    text: str
    token_count: int
    embedding: EmbeddingVector | None = None


@dataclass(frozen=True)
class EvidenceGrade:
    relevant: bool
    rank: int
    note: str = ""


@dataclass(frozen=True)
class EvidenceCandidate:
    chunk_id: str
    sparse_rank: int | None
    dense_rank: int | None
    fused_score: float
    grade: EvidenceGrade | None = None

    def __post_init__(self) -> None:
        if self.sparse_rank is None and self.dense_rank is None:
            raise ValueError("candidate must appear in at least one ranking")


def sparse_tokens(text: str) -> list[str]:
    """Lowercased, punctuation-stripped whitespace tokens."""
    return [t for t in (tok.translate(_PUNCT_TABLE) for tok in text.lower().split()) if t]


# --- chunking ---------------------------------------------------------------


def _heading_segments(text: str) -> list[tuple[tuple[str, ...], int, int]]:
    """Split into (heading_path, start, end) char ranges; a heading line
    starts a new segment and belongs to it."""
    boundaries: list[tuple[int, int, str]] = []  # (char offset, level, title)
    offset = 0
    for line in text.splitlines(keepends=True):
        m = _HEADING_RE.match(line.rstrip("\n"))
        if m:
            boundaries.append((offset, len(m.group(1)), m.group(2).strip()))
        offset += len(line)

    segments: list[tuple[tuple[str, ...], int, int]] = []
    stack: list[tuple[int, str]] = []  # (level, title)
    prev_start = 0
    prev_path: tuple[str, ...] = ()
    for pos, level, title in boundaries:
        if pos > prev_start:
            segments.append((prev_path, prev_start, pos))
        while stack and stack[-1][0] >= level:
            stack.pop()
        stack.append((level, title))
        prev_start = pos
        prev_path = tuple(t for _, t in stack)
    if len(text) > prev_start:
        segments.append((prev_path, prev_start, len(text)))
    return segments


def chunk_document(doc: SourceDocument, policy: ChunkPolicy = ChunkPolicy()) -> list[KnowledgeChunk]:
    """Heading-aware chunking with overlap windows.

    Within a segment, chunks are sliced on character boundaries aligned to
    token starts so that concatenating the chunk texts with each chunk's
    first overlap_tokens tokens removed reproduces the segment byte for
    byte. No chunk ever crosses a heading boundary.
    """
    text = doc.body_markdown
    stride = policy.max_chunk_tokens - policy.overlap_tokens
    chunks: list[KnowledgeChunk] = []
    ordinal = 0
    for heading_path, seg_start, seg_end in _heading_segments(text):
        segment = text[seg_start:seg_end]
        spans = [m.span() for m in _TOKEN_RE.finditer(segment)]
        n = len(spans)
        if n == 0:
            continue
        a = 0
        first = True
        while a < n:
            b = min(a + policy.max_chunk_tokens, n)
            start_char = 0 if first else spans[a][0]
            end_char = len(segment) if b == n else spans[b][0]
            chunks.append(
                KnowledgeChunk(
                    chunk_id=f"{doc.source_id}#{ordinal}",
                    source_id=doc.source_id,
                    heading_path=heading_path,
                    text=segment[start_char:end_char],
                    token_count=b - a,
                )
            )
            ordinal += 1
            if b == n:
                break
            a += stride
            first = False
    return chunks


def embed_chunks(chunks: Sequence[KnowledgeChunk], gateway: Gateway) -> list[KnowledgeChunk]:
    vectors = gateway.embed([c.text for c in chunks])
    return [replace(c, embedding=v) for c, v in zip(chunks, vectors)]


# --- index -------------------------------------------------------------------


class HybridIndex:
    """Immutable sparse + dense index over a chunk set."""

    def __init__(self, chunks: Sequence[KnowledgeChunk]):
        if not chunks:
            raise EmptyIndex("cannot build an index over zero chunks")
        dims = {c.embedding.dimension for c in chunks if c.embedding is not None}
        if any(c.embedding is None for c in chunks):
            raise DimensionMismatch("every chunk needs an embedding before indexing")
        if len(dims) != 1:
            raise DimensionMismatch(f"mixed embedding dimensions: {sorted(dims)}")

        self.chunks: tuple[KnowledgeChunk, ...] = tuple(chunks)
        self.by_id = {c.chunk_id: c for c in self.chunks}
        self.chunk_terms: dict[str, Counter] = {
            c.chunk_id: Counter(sparse_tokens(c.text)) for c in self.chunks
        }
        self.term_df: Counter = Counter()
        for terms in self.chunk_terms.values():
            self.term_df.update(terms.keys())
        self.chunk_len = {c.chunk_id: c.token_count for c in self.chunks}
        self.avg_chunk_len = sum(self.chunk_len.values()) / len(self.chunks)
        self.dimension = dims.pop()
        self._matrix = np.array([c.embedding.values for c in self.chunks], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.chunks)


def build_index(chunks: Sequence[KnowledgeChunk]) -> HybridIndex:
    return HybridIndex(chunks)


def index_documents(
    docs: Sequence[SourceDocument],
    gateway: Gateway,
    policy: ChunkPolicy = ChunkPolicy(),
) -> HybridIndex:
    chunks: list[KnowledgeChunk] = []
    for doc in docs:
        chunks.extend(chunk_document(doc, policy))
    return build_index(embed_chunks(chunks, gateway))


# --- search -------------------------------------------------------------------


def bm25_idf(n_chunks: int, df: int) -> float:
    """ln(1 + (N - df + 0.5) / (df + 0.5)); non-negative for any df <= N."""
    return math.log(1.0 + (n_chunks - df + 0.5) / (df + 0.5))


def sparse_search(query: str, index: HybridIndex, k: int) -> list[tuple[str, float]]:
    """Okapi BM25 (k1=1.2, b=0.75) over unique query terms.

    Chunk length for the normalization term is the chunk's whitespace token
    count. Zero-scoring chunks are excluded; ties break by chunk_id.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    terms = sorted(set(sparse_tokens(query)))
    n = len(index.chunks)
    scored: list[tuple[str, float]] = []
    for chunk in index.chunks:
        tf_map = index.chunk_terms[chunk.chunk_id]
        length_norm = 1.0 - BM25_B + BM25_B * index.chunk_len[chunk.chunk_id] / index.avg_chunk_len
        score = 0.0
        for term in terms:
            tf = tf_map.get(term, 0)
            if tf == 0:
                continue
            score += bm25_idf(n, index.term_df[term]) * tf / (tf + BM25_K1 * length_norm)
        if score > 0.0:
            scored.append((chunk.chunk_id, score))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


def dense_search(
    query: str, index: HybridIndex, k: int, gateway: Gateway
) -> list[tuple[str, float]]:
    """Cosine similarity of the query embedding against every chunk,
    descending; ties break by chunk_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    qv = np.array(gateway.embed([query])[0].values, dtype=np.float64)
    sims = index._matrix @ qv
    scored = [(c.chunk_id, float(s)) for c, s in zip(index.chunks, sims)]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


def fuse_rrf(
    sparse: Sequence[tuple[str, float]],
    dense: Sequence[tuple[str, float]],
    k_rrf: int = DEFAULT_RRF_K,
) -> list[EvidenceCandidate]:
    """Reciprocal rank fusion: fused(c) = sum over lists of 1/(k + rank)."""
    if k_rrf < 1:
        raise ValueError("k_rrf must be >= 1")
    sparse_rank = {cid: i + 1 for i, (cid, _) in enumerate(sparse)}
    dense_rank = {cid: i + 1 for i, (cid, _) in enumerate(dense)}
    fused = []
    for cid in set(sparse_rank) | set(dense_rank):
        score = 0.0
        if cid in sparse_rank:
            score += 1.0 / (k_rrf + sparse_rank[cid])
        if cid in dense_rank:
            score += 1.0 / (k_rrf + dense_rank[cid])
        fused.append(
            EvidenceCandidate(
                chunk_id=cid,
                sparse_rank=sparse_rank.get(cid),
                dense_rank=dense_rank.get(cid),
                fused_score=score,
            )
        )
    fused.sort(key=lambda c: (-c.fused_score, c.chunk_id))
    return fused


def grade_evidence(
    atom_text: str,
    candidates: Sequence[EvidenceCandidate],
    index: HybridIndex,
    gateway: Gateway,
    top_m: int = DEFAULT_GRADE_TOP_M,
) -> tuple[list[EvidenceCandidate], list[str]]:
    """LLM-grade the top fused candidates; keep only those judged relevant,
    re-ranked by the grader. Grades naming unknown chunk ids are dropped
    with a warning."""
    if not candidates:
        raise ValueError("grade_evidence needs at least one candidate")
    top = list(candidates[: min(len(candidates), top_m)])
    chunk_sections = "\n\n".join(
        f"CHUNK {c.chunk_id}:\n{index.by_id[c.chunk_id].text.strip()}" for c in top
    )
    user = "\n".join(
        [
            task_tag("grade"),
            block("Statement", atom_text),
            "",
            "Candidate evidence chunks:",
            "",
            chunk_sections,
            "",
            'Reply with JSON: {"grades": [{"chunk_id", "relevant", "rank", "note"}]},'
            " rank 1 = most relevant.",
        ]
    )
    raw = gateway.complete(
        ChatRequest(system=_GRADE_SYSTEM, user=user, response_format="json")
    )
    payload = json.loads(raw)
    by_id = {c.chunk_id: c for c in top}
    warnings: list[str] = []
    graded: list[tuple[int, EvidenceCandidate]] = []
    for item in payload.get("grades", []):
        cid = str(item.get("chunk_id", ""))
        if cid not in by_id:
            warnings.append(f"grader referenced unknown chunk_id: {cid}")
            continue
        if not bool(item.get("relevant", False)):
            continue
        rank = int(item.get("rank", len(graded) + 1))
        grade = EvidenceGrade(relevant=True, rank=rank, note=str(item.get("note", "")))
        graded.append((rank, replace(by_id[cid], grade=grade)))
    graded.sort(key=lambda pair: (pair[0], pair[1].chunk_id))
    return [c for _, c in graded], warnings


# --- persistence ----------------------------------------------------------------


def save_index(index: HybridIndex, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    chunk_rows = [
        {
            "chunk_id": c.chunk_id,
            "source_id": c.source_id,
            "heading_path": list(c.heading_path),
            "text": c.text,
            "token_count": c.token_count,
        }
        for c in index.chunks
    ]
    (directory / "chunks.json").write_text(
        json.dumps({"dimension": index.dimension, "chunks": chunk_rows}, ensure_ascii=False),
        encoding="utf-8",
    )
    (directory / "terms.json").write_text(
        json.dumps(
            {
                "avg_chunk_len": index.avg_chunk_len,
                "df": dict(index.term_df),
                "tf": {cid: dict(tc) for cid, tc in index.chunk_terms.items()},
                "chunk_len": dict(index.chunk_len),
            },
            ensure_ascii=False,
        ),
        encoding="utf-8",
    )
    matrix = np.ascontiguousarray(index._matrix, dtype="<f4")
    matrix.tofile(directory / "embeddings.f32")


def load_index(directory: str | Path) -> HybridIndex:
    directory = Path(directory)
    meta = json.loads((directory / "chunks.json").read_text(encoding="utf-8"))
    dim = int(meta["dimension"])
    rows = meta["chunks"]
    flat = np.fromfile(directory / "embeddings.f32", dtype="<f4")
    matrix = flat.reshape(len(rows), dim).astype(np.float64)
    chunks = [
        KnowledgeChunk(
            chunk_id=r["chunk_id"],
            source_id=r["source_id"],
            heading_path=tuple(r["heading_path"]),
            text=r["text"],
            token_count=int(r["token_count"]),
            embedding=EmbeddingVector(values=tuple(map(float, matrix[i]))),
        )
        for i, r in enumerate(rows)
    ]
    return HybridIndex(chunks)

"""Validation phase: atomize the card, score atoms against evidence, flag
and remediate.

Each atom's verdicts pool into a single score via logistic-summed
log-likelihood ratios: score = logistic(sum_i ln((p_entail_i + eps) /
(p_contradict_i + eps))). This reproduces the anchor semantics exactly --
no evidence gives 0.5, support pushes toward 1, contradiction toward 0 --
and composes multiple contexts symmetrically (the ratios are sorted before
summing so the result is bit-for-bit permutation invariant).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

from .card_model import BenchmarkCard, CardSchema, FieldValue, transition_field
from .errors import GatewayError, InvalidVerdict
from .gateway import ChatRequest, Gateway, block, task_tag
from .retrieval import (
    EvidenceCandidate,
    HybridIndex,
    KnowledgeChunk,
    dense_search,
    fuse_rrf,
    grade_evidence,
    sparse_search,
)

MAX_ATOM_WORDS = 60

_ATOMIZE_SYSTEM = (
    "You decompose one field of a benchmark documentation card into atomic "
    "statements: single declarative sentences that can each be fact-checked "
    "on their own. Resolve pronouns, name the benchmark explicitly in every "
    "statement, and never merge two claims into one. Reply with JSON only."
)
_JUDGE_SYSTEM = (
    "You are a natural language inference judge. Given a statement and a "
    "context, estimate the probability that the context entails the "
    "statement, contradicts it, or is neutral. The three probabilities must "
    "sum to 1. Reply with JSON only."
)
_REVISE_SYSTEM = (
    "You rewrite one field of a benchmark documentation card so that every "
    "statement in it is supported by the given evidence. Drop or correct the "
    "unsupported statements; keep supported content. Answer with the "
    "replacement field text alone."
)


@dataclass(frozen=True)
class AtomicStatement:
    atom_id: str
    field_id: str
    text: str
    status: str = "pending"  # pending | scored | flagged | resolved

    def __post_init__(self) -> None:
        if len(self.text.split()) > MAX_ATOM_WORDS:
            raise ValueError(f"atom exceeds {MAX_ATOM_WORDS} words: {self.text[:60]!r}...")
        if not self.text.strip():
            raise ValueError("atom text must be non-empty")


@dataclass(frozen=True)
class EntailmentVerdict:
    atom_id: str
    chunk_id: str
    p_entail: float
    p_contradict: float
    p_neutral: float

    @classmethod
    def from_probabilities(
        cls, atom_id: str, chunk_id: str, entail: float, contradict: float, neutral: float
    ) -> "EntailmentVerdict":
        """Validate and renormalize a raw probability triple."""
        triple = (entail, contradict, neutral)
        if any(not math.isfinite(p) or p < 0 for p in triple):
            raise InvalidVerdict(f"bad probability triple: {triple}")
        total = sum(triple)
        if total <= 0:
            raise InvalidVerdict(f"probability triple sums to zero: {triple}")
        return cls(
            atom_id=atom_id,
            chunk_id=chunk_id,
            p_entail=entail / total,
            p_contradict=contradict / total,
            p_neutral=neutral / total,
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "atom_id": self.atom_id,
            "chunk_id": self.chunk_id,
            "p_entail": self.p_entail,
            "p_contradict": self.p_contradict,
            "p_neutral": self.p_neutral,
        }


@dataclass(frozen=True)
class AtomScore:
    atom_id: str
    field_id: str
    text: str
    score: float | None
    verdicts: tuple[EntailmentVerdict, ...]
    flagged: bool
    evidence_chunk_ids: tuple[str, ...] = ()
    error: str | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "atom_id": self.atom_id,
            "field_id": self.field_id,
            "text": self.text,
            "score": self.score,
            "flagged": self.flagged,
            "verdicts": [v.to_json() for v in self.verdicts],
            "evidence_chunk_ids": list(self.evidence_chunk_ids),
            "error": self.error,
        }


@dataclass(frozen=True)
class RemediationAction:
    atom_id: str
    strategy: str  # auto_revise | human_review | none
    outcome: str

    def to_json(self) -> dict[str, str]:
        return {"atom_id": self.atom_id, "strategy": self.strategy, "outcome": self.outcome}


@dataclass
class ValidationReport:
    run_id: str
    card_revision: int
    atoms: list[AtomScore]
    remediation_actions: list[RemediationAction] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def flagged_atoms(self) -> list[AtomScore]:
        return [a for a in self.atoms if a.flagged]

    def to_json(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "card_revision": self.card_revision,
            "atoms": [a.to_json() for a in self.atoms],
            "remediation_actions": [r.to_json() for r in self.remediation_actions],
            "warnings": list(self.warnings),
        }


@dataclass
class ValidationConfig:
    tau_flag: float = 0.6
    epsilon: float = 1e-3
    sparse_k: int = 20
    dense_k: int = 20
    rrf_k: int = 60
    grade_top_m: int = 8
    keep_per_atom: int = 5
    strategy: str = "none"  # auto | review | none
    max_rounds: int = 2

    def __post_init__(self) -> None:
        if self.strategy not in ("auto", "review", "none"):
            raise ValueError(f"invalid remediation strategy: {self.strategy!r}")
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


# --- atomization -------------------------------------------------------------


def atomize(
    card: BenchmarkCard, gateway: Gateway, schema: CardSchema
) -> tuple[list[AtomicStatement], list[str]]:
    """One JSON-mode call per non-empty field; atoms inherit the field id.

    Fields yielding zero atoms and over-length atoms produce warnings, not
    errors.
    """
    if not any(fv.text.strip() for fv in card.fields.values()):
        raise ValueError("card has no non-empty field to atomize")
    atoms: list[AtomicStatement] = []
    warnings: list[str] = []
    for section_id in schema.section_ids():
        fv = card.fields.get(section_id)
        if fv is None or not fv.text.strip():
            continue
        user = "\n".join(
            [
                task_tag("atomize", field=section_id),
                f"Benchmark: {card.benchmark_id}",
                block("Text", fv.text),
                "",
                'Reply with JSON: {"atoms": [{"text": "..."}]} where each text is one '
                f"self-contained declarative sentence of at most {MAX_ATOM_WORDS} words.",
            ]
        )
        try:
            raw = gateway.complete(
                ChatRequest(system=_ATOMIZE_SYSTEM, user=user, response_format="json")
            )
        except GatewayError as exc:
            exc.args = (f"[field {section_id}] {exc}",)
            raise
        payload = json.loads(raw)
        items = payload.get("atoms", [])
        if not items:
            warnings.append(f"atomization produced no atoms for field {section_id}")
            continue
        count = 0
        for item in items:
            text = str(item.get("text", "")).strip()
            try:
                atom = AtomicStatement(
                    atom_id=f"{section_id}.a{count + 1}", field_id=section_id, text=text
                )
            except ValueError as exc:
                warnings.append(f"skipped atom in {section_id}: {exc}")
                continue
            atoms.append(atom)
            count += 1
    return atoms, warnings


# --- entailment --------------------------------------------------------------


def judge_entailment(
    atom: AtomicStatement, chunk: KnowledgeChunk, gateway: Gateway
) -> EntailmentVerdict:
    user = "\n".join(
        [
            task_tag("judge"),
            block("Statement", atom.text),
            "",
            block("Context", chunk.text),
            "",
            'Reply with JSON: {"entail": p, "contradict": p, "neutral": p}.',
        ]
    )
    raw = gateway.complete(
        ChatRequest(system=_JUDGE_SYSTEM, user=user, response_format="json")
    )
    payload = json.loads(raw)
    try:
        triple = (
            float(payload.get("entail", 0.0)),
            float(payload.get("contradict", 0.0)),
            float(payload.get("neutral", 0.0)),
        )
    except (TypeError, ValueError) as exc:
        raise InvalidVerdict(f"non-numeric verdict: {payload}") from exc
    return EntailmentVerdict.from_probabilities(atom.atom_id, chunk.chunk_id, *triple)


def aggregate_score(verdicts: Sequence[EntailmentVerdict], epsilon: float = 1e-3) -> float:
    """Pool verdicts into one score in (0, 1); exactly 0.5 with no evidence.

    Neutral mass is ignored: it cancels toward 0.5 on its own. Log ratios
    are sorted before summing so the result is permutation invariant down
    to the last bit.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    if not verdicts:
        return 0.5
    ratios = sorted(
        math.log((v.p_entail + epsilon) / (v.p_contradict + epsilon)) for v in verdicts
    )
    x = math.fsum(ratios)
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


# --- scoring -----------------------------------------------------------------


def _score_atom(
    atom: AtomicStatement,
    index: HybridIndex,
    gateway: Gateway,
    config: ValidationConfig,
) -> tuple[AtomScore, list[str]]:
    warnings: list[str] = []
    sparse = sparse_search(atom.text, index, config.sparse_k)
    dense = dense_search(atom.text, index, config.dense_k, gateway)
    candidates = fuse_rrf(sparse, dense, config.rrf_k)
    kept: list[EvidenceCandidate] = []
    if candidates:
        kept, grade_warnings = grade_evidence(
            atom.text, candidates, index, gateway, config.grade_top_m
        )
        warnings.extend(grade_warnings)
        kept = kept[: config.keep_per_atom]
    verdicts = tuple(
        judge_entailment(atom, index.by_id[c.chunk_id], gateway) for c in kept
    )
    score = aggregate_score(verdicts, config.epsilon)
    return (
        AtomScore(
            atom_id=atom.atom_id,
            field_id=atom.field_id,
            text=atom.text,
            score=score,
            verdicts=verdicts,
            flagged=score < config.tau_flag,
            evidence_chunk_ids=tuple(c.chunk_id for c in kept),
        ),
        warnings,
    )


_STRATEGY_TO_ACTION = {"auto": "auto_revise", "review": "human_review", "none": "none"}
_INITIAL_OUTCOME = {"auto": "pending", "review": "queued", "none": "none"}


def score_card(
    card: BenchmarkCard,
    index: HybridIndex,
    gateway: Gateway,
    config: ValidationConfig,
    schema: CardSchema,
    atoms: Sequence[AtomicStatement] | None = None,
    run_id: str = "round1",
) -> ValidationReport:
    """Retrieve, grade, judge, and aggregate for every atom.

    Per-atom failures degrade to an unscored, flagged entry so a validation
    run always yields a report.
    """
    warnings: list[str] = []
    if atoms is None:
        atoms, atom_warnings = atomize(card, gateway, schema)
        warnings.extend(atom_warnings)

    scored: list[AtomScore] = []
    for atom in atoms:
        try:
            result, w = _score_atom(atom, index, gateway, config)
            scored.append(result)
            warnings.extend(w)
        except Exception as exc:  # degrade, never abort the run
            warnings.append(f"scoring failed for {atom.atom_id}: {exc}")
            scored.append(
                AtomScore(
                    atom_id=atom.atom_id,
                    field_id=atom.field_id,
                    text=atom.text,
                    score=None,
                    verdicts=(),
                    flagged=True,
                    error=str(exc),
                )
            )

    scored.sort(key=lambda a: (a.score if a.score is not None else -1.0, a.atom_id))
    actions = [
        RemediationAction(
            atom_id=a.atom_id,
            strategy=_STRATEGY_TO_ACTION[config.strategy],
            outcome=_INITIAL_OUTCOME[config.strategy],
        )
        for a in scored
        if a.flagged
    ]
    return ValidationReport(
        run_id=run_id,
        card_revision=card.revision(),
        atoms=scored,
        remediation_actions=actions,
        warnings=warnings,
    )


# --- remediation ---------------------------------------------------------------


def revise_field(
    card: BenchmarkCard,
    field_id: str,
    flagged_atoms: Sequence[AtomScore],
    evidence_chunks: Sequence[KnowledgeChunk],
    gateway: Gateway,
) -> BenchmarkCard:
    """Regenerate one field from only the evidence retrieved for its flagged
    atoms (not the full knowledge base). The field's revision increments and
    its status resets to draft for re-scoring."""
    if not flagged_atoms:
        raise ValueError(f"field {field_id!r} has no flagged atoms to revise")
    if any(a.field_id != field_id for a in flagged_atoms):
        raise ValueError("flagged atoms do not all belong to the field being revised")
    current = card.fields[field_id]
    statements = "\n".join(f"- {a.text}" for a in flagged_atoms)
    chunk_sections = "\n\n".join(
        f"CHUNK {c.chunk_id}:\n{c.text.strip()}" for c in evidence_chunks
    )
    user = "\n".join(
        [
            task_tag("revise", field=field_id),
            block("Current text", current.text),
            "",
            "These statements from the current text were not supported:",
            statements,
            "",
            "Evidence:",
            "",
            chunk_sections if evidence_chunks else "(no evidence was retrieved)",
        ]
    )
    text = gateway.complete(ChatRequest(system=_REVISE_SYSTEM, user=user))
    return card.with_field(
        field_id,
        FieldValue(text=text.strip(), status="draft", revision=current.revision + 1),
    )


def _evidence_for_field(
    report: ValidationReport, field_id: str, index: HybridIndex
) -> list[KnowledgeChunk]:
    ids = sorted(
        {
            cid
            for a in report.flagged_atoms()
            if a.field_id == field_id
            for cid in a.evidence_chunk_ids
        }
    )
    return [index.by_id[cid] for cid in ids if cid in index.by_id]


def _finalize_statuses(card: BenchmarkCard, report: ValidationReport) -> BenchmarkCard:
    """Fields whose atoms all pass become validated; any flagged atom leaves
    the field flagged. Fields that produced no atoms keep their status."""
    flagged_fields = {a.field_id for a in report.flagged_atoms()}
    scored_fields = {a.field_id for a in report.atoms}
    for section_id in list(card.fields):
        if section_id in flagged_fields:
            card = transition_field(card, section_id, "flagged")
        elif section_id in scored_fields:
            card = transition_field(card, section_id, "validated")
    return card


def validation_loop(
    card: BenchmarkCard,
    index: HybridIndex,
    gateway: Gateway,
    config: ValidationConfig,
    schema: CardSchema,
) -> tuple[BenchmarkCard, list[ValidationReport]]:
    """Score the card; with strategy=auto, revise flagged fields and re-score
    up to max_rounds times or until nothing is flagged. strategy=review and
    strategy=none score exactly once (the review session is written by the
    pipeline layer)."""
    atoms, atom_warnings = atomize(card, gateway, schema)
    report = score_card(card, index, gateway, config, schema, atoms=atoms, run_id="round1")
    report.warnings = atom_warnings + report.warnings
    reports = [report]

    if config.strategy == "auto":
        for round_no in range(2, config.max_rounds + 2):
            flagged = report.flagged_atoms()
            if not flagged:
                break
            revised_fields = []
            for section_id in schema.section_ids():
                field_atoms = [a for a in flagged if a.field_id == section_id]
                if not field_atoms:
                    continue
                evidence = _evidence_for_field(report, section_id, index)
                card = revise_field(card, section_id, field_atoms, evidence, gateway)
                revised_fields.append(section_id)
            report.remediation_actions = [
                replace(act, outcome="revised") for act in report.remediation_actions
            ]
            # re-atomize only the revised fields; other atoms keep their ids
            atoms = [a for a in atoms if a.field_id not in revised_fields]
            fresh_card = BenchmarkCard(
                benchmark_id=card.benchmark_id,
                fields={fid: card.fields[fid] for fid in revised_fields},
            )
            new_atoms, new_warnings = atomize(fresh_card, gateway, schema)
            atoms = atoms + new_atoms
            report = score_card(
                card, index, gateway, config, schema, atoms=atoms, run_id=f"round{round_no}"
            )
            report.warnings = new_warnings + report.warnings
            reports.append(report)
        final = reports[-1]
        final.remediation_actions = [
            replace(act, outcome="unresolved") for act in final.remediation_actions
        ]

    return _finalize_statuses(card, reports[-1]), reports


# --- report persistence -----------------------------------------------------------


def write_report(report: ValidationReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(report.to_json(), ensure_ascii=False, indent=2), encoding="utf-8"
    )

"""Composition phase: draft every card section, then layer in risks.

Sections are generated one gateway call each (not one mega-prompt) so a
flagged section can later be regenerated on its own. The knowledge-base
context for each prompt is truncated to a character budget, keeping the
highest-priority origins intact: budget is granted in descending origin
priority (user_supplied first, the catalog card last), so publication and
hub text are the last to be cut.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

from .card_model import BenchmarkCard, CardSchema, FieldValue, SourceDescriptor
from .errors import GatewayError
from .extraction import ORIGIN_PRIORITY, KnowledgeBase
from .gateway import ChatRequest, Gateway, block, task_tag

DEFAULT_CONTEXT_BUDGET = 24_000
RISK_BATCH_SIZE = 10

_RISK_BLOCK_START = "<!-- risk-findings:start -->"
_RISK_BLOCK_END = "<!-- risk-findings:end -->"

_COMPOSE_SYSTEM = (
    "You write one section of a benchmark documentation card. Use only the "
    "provided source material; never invent facts. Answer with the section "
    "text alone: no headings, no preamble."
)
_RISK_SYSTEM = (
    "You review a benchmark documentation card against a risk taxonomy. "
    "For each listed risk, decide whether it applies to this benchmark and "
    "give a one-sentence rationale when it does. Reply with JSON only."
)


@dataclass(frozen=True)
class RiskEntry:
    risk_id: str
    name: str
    description: str


@dataclass(frozen=True)
class RiskTaxonomy:
    risks: tuple[RiskEntry, ...]

    def __post_init__(self) -> None:
        ids = [r.risk_id for r in self.risks]
        if len(ids) != len(set(ids)):
            raise ValueError("risk ids must be unique")

    def get(self, risk_id: str) -> RiskEntry:
        for r in self.risks:
            if r.risk_id == risk_id:
                return r
        raise KeyError(risk_id)

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "RiskTaxonomy":
        return cls(
            risks=tuple(
                RiskEntry(
                    risk_id=str(r["risk_id"]),
                    name=str(r["name"]),
                    description=str(r.get("description", "")),
                )
                for r in data["risks"]
            )
        )

    @classmethod
    def load(cls, path: str | Path) -> "RiskTaxonomy":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    @classmethod
    def default(cls) -> "RiskTaxonomy":
        raw = resources.files("benchcard.resources").joinpath("risk_taxonomy.json")
        return cls.from_json(json.loads(raw.read_text(encoding="utf-8")))


@dataclass(frozen=True)
class RiskFinding:
    risk_id: str
    applicable: bool
    rationale: str

    def __post_init__(self) -> None:
        if self.applicable and not self.rationale.strip():
            raise ValueError(f"applicable finding {self.risk_id!r} needs a rationale")


# --- context rendering -------------------------------------------------------


def render_context(kb: KnowledgeBase, budget: int = DEFAULT_CONTEXT_BUDGET) -> str:
    """Concatenate the knowledge base, truncated to `budget` body characters.

    The budget is allocated greedily in descending origin priority, so when
    space runs out the catalog card is cut first and user-supplied and
    publication text last. Documents render in knowledge-base order with a
    provenance header each (headers are outside the budget).
    """
    by_priority = sorted(
        enumerate(kb.documents),
        key=lambda pair: (-ORIGIN_PRIORITY[pair[1].origin], pair[0]),
    )
    remaining = budget
    allocation: dict[int, int] = {}
    for pos, doc in by_priority:
        take = min(len(doc.body_markdown), remaining)
        allocation[pos] = take
        remaining -= take

    parts = []
    for pos, doc in enumerate(kb.documents):
        take = allocation[pos]
        if take <= 0:
            continue
        body = doc.body_markdown[:take]
        truncated = " (truncated)" if take < len(doc.body_markdown) else ""
        parts.append(f"### Source: {doc.title} [{doc.origin}]{truncated}\n{body}")
    return "\n\n".join(parts)


# --- section composition -------------------------------------------------------


def compose_card(
    kb: KnowledgeBase,
    schema: CardSchema,
    gateway: Gateway,
    context_budget: int = DEFAULT_CONTEXT_BUDGET,
) -> BenchmarkCard:
    """Fill every schema section with one gateway call each; all fields start
    as draft, revision 0. Gateway errors carry the section id."""
    if not kb.documents:
        raise ValueError("knowledge base is empty")
    context = render_context(kb, context_budget)
    fields: dict[str, FieldValue] = {}
    for spec in schema.sections:
        user = "\n".join(
            [
                task_tag("compose", section=spec.id, benchmark=kb.benchmark_identifier),
                f"Section: {spec.title}",
                f"Guidance: {spec.description}",
                "",
                "Write this section for the benchmark using only the sources below.",
                "",
                block("Sources", context),
            ]
        )
        try:
            text = gateway.complete(ChatRequest(system=_COMPOSE_SYSTEM, user=user))
        except GatewayError as exc:
            exc.args = (f"[section {spec.id}] {exc}",)
            raise
        fields[spec.id] = FieldValue(text=text.strip(), status="draft", revision=0)

    return BenchmarkCard(
        benchmark_id=kb.benchmark_identifier,
        fields=fields,
        generated_at=datetime.now(timezone.utc).isoformat(),
        sources=tuple(
            SourceDescriptor(
                source_id=d.source_id, origin=d.origin, title=d.title, locator=d.locator
            )
            for d in kb.documents
        ),
    )


# --- risk identification --------------------------------------------------------


def _card_text(card: BenchmarkCard) -> str:
    return "\n\n".join(
        f"[{sid}]\n{fv.text}" for sid, fv in card.fields.items() if fv.text.strip()
    )


def identify_risks(
    card: BenchmarkCard,
    taxonomy: RiskTaxonomy,
    gateway: Gateway,
    batch_size: int = RISK_BATCH_SIZE,
) -> list[RiskFinding]:
    """Ask the model which taxonomy risks apply, in batches of `batch_size`.

    Returns exactly one finding per taxonomy risk: risks the model omits
    come back as not applicable, unknown ids are ignored.
    """
    purpose = card.fields.get("purpose", FieldValue("")).text.strip()
    methodology = card.fields.get("methodology", FieldValue("")).text.strip()
    if not purpose and not methodology:
        raise ValueError("risk identification needs a non-empty purpose or methodology")

    card_text = _card_text(card)
    known = {r.risk_id for r in taxonomy.risks}
    found: dict[str, RiskFinding] = {}
    n_batches = math.ceil(len(taxonomy.risks) / batch_size)
    for i in range(n_batches):
        batch = taxonomy.risks[i * batch_size : (i + 1) * batch_size]
        risk_lines = "\n".join(
            f"RISK {r.risk_id}: {r.name}: {r.description}" for r in batch
        )
        user = "\n".join(
            [
                task_tag("risks", batch=str(i)),
                "Decide which of these risks apply to the benchmark described below.",
                "",
                risk_lines,
                "",
                block("Card", card_text),
                "",
                'Reply with JSON: {"findings": [{"risk_id", "applicable", "rationale"}]}'
                " covering every listed risk.",
            ]
        )
        raw = gateway.complete(
            ChatRequest(system=_RISK_SYSTEM, user=user, response_format="json")
        )
        payload = json.loads(raw)
        for item in payload.get("findings", []):
            risk_id = str(item.get("risk_id", ""))
            if risk_id not in known or risk_id in found:
                continue
            applicable = bool(item.get("applicable", False))
            rationale = str(item.get("rationale", "")).strip()
            if applicable and not rationale:
                rationale = "(no rationale provided)"
            found[risk_id] = RiskFinding(
                risk_id=risk_id, applicable=applicable, rationale=rationale
            )

    return [
        found.get(r.risk_id, RiskFinding(risk_id=r.risk_id, applicable=False, rationale=""))
        for r in taxonomy.risks
    ]


def merge_risks(
    card: BenchmarkCard, findings: Sequence[RiskFinding], taxonomy: RiskTaxonomy
) -> BenchmarkCard:
    """Append applicable findings to the risks section as a delimited bullet
    block, sorted by risk id. Idempotent: re-merging replaces the block.
    No other section is touched."""
    finding_ids = {f.risk_id for f in findings}
    missing = [r.risk_id for r in taxonomy.risks if r.risk_id not in finding_ids]
    if missing:
        raise ValueError(f"findings do not cover taxonomy: missing {missing}")

    applicable = sorted(
        (f for f in findings if f.applicable), key=lambda f: f.risk_id
    )
    existing = card.fields.get("risks", FieldValue("", "draft", 0))
    base_text = _strip_risk_block(existing.text)
    if not applicable:
        if existing.text == base_text:
            return card
        new_text = base_text
    else:
        bullets = "\n".join(
            f"- {taxonomy.get(f.risk_id).name}: {f.rationale}" for f in applicable
        )
        blocktext = f"{_RISK_BLOCK_START}\n{bullets}\n{_RISK_BLOCK_END}"
        new_text = (base_text + "\n\n" + blocktext).strip() if base_text.strip() else blocktext
    return card.with_field(
        "risks", FieldValue(text=new_text, status=existing.status, revision=existing.revision)
    )


def _strip_risk_block(text: str) -> str:
    pattern = re.compile(
        re.escape(_RISK_BLOCK_START) + r".*?" + re.escape(_RISK_BLOCK_END), re.S
    )
    return pattern.sub("", text).rstrip()

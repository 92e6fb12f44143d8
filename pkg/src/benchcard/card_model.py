"""Card schema, benchmark card values, and their JSON serialization.

A card is an immutable value: "mutation" always produces a new card. The
serialized form is deterministic (benchmark_id first, fields in schema
order) so that reruns diff cleanly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .errors import InvalidStatusTransition, MalformedJson, UnknownSection

FIELD_STATUSES = ("draft", "validated", "flagged", "human_edited")

# Allowed same-revision status moves. Producing a new revision (an accepted
# rewrite) resets the field to draft instead of transitioning.
_ALLOWED_TRANSITIONS = {
    ("draft", "validated"),
    ("draft", "flagged"),
    ("flagged", "validated"),
    ("flagged", "human_edited"),
}

ASSET_KINDS = ("metric", "template", "task", "loader", "other")


@dataclass(frozen=True)
class SectionSpec:
    """One section of the card schema; description doubles as prompt guidance."""

    id: str
    title: str
    required: bool
    description: str


@dataclass(frozen=True)
class CardSchema:
    sections: tuple[SectionSpec, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for spec in self.sections:
            if not spec.id:
                raise ValueError("section id must be non-empty")
            if spec.id in seen:
                raise ValueError(f"duplicate section id: {spec.id!r}")
            seen.add(spec.id)

    def section_ids(self) -> list[str]:
        return [s.id for s in self.sections]

    def required_ids(self) -> list[str]:
        return [s.id for s in self.sections if s.required]

    def get(self, section_id: str) -> SectionSpec:
        for s in self.sections:
            if s.id == section_id:
                return s
        raise UnknownSection(section_id)

    def __contains__(self, section_id: str) -> bool:
        return any(s.id == section_id for s in self.sections)

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "CardSchema":
        sections = tuple(
            SectionSpec(
                id=str(s["id"]),
                title=str(s.get("title", s["id"])),
                required=bool(s.get("required", False)),
                description=str(s.get("description", "")),
            )
            for s in data["sections"]
        )
        return cls(sections=sections)

    @classmethod
    def load(cls, path: str | Path) -> "CardSchema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    @classmethod
    def default(cls) -> "CardSchema":
        raw = resources.files("benchcard.resources").joinpath("default_schema.json")
        return cls.from_json(json.loads(raw.read_text(encoding="utf-8")))


@dataclass(frozen=True)
class FieldValue:
    text: str
    status: str = "draft"
    revision: int = 0

    def __post_init__(self) -> None:
        if self.status not in FIELD_STATUSES:
            raise ValueError(f"invalid field status: {self.status!r}")
        if self.revision < 0:
            raise ValueError("revision must be >= 0")


@dataclass(frozen=True)
class SourceDescriptor:
    """Provenance entry carried along with a serialized card."""

    source_id: str
    origin: str
    title: str
    locator: str

    def to_json(self) -> dict[str, str]:
        return {
            "source_id": self.source_id,
            "origin": self.origin,
            "title": self.title,
            "locator": self.locator,
        }


@dataclass(frozen=True)
class BenchmarkCard:
    benchmark_id: str
    fields: Mapping[str, FieldValue]
    generated_at: str | None = None
    sources: tuple[SourceDescriptor, ...] = ()

    def with_field(self, section_id: str, value: FieldValue) -> "BenchmarkCard":
        fields = dict(self.fields)
        fields[section_id] = value
        return replace(self, fields=fields)

    def revision(self) -> int:
        """Card-level revision: the highest field revision (0 for an empty card)."""
        return max((f.revision for f in self.fields.values()), default=0)


@dataclass(frozen=True)
class AssetRef:
    kind: str
    identifier: str

    def __post_init__(self) -> None:
        if self.kind not in ASSET_KINDS:
            raise ValueError(f"invalid asset kind: {self.kind!r}")


@dataclass(frozen=True)
class UnitxtCardDoc:
    """A fetched catalog card: verbatim JSON plus the catalog refs cited in it."""

    identifier: str
    raw_json: Any
    cited_assets: tuple[AssetRef, ...]

    def to_json(self) -> dict[str, Any]:
        return {
            "identifier": self.identifier,
            "raw_json": self.raw_json,
            "cited_assets": [
                {"kind": a.kind, "identifier": a.identifier} for a in self.cited_assets
            ],
        }


def parse_card(json_text: str, schema: CardSchema) -> BenchmarkCard:
    """Parse card JSON, rejecting fields whose section id is not in the schema.

    Round-trips with serialize_card: structural content is preserved exactly,
    only key order and whitespace may differ.
    """
    try:
        data = json.loads(json_text)
    except (json.JSONDecodeError, TypeError) as exc:
        raise MalformedJson(str(exc)) from exc
    if not isinstance(data, dict):
        raise MalformedJson("card JSON must be an object")

    raw_fields = data.get("fields", {})
    if not isinstance(raw_fields, dict):
        raise MalformedJson("'fields' must be an object")

    fields: dict[str, FieldValue] = {}
    for section_id, raw in raw_fields.items():
        if section_id not in schema:
            raise UnknownSection(section_id)
        if not isinstance(raw, dict):
            raise MalformedJson(f"field {section_id!r} must be an object")
        fields[section_id] = FieldValue(
            text=str(raw.get("text", "")),
            status=str(raw.get("status", "draft")),
            revision=int(raw.get("revision", 0)),
        )

    sources = tuple(
        SourceDescriptor(
            source_id=str(s.get("source_id", "")),
            origin=str(s.get("origin", "")),
            title=str(s.get("title", "")),
            locator=str(s.get("locator", "")),
        )
        for s in data.get("sources", [])
    )

    return BenchmarkCard(
        benchmark_id=str(data.get("benchmark_id", "")),
        fields=fields,
        generated_at=data.get("generated_at"),
        sources=sources,
    )


def serialize_card(card: BenchmarkCard, schema: CardSchema) -> str:
    """Serialize to JSON with a stable key order: benchmark_id first, then
    fields in schema order (unknown-to-schema fields cannot exist by
    construction)."""
    fields: dict[str, Any] = {}
    for section_id in schema.section_ids():
        if section_id in card.fields:
            fv = card.fields[section_id]
            fields[section_id] = {
                "text": fv.text,
                "status": fv.status,
                "revision": fv.revision,
            }
    data: dict[str, Any] = {"benchmark_id": card.benchmark_id, "fields": fields}
    if card.generated_at is not None:
        data["generated_at"] = card.generated_at
    if card.sources:
        data["sources"] = [s.to_json() for s in card.sources]
    return json.dumps(data, ensure_ascii=False, indent=2)


def check_completeness(card: BenchmarkCard, schema: CardSchema) -> list[str]:
    """Required section ids that are absent or empty in the card, schema order.

    Whitespace-only text counts as missing.
    """
    missing = []
    for section_id in schema.required_ids():
        fv = card.fields.get(section_id)
        if fv is None or not fv.text.strip():
            missing.append(section_id)
    return missing


def check_status_transition(old: str, new: str) -> None:
    """Raise unless old -> new is an allowed same-revision status move."""
    if old == new:
        return
    if (old, new) not in _ALLOWED_TRANSITIONS:
        raise InvalidStatusTransition(f"{old} -> {new} is not allowed")


def transition_field(card: BenchmarkCard, section_id: str, new_status: str) -> BenchmarkCard:
    """Return a card with the field's status moved along the transition graph."""
    fv = card.fields[section_id]
    check_status_transition(fv.status, new_status)
    return card.with_field(section_id, replace(fv, status=new_status))

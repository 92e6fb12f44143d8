"""End-to-end orchestration: extraction, composition, indexing, validation,
and the human-review decision flow, all rooted in a workspace directory.

Workspace layout::

    sources/cache/      content-addressed fetch cache
    sources/kb.json     assembled knowledge base
    index/              chunks.json, terms.json, embeddings.f32
    card_draft.json     composed card (pre-validation)
    card_final.json     card after validation / decisions
    validation/round_N.json
    review/session.json
    run_log.json        gateway call hashes, phase timings, warnings
    run_config.json     snapshot of the run configuration
"""

from __future__ import annotations

import json
import shlex
import time
import uuid
from dataclasses import asdict, dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from .card_model import (
    BenchmarkCard,
    CardSchema,
    FieldValue,
    parse_card,
    serialize_card,
)
from .composition import RiskTaxonomy, compose_card, identify_risks, merge_risks
from .errors import (
    BenchcardError,
    ConfigError,
    MissingWorkspace,
    NoSession,
    UndecidedAtoms,
)
from .extraction import (
    CommandConverter,
    SourceCache,
    assemble_knowledge_base,
    card_as_document,
    extract_identifiers,
    fetch_hub_metadata,
    fetch_unitxt_card,
    ingest_publication,
    make_catalog,
    make_hub,
    resolve_supplementary,
    KnowledgeBase,
)
from .gateway import Gateway, GatewayConfig, build_gateway
from .retrieval import HybridIndex, index_documents, load_index, save_index
from .validation import (
    AtomScore,
    ValidationConfig,
    ValidationReport,
    revise_field,
    score_card,
    validation_loop,
    write_report,
)

EXIT_OK = 0
EXIT_PHASE_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_FLAGS_REMAIN = 3


class PhaseError(BenchcardError):
    def __init__(self, phase: str, cause: Exception):
        self.phase = phase
        self.cause = cause
        super().__init__(f"phase {phase!r} failed: {cause}")


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def _is_remote(locator: str | None) -> bool:
    return bool(locator) and locator.startswith(("http://", "https://"))


@dataclass
class RunConfig:
    benchmark_identifier: str
    workspace: Path
    catalog: str
    hub: str
    paper: str | None = None
    converter: str | None = None
    schema_path: str | None = None
    taxonomy_path: str | None = None
    gateway_config_path: str | None = None
    tau_flag: float = 0.6
    strategy: str = "none"
    max_rounds: int = 2
    offline: bool = False
    context_budget: int = 24_000

    def validate(self) -> None:
        """Offline runs must not point at any network locator."""
        if self.strategy not in ("auto", "review", "none"):
            raise ConfigError(f"invalid remediation strategy: {self.strategy!r}")
        if not self.offline:
            return
        for name, locator in (
            ("catalog", self.catalog),
            ("hub", self.hub),
            ("paper", self.paper),
        ):
            if _is_remote(locator):
                raise ConfigError(f"offline mode forbids a remote {name} locator: {locator}")
        gw = GatewayConfig.load(self.gateway_config_path) if self.gateway_config_path else GatewayConfig()
        if gw.backend != "scripted":
            raise ConfigError("offline mode requires a scripted gateway backend")

    def to_json(self) -> dict[str, Any]:
        data = asdict(self)
        data["workspace"] = str(self.workspace)
        return data


class Workspace:
    """Path conventions for one pipeline run."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    @property
    def sources_dir(self) -> Path:
        return self.root / "sources"

    @property
    def cache_dir(self) -> Path:
        return self.root / "sources" / "cache"

    @property
    def kb_path(self) -> Path:
        return self.root / "sources" / "kb.json"

    @property
    def index_dir(self) -> Path:
        return self.root / "index"

    @property
    def validation_dir(self) -> Path:
        return self.root / "validation"

    @property
    def card_draft_path(self) -> Path:
        return self.root / "card_draft.json"

    @property
    def card_final_path(self) -> Path:
        return self.root / "card_final.json"

    @property
    def session_path(self) -> Path:
        return self.root / "review" / "session.json"

    @property
    def run_log_path(self) -> Path:
        return self.root / "run_log.json"

    @property
    def run_config_path(self) -> Path:
        return self.root / "run_config.json"

    def write_json(self, path: Path, data: Any) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(data, ensure_ascii=False, indent=2), encoding="utf-8")

    def read_json(self, path: Path) -> Any:
        return json.loads(path.read_text(encoding="utf-8"))


def load_schema(schema_path: str | None) -> CardSchema:
    return CardSchema.load(schema_path) if schema_path else CardSchema.default()


def load_taxonomy(taxonomy_path: str | None) -> RiskTaxonomy:
    return RiskTaxonomy.load(taxonomy_path) if taxonomy_path else RiskTaxonomy.default()


def _gateway_for(config_path: str | None) -> Gateway:
    return build_gateway(GatewayConfig.load(config_path) if config_path else GatewayConfig())


# --- generate -----------------------------------------------------------------


class _RunLog:
    def __init__(self, benchmark: str):
        self.data: dict[str, Any] = {
            "run_id": uuid.uuid4().hex[:12],
            "benchmark": benchmark,
            "started_at": _now_iso(),
            "phases": [],
            "gateway_calls": [],
        }

    def phase(self, name: str, started: float, warnings: list[str]) -> None:
        self.data["phases"].append(
            {
                "name": name,
                "duration_ms": round((time.time() - started) * 1000, 3),
                "warnings": list(warnings),
            }
        )

    def finish(self, gateway: Gateway, ws: Workspace) -> None:
        self.data["gateway_calls"] = [r.to_json() for r in gateway.call_log]
        self.data["finished_at"] = _now_iso()
        ws.write_json(ws.run_log_path, self.data)


def _extract(config: RunConfig, ws: Workspace, warnings: list[str]) -> KnowledgeBase:
    cache = SourceCache(ws.cache_dir)
    catalog = make_catalog(config.catalog, cache)
    card_doc = fetch_unitxt_card(config.benchmark_identifier, catalog)
    ws.write_json(ws.sources_dir / "unitxt_card.json", card_doc.to_json())

    docs = [card_as_document(card_doc)]
    supp, supp_warnings = resolve_supplementary(card_doc, catalog)
    docs.extend(supp)
    warnings.extend(supp_warnings)

    ids = extract_identifiers(card_doc)
    if ids.publication_url:
        warnings.append(f"publication URL chosen by first match: {ids.publication_url}")

    if ids.hub_repo_id:
        try:
            docs.append(fetch_hub_metadata(ids.hub_repo_id, make_hub(config.hub, cache)))
        except BenchcardError as exc:
            warnings.append(f"hub metadata unavailable: {exc}")

    paper_locator = config.paper or ids.publication_url
    if paper_locator and config.offline and _is_remote(paper_locator):
        warnings.append(f"offline: skipping remote publication locator {paper_locator}")
        paper_locator = None
    if paper_locator:
        converter = (
            CommandConverter(shlex.split(config.converter)) if config.converter else None
        )
        try:
            docs.append(ingest_publication(paper_locator, converter, cache))
        except (BenchcardError, FileNotFoundError):
            if config.paper:
                raise  # the user explicitly asked for this document
            warnings.append(f"publication could not be ingested: {paper_locator}")

    kb = assemble_knowledge_base(config.benchmark_identifier, docs)
    ws.write_json(ws.kb_path, kb.to_json())
    return kb


def run_generate(config: RunConfig) -> int:
    """Execute extraction, composition, indexing, and validation.

    Returns the process exit code: 0 when nothing stays flagged, 3 when the
    card was produced but flags remain. Phase failures raise PhaseError
    (exit 1 at the CLI); the partial workspace is kept either way.
    """
    config.validate()
    ws = Workspace(config.workspace)
    ws.root.mkdir(parents=True, exist_ok=True)
    ws.write_json(ws.run_config_path, config.to_json())
    gateway = _gateway_for(config.gateway_config_path)
    log = _RunLog(config.benchmark_identifier)

    try:
        phase, started, warnings = "extraction", time.time(), []
        kb = _extract(config, ws, warnings)
        log.phase(phase, started, warnings)

        phase, started, warnings = "composition", time.time(), []
        schema = load_schema(config.schema_path)
        taxonomy = load_taxonomy(config.taxonomy_path)
        card = compose_card(kb, schema, gateway, config.context_budget)
        warnings.append("risk identification consumes the composed card text")
        findings = identify_risks(card, taxonomy, gateway)
        card = merge_risks(card, findings, taxonomy)
        ws.card_draft_path.write_text(serialize_card(card, schema), encoding="utf-8")
        log.phase(phase, started, warnings)

        phase, started, warnings = "indexing", time.time(), []
        index = index_documents(kb.documents, gateway)
        save_index(index, ws.index_dir)
        log.phase(phase, started, warnings)

        phase, started, warnings = "validation", time.time(), []
        vconfig = ValidationConfig(
            tau_flag=config.tau_flag,
            strategy=config.strategy,
            max_rounds=config.max_rounds,
        )
        final_card, reports = validation_loop(card, index, gateway, vconfig, schema)
        for i, report in enumerate(reports, start=1):
            write_report(report, ws.validation_dir / f"round_{i}.json")
            warnings.extend(report.warnings)
        if config.strategy == "review":
            write_review_session(ws, final_card, reports[-1], index)
        ws.card_final_path.write_text(serialize_card(final_card, schema), encoding="utf-8")
        log.phase(phase, started, warnings)
    except Exception as exc:
        log.finish(gateway, ws)
        raise PhaseError(phase, exc) from exc

    log.finish(gateway, ws)
    return EXIT_FLAGS_REMAIN if reports[-1].flagged_atoms() else EXIT_OK


# --- standalone validation -------------------------------------------------------


def run_validate(
    card_path: str | Path,
    workspace: str | Path,
    gateway_config_path: str | None = None,
    tau_flag: float | None = None,
) -> tuple[ValidationReport, int]:
    """Score an existing card against the workspace's knowledge base without
    regenerating anything."""
    ws = Workspace(workspace)
    snapshot: dict[str, Any] = {}
    if ws.run_config_path.exists():
        snapshot = ws.read_json(ws.run_config_path)
    gateway_config_path = gateway_config_path or snapshot.get("gateway_config_path")
    gateway = _gateway_for(gateway_config_path)

    if ws.index_dir.joinpath("chunks.json").exists():
        index = load_index(ws.index_dir)
    elif ws.kb_path.exists():
        kb = KnowledgeBase.from_json(ws.read_json(ws.kb_path))
        index = index_documents(kb.documents, gateway)
        save_index(index, ws.index_dir)
    else:
        raise MissingWorkspace(f"no index/ or sources/kb.json under {ws.root}")

    schema = load_schema(snapshot.get("schema_path"))
    card = parse_card(Path(card_path).read_text(encoding="utf-8"), schema)
    vconfig = ValidationConfig(
        tau_flag=tau_flag if tau_flag is not None else snapshot.get("tau_flag", 0.6)
    )
    round_no = _next_round_number(ws)
    report = score_card(
        card, index, gateway, vconfig, schema, run_id=f"round{round_no}"
    )
    write_report(report, ws.validation_dir / f"round_{round_no}.json")
    return report, (EXIT_FLAGS_REMAIN if report.flagged_atoms() else EXIT_OK)


def _next_round_number(ws: Workspace) -> int:
    if not ws.validation_dir.exists():
        return 1
    existing = [
        int(p.stem.split("_")[1])
        for p in ws.validation_dir.glob("round_*.json")
        if p.stem.split("_")[1].isdigit()
    ]
    return max(existing, default=0) + 1


# --- review session ----------------------------------------------------------------


def write_review_session(
    ws: Workspace, card: BenchmarkCard, report: ValidationReport, index: HybridIndex
) -> Path:
    atoms = []
    for a in report.flagged_atoms():  # report order is score-ascending already
        evidence = [
            {
                "chunk_id": cid,
                "text": index.by_id[cid].text,
                "source_id": index.by_id[cid].source_id,
            }
            for cid in a.evidence_chunk_ids
            if cid in index.by_id
        ]
        atoms.append(
            {
                "atom_id": a.atom_id,
                "field_id": a.field_id,
                "text": a.text,
                "score": a.score,
                "flagged": True,
                "status": "flagged",
                "evidence": evidence,
                "decision": None,
            }
        )
    session = {
        "session_id": f"session-{uuid.uuid4().hex[:12]}",
        "card_revision": card.revision(),
        "atoms": atoms,
    }
    ws.write_json(ws.session_path, session)
    return ws.session_path


def load_session(workspace: str | Path) -> dict[str, Any]:
    ws = Workspace(workspace)
    if not ws.session_path.exists():
        raise NoSession(f"no review session at {ws.session_path}")
    return ws.read_json(ws.session_path)


def save_session(workspace: str | Path, session: dict[str, Any]) -> None:
    ws = Workspace(workspace)
    tmp = ws.session_path.with_suffix(".json.tmp")
    tmp.parent.mkdir(parents=True, exist_ok=True)
    tmp.write_text(json.dumps(session, ensure_ascii=False, indent=2), encoding="utf-8")
    tmp.replace(ws.session_path)


# --- applying decisions ---------------------------------------------------------------

_CORRECTIONS_START = "<!-- annotator corrections:start -->"
_CORRECTIONS_END = "<!-- annotator corrections:end -->"


def _splice_edit(text: str, old: str, new: str) -> tuple[str, bool]:
    """Replace the claim in place when it occurs exactly once; otherwise
    report the splice as ambiguous."""
    if old and text.count(old) == 1:
        return text.replace(old, new), True
    return text, False


def _append_correction(text: str, correction: str) -> str:
    if _CORRECTIONS_START in text:
        head, _, rest = text.partition(_CORRECTIONS_START)
        body, _, tail = rest.partition(_CORRECTIONS_END)
        body = body.strip("\n")
        block = f"{_CORRECTIONS_START}\n{body}\n- {correction}\n{_CORRECTIONS_END}"
        return head + block + tail
    base = text.rstrip()
    block = f"{_CORRECTIONS_START}\n- {correction}\n{_CORRECTIONS_END}"
    return (base + "\n\n" + block) if base else block


def apply_decisions(workspace: str | Path, gateway: Gateway | None = None) -> BenchmarkCard:
    """Fold review decisions back into the card.

    accept leaves the field alone; edit splices the corrected claim (or
    appends it to the annotator-corrections block when the splice is
    ambiguous); regenerate reruns the targeted field revision. Each modified
    field's revision increments exactly once.
    """
    ws = Workspace(workspace)
    session = load_session(workspace)
    undecided = [a["atom_id"] for a in session["atoms"] if not a.get("decision")]
    if undecided:
        raise UndecidedAtoms(undecided)

    snapshot: dict[str, Any] = {}
    if ws.run_config_path.exists():
        snapshot = ws.read_json(ws.run_config_path)
    schema = load_schema(snapshot.get("schema_path"))
    card = parse_card(ws.card_final_path.read_text(encoding="utf-8"), schema)

    by_field: dict[str, list[dict[str, Any]]] = {}
    for atom in session["atoms"]:
        by_field.setdefault(atom["field_id"], []).append(atom)

    index: HybridIndex | None = None
    for field_id in schema.section_ids():
        atoms = by_field.get(field_id)
        if not atoms:
            continue
        actions = {a["decision"]["action"] for a in atoms}
        modified = False

        if "regenerate" in actions:
            if gateway is None:
                gateway = _gateway_for(snapshot.get("gateway_config_path"))
            if index is None:
                index = load_index(ws.index_dir)
            regen = [a for a in atoms if a["decision"]["action"] == "regenerate"]
            flagged = [
                AtomScore(
                    atom_id=a["atom_id"],
                    field_id=field_id,
                    text=a["text"],
                    score=a.get("score"),
                    verdicts=(),
                    flagged=True,
                    evidence_chunk_ids=tuple(e["chunk_id"] for e in a.get("evidence", [])),
                )
                for a in regen
            ]
            chunk_ids = sorted({cid for a in flagged for cid in a.evidence_chunk_ids})
            chunks = [index.by_id[cid] for cid in chunk_ids if cid in index.by_id]
            card = revise_field(card, field_id, flagged, chunks, gateway)
            modified = True  # revise_field already bumped the revision

        edits = [a for a in atoms if a["decision"]["action"] == "edit"]
        if edits:
            fv = card.fields[field_id]
            text = fv.text
            for atom in edits:
                text, spliced = _splice_edit(
                    text, atom["text"], atom["decision"]["edited_text"]
                )
                if not spliced:
                    text = _append_correction(text, atom["decision"]["edited_text"])
            card = card.with_field(
                field_id,
                FieldValue(
                    text=text,
                    status="human_edited",
                    revision=fv.revision if modified else fv.revision + 1,
                ),
            )
            modified = True

        if not modified:
            # all-accept: text untouched, the field graduates to validated
            fv = card.fields[field_id]
            card = card.with_field(field_id, replace(fv, status="validated"))

    for atom in session["atoms"]:
        atom["status"] = "resolved"
    session["finalized_at"] = _now_iso()
    save_session(workspace, session)

    ws.card_final_path.write_text(serialize_card(card, schema), encoding="utf-8")
    return card

"""Extraction phase: pull benchmark metadata from its sources.

Connectors fetch the catalog card, resolve the supplementary assets it
cites, read hub repository metadata, and ingest the publication. Each
source has a remote (HTTPS) and a local-directory implementation so the
whole phase runs offline against fixtures. Remote fetches are cached in
the workspace under sources/ keyed by a hash of the locator.
"""

from __future__ import annotations

import hashlib
import json
import re
import subprocess
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator, Sequence

import httpx

from .card_model import AssetRef, UnitxtCardDoc
from .errors import (
    CardNotFound,
    CatalogUnreachable,
    ConversionFailed,
    ConverterNotConfigured,
    DuplicateSourceId,
    EmptyKnowledgeBase,
    HubUnreachable,
    RepoNotFound,
)

ORIGINS = ("unitxt_card", "unitxt_supplementary", "hub_metadata", "publication", "user_supplied")
ORIGIN_PRIORITY = {origin: i for i, origin in enumerate(ORIGINS)}

# Catalog namespaces whose dotted references count as cited assets.
_CATALOG_PREFIXES = {
    "metrics": "metric",
    "templates": "template",
    "tasks": "task",
    "loaders": "loader",
    "cards": "other",
    "operators": "other",
    "formats": "other",
    "system_prompts": "other",
    "processors": "other",
    "augmentors": "other",
    "splitters": "other",
}
_CATALOG_REF_RE = re.compile(
    r"^(" + "|".join(_CATALOG_PREFIXES) + r")\.[A-Za-z0-9_][A-Za-z0-9_.]*$"
)

_HUB_REPO_RE = re.compile(r"^[\w.-]+/[\w.-]+$")
_URL_RE = re.compile(r"https?://[^\s\"'<>)\]]+")

_RETRIES = 2
_BACKOFF_SECONDS = 0.5


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass(frozen=True)
class SourceDocument:
    source_id: str
    origin: str
    title: str
    body_markdown: str
    fetched_at: str
    locator: str

    def __post_init__(self) -> None:
        if self.origin not in ORIGINS:
            raise ValueError(f"invalid origin: {self.origin!r}")
        if not self.body_markdown:
            raise ValueError("body_markdown must be non-empty")

    def to_json(self) -> dict[str, str]:
        return {
            "source_id": self.source_id,
            "origin": self.origin,
            "title": self.title,
            "body_markdown": self.body_markdown,
            "fetched_at": self.fetched_at,
            "locator": self.locator,
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "SourceDocument":
        return cls(
            source_id=data["source_id"],
            origin=data["origin"],
            title=data["title"],
            body_markdown=data["body_markdown"],
            fetched_at=data["fetched_at"],
            locator=data["locator"],
        )


@dataclass(frozen=True)
class KnowledgeBase:
    benchmark_identifier: str
    documents: tuple[SourceDocument, ...]

    def to_json(self) -> dict[str, Any]:
        return {
            "benchmark_identifier": self.benchmark_identifier,
            "documents": [d.to_json() for d in self.documents],
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "KnowledgeBase":
        return cls(
            benchmark_identifier=data["benchmark_identifier"],
            documents=tuple(SourceDocument.from_json(d) for d in data["documents"]),
        )


@dataclass(frozen=True)
class ExtractedIdentifiers:
    hub_repo_id: str | None = None
    publication_url: str | None = None


# --- fetch plumbing ---------------------------------------------------------


class SourceCache:
    """Content cache for remote fetches, keyed by locator hash."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def _path(self, locator: str) -> Path:
        return self.directory / hashlib.sha256(locator.encode("utf-8")).hexdigest()[:24]

    def get(self, locator: str) -> bytes | None:
        p = self._path(locator)
        return p.read_bytes() if p.exists() else None

    def put(self, locator: str, content: bytes) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        self._path(locator).write_bytes(content)


def _fetch_with_retry(client: httpx.Client, url: str) -> httpx.Response:
    last_exc: Exception | None = None
    for attempt in range(_RETRIES + 1):
        try:
            return client.get(url, follow_redirects=True)
        except httpx.HTTPError as exc:
            last_exc = exc
            if attempt < _RETRIES:
                time.sleep(_BACKOFF_SECONDS * (2**attempt))
    raise last_exc  # type: ignore[misc]


def _cached_get(
    client: httpx.Client, url: str, cache: SourceCache | None
) -> tuple[bytes | None, int]:
    """Return (content, status). content is None on a non-200 status."""
    if cache is not None:
        hit = cache.get(url)
        if hit is not None:
            return hit, 200
    resp = _fetch_with_retry(client, url)
    if resp.status_code != 200:
        return None, resp.status_code
    if cache is not None:
        cache.put(url, resp.content)
    return resp.content, 200


# --- catalog -----------------------------------------------------------------


class CatalogSource:
    """A Unitxt-style catalog: dotted identifiers map to nested .json files."""

    def fetch_json_text(self, identifier: str) -> str | None:
        """Raw JSON text for the identifier, or None when absent."""
        raise NotImplementedError


class LocalCatalog(CatalogSource):
    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise CatalogUnreachable(f"catalog directory does not exist: {directory}")

    def fetch_json_text(self, identifier: str) -> str | None:
        path = self.directory / (identifier.replace(".", "/") + ".json")
        if not path.exists():
            return None
        return path.read_text(encoding="utf-8")


class RemoteCatalog(CatalogSource):
    def __init__(self, base_url: str, cache: SourceCache | None = None, client: httpx.Client | None = None):
        self.base_url = base_url.rstrip("/")
        self.cache = cache
        self._client = client or httpx.Client(timeout=60.0)

    def fetch_json_text(self, identifier: str) -> str | None:
        url = f"{self.base_url}/{identifier.replace('.', '/')}.json"
        try:
            content, status = _cached_get(self._client, url, self.cache)
        except httpx.HTTPError as exc:
            raise CatalogUnreachable(f"catalog fetch failed: {exc}") from exc
        if content is None:
            if status == 404:
                return None
            raise CatalogUnreachable(f"catalog HTTP {status} for {url}")
        return content.decode("utf-8")


def make_catalog(locator: str, cache: SourceCache | None = None) -> CatalogSource:
    if locator.startswith(("http://", "https://")):
        return RemoteCatalog(locator, cache=cache)
    return LocalCatalog(locator)


def _iter_strings(value: Any) -> Iterator[str]:
    if isinstance(value, str):
        yield value
    elif isinstance(value, dict):
        for v in value.values():
            yield from _iter_strings(v)
    elif isinstance(value, list):
        for v in value:
            yield from _iter_strings(v)


def scan_cited_assets(raw_json: Any, skip: str = "") -> tuple[AssetRef, ...]:
    """Collect catalog references from every string value, in discovery
    order without duplicates. `skip` drops the card's own identifier."""
    seen: set[str] = set()
    refs: list[AssetRef] = []
    for s in _iter_strings(raw_json):
        if s == skip or s in seen or not _CATALOG_REF_RE.match(s):
            continue
        seen.add(s)
        prefix = s.split(".", 1)[0]
        refs.append(AssetRef(kind=_CATALOG_PREFIXES[prefix], identifier=s))
    return tuple(refs)


def fetch_unitxt_card(identifier: str, catalog: CatalogSource) -> UnitxtCardDoc:
    """Fetch the catalog card and list the catalog assets it cites."""
    if not identifier:
        raise ValueError("identifier must be non-empty")
    text = catalog.fetch_json_text(identifier)
    if text is None:
        raise CardNotFound(identifier)
    raw = json.loads(text)
    return UnitxtCardDoc(
        identifier=identifier,
        raw_json=raw,
        cited_assets=scan_cited_assets(raw, skip=identifier),
    )


def _json_as_markdown(title: str, raw_text: str) -> str:
    return f"# {title}\n\n```json\n{raw_text.strip()}\n```\n"


def resolve_supplementary(
    card: UnitxtCardDoc, catalog: CatalogSource
) -> tuple[list[SourceDocument], list[str]]:
    """One document per resolvable cited asset; unresolvable assets become
    warnings, never errors."""
    docs: list[SourceDocument] = []
    warnings: list[str] = []
    for ref in card.cited_assets:
        text = catalog.fetch_json_text(ref.identifier)
        if text is None:
            warnings.append(f"cited asset not found in catalog: {ref.identifier}")
            continue
        docs.append(
            SourceDocument(
                source_id=ref.identifier,
                origin="unitxt_supplementary",
                title=ref.identifier,
                body_markdown=_json_as_markdown(ref.identifier, text),
                fetched_at=_now_iso(),
                locator=f"catalog:{ref.identifier}",
            )
        )
    return docs, warnings


def card_as_document(card: UnitxtCardDoc) -> SourceDocument:
    return SourceDocument(
        source_id=card.identifier,
        origin="unitxt_card",
        title=card.identifier,
        body_markdown=_json_as_markdown(
            card.identifier, json.dumps(card.raw_json, indent=2, ensure_ascii=False)
        ),
        fetched_at=_now_iso(),
        locator=f"catalog:{card.identifier}",
    )


# --- identifier extraction ----------------------------------------------------


def extract_identifiers(card: UnitxtCardDoc) -> ExtractedIdentifiers:
    """Pull the hub repository id and publication URL out of the card JSON.

    The repo id comes from the loader's path when the loader type points at
    a hub dataset; the publication URL is the first URL found in the
    citation/description fields (first match wins).
    """
    hub_repo_id = None
    raw = card.raw_json if isinstance(card.raw_json, dict) else {}
    loader = raw.get("loader")
    if isinstance(loader, dict):
        loader_type = str(loader.get("__type__", loader.get("type", ""))).lower()
        path = loader.get("path")
        if "hf" in loader_type and isinstance(path, str) and _HUB_REPO_RE.match(path):
            hub_repo_id = path

    publication_url = None
    for key in ("citation", "__citation__", "description", "__description__"):
        value = raw.get(key)
        if not isinstance(value, str):
            continue
        m = _URL_RE.search(value)
        if m:
            publication_url = m.group(0).rstrip(".,;")
            break

    return ExtractedIdentifiers(hub_repo_id=hub_repo_id, publication_url=publication_url)


# --- hub ----------------------------------------------------------------------


class HubSource:
    def fetch_readme(self, repo_id: str) -> str | None:
        raise NotImplementedError

    def fetch_info(self, repo_id: str) -> dict[str, Any] | None:
        raise NotImplementedError

    def exists(self, repo_id: str) -> bool:
        raise NotImplementedError


class LocalHub(HubSource):
    """Fixture hub: {dir}/{repo_id}/README.md and info.json."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise HubUnreachable(f"hub directory does not exist: {directory}")

    def exists(self, repo_id: str) -> bool:
        return (self.directory / repo_id).is_dir()

    def fetch_readme(self, repo_id: str) -> str | None:
        p = self.directory / repo_id / "README.md"
        return p.read_text(encoding="utf-8") if p.exists() else None

    def fetch_info(self, repo_id: str) -> dict[str, Any] | None:
        p = self.directory / repo_id / "info.json"
        return json.loads(p.read_text(encoding="utf-8")) if p.exists() else None


class RemoteHub(HubSource):
    def __init__(self, base_url: str, cache: SourceCache | None = None, client: httpx.Client | None = None):
        self.base_url = base_url.rstrip("/")
        self.cache = cache
        self._client = client or httpx.Client(timeout=60.0)

    def _get(self, url: str) -> bytes | None:
        try:
            content, status = _cached_get(self._client, url, self.cache)
        except httpx.HTTPError as exc:
            raise HubUnreachable(f"hub fetch failed: {exc}") from exc
        if content is None and status not in (404,):
            raise HubUnreachable(f"hub HTTP {status} for {url}")
        return content

    def exists(self, repo_id: str) -> bool:
        return self.fetch_info(repo_id) is not None

    def fetch_info(self, repo_id: str) -> dict[str, Any] | None:
        content = self._get(f"{self.base_url}/api/datasets/{repo_id}")
        return None if content is None else json.loads(content.decode("utf-8"))

    def fetch_readme(self, repo_id: str) -> str | None:
        content = self._get(f"{self.base_url}/datasets/{repo_id}/raw/main/README.md")
        return None if content is None else content.decode("utf-8")


def make_hub(locator: str, cache: SourceCache | None = None) -> HubSource:
    if locator.startswith(("http://", "https://")):
        return RemoteHub(locator, cache=cache)
    return LocalHub(locator)


def _render_hub_summary(info: dict[str, Any]) -> str:
    """Human-readable lines for the structured metadata we care about.

    Missing keys are simply omitted.
    """
    card_data = info.get("cardData", {}) if isinstance(info.get("cardData"), dict) else {}

    def pick(*keys: str) -> Any:
        for k in keys:
            if k in card_data:
                return card_data[k]
            if k in info:
                return info[k]
        return None

    lines = []
    license_ = pick("license")
    if license_:
        lines.append(f"- License: {license_}")
    tasks = pick("task_categories", "task_ids")
    if tasks:
        lines.append(f"- Task tags: {', '.join(map(str, tasks))}")
    sizes = pick("size_categories")
    if sizes:
        lines.append(f"- Size categories: {', '.join(map(str, sizes))}")
    languages = pick("language", "languages")
    if languages:
        if isinstance(languages, str):
            languages = [languages]
        lines.append(f"- Languages: {', '.join(map(str, languages))}")
    return "\n".join(lines)


def fetch_hub_metadata(repo_id: str, hub: HubSource) -> SourceDocument:
    """Repository README plus a rendered summary of the dataset-info record."""
    if not _HUB_REPO_RE.match(repo_id):
        raise ValueError(f"invalid hub repo id: {repo_id!r}")
    if not hub.exists(repo_id):
        raise RepoNotFound(repo_id)
    readme = hub.fetch_readme(repo_id) or ""
    info = hub.fetch_info(repo_id)
    parts = [readme.rstrip()]
    if info is not None:
        summary = _render_hub_summary(info)
        if summary:
            parts.append("## Hub metadata\n\n" + summary)
    body = "\n\n".join(p for p in parts if p)
    if not body:
        raise RepoNotFound(repo_id)
    return SourceDocument(
        source_id=f"hub:{repo_id}",
        origin="hub_metadata",
        title=repo_id,
        body_markdown=body + "\n",
        fetched_at=_now_iso(),
        locator=f"hub:{repo_id}",
    )


# --- publication ----------------------------------------------------------------


class ConverterSource:
    """External document-to-markdown converter."""

    def convert(self, locator: str) -> str:
        raise NotImplementedError


class CommandConverter(ConverterSource):
    """Command contract: document path as argv[1], markdown on stdout, exit 0."""

    def __init__(self, argv_prefix: Sequence[str]):
        if not argv_prefix:
            raise ConverterNotConfigured("empty converter command")
        self.argv_prefix = list(argv_prefix)

    def convert(self, locator: str) -> str:
        try:
            proc = subprocess.run(
                self.argv_prefix + [locator],
                capture_output=True,
                text=True,
                timeout=600,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ConversionFailed(f"converter failed to run: {exc}") from exc
        if proc.returncode != 0:
            raise ConversionFailed(
                f"converter exited {proc.returncode}: {proc.stderr.strip()[:200]}"
            )
        return proc.stdout


class HttpConverter(ConverterSource):
    """POST the document bytes to an endpoint that answers with markdown."""

    def __init__(self, endpoint: str, client: httpx.Client | None = None):
        self.endpoint = endpoint
        self._client = client or httpx.Client(timeout=600.0)

    def convert(self, locator: str) -> str:
        data = Path(locator).read_bytes()
        try:
            resp = self._client.post(self.endpoint, content=data)
        except httpx.HTTPError as exc:
            raise ConversionFailed(f"converter endpoint error: {exc}") from exc
        if resp.status_code != 200:
            raise ConversionFailed(f"converter HTTP {resp.status_code}")
        return resp.text


def ingest_publication(
    locator: str,
    converter: ConverterSource | None = None,
    cache: SourceCache | None = None,
    client: httpx.Client | None = None,
) -> SourceDocument:
    """Read a markdown publication verbatim, or convert anything else
    through the configured external converter."""
    is_url = locator.startswith(("http://", "https://"))
    local_path = locator

    if is_url:
        if converter is None and not locator.endswith(".md"):
            raise ConverterNotConfigured(f"publication URL needs a converter: {locator}")
        http = client or httpx.Client(timeout=120.0)
        try:
            content, status = _cached_get(http, locator, cache)
        except httpx.HTTPError as exc:
            raise ConversionFailed(f"failed to download publication: {exc}") from exc
        if content is None:
            raise ConversionFailed(f"publication download HTTP {status}")
        suffix = ".md" if locator.endswith(".md") else Path(locator).suffix or ".bin"
        tmpdir = cache.directory if cache is not None else Path(".")
        tmpdir.mkdir(parents=True, exist_ok=True)
        local_path = str(
            tmpdir / (hashlib.sha256(locator.encode()).hexdigest()[:16] + suffix)
        )
        Path(local_path).write_bytes(content)

    if local_path.endswith(".md"):
        p = Path(local_path)
        if not p.exists():
            raise FileNotFoundError(local_path)
        body = p.read_text(encoding="utf-8")
    else:
        if converter is None:
            raise ConverterNotConfigured(f"no converter configured for {locator}")
        if not Path(local_path).exists():
            raise FileNotFoundError(local_path)
        body = converter.convert(local_path)

    if not body.strip():
        raise ConversionFailed(f"publication body is empty: {locator}")
    title = Path(locator).name
    return SourceDocument(
        source_id=f"publication:{title}",
        origin="publication",
        title=title,
        body_markdown=body,
        fetched_at=_now_iso(),
        locator=locator,
    )


def load_user_document(path: str | Path) -> SourceDocument:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(str(path))
    return SourceDocument(
        source_id=f"user:{p.name}",
        origin="user_supplied",
        title=p.name,
        body_markdown=p.read_text(encoding="utf-8"),
        fetched_at=_now_iso(),
        locator=str(path),
    )


# --- assembly --------------------------------------------------------------------


def assemble_knowledge_base(
    benchmark_id: str, docs: Sequence[SourceDocument]
) -> KnowledgeBase:
    """Order documents by origin priority; reject duplicates and emptiness."""
    if not docs:
        raise EmptyKnowledgeBase("a knowledge base needs at least one document")
    seen: set[str] = set()
    for doc in docs:
        if doc.source_id in seen:
            raise DuplicateSourceId(doc.source_id)
        seen.add(doc.source_id)
    ordered = sorted(
        enumerate(docs), key=lambda pair: (ORIGIN_PRIORITY[pair[1].origin], pair[0])
    )
    return KnowledgeBase(
        benchmark_identifier=benchmark_id,
        documents=tuple(doc for _, doc in ordered),
    )

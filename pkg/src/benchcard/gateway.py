"""Uniform contract for chat-completion and text-embedding backends.

Two chat implementations: a remote JSON-over-HTTP backend (messages list in,
first choice's message content out) and a scripted backend that is a pure
function of the request, used for tests and offline runs.

Pipeline prompts follow a small protocol so the scripted backend can
dispatch without a model: the user message starts with a tag line like
``[[task:judge]]`` and machine-readable payloads sit in delimited blocks::

    Statement:
    <<<
    ...text...
    >>>

Remote models simply see the markers as part of the prompt.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import threading
import time
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

import httpx

from .errors import (
    BackendUnreachable,
    ContextTooLarge,
    EmptyInput,
    GatewayError,
    MissingScript,
    NonJsonOutputAfterRetries,
)

BLOCK_OPEN = "<<<"
BLOCK_CLOSE = ">>>"

JSON_RETRIES = 3
HASH_EMBEDDING_DIM = 256

# Fixed verdict triples used by the scripted entailment judge.
SCRIPTED_ENTAIL = (0.95, 0.01, 0.04)
SCRIPTED_CONTRADICT = (0.02, 0.93, 0.05)
SCRIPTED_NEUTRAL = (0.05, 0.05, 0.90)


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: str
    temperature: float = 0.0
    max_output_tokens: int = 2048
    response_format: str = "free_text"  # or "json"

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError("temperature must be in [0, 1]")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be > 0")
        if self.response_format not in ("free_text", "json"):
            raise ValueError(f"invalid response_format: {self.response_format!r}")


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    @property
    def dimension(self) -> int:
        return len(self.values)

    def dot(self, other: "EmbeddingVector") -> float:
        return sum(a * b for a, b in zip(self.values, other.values))


@dataclass
class CallRecord:
    """One gateway call, hashed for the run log (prompts are not stored)."""

    kind: str  # chat | embed
    detail: str
    request_sha256: str
    response_sha256: str
    started_at: str
    duration_ms: float

    def to_json(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "detail": self.detail,
            "request_sha256": self.request_sha256,
            "response_sha256": self.response_sha256,
            "started_at": self.started_at,
            "duration_ms": self.duration_ms,
        }


# --- prompt protocol helpers ---------------------------------------------


def task_tag(task: str, **attrs: str) -> str:
    parts = [f"task:{task}"] + [f"{k}={v}" for k, v in attrs.items()]
    return "[[" + " ".join(parts) + "]]"


def parse_task_tag(user: str) -> tuple[str, dict[str, str]] | None:
    m = re.match(r"\[\[task:(\S+?)((?:\s+\S+=\S+)*)\]\]", user.strip())
    if not m:
        return None
    attrs = dict(pair.split("=", 1) for pair in m.group(2).split())
    return m.group(1), attrs


def block(label: str, text: str) -> str:
    return f"{label}:\n{BLOCK_OPEN}\n{text}\n{BLOCK_CLOSE}"


def parse_blocks(user: str) -> dict[str, str]:
    """Extract ``Label:\\n<<<\\n...\\n>>>`` payloads from a prompt."""
    pattern = re.compile(
        r"^(\w[\w ]*):\n" + re.escape(BLOCK_OPEN) + r"\n(.*?)\n" + re.escape(BLOCK_CLOSE),
        re.S | re.M,
    )
    return {m.group(1): m.group(2) for m in pattern.finditer(user)}


def split_sentences(text: str) -> list[str]:
    """Deterministic sentence split used by the scripted atomizer.

    Lines are the outer unit (list bullets become standalone sentences,
    comment markers are dropped), then each line splits after .!? + space.
    """
    out: list[str] = []
    for rawline in text.splitlines():
        line = rawline.strip()
        if not line or line.startswith("<!--"):
            continue
        if line[:2] in ("- ", "* "):
            line = line[2:].strip()
        for part in re.split(r"(?<=[.!?])\s+", line):
            part = part.strip()
            if part:
                out.append(part)
    return out


def _norm_tokens(text: str) -> list[str]:
    return re.sub(r"[^\w\s]", " ", text.lower()).split()


def normalized_contains(haystack: str, needle: str) -> bool:
    """True when needle's token sequence occurs contiguously in haystack."""
    n = _norm_tokens(needle)
    if not n:
        return False
    h = " " + " ".join(_norm_tokens(haystack)) + " "
    return f" {' '.join(n)} " in h


# --- backends -------------------------------------------------------------


class ChatBackend(Protocol):
    def complete_once(self, request: ChatRequest) -> str: ...


class EmbeddingBackend(Protocol):
    def embed_raw(self, texts: Sequence[str]) -> list[list[float]]: ...


class RemoteChatBackend:
    """JSON-over-HTTP chat completions; in-flight requests bounded by a semaphore."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "",
        timeout_seconds: float = 120.0,
        max_in_flight: int = 4,
        client: httpx.Client | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self._client = client or httpx.Client(timeout=timeout_seconds)
        self._sem = threading.BoundedSemaphore(max_in_flight)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "") if self.api_key_env else ""
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete_once(self, request: ChatRequest) -> str:
        body: dict[str, Any] = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        if request.response_format == "json":
            body["response_format"] = {"type": "json_object"}
        try:
            with self._sem:
                resp = self._client.post(self.endpoint, json=body, headers=self._headers())
        except httpx.HTTPError as exc:
            raise BackendUnreachable(f"chat endpoint error: {exc}") from exc
        if resp.status_code == 413 or (
            resp.status_code == 400 and "context" in resp.text.lower()
        ):
            raise ContextTooLarge(resp.text[:200])
        if resp.status_code != 200:
            raise BackendUnreachable(f"chat endpoint HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise BackendUnreachable(f"malformed chat response: {exc}") from exc


class RemoteEmbeddingBackend:
    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "",
        timeout_seconds: float = 120.0,
        client: httpx.Client | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self._client = client or httpx.Client(timeout=timeout_seconds)

    def embed_raw(self, texts: Sequence[str]) -> list[list[float]]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "") if self.api_key_env else ""
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self._client.post(
                self.endpoint,
                json={"model": self.model, "input": list(texts)},
                headers=headers,
            )
        except httpx.HTTPError as exc:
            raise BackendUnreachable(f"embedding endpoint error: {exc}") from exc
        if resp.status_code != 200:
            raise BackendUnreachable(
                f"embedding endpoint HTTP {resp.status_code}: {resp.text[:200]}"
            )
        try:
            rows = resp.json()["data"]
            return [list(map(float, row["embedding"])) for row in rows]
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendUnreachable(f"malformed embedding response: {exc}") from exc


class HashEmbeddingBackend:
    """Scripted embedding: hash whitespace tokens into D buckets and count.

    sha256 keeps the bucket assignment identical across processes and
    platforms; the gateway L2-normalizes afterwards.
    """

    def __init__(self, dimension: int = HASH_EMBEDDING_DIM):
        self.dimension = dimension

    def embed_raw(self, texts: Sequence[str]) -> list[list[float]]:
        vectors = []
        for text in texts:
            v = [0.0] * self.dimension
            for token in text.split():
                digest = hashlib.sha256(token.encode("utf-8")).digest()
                v[int.from_bytes(digest[:8], "big") % self.dimension] += 1.0
            vectors.append(v)
        return vectors


class ScriptedChatBackend:
    """Pure-function chat backend: exact response table plus task handlers.

    Lookup order: exact user-prompt table, then the task-tag handlers driven
    by the script config. Anything else raises MissingScript so tests fail
    loudly instead of silently free-associating.

    Script config keys (all optional):
      responses       exact user prompt -> reply
      sections        section id -> composed section text
      risks           risk id -> rationale (these risks are "applicable")
      revisions       field id -> replacement field text
      judge_overrides [{statement_contains, context_contains?, verdict: [e,c,n]}]
      grader          "all" (default) | "reverse" | "none"
    """

    def __init__(self, table: Mapping[str, str] | None = None, script: Mapping[str, Any] | None = None):
        script = dict(script or {})
        self._table = dict(table or {})
        self._table.update(script.get("responses", {}))
        self._sections: dict[str, str] = dict(script.get("sections", {}))
        self._risks: dict[str, str] = dict(script.get("risks", {}))
        self._revisions: dict[str, str] = dict(script.get("revisions", {}))
        self._judge_overrides: list[dict[str, Any]] = list(script.get("judge_overrides", []))
        self._grader_mode: str = script.get("grader", "all")

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedChatBackend":
        with open(path, encoding="utf-8") as fh:
            return cls(script=json.load(fh))

    def complete_once(self, request: ChatRequest) -> str:
        if request.user in self._table:
            return self._table[request.user]
        tag = parse_task_tag(request.user)
        if tag is not None:
            task, attrs = tag
            handler = getattr(self, f"_handle_{task}", None)
            if handler is not None:
                return handler(request, attrs)
        raise MissingScript(f"no scripted response for prompt starting {request.user[:80]!r}")

    # -- task handlers

    def _handle_compose(self, request: ChatRequest, attrs: dict[str, str]) -> str:
        section = attrs.get("section", "")
        if section not in self._sections:
            raise MissingScript(f"no scripted section text for {section!r}")
        return self._sections[section]

    def _handle_risks(self, request: ChatRequest, attrs: dict[str, str]) -> str:
        findings = []
        for m in re.finditer(r"^RISK (\S+):", request.user, re.M):
            risk_id = m.group(1)
            if risk_id in self._risks:
                findings.append(
                    {"risk_id": risk_id, "applicable": True, "rationale": self._risks[risk_id]}
                )
            else:
                findings.append({"risk_id": risk_id, "applicable": False, "rationale": ""})
        return json.dumps({"findings": findings})

    def _handle_atomize(self, request: ChatRequest, attrs: dict[str, str]) -> str:
        text = parse_blocks(request.user).get("Text", "")
        atoms = [{"text": s} for s in split_sentences(text)]
        return json.dumps({"atoms": atoms})

    def _handle_grade(self, request: ChatRequest, attrs: dict[str, str]) -> str:
        chunk_ids = re.findall(r"^CHUNK (\S+):", request.user, re.M)
        if self._grader_mode == "none":
            return json.dumps({"grades": []})
        if self._grader_mode == "reverse":
            chunk_ids = list(reversed(chunk_ids))
        grades = [
            {"chunk_id": cid, "relevant": True, "rank": i + 1, "note": ""}
            for i, cid in enumerate(chunk_ids)
        ]
        return json.dumps({"grades": grades})

    def _handle_judge(self, request: ChatRequest, attrs: dict[str, str]) -> str:
        blocks = parse_blocks(request.user)
        statement = blocks.get("Statement", "")
        context = blocks.get("Context", "")
        triple = self._judge_verdict(statement, context)
        return json.dumps(
            {"entail": triple[0], "contradict": triple[1], "neutral": triple[2]}
        )

    def _judge_verdict(self, statement: str, context: str) -> tuple[float, float, float]:
        for rule in self._judge_overrides:
            if rule.get("statement_contains", "").lower() not in statement.lower():
                continue
            ctx_needle = rule.get("context_contains", "")
            if ctx_needle and ctx_needle.lower() not in context.lower():
                continue
            e, c, n = rule["verdict"]
            return (float(e), float(c), float(n))
        # negation first: the negated sentence contains the statement verbatim
        if normalized_contains(context, "it is not true that " + statement):
            return SCRIPTED_CONTRADICT
        if normalized_contains(context, statement):
            return SCRIPTED_ENTAIL
        return SCRIPTED_NEUTRAL

    def _handle_revise(self, request: ChatRequest, attrs: dict[str, str]) -> str:
        fieldname = attrs.get("field", "")
        if fieldname not in self._revisions:
            raise MissingScript(f"no scripted revision for field {fieldname!r}")
        return self._revisions[fieldname]


# --- gateway ----------------------------------------------------------------


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class Gateway:
    """Front door for all model calls; records one CallRecord per call."""

    def __init__(
        self,
        chat_backend: ChatBackend,
        embedding_backend: EmbeddingBackend,
        json_retries: int = JSON_RETRIES,
    ):
        self.chat_backend = chat_backend
        self.embedding_backend = embedding_backend
        self.json_retries = json_retries
        self._log: list[CallRecord] = []
        self._log_lock = threading.Lock()

    @property
    def call_log(self) -> list[CallRecord]:
        return list(self._log)

    def _record(self, kind: str, detail: str, req_sha: str, resp_sha: str, started: float) -> None:
        rec = CallRecord(
            kind=kind,
            detail=detail,
            request_sha256=req_sha,
            response_sha256=resp_sha,
            started_at=datetime.fromtimestamp(started, tz=timezone.utc).isoformat(),
            duration_ms=round((time.time() - started) * 1000, 3),
        )
        with self._log_lock:
            self._log.append(rec)

    def complete(self, request: ChatRequest) -> str:
        """Run a chat completion; in JSON mode, retry with a corrective
        reminder until the output parses, up to json_retries attempts total."""
        detail = ""
        tag = parse_task_tag(request.user)
        if tag is not None:
            detail = tag[0] + ("" if not tag[1] else " " + " ".join(f"{k}={v}" for k, v in tag[1].items()))

        attempts = self.json_retries if request.response_format == "json" else 1
        req = request
        last_output = ""
        for _ in range(attempts):
            started = time.time()
            output = self.chat_backend.complete_once(req)
            self._record("chat", detail, _sha(req.system + "\x00" + req.user), _sha(output), started)
            if request.response_format != "json":
                return output
            try:
                json.loads(output)
                return output
            except (json.JSONDecodeError, TypeError):
                last_output = output
                # The reminder rides on the system message so pure-function
                # scripted backends keyed on the user prompt stay scripted.
                reminder = (
                    "\n\nReminder: your previous reply was not valid JSON:\n"
                    + block("Previous reply", output)
                    + "\nReply with a single valid JSON object and nothing else."
                )
                req = replace(req, system=request.system + reminder)
        raise NonJsonOutputAfterRetries(attempts, last_output)

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        """Embed texts; every returned vector is L2-normalized (unit norm)."""
        if not texts:
            raise EmptyInput("embed() requires at least one text")
        if any(not t.strip() for t in texts):
            raise EmptyInput("embed() received a blank text")
        started = time.time()
        raw = self.embedding_backend.embed_raw(texts)
        if len(raw) != len(texts):
            raise GatewayError("embedding backend returned wrong number of vectors")
        vectors = []
        dim = len(raw[0]) if raw else 0
        for values in raw:
            if len(values) != dim:
                raise GatewayError("embedding backend returned mixed dimensions")
            norm = math.sqrt(sum(x * x for x in values))
            if norm <= 0.0:
                raise GatewayError("embedding has zero norm")
            vectors.append(EmbeddingVector(values=tuple(x / norm for x in values)))
        resp_sha = _sha(json.dumps([[round(v, 12) for v in row] for row in raw]))
        self._record("embed", f"n={len(texts)}", _sha("\x00".join(texts)), resp_sha, started)
        return vectors


# --- configuration ----------------------------------------------------------

_ENV_OVERRIDES = {
    "chat_endpoint": "BENCHCARD_CHAT_ENDPOINT",
    "model": "BENCHCARD_MODEL",
    "embedding_endpoint": "BENCHCARD_EMBEDDING_ENDPOINT",
    "embedding_model": "BENCHCARD_EMBEDDING_MODEL",
    "timeout_seconds": "BENCHCARD_TIMEOUT_SECONDS",
}


@dataclass
class GatewayConfig:
    backend: str = "remote"  # remote | scripted
    chat_endpoint: str = ""
    model: str = ""
    api_key_env: str = "BENCHCARD_API_KEY"
    embedding_endpoint: str = ""
    embedding_model: str = ""
    timeout_seconds: float = 120.0
    max_in_flight: int = 4
    script_path: str | None = None

    @classmethod
    def load(cls, path: str | Path | None = None) -> "GatewayConfig":
        """Read config from a JSON file, then apply environment overrides."""
        data: dict[str, Any] = {}
        if path is not None:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
            script = data.get("script_path")
            if script and not os.path.isabs(script):
                data["script_path"] = str(Path(path).parent / script)
        cfg = cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})
        for attr, env in _ENV_OVERRIDES.items():
            if env in os.environ:
                value: Any = os.environ[env]
                if attr == "timeout_seconds":
                    value = float(value)
                setattr(cfg, attr, value)
        return cfg


def build_gateway(config: GatewayConfig) -> Gateway:
    if config.backend == "scripted":
        chat: ChatBackend
        if config.script_path:
            chat = ScriptedChatBackend.from_file(config.script_path)
        else:
            chat = ScriptedChatBackend()
        return Gateway(chat, HashEmbeddingBackend())
    if config.backend != "remote":
        raise ValueError(f"unknown gateway backend: {config.backend!r}")
    chat_backend = RemoteChatBackend(
        endpoint=config.chat_endpoint,
        model=config.model,
        api_key_env=config.api_key_env,
        timeout_seconds=config.timeout_seconds,
        max_in_flight=config.max_in_flight,
    )
    embed_backend: EmbeddingBackend
    if config.embedding_endpoint:
        embed_backend = RemoteEmbeddingBackend(
            endpoint=config.embedding_endpoint,
            model=config.embedding_model,
            api_key_env=config.api_key_env,
            timeout_seconds=config.timeout_seconds,
        )
    else:
        # No embedding service configured: fall back to the deterministic
        # hash embedding so retrieval still works.
        embed_backend = HashEmbeddingBackend()
    return Gateway(chat_backend, embed_backend)

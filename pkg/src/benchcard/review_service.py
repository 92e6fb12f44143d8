"""HTTP review service: the one mutation path for a review session.

Serves the session JSON, accepts accept/edit/regenerate decisions, and
finalizes by applying all decisions to the card. Session writes go through
a process-wide lock and an atomic file replace, so concurrent decisions on
distinct atoms never lose writes. All /api responses share the envelope
{ok, data|error}. The static review UI is served at /.
"""

from __future__ import annotations

import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from fastapi import FastAPI, Request
from fastapi.responses import HTMLResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from .errors import NoSession, UndecidedAtoms
from .gateway import Gateway
from .pipeline import Workspace, apply_decisions, load_session, save_session

DECISION_ACTIONS = ("accept", "edit", "regenerate")

_PLACEHOLDER_HTML = """<!doctype html>
<html><head><title>benchcard review</title></head>
<body>
<h1>benchcard review service</h1>
<p>No UI bundle is installed. The review API lives under <code>/api</code>:
<code>GET /api/session</code>, <code>POST /api/atoms/{id}/decision</code>,
<code>POST /api/finalize</code>.</p>
</body></html>
"""


def _ok(data: Any, status_code: int = 200) -> JSONResponse:
    return JSONResponse({"ok": True, "data": data}, status_code=status_code)


def _err(message: str, status_code: int, code: str = "error") -> JSONResponse:
    return JSONResponse(
        {"ok": False, "error": {"code": code, "message": message}},
        status_code=status_code,
    )


def _atom_sort_key(atom: dict[str, Any]) -> tuple[float, str]:
    score = atom.get("score")
    return (score if score is not None else -1.0, atom["atom_id"])


class SessionStore:
    """File-backed session with serialized mutations."""

    def __init__(self, workspace: str | Path):
        self.workspace = Path(workspace)
        self._lock = threading.Lock()

    def read(self) -> dict[str, Any]:
        session = load_session(self.workspace)
        session["atoms"].sort(key=_atom_sort_key)
        return session

    def decide(self, atom_id: str, decision: dict[str, Any]) -> dict[str, Any]:
        with self._lock:
            session = load_session(self.workspace)
            for atom in session["atoms"]:
                if atom["atom_id"] == atom_id:
                    atom["decision"] = decision
                    atom["status"] = "resolved"
                    save_session(self.workspace, session)
                    return atom
        raise KeyError(atom_id)


def create_app(
    workspace: str | Path,
    ui_dir: str | Path | None = None,
    gateway: Gateway | None = None,
) -> FastAPI:
    app = FastAPI(title="benchcard review", docs_url=None, redoc_url=None)
    store = SessionStore(workspace)
    finalize_lock = threading.Lock()

    @app.get("/healthz")
    def healthz() -> JSONResponse:
        return _ok({"status": "up", "workspace": str(store.workspace)})

    @app.get("/api/session")
    def get_session() -> JSONResponse:
        try:
            return _ok(store.read())
        except NoSession as exc:
            return _err(str(exc), 404, "no_session")

    @app.get("/api/atoms")
    def list_atoms(status: str = "all") -> JSONResponse:
        try:
            session = store.read()
        except NoSession as exc:
            return _err(str(exc), 404, "no_session")
        atoms = session["atoms"]
        if status == "flagged":
            atoms = [a for a in atoms if not a.get("decision")]
        elif status == "resolved":
            atoms = [a for a in atoms if a.get("decision")]
        elif status != "all":
            return _err(f"unknown status filter: {status!r}", 422, "bad_filter")
        return _ok(atoms)

    @app.get("/api/atoms/{atom_id}")
    def get_atom(atom_id: str) -> JSONResponse:
        try:
            session = store.read()
        except NoSession as exc:
            return _err(str(exc), 404, "no_session")
        for atom in session["atoms"]:
            if atom["atom_id"] == atom_id:
                return _ok(atom)
        return _err(f"unknown atom: {atom_id}", 404, "not_found")

    @app.post("/api/atoms/{atom_id}/decision")
    async def post_decision(atom_id: str, request: Request) -> JSONResponse:
        try:
            body = await request.json()
        except Exception:
            return _err("request body must be JSON", 422, "bad_request")
        if not isinstance(body, dict):
            return _err("request body must be a JSON object", 422, "bad_request")

        action = body.get("action")
        edited_text = body.get("edited_text")
        if action not in DECISION_ACTIONS:
            return _err(
                f"action must be one of {', '.join(DECISION_ACTIONS)}", 422, "bad_action"
            )
        if action == "edit":
            if not isinstance(edited_text, str) or not edited_text.strip():
                return _err("action 'edit' requires non-empty edited_text", 422, "bad_edit")
        elif edited_text is not None:
            return _err("edited_text is only allowed with action 'edit'", 422, "bad_edit")

        decision = {
            "action": action,
            "decided_at": datetime.now(timezone.utc).isoformat(),
        }
        if action == "edit":
            decision["edited_text"] = edited_text
        try:
            atom = store.decide(atom_id, decision)
        except NoSession as exc:
            return _err(str(exc), 404, "no_session")
        except KeyError:
            return _err(f"unknown atom: {atom_id}", 404, "not_found")
        return _ok(atom)

    @app.post("/api/finalize")
    def finalize() -> JSONResponse:
        with finalize_lock:
            try:
                card = apply_decisions(store.workspace, gateway=gateway)
            except UndecidedAtoms as exc:
                return _err(str(exc), 409, "undecided_atoms")
            except NoSession as exc:
                return _err(str(exc), 404, "no_session")
        ws = Workspace(store.workspace)
        return _ok(
            {
                "card_path": str(ws.card_final_path),
                "benchmark_id": card.benchmark_id,
                "fields": {
                    sid: {"status": fv.status, "revision": fv.revision}
                    for sid, fv in card.fields.items()
                },
            }
        )

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    else:

        @app.get("/", response_class=HTMLResponse)
        def placeholder() -> str:
            return _PLACEHOLDER_HTML

    return app


def serve_review(
    workspace: str | Path,
    port: int,
    ui_dir: str | Path | None = None,
    gateway: Gateway | None = None,
    host: str = "127.0.0.1",
) -> None:
    """Run the review service until interrupted; decisions persist on every
    POST, so a signal-driven shutdown loses nothing."""
    import uvicorn

    load_session(workspace)  # NoSession check before binding the port
    app = create_app(workspace, ui_dir=ui_dir, gateway=gateway)
    uvicorn.run(app, host=host, port=port, log_level="warning")

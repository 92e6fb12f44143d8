"""The built review UI is served by the review service at / (when present)."""

from __future__ import annotations

from pathlib import Path

import httpx
import pytest

from benchcard.review_service import create_app
from server_util import ReviewServer
from test_review_api import synthetic_session_ws

UI_DIST = Path(__file__).parent.parent / "frontend" / "dist"

pytestmark = pytest.mark.skipif(
    not (UI_DIST / "index.html").exists(),
    reason="frontend bundle not built (run `npm run build` in frontend/)",
)


def test_bundle_served_at_root(tmp_path):
    ws = synthetic_session_ws(tmp_path)
    with ReviewServer(create_app(ws, ui_dir=UI_DIST)) as server:
        page = httpx.get(f"{server.base_url}/")
        assert page.status_code == 200
        assert '<div id="app">' in page.text

        main_js = httpx.get(f"{server.base_url}/js/main.js")
        assert main_js.status_code == 200
        assert "ReviewApp" in main_js.text

        assert httpx.get(f"{server.base_url}/styles.css").status_code == 200
        # the API namespace is not shadowed by the static mount
        assert httpx.get(f"{server.base_url}/api/session").json()["ok"] is True

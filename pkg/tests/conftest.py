from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for reference_impls

from benchcard.card_model import CardSchema
from benchcard.extraction import SourceDocument
from benchcard.gateway import Gateway, HashEmbeddingBackend, ScriptedChatBackend

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def schema() -> CardSchema:
    return CardSchema.default()


@pytest.fixture
def scripted_gateway() -> Gateway:
    backend = ScriptedChatBackend.from_file(FIXTURES / "script.json")
    return Gateway(backend, HashEmbeddingBackend())


def make_doc(
    body: str,
    source_id: str = "doc",
    origin: str = "publication",
    title: str = "doc",
) -> SourceDocument:
    return SourceDocument(
        source_id=source_id,
        origin=origin,
        title=title,
        body_markdown=body,
        fetched_at="2024-01-01T00:00:00+00:00",
        locator=f"test:{source_id}",
    )

"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class BenchcardError(Exception):
    """Base class for all benchcard errors."""


# --- card model ---------------------------------------------------------


class MalformedJson(BenchcardError):
    """Input text is not valid JSON."""


class UnknownSection(BenchcardError):
    """A card field references a section id absent from the schema."""

    def __init__(self, section_id: str):
        self.section_id = section_id
        super().__init__(f"unknown section id: {section_id!r}")


class InvalidStatusTransition(BenchcardError):
    """A field status change outside the allowed transition graph."""


# --- gateway ------------------------------------------------------------


class GatewayError(BenchcardError):
    """Base class for chat/embedding backend failures."""


class BackendUnreachable(GatewayError):
    """The configured backend could not be reached or answered with an error."""


class MissingScript(BackendUnreachable):
    """A scripted backend has no response for the given request."""


class NonJsonOutputAfterRetries(GatewayError):
    """JSON-mode completion never produced parseable JSON."""

    def __init__(self, attempts: int, last_output: str = ""):
        self.attempts = attempts
        self.last_output = last_output
        super().__init__(f"backend returned non-JSON output in all {attempts} attempts")


class ContextTooLarge(GatewayError):
    """The prompt exceeds the backend's context window."""


class EmptyInput(GatewayError):
    """embed() was called with no texts, or with a blank text."""


# --- extraction ---------------------------------------------------------


class ExtractionError(BenchcardError):
    """Base class for source connector failures."""


class CardNotFound(ExtractionError):
    def __init__(self, identifier: str):
        self.identifier = identifier
        super().__init__(f"catalog card not found: {identifier!r}")


class CatalogUnreachable(ExtractionError):
    pass


class RepoNotFound(ExtractionError):
    def __init__(self, repo_id: str):
        self.repo_id = repo_id
        super().__init__(f"hub repository not found: {repo_id!r}")


class HubUnreachable(ExtractionError):
    pass


class ConverterNotConfigured(ExtractionError):
    pass


class ConversionFailed(ExtractionError):
    pass


class DuplicateSourceId(ExtractionError):
    def __init__(self, source_id: str):
        self.source_id = source_id
        super().__init__(f"duplicate source id: {source_id!r}")


class EmptyKnowledgeBase(ExtractionError):
    pass


# --- retrieval ----------------------------------------------------------


class EmptyIndex(BenchcardError):
    pass


class DimensionMismatch(BenchcardError):
    pass


# --- validation ---------------------------------------------------------


class InvalidVerdict(BenchcardError):
    """The entailment judge returned an unusable probability triple."""


# --- pipeline / review --------------------------------------------------


class ConfigError(BenchcardError):
    """Run configuration is inconsistent (e.g. remote sources in offline mode)."""


class MissingWorkspace(BenchcardError):
    """The workspace lacks the sources/index needed for validation."""


class NoSession(BenchcardError):
    """No review session file exists in the workspace."""


class UndecidedAtoms(BenchcardError):
    """Decisions cannot be applied while some flagged atoms are undecided."""

    def __init__(self, atom_ids: list[str]):
        self.atom_ids = list(atom_ids)
        super().__init__(f"undecided atoms: {', '.join(self.atom_ids)}")

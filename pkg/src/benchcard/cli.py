"""benchcard command line interface.

Exit codes: 0 success, 1 a pipeline phase failed, 2 configuration/usage
error, 3 the card was produced but flagged atoms remain.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .errors import BenchcardError, ConfigError
from .gateway import Gateway, GatewayConfig, build_gateway
from .pipeline import (
    EXIT_CONFIG_ERROR,
    EXIT_PHASE_FAILED,
    PhaseError,
    RunConfig,
    apply_decisions,
    run_generate,
    run_validate,
)

DEFAULT_CATALOG = "https://raw.githubusercontent.com/IBM/unitxt/main/src/unitxt/catalog"
DEFAULT_HUB = "https://huggingface.co"


@click.group()
def main() -> None:
    """Generate, validate, and review benchmark documentation cards."""


@main.command()
@click.argument("identifier")
@click.option("--workspace", default="workspace", show_default=True, help="Workspace directory.")
@click.option("--catalog", default=DEFAULT_CATALOG, show_default=True, help="Catalog base URL or local directory.")
@click.option("--hub", default=DEFAULT_HUB, show_default=True, help="Hub base URL or local directory.")
@click.option("--paper", default=None, help="Publication path or URL (overrides the extracted one).")
@click.option("--converter", default=None, help="External converter command for non-markdown documents.")
@click.option("--schema", "schema_path", default=None, type=click.Path(exists=True), help="Card schema JSON.")
@click.option("--taxonomy", "taxonomy_path", default=None, type=click.Path(exists=True), help="Risk taxonomy JSON.")
@click.option("--threshold", "tau_flag", default=0.6, show_default=True, type=float, help="Flagging threshold.")
@click.option("--remediate", "strategy", default="none", show_default=True, type=click.Choice(["auto", "review", "none"]))
@click.option("--max-rounds", default=2, show_default=True, type=int, help="Automated revision rounds.")
@click.option("--offline", is_flag=True, help="Forbid all network locators.")
@click.option("--gateway-config", "gateway_config_path", default=None, type=click.Path(exists=True), help="Gateway config JSON.")
@click.option("--budget", "context_budget", default=24_000, show_default=True, type=int, help="Per-prompt context budget (characters).")
def generate(identifier: str, workspace: str, catalog: str, hub: str, paper: str | None,
             converter: str | None, schema_path: str | None, taxonomy_path: str | None,
             tau_flag: float, strategy: str, max_rounds: int, offline: bool,
             gateway_config_path: str | None, context_budget: int) -> None:
    """Run the full pipeline for a benchmark IDENTIFIER (e.g. cards.demo)."""
    config = RunConfig(
        benchmark_identifier=identifier,
        workspace=Path(workspace),
        catalog=catalog,
        hub=hub,
        paper=paper,
        converter=converter,
        schema_path=schema_path,
        taxonomy_path=taxonomy_path,
        gateway_config_path=gateway_config_path,
        tau_flag=tau_flag,
        strategy=strategy,
        max_rounds=max_rounds,
        offline=offline,
        context_budget=context_budget,
    )
    try:
        code = run_generate(config)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    except PhaseError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_PHASE_FAILED)
    if code == 0:
        click.echo("card generated; no flagged atoms remain")
    else:
        click.echo("card generated, but flagged atoms remain (see validation/)")
    sys.exit(code)


@main.command()
@click.argument("card", type=click.Path(exists=True))
@click.option("--workspace", default="workspace", show_default=True)
@click.option("--threshold", "tau_flag", default=None, type=float, help="Flagging threshold override.")
@click.option("--gateway-config", "gateway_config_path", default=None, type=click.Path(exists=True))
def validate(card: str, workspace: str, tau_flag: float | None, gateway_config_path: str | None) -> None:
    """Re-validate an existing CARD against the workspace knowledge base."""
    try:
        report, code = run_validate(card, workspace, gateway_config_path, tau_flag)
    except BenchcardError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_PHASE_FAILED)
    flagged = report.flagged_atoms()
    click.echo(f"scored {len(report.atoms)} atoms; {len(flagged)} flagged")
    for atom in flagged:
        shown = "unscored" if atom.score is None else f"{atom.score:.3f}"
        click.echo(f"  [{shown}] {atom.atom_id}: {atom.text}")
    sys.exit(code)


@main.group()
def review() -> None:
    """Human-in-the-loop review of flagged atoms."""


def _gateway_from_option(gateway_config_path: str | None) -> Gateway | None:
    if gateway_config_path is None:
        return None
    return build_gateway(GatewayConfig.load(gateway_config_path))


@review.command()
@click.option("--workspace", default="workspace", show_default=True)
@click.option("--port", default=8765, show_default=True, type=int)
@click.option("--ui-dir", default=None, type=click.Path(), help="Static UI bundle directory.")
@click.option("--gateway-config", "gateway_config_path", default=None, type=click.Path(exists=True))
def serve(workspace: str, port: int, ui_dir: str | None, gateway_config_path: str | None) -> None:
    """Serve the review API and UI for the workspace's session."""
    from .review_service import serve_review

    default_ui = Path("frontend") / "dist"
    if ui_dir is None and default_ui.is_dir():
        ui_dir = str(default_ui)
    try:
        serve_review(workspace, port, ui_dir=ui_dir, gateway=_gateway_from_option(gateway_config_path))
    except BenchcardError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_PHASE_FAILED)


@review.command()
@click.option("--workspace", default="workspace", show_default=True)
@click.option("--gateway-config", "gateway_config_path", default=None, type=click.Path(exists=True))
def apply(workspace: str, gateway_config_path: str | None) -> None:
    """Apply all recorded decisions and write the final card."""
    try:
        card = apply_decisions(workspace, gateway=_gateway_from_option(gateway_config_path))
    except BenchcardError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_PHASE_FAILED)
    click.echo(f"decisions applied; final card written for {card.benchmark_id}")


if __name__ == "__main__":
    main()

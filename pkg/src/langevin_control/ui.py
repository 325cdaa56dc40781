"""Rich console helpers for the CLI."""

from __future__ import annotations

from collections.abc import Mapping, Sequence

from rich.console import Console
from rich.markup import escape
from rich.table import Table
from rich.theme import Theme

_THEME = Theme(
    {
        "info": "cyan",
        "success": "green",
        "warning": "yellow",
        "error": "red bold",
        "heading": "bold cyan",
    }
)

console = Console(highlight=False, theme=_THEME)


def heading(text: str) -> None:
    """Print a section heading with a rule line."""
    console.rule(f"[heading]{text}[/heading]", style="dim")


def success(text: str) -> None:
    console.print(f"  [green]✔[/green] {text}")


def warn(text: str) -> None:
    console.print(f"  [yellow]⚠[/yellow] {text}")


def error(text: str) -> None:
    console.print(f"  [red]✘[/red] {text}")


def info(text: str) -> None:
    console.print(f"  [dim]{text}[/dim]")


def comparison_table(rows: Sequence[tuple[str, float, float]]) -> None:
    """Final ``J ± ci`` per arm, best arm marked."""
    table = Table(show_header=True, header_style="bold", box=None, padding=(0, 2))
    table.add_column("arm")
    table.add_column("final J", justify="right")
    table.add_column("± 95%", justify="right", style="dim")
    best = min(rows, key=lambda r: r[1])[0] if rows else None
    for label, mean, half in rows:
        name = escape(label)
        if label == best:
            name = f"[success]{name}[/success]"
        table.add_row(name, f"{mean:.6g}", f"{half:.2g}")
    console.print(table)


def environment_table(name: str, summary: str, details: Mapping[str, object]) -> None:
    """One environment: dimensions and default parameters."""
    heading(f"{name}: {summary}")
    table = Table(show_header=False, box=None, padding=(0, 2))
    table.add_column("key", style="dim")
    table.add_column("value")
    for key, value in details.items():
        table.add_row(escape(key), escape(str(value)))
    console.print(table)

from __future__ import annotations

import click

from .. import db
from .common import AppContext, handle_errors, pass_app


@click.group("runs")
def runs_group():
    """Run registry kept beside the outputs."""


@runs_group.command("list")
@click.option("--command", "command_name", default=None, help="Only runs of this command.")
@click.option("--limit", type=int, default=50, show_default=True)
@pass_app
@handle_errors
def list_cmd(app: AppContext, command_name, limit):
    rows = db.list_runs(app.out_dir, command=command_name, limit=limit)
    if not rows:
        click.echo("no runs recorded")
        return
    for row in rows:
        click.echo(f"{row['id']:>4} {row['created_at']} {row['command']:<16} seed={row['seed']} "
                   f"artifacts={row['artifact_count']} {row['manifest_path'] or ''}".rstrip())

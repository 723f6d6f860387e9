from __future__ import annotations

from pathlib import Path

import click

from .. import config
from ..anchors import Shot, default_level_specs, dump_csv
from .common import AppContext, finish_run, handle_errors, pass_app


@click.group("anchors")
def anchors_group():
    """Anchor grids per level and shot."""


@anchors_group.command("dump")
@click.option("--input-size", type=int, default=config.INPUT_SIZE, show_default=True)
@click.option("--shot", type=click.Choice(["first", "second", "both"]), default="both", show_default=True)
@click.option("--ratio-mode", type=click.Choice(["width", "area"]), default=None,
              help="Anchor shape; defaults to ANCHOR_RATIO_MODE.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@pass_app
@handle_errors
def dump(app: AppContext, input_size: int, shot: str, ratio_mode, out):
    """Write every anchor as CSV: level, shot, cell_i, cell_j, x, y, w, h."""
    specs = default_level_specs(input_size, strict=False)
    shots = (Shot.FIRST, Shot.SECOND) if shot == "both" else (Shot(shot),)
    out = out or app.output("anchors.csv")
    with out.open("w", encoding="utf-8", newline="") as fh:
        rows = dump_csv(specs, fh, shots, ratio_mode)
    for spec in specs:
        click.echo(
            f"level={spec.index} stride={spec.stride} map={spec.map_h}x{spec.map_w} count={spec.count} "
            f"scale_first={spec.scale_first_shot:g} scale_second={spec.scale_second_shot:g}"
        )
    click.echo(f"rows={rows}")
    finish_run(app, "anchors dump", [out],
               {"input_size": input_size, "shot": shot, "ratio_mode": ratio_mode or config.ANCHOR_RATIO_MODE})

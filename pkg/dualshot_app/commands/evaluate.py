from __future__ import annotations

from pathlib import Path

import click

from ..errors import InputError
from ..services.evalkit import average_precision, parse_detections, read_annotations
from .common import AppContext, finish_run, handle_errors, pass_app


def _ap_text(ap):
    return "undefined" if ap is None else f"{ap:.6f}"


@click.command("eval")
@click.option("--annotations", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--detections", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--iou", "iou_thresh", type=float, default=0.5, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="PR curve CSV (recall,precision).")
@pass_app
@handle_errors
def evaluate(app: AppContext, annotations, detections, iou_thresh, out):
    """Average precision of a detection file against WIDER-style ground truth."""
    if not 0 < iou_thresh <= 1:
        raise InputError(f"--iou must be in (0, 1], got {iou_thresh}")
    gts = read_annotations(annotations)
    try:
        dets = parse_detections(detections.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read detections {detections}: {exc}") from exc

    curve = average_precision(dets, gts, iou_thresh)
    out = out or app.output("pr.csv")
    with out.open("w", encoding="utf-8", newline="") as fh:
        curve.write_csv(fh)
    click.echo(f"AP={_ap_text(curve.ap)} gt={curve.n_gt} tp={curve.n_tp} fp={curve.n_fp}")
    per_subset = {}
    for subset in gts.subsets():
        per_subset[subset] = average_precision(dets, gts, iou_thresh, subset=subset).ap
        click.echo(f"subset={subset} AP={_ap_text(per_subset[subset])}")
    finish_run(app, "eval", [out], {"annotations": annotations.as_posix(), "detections": detections.as_posix(),
                                    "iou": iou_thresh, "ap": curve.ap, "subset_ap": per_subset})

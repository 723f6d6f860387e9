from __future__ import annotations

import csv
import math
from pathlib import Path

import click

from .. import config
from ..errors import InputError
from ..services.augment import Sample
from ..services.corpus import synth_corpus
from ..services.evalkit import read_annotations
from ..services.experiments import PIPELINE_IAM, PIPELINE_TRADITIONAL, pipeline_match_stats
from .common import AppContext, aug_config, finish_run, handle_errors, pass_app


def _annotation_samples(path: Path):
    annotations = read_annotations(path)
    samples = []
    for faces in annotations.face_lists():
        # no image sizes in the annotation format; the face extent stands in
        width = max(1, math.ceil((faces[:, 0] + faces[:, 2]).max())) if faces.size else 1
        height = max(1, math.ceil((faces[:, 1] + faces[:, 3]).max())) if faces.size else 1
        samples.append(Sample(faces, width, height))
    if not samples:
        raise InputError(f"{path}: no images")
    return samples


@click.command("match-stats")
@click.option("--synthetic", "n_synthetic", type=int, default=None, help="Generate N synthetic images.")
@click.option("--annotations", type=click.Path(path_type=Path), default=None,
              help="WIDER-style ground-truth file.")
@click.option("--iam/--traditional", "iam", default=True, show_default=True,
              help="Anchor-based sampling at IoU 0.4, or SSD-style sampling at IoU 0.35.")
@click.option("--threshold", type=float, default=None, help="Override the pipeline's IoU threshold.")
@click.option("--input-size", type=int, default=config.INPUT_SIZE, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@pass_app
@handle_errors
def match_stats(app: AppContext, n_synthetic, annotations, iam, threshold, input_size, out):
    """Matched-anchor counts per face after augmentation."""
    if (n_synthetic is None) == (annotations is None):
        raise InputError("give exactly one of --synthetic N or --annotations F")
    if annotations is not None:
        if not annotations.is_file():
            raise InputError(f"cannot read annotations: {annotations}")
        samples = _annotation_samples(annotations)
        source = {"annotations": annotations.as_posix()}
    else:
        samples = synth_corpus(n_synthetic, seed=app.seed, input_size=input_size, render=False)
        source = {"synthetic": n_synthetic}

    pipeline = PIPELINE_IAM if iam else PIPELINE_TRADITIONAL
    stats = pipeline_match_stats(samples, pipeline, aug_config(app, input_size=input_size),
                                 threshold=threshold, seed=app.seed, threads=app.threads)

    out = out or app.output(f"match_stats_{pipeline}.csv")
    with out.open("w", encoding="utf-8", newline="") as fh:
        stats.matches.write_csv(fh)
    hist_path = out.with_name(out.stem + "_scales.csv")
    with hist_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["anchor_scale", "face_count"])
        for center, count in zip(stats.scales.centers, stats.scales.counts):
            writer.writerow([center, int(count)])

    mean = stats.matches.mean_overall
    click.echo(
        f"pipeline={pipeline} threshold={stats.threshold:g} faces={stats.matches.n_faces} "
        f"mean_matched={'undefined' if mean is None else f'{mean:.6f}'} "
        f"near_anchor_fraction={stats.near_anchor_fraction:.6f}"
    )
    finish_run(app, "match-stats", [out, hist_path],
               {**source, "pipeline": pipeline, "threshold": stats.threshold, "input_size": input_size})

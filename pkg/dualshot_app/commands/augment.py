from __future__ import annotations

from pathlib import Path

import click

from .. import storage
from ..errors import InputError
from ..services.augment import Sample, augment
from ..services.corpus import corpus_mean, synth_corpus
from ..utils import ensure_dir, rng_for
from .common import AppContext, aug_config, finish_run, handle_errors, pass_app


@click.command("augment-preview")
@click.option("--synthetic", "n_synthetic", type=int, default=None, help="Preview N synthetic images.")
@click.option("--image", type=click.Path(path_type=Path), default=None, help="Binary PPM/PGM source.")
@click.option("--boxes", type=click.Path(path_type=Path), default=None, help="Face sidecar for --image.")
@click.option("--count", type=int, default=4, show_default=True, help="Augmented copies per source.")
@click.option("--input-size", type=int, default=160, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=None)
@pass_app
@handle_errors
def augment_preview(app: AppContext, n_synthetic, image, boxes, count, input_size, out_dir):
    """Write augmented samples as PPM images with `x y w h` box sidecars."""
    if image is not None:
        if boxes is None:
            raise InputError("--image needs --boxes")
        pixels = storage.read_pnm(image)
        sources = [Sample(storage.read_boxes(boxes), pixels.shape[2], pixels.shape[1], pixels)]
        source = {"image": image.as_posix()}
    else:
        sources = synth_corpus(n_synthetic or 2, seed=app.seed, input_size=input_size,
                               scale_range=(8.0, input_size / 2.0))
        source = {"synthetic": n_synthetic or 2}
    cfg = aug_config(app, input_size=input_size, mean=corpus_mean(sources))
    out_dir = ensure_dir(out_dir or app.output("preview"))

    written = []
    for i, src in enumerate(sources):
        for k in range(count):
            sample = augment(src, cfg, rng_for(app.seed, i, k))
            stem = out_dir / f"aug_{i:03d}_{k:02d}"
            written.append(storage.write_pnm(stem.with_suffix(".ppm" if sample.image.shape[0] == 3 else ".pgm"),
                                             sample.image))
            written.append(storage.write_boxes(stem.with_suffix(".txt"), sample.faces))
            click.echo(f"{stem.name} branch={sample.branch}{' fallback' if sample.fallback else ''} "
                       f"faces={sample.faces.shape[0]}")
    finish_run(app, "augment-preview", written, {**source, "count": count, "input_size": input_size})

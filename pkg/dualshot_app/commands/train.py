from __future__ import annotations

import csv
from pathlib import Path

import click

from .. import storage
from ..errors import InputError
from ..services.corpus import corpus_mean, synth_corpus
from ..services.evalkit import format_annotations, write_detections
from ..services.network import NetConfig, build, load_checkpoint, predict, save_checkpoint
from ..services.training import TrainConfig, train
from ..utils import ensure_dir
from .common import AppContext, aug_config, finish_run, handle_errors, net_config, pass_app, train_config

TOY_FACES_PER_IMAGE = (1, 3)
TOY_SCALE_RANGE = (16.0, 80.0)


def _write_corpus(samples, directory: Path):
    """Dump images as PPM plus one annotation file keyed by file name."""
    directory = ensure_dir(directory)
    faces, written = {}, []
    for i, sample in enumerate(samples):
        name = f"img_{i:03d}.ppm"
        written.append(storage.write_pnm(directory / name, sample.image))
        faces[name] = sample.faces
    annotations = directory / "annotations.txt"
    annotations.write_text(format_annotations(faces), encoding="utf-8")
    return annotations, written


@click.command("train-toy")
@click.option("--steps", type=int, default=None, help="Overrides train.steps.")
@click.option("--images", "n_images", type=int, default=8, show_default=True)
@click.option("--augment/--no-augment", default=False, show_default=True,
              help="Re-sample every batch through the training augmentation.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Checkpoint manifest path.")
@pass_app
@handle_errors
def train_toy(app: AppContext, steps, n_images, augment, out):
    """Train the toy dual-shot network on a synthetic corpus."""
    net_cfg = net_config(app, NetConfig.toy)
    train_cfg = train_config(app, TrainConfig.toy_run, steps=steps)
    samples = synth_corpus(n_images, faces_per_image=TOY_FACES_PER_IMAGE, scale_range=TOY_SCALE_RANGE,
                           seed=app.seed, input_size=net_cfg.input_size, channels=net_cfg.input_channels)
    net = build(net_cfg)
    aug_cfg = None
    if augment:
        aug_cfg = aug_config(app, input_size=net_cfg.input_size, mean=corpus_mean(samples),
                             anchor_scale_set=tuple(s.scale_second_shot for s in net.specs))
    history = train(net, samples, train_cfg, aug_cfg, seed=app.seed, threads=app.threads)

    out = out or app.output("toy.ckpt")
    ensure_dir(out.parent)
    written = save_checkpoint(net, out)
    losses = out.with_name(out.stem + "_losses.csv")
    with losses.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "pal_total", "first_conf", "first_loc", "second_conf", "second_loc"])
        for step, report in enumerate(history.reports):
            first, second = report.per_shot
            writer.writerow([step, f"{report.total_shot:.6f}", f"{first.conf:.6f}", f"{first.loc:.6f}",
                             f"{second.conf:.6f}", f"{second.loc:.6f}"])
    annotations, images = _write_corpus(samples, out.parent / "corpus")

    if history.losses:
        ratio = history.final / history.initial if history.initial > 0 else float("nan")
        click.echo(f"steps={len(history.losses)} initial={history.initial:.6f} final={history.final:.6f} "
                   f"ratio={ratio:.4f}")
    click.echo(f"checkpoint={out} annotations={annotations}")
    finish_run(app, "train-toy", [*written, losses, annotations, *images],
               {"net": net_cfg.to_dict(), "steps": train_cfg.steps, "images": n_images, "augment": augment})


@click.command("predict")
@click.option("--ckpt", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--image", "images", type=click.Path(dir_okay=False, path_type=Path), multiple=True)
@click.option("--images-dir", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Run on every .ppm/.pgm in this directory.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--conf-thresh", type=float, default=None, help="Score pre-filter before the top-5000 cut.")
@click.option("--contain/--literal-round", "contain", default=None,
              help="Round boxes outward so they contain the decoded box.")
@pass_app
@handle_errors
def predict_cmd(app: AppContext, ckpt, images, images_dir, out, conf_thresh, contain):
    """Second-shot detections as a detection file keyed by image file name."""
    paths = list(images)
    if images_dir is not None:
        paths.extend(sorted(p for p in images_dir.iterdir() if p.suffix.lower() in (".ppm", ".pgm")))
    if not paths:
        raise InputError("give --image or --images-dir")
    net = load_checkpoint(ckpt)
    kwargs = {} if conf_thresh is None else {"conf_thresh": conf_thresh}

    dets = {}
    for path in paths:
        pixels = storage.read_pnm(path)
        if pixels.shape[0] != net.cfg.input_channels:
            raise InputError(f"{path}: {pixels.shape[0]} channels, network expects {net.cfg.input_channels}")
        dets[path.name] = predict(net, pixels[None], contain=contain, **kwargs)
        click.echo(f"{path.name} detections={len(dets[path.name])}")

    out = out or app.output("detections.txt")
    out.write_text(write_detections(dets), encoding="utf-8")
    finish_run(app, "predict", [out], {"ckpt": ckpt.as_posix(), "images": [p.name for p in paths],
                                       "conf_thresh": conf_thresh, "contain": contain})

"""Shared command plumbing: global options, config assembly, error mapping, manifests."""
from __future__ import annotations

from dataclasses import dataclass, field
import functools
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Optional

import click

from .. import config, db
from ..errors import EXIT_INPUT_ERROR, EXIT_NUMERIC_ERROR, DualShotError, InputError
from ..runs import RunManifest
from ..services.augment import AugConfig
from ..services.network import NetConfig
from ..services.training import TrainConfig
from ..utils import ensure_dir, parse_bool, parse_float, parse_int_list

logger = logging.getLogger(__name__)


@dataclass
class AppContext:
    seed: int = config.DEFAULT_SEED
    threads: int = config.DEFAULT_THREADS
    out_dir: Path = config.DEFAULT_OUT_DIR
    config_path: Optional[Path] = None
    sections: Dict[str, Dict[str, str]] = field(default_factory=lambda: {k: {} for k in config.CONFIG_KEYS})

    def output(self, name: str) -> Path:
        return ensure_dir(self.out_dir) / name


pass_app = click.make_pass_decorator(AppContext)


def handle_errors(fn):
    """Library errors become one stderr line and the matching exit code."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DualShotError as exc:
            logger.debug("command failed", exc_info=True)
            click.echo(f"error: {exc}", err=True)
            raise click.exceptions.Exit(exc.exit_code)
        except OSError as exc:
            click.echo(f"error: {exc}", err=True)
            raise click.exceptions.Exit(EXIT_INPUT_ERROR)
        except FloatingPointError as exc:
            click.echo(f"error: numeric failure: {exc}", err=True)
            raise click.exceptions.Exit(EXIT_NUMERIC_ERROR)

    return wrapper


# ---------------------------------------------------------------------------
# Config assembly
# ---------------------------------------------------------------------------


def _int(value: str, key: str) -> int:
    try:
        return int(value)
    except ValueError as exc:
        raise InputError(f"{key}: not an integer: {value!r}") from exc


def net_config(app: AppContext, preset: Callable[..., NetConfig] = NetConfig, **overrides) -> NetConfig:
    raw = app.sections.get("net", {})
    kwargs: Dict[str, Any] = {"seed": app.seed}
    for key, value in raw.items():
        if key in ("input_size", "fem_channels", "seed", "fem_dilation"):
            kwargs[key] = _int(value, key)
        elif key == "backbone_channels":
            kwargs[key] = parse_int_list(value)
        elif key == "use_fem":
            kwargs[key] = parse_bool(value)
        elif key == "ratio_mode":
            kwargs[key] = value or None
        elif key in ("init_gain", "pixel_mean"):
            kwargs[key] = parse_float(value, key)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return preset(**kwargs)


def train_config(app: AppContext, preset: Callable[..., TrainConfig] = TrainConfig, **overrides) -> TrainConfig:
    kwargs: Dict[str, Any] = {}
    for key, value in app.sections.get("train", {}).items():
        if key in ("batch", "steps", "log_every", "warmup_steps"):
            kwargs[key] = _int(value, key)
        elif key in ("use_pal", "force_best"):
            kwargs[key] = parse_bool(value)
        elif key == "lr_schedule":
            kwargs[key] = value
        else:
            kwargs[key] = parse_float(value, key)
    renames = {"lambda": "lam", "eq2_literal_grouping": "eq2_literal"}
    for key, value in app.sections.get("loss", {}).items():
        target = renames.get(key, key)
        kwargs[target] = parse_bool(value) if target == "eq2_literal" else parse_float(value, key)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    if kwargs.get("lr_schedule") == "step":
        return TrainConfig.long_run(**kwargs)
    return preset(**kwargs)


def aug_config(app: AppContext, **overrides) -> AugConfig:
    kwargs: Dict[str, Any] = {"seed": app.seed}
    for key, value in app.sections.get("aug", {}).items():
        if key in ("use_iam", "restrict_scale_choice"):
            kwargs[key] = parse_bool(value)
        elif key == "anchor_scale_set":
            kwargs[key] = tuple(float(v) for v in parse_int_list(value))
        else:
            kwargs[key] = parse_float(value, key)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return AugConfig(**kwargs)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


def finish_run(app: AppContext, command: str, outputs: Iterable[Path], settings: Dict[str, Any]) -> Path:
    """Hash the outputs, write manifest.json beside the first one and register the run."""
    outputs = [Path(p) for p in outputs]
    directory = outputs[0].parent if outputs else ensure_dir(app.out_dir)
    manifest = RunManifest(command, app.seed, {"sections": app.sections, **settings})
    manifest.add_artifacts(outputs, base=directory)
    path = manifest.write(directory)
    try:
        db.record_run(manifest, path, app.out_dir)
    except Exception:
        logger.warning("could not record run in registry", exc_info=True)
    return path

from __future__ import annotations

import logging
from pathlib import Path

import click

from . import config
from .commands import ALL_COMMANDS
from .commands.common import AppContext
from .errors import DualShotError, EXIT_INPUT_ERROR


def _configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else getattr(logging, config.LOG_LEVEL, logging.INFO)
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(level=level, format=config.LOG_FORMAT)
    root.setLevel(level)


def create_cli() -> click.Group:
    @click.group(context_settings={"help_option_names": ["-h", "--help"]})
    @click.option("--seed", type=int, default=config.DEFAULT_SEED, show_default=True)
    @click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
                  help="`key = value` settings file.")
    @click.option("--threads", type=click.IntRange(min=1), default=config.DEFAULT_THREADS, show_default=True)
    @click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path),
                  default=config.DEFAULT_OUT_DIR, show_default=True)
    @click.option("-v", "--verbose", is_flag=True)
    @click.pass_context
    def cli(ctx: click.Context, seed, config_path, threads, out_dir, verbose):
        """Dual-shot face detector toolkit."""
        _configure_logging(verbose)
        app = AppContext(seed=seed, threads=threads, out_dir=out_dir, config_path=config_path)
        if config_path is not None:
            try:
                app.sections = config.read_config_file(config_path)
            except DualShotError as exc:
                click.echo(f"error: {exc}", err=True)
                ctx.exit(EXIT_INPUT_ERROR)
        ctx.obj = app

    for command in ALL_COMMANDS:
        cli.add_command(command)
    return cli

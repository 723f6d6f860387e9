from __future__ import annotations

import math

import click

from ..errors import EXIT_CHECK_FAILED, EXIT_NUMERIC_ERROR
from ..services.gradcheck import TARGETS, run_gradcheck
from .common import AppContext, finish_run, handle_errors, pass_app


@click.command("gradcheck")
@click.option("--target", type=click.Choice(TARGETS), required=True)
@click.option("--tol", type=float, default=None, help="Relative tolerance; 1e-4 (fem, loss) or 1e-3 (net).")
@click.option("--samples", type=int, default=None, help="Coordinates checked per tensor (across all parameters for net); at least 64.")
@click.option("--corrupt-backward", is_flag=True, hidden=True,
              help="Scale the analytic gradient to prove the check can fail.")
@pass_app
@handle_errors
def gradcheck(app: AppContext, target, tol, samples, corrupt_backward):
    """Compare analytic gradients against central differences."""
    report = run_gradcheck(target, tol=tol, seed=app.seed, corrupt=corrupt_backward, samples=samples)
    click.echo(f"target={target} {report.describe()}")
    out = app.output(f"gradcheck_{target}.txt")
    out.write_text(report.describe() + "\n", encoding="utf-8")
    finish_run(app, "gradcheck", [out], {"target": target, "tol": report.tol, "corrupt": corrupt_backward})
    if not math.isfinite(report.max_rel_error):
        raise click.exceptions.Exit(EXIT_NUMERIC_ERROR)
    if not report.passed:
        raise click.exceptions.Exit(EXIT_CHECK_FAILED)

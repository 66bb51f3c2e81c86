"""hessolve command-line front end: solve, sweep and verify."""
import sys
from typing import List, Optional

import click
from tabulate import tabulate

from config import configure_logging
from pipeline import EXIT_CONFIG, run_solve, run_sweep, run_verify


def _parse_gammas(_ctx, _param, value: Optional[str]) -> Optional[List[float]]:
    if value is None or not value.strip():
        return None
    try:
        gammas = [float(item) for item in value.split(",") if item.strip()]
    except ValueError:
        raise click.BadParameter(f"expected a comma separated list of numbers, got {value!r}")
    return gammas or None


def _check_table(report, extra=None) -> str:
    rows = [[name, "pass" if ok else "FAIL", "yes" if mandatory else "no"] for name, ok, mandatory in report.checks()]
    for name, ok in (extra or {}).items():
        rows.append([name, "pass" if ok else "FAIL", "no"])
    return tabulate(rows, headers=["check", "result", "mandatory"], tablefmt="simple")


def _finish(state) -> None:
    if state.get("error"):
        click.echo(f"error: {state['error']}", err=True)
    sys.exit(state.get("exit_code", EXIT_CONFIG))


@click.group()
@click.option("--log-level", default=None, help="Override HESSOLVE_LOG_LEVEL.")
def cli(log_level):
    """Finite-difference solver for f(λ[D²u + γΔu·I]) = ψ on rectangles."""
    configure_logging(log_level)


@cli.command()
@click.argument("config_path", metavar="CONFIG", type=click.Path(dir_okay=False))
@click.option("-o", "--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--log-csv", is_flag=True, help="Write the per-iteration Newton log as newton_log.csv.")
@click.option("--record-timing", is_flag=True, help="Store wall time in the manifest (outputs stop being byte-stable).")
def solve(config_path, out_dir, log_csv, record_timing):
    """Run the ε continuation for CONFIG and write fields, diagnostics and a manifest."""
    state = run_solve(config_path, out_dir, log_csv=log_csv, record_timing=record_timing)
    if state.get("report") is not None:
        click.echo(_check_table(state["report"]))
    for rec in state.get("records") or []:
        click.echo(f"eps={rec.eps:.6e}  iterations={rec.iterations}  residual={rec.final_residual:.3e}")
    _finish(state)


@cli.command()
@click.argument("config_path", metavar="CONFIG", type=click.Path(dir_okay=False))
@click.option("--gammas", callback=_parse_gammas, default=None, help="Comma separated γ values, e.g. 0.25,0.5,1.0.")
@click.option("-o", "--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
def sweep(config_path, gammas, out_dir):
    """Second-derivative estimate sweep over γ and the ε schedule."""
    state = run_sweep(config_path, out_dir, gammas)
    summary = state.get("sweep_summary")
    if summary:
        rows = [[s["gamma"], s["cells"], s["c2_stability_ratio"], s["boundary_ratio"]] for s in summary["stability"]]
        click.echo(tabulate(rows, headers=["gamma", "cells", "c2 ratio", "c2/(1+c2_bdry)"], tablefmt="simple"))
        click.echo(f"converged {summary['converged']}/{summary['cells']} cells")
    _finish(state)


@cli.command()
@click.argument("solution_path", metavar="SOLUTION", type=click.Path(dir_okay=False))
@click.argument("config_path", metavar="CONFIG", type=click.Path(dir_okay=False))
def verify(solution_path, config_path):
    """Run the checks on a stored solution field against CONFIG."""
    state = run_verify(solution_path, config_path)
    if state.get("report") is not None:
        click.echo(_check_table(state["report"], state.get("extra_checks")))
    _finish(state)


if __name__ == "__main__":
    cli()

"""
Solve, sweep and verify workflows as state graphs; the CLI only maps their
final state to files on disk and an exit code.
"""
import logging
import time
from typing import Any, Dict, List, Optional, TypedDict

import numpy as np
from langgraph.graph import END, StateGraph

from discretize import GridField, harmonic_solve
from errors import InvalidInput, InvalidSpec, SolverError, SubsolutionFailed
from problem import ProblemSpec, auto_subsolution, build_problem, parse_problem_config
from report import ReportWriter, RunManifest, config_hash, convergence_summary
from solver import continuity_solve
from statistical import SweepAnalyzer
from verify import (
    BoundaryPatch,
    barrier_search,
    diagnose,
    estimate_sweep,
    tau_concavity_check,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_SUBSOLUTION = 4

SWEEP_CONVERGED_FRACTION = 0.9


class RunState(TypedDict, total=False):
    config_path: str
    out_dir: str
    log_csv: bool
    record_timing: bool
    gammas: Optional[List[float]]
    solution_path: str
    solution: GridField
    started: float
    config_text: str
    problem: ProblemSpec
    subsolution: Any
    records: List[Any]
    report: Any
    extra_checks: Dict[str, Any]
    sweep_rows: List[Dict]
    sweep_summary: Dict
    files: List[str]
    error: Optional[str]
    exit_code: int


def _fail(state: RunState, message: str, code: int) -> RunState:
    logger.error(message)
    return {**state, "error": message, "exit_code": code}


def _route(next_node: str, on_error: str = END):
    return lambda state: on_error if state.get("error") else next_node


# ---------------------------------------------------------------- shared nodes


def load_config(state: RunState):
    started = time.perf_counter() if state.get("record_timing") else None
    try:
        with open(state["config_path"], encoding="utf-8") as f:
            text = f.read()
        problem = build_problem(parse_problem_config(text))
    except OSError as e:
        return _fail(state, f"cannot read config: {e}", EXIT_CONFIG)
    except (InvalidSpec, InvalidInput) as e:
        return _fail(state, f"config error: {e}", EXIT_CONFIG)
    logger.info("loaded problem %r: %s, gamma=%g, m=%d", problem.name, problem.fspec.label, problem.gamma, problem.grid.m)
    return {**state, "config_text": text, "problem": problem, "started": started, "error": None, "exit_code": EXIT_OK}


def find_subsolution(state: RunState):
    try:
        sub = auto_subsolution(state["problem"])
    except SubsolutionFailed as e:
        return _fail(state, f"subsolution failed: {e}", EXIT_SUBSOLUTION)
    return {**state, "subsolution": sub}


# ---------------------------------------------------------------- solve


def run_continuation(state: RunState):
    try:
        records = continuity_solve(state["problem"], state["subsolution"])
    except SolverError as e:
        failed = _fail(state, f"solver failed: {e}", EXIT_SOLVER)
        return {**failed, "records": e.records}
    return {**state, "records": records}


def run_diagnostics(state: RunState):
    p = state["problem"]
    sub = state["subsolution"]
    final = state["records"][-1]
    report = diagnose(p, final.u, sub.field, harmonic_solve(p.grid, p.phi), eps=final.eps, eps0=sub.eps0)
    report.extra["subsolution_A"] = sub.A
    final.diagnostics = report
    code = EXIT_OK if report.mandatory_passed else EXIT_CHECK_FAILED
    if code != EXIT_OK:
        failed = [name for name, ok, mandatory in report.checks() if mandatory and not ok]
        logger.warning("mandatory checks failed: %s", ", ".join(failed))
    return {**state, "report": report, "exit_code": code}


def write_solve_outputs(state: RunState):
    p = state["problem"]
    sub = state.get("subsolution")
    records = state.get("records") or []
    writer = ReportWriter(state["out_dir"])
    writer.write_fields(records)
    if state.get("report") is not None:
        writer.write_report(state["report"])
    if state.get("log_csv"):
        writer.write_newton_log(records)
    manifest = RunManifest(
        config_hash=config_hash(state["config_text"]),
        problem=p.name,
        schedule=p.schedule.values(sub.eps0) if sub else [],
        eps0=sub.eps0 if sub else None,
        subsolution_A=sub.A if sub else None,
        convergence=convergence_summary(records),
        exit_code=state.get("exit_code", EXIT_OK),
        wall_time=time.perf_counter() - state["started"] if state.get("started") is not None else None,
    )
    writer.write_manifest(manifest)
    return {**state, "files": list(writer.files)}


def _solve_graph():
    workflow = StateGraph(RunState)
    workflow.add_node("load_config", load_config)
    workflow.add_node("find_subsolution", find_subsolution)
    workflow.add_node("run_continuation", run_continuation)
    workflow.add_node("run_diagnostics", run_diagnostics)
    workflow.add_node("write_outputs", write_solve_outputs)

    workflow.set_entry_point("load_config")
    workflow.add_conditional_edges("load_config", _route("find_subsolution"))
    workflow.add_conditional_edges("find_subsolution", _route("run_continuation", "write_outputs"))
    workflow.add_conditional_edges("run_continuation", _route("run_diagnostics", "write_outputs"))
    workflow.add_edge("run_diagnostics", "write_outputs")
    workflow.add_edge("write_outputs", END)
    return workflow.compile()


solve_app = _solve_graph()


def run_solve(config_path: str, out_dir: str, log_csv: bool = False, record_timing: bool = False) -> RunState:
    return solve_app.invoke(
        {"config_path": config_path, "out_dir": out_dir, "log_csv": log_csv, "record_timing": record_timing}
    )


# ---------------------------------------------------------------- sweep


def run_estimate_sweep(state: RunState):
    try:
        rows = estimate_sweep(state["problem"], state.get("gammas"))
    except InvalidSpec as e:
        return _fail(state, f"config error: {e}", EXIT_CONFIG)
    analyzer = SweepAnalyzer(rows)
    summary = analyzer.summary()
    fraction = analyzer.converged_fraction()
    code = EXIT_OK if fraction >= SWEEP_CONVERGED_FRACTION else EXIT_SOLVER
    if code != EXIT_OK:
        logger.error("only %.0f%% of sweep cells converged", 100 * fraction)
    return {**state, "sweep_rows": rows, "sweep_summary": summary, "exit_code": code}


def write_sweep_outputs(state: RunState):
    writer = ReportWriter(state["out_dir"])
    writer.write_sweep(state["sweep_rows"], state["sweep_summary"])
    return {**state, "files": list(writer.files)}


def _sweep_graph():
    workflow = StateGraph(RunState)
    workflow.add_node("load_config", load_config)
    workflow.add_node("run_sweep", run_estimate_sweep)
    workflow.add_node("write_outputs", write_sweep_outputs)

    workflow.set_entry_point("load_config")
    workflow.add_conditional_edges("load_config", _route("run_sweep"))
    workflow.add_conditional_edges("run_sweep", _route("write_outputs"))
    workflow.add_edge("write_outputs", END)
    return workflow.compile()


sweep_app = _sweep_graph()


def run_sweep(config_path: str, out_dir: str, gammas: Optional[List[float]] = None) -> RunState:
    return sweep_app.invoke({"config_path": config_path, "out_dir": out_dir, "gammas": gammas})


# ---------------------------------------------------------------- verify


def load_solution(state: RunState):
    p = state["problem"]
    try:
        with open(state["solution_path"], encoding="utf-8") as f:
            u = GridField.from_json(f.read())
    except OSError as e:
        return _fail(state, f"cannot read solution: {e}", EXIT_CONFIG)
    except InvalidInput as e:
        return _fail(state, f"solution file error: {e}", EXIT_CONFIG)
    if u.grid != p.grid:
        return _fail(state, f"solution grid {u.grid.to_dict()} does not match config grid {p.grid.to_dict()}", EXIT_CONFIG)
    return {**state, "solution": u}


def default_rotation(n: int) -> np.ndarray:
    """Skew generator of rotations in the (x, y) plane."""
    T = np.zeros((n, n))
    T[0, 1], T[1, 0] = 1.0, -1.0
    return T


def run_checks(state: RunState):
    p = state["problem"]
    sub = state["subsolution"]
    u = state["solution"]
    grid = p.grid
    report = diagnose(p, u, sub.field, harmonic_solve(grid, p.phi), eps0=sub.eps0)
    tau = tau_concavity_check(
        p.fspec, p.gamma, u, default_rotation(grid.n), grid.center, solver_output=True
    )
    patch = BoundaryPatch(axis=0, side=0, center=tuple(grid.center[1:]))
    barrier = barrier_search(p.fspec, p.gamma, u, sub.field, patch, p.phi_field)
    extra = {"tau": tau.passed, "barrier": barrier.found}
    logger.info("tau margin %.3e (tol %.3e); barrier fraction %.3f", tau.margin, tau.tol, barrier.fraction)
    code = EXIT_OK if report.mandatory_passed else EXIT_CHECK_FAILED
    return {**state, "report": report, "extra_checks": extra, "exit_code": code}


def _verify_graph():
    workflow = StateGraph(RunState)
    workflow.add_node("load_config", load_config)
    workflow.add_node("load_solution", load_solution)
    workflow.add_node("find_subsolution", find_subsolution)
    workflow.add_node("run_checks", run_checks)

    workflow.set_entry_point("load_config")
    workflow.add_conditional_edges("load_config", _route("load_solution"))
    workflow.add_conditional_edges("load_solution", _route("find_subsolution"))
    workflow.add_conditional_edges("find_subsolution", _route("run_checks"))
    workflow.add_edge("run_checks", END)
    return workflow.compile()


verify_app = _verify_graph()


def run_verify(solution_path: str, config_path: str) -> RunState:
    return verify_app.invoke({"solution_path": solution_path, "config_path": config_path})

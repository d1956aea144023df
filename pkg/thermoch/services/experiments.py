"""
ThermoCH - Experiment drivers behind the CLI subcommands.

- cmd_run: one simulation with balance series, snapshots and reports
- cmd_continuation: the same scenario along a decreasing eps ladder
- cmd_mms: manufactured-solution convergence study
- cmd_report: re-derive diagnostics from stored snapshots

Drivers return an exit status for solver failures; configuration and I/O
errors propagate as exceptions for the entry point to map.
"""
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np

from ..config import settings
from ..schemas import (
    ContinuationSummaryRow, MonitorReport, Parameters, RunConfig, StepRow, WeakFormReport,
)
from ..stepper import State, StepError, StepReport, Trajectory, derive_chi, run
from . import output
from .config_parser import ConfigError, load_config, serialize_config
from .diagnostics import (
    balances, entropy_identity_residual, entropy_regularization_contribution,
    norm_monitors, regularization_weight, step_row, weak_entropy_inequality_check,
    weak_heat_equation_residual,
)
from .initial_data import make_initial
from .manufactured import convergence_study

logger = logging.getLogger("thermoch.experiments")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4

# Above this initial regularization weight the rungs are not perturbations of each other
ROUGH_DATA_WEIGHT = 10.0

PathLike = Union[str, Path]


def resolve_out_dir(cfg: RunConfig, out: Optional[PathLike] = None) -> Path:
    return Path(out or cfg.output.directory or settings.output.default_out_dir)


def _write_snapshots(directory: Path, state: State, params: Parameters) -> None:
    fields = {"u": state.u, "theta": state.theta, "chi": derive_chi(state, params)}
    for name, values in fields.items():
        output.write_snapshot(directory, state.grid, state.t, state.step_index, name, values)


def _weak_form_report(trajectory: Trajectory, params: Parameters, cfg: RunConfig) -> WeakFormReport:
    averaging = cfg.solver.face_averaging
    gap = regularization = 0.0
    for old, new in zip(trajectory.states, trajectory.states[1:]):
        dt = new.t - old.t
        gap += entropy_identity_residual(new, old, dt, params, averaging)
        regularization += entropy_regularization_contribution(new, old, dt, params)
    return WeakFormReport(
        entropy_inequality=weak_entropy_inequality_check(trajectory, params, averaging=averaging),
        heat_equation=weak_heat_equation_residual(trajectory, params, averaging=averaging),
        entropy_gap_total=gap,
        entropy_regularization_total=regularization,
    )


def _initial_state(cfg: RunConfig) -> State:
    grid = cfg.grid.to_grid()
    initial = make_initial(cfg.initial, grid, cfg.run.seed)
    if cfg.solver.isothermal and np.ptp(initial.theta) != 0:
        raise ConfigError("isothermal mode requires a uniform initial temperature")
    return initial


def run_scenario(cfg: RunConfig, params: Parameters, out_dir: PathLike,
                 step_times: Optional[Sequence[float]] = None) -> Tuple[Trajectory, MonitorReport]:
    """
    Simulate one scenario into out_dir.

    With step_times the run lands on those times instead of choosing its
    own adaptive steps.

    Balance rows are flushed step by step, so a StepError leaves a valid
    partial series behind.

    Raises:
        StepError: If the time step underflows
    """
    out_dir = output.ensure_dir(out_dir)
    stride = cfg.output.snapshot_stride
    snap_dir = output.ensure_dir(out_dir / "snapshots") if stride > 0 else None
    averaging = cfg.solver.face_averaging
    output.write_text(out_dir / "config.txt", serialize_config(cfg))

    initial = _initial_state(cfg)
    logger.info("Run start: grid=%s T=%.6g eps=(%g, %g, %g, %g) -> %s", initial.grid,
                cfg.run.t_final, params.eps1, params.eps2, params.eps3, params.eps4, out_dir)

    with output.BalanceWriter(out_dir / "balances.csv") as writer:
        writer.write(step_row(initial, params, None, averaging))
        if snap_dir is not None:
            _write_snapshots(snap_dir, initial, params)

        def observe(state: State, report: StepReport) -> None:
            writer.write(step_row(state, params, report, averaging))
            if snap_dir is not None and state.step_index % stride == 0:
                _write_snapshots(snap_dir, state, params)

        trajectory = run(initial, params, cfg.solver, cfg.run.t_final, observer=observe,
                         step_times=step_times)

    final = trajectory.final
    if snap_dir is not None and final.step_index % stride != 0:
        _write_snapshots(snap_dir, final, params)

    report = norm_monitors(trajectory, params, averaging)
    if cfg.output.monitors:
        output.write_model(out_dir / "monitor_report.json", report)
        output.write_model(out_dir / "weak_forms.json", _weak_form_report(trajectory, params, cfg))
    return trajectory, report


def cmd_run(cfg: RunConfig, out: Optional[PathLike] = None) -> int:
    out_dir = resolve_out_dir(cfg, out)
    try:
        run_scenario(cfg, cfg.physics, out_dir)
    except StepError as exc:
        logger.error("Run aborted at t=%.6g: %s", exc.t, exc)
        return EXIT_SOLVER
    logger.info("Run complete: %s", out_dir)
    return EXIT_OK


# -------------------------------------------------------------------------
# Continuation
# -------------------------------------------------------------------------

def monitor_ratio(values: List[float]) -> float:
    """max/min across rungs; 1 when all are zero."""
    lo, hi = min(values), max(values)
    if hi == 0 and lo == 0:
        return 1.0
    if lo <= 0:
        return math.inf
    return hi / lo


def summarize_rungs(reports: List[MonitorReport]) -> List[ContinuationSummaryRow]:
    rows = []
    for key in reports[0].values:
        values = [r.values[key] for r in reports if key in r.values]
        rows.append(ContinuationSummaryRow(
            monitor=key, min_value=min(values), max_value=max(values), ratio=monitor_ratio(values),
        ))
    return rows


def _write_continuation_tables(out_dir: Path, ladder: List[float],
                               reports: List[MonitorReport], finals: List[State]) -> None:
    if not reports:
        return
    summary = summarize_rungs(reports)
    output.write_table(out_dir / "summary.csv", ["monitor", "min_value", "max_value", "ratio"],
                       [[r.monitor, r.min_value, r.max_value, r.ratio] for r in summary])
    distances = []
    for k in range(1, len(finals)):
        grid = finals[k].grid
        distances.append([
            k - 1, k, ladder[k - 1], ladder[k],
            grid.norm_l2(finals[k].u - finals[k - 1].u),
            grid.norm_l2(finals[k].theta - finals[k - 1].theta),
        ])
    output.write_table(out_dir / "distances.csv",
                       ["rung_from", "rung_to", "eps_from", "eps_to", "u_l2", "theta_l2"], distances)


def cmd_continuation(cfg: RunConfig, eps_ladder: Optional[List[float]] = None,
                     out: Optional[PathLike] = None) -> int:
    """
    Run the scenario once per eps (applied to eps1..eps4 jointly).

    The first rung chooses its steps adaptively; every later rung replays
    its accepted step times, so consecutive final states differ by the
    change in eps only. Writes rung_<k>/ per rung, summary.csv (per-monitor
    max/min ratio) and distances.csv (L2 distance of final states of
    consecutive rungs).
    """
    ladder = list(eps_ladder if eps_ladder is not None else cfg.continuation.eps_ladder)
    if not ladder or any(e <= 0 for e in ladder) or any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise ConfigError("eps ladder must be positive and strictly decreasing")
    out_dir = output.ensure_dir(resolve_out_dir(cfg, out))

    weight = regularization_weight(_initial_state(cfg), cfg.physics.with_eps(ladder[0]))
    if weight > ROUGH_DATA_WEIGHT:
        logger.warning("Initial data is rough for eps=%g: eps |lap chi|^(p1-1) / m = %.3g; "
                       "rung monitors will differ by more than a perturbation", ladder[0], weight)

    reports: List[MonitorReport] = []
    finals: List[State] = []
    step_times: Optional[List[float]] = None

    for k, eps in enumerate(ladder):
        logger.info("Continuation rung %d/%d: eps=%g", k + 1, len(ladder), eps)
        try:
            trajectory, report = run_scenario(cfg, cfg.physics.with_eps(eps), out_dir / f"rung_{k}",
                                              step_times=step_times)
        except StepError as exc:
            logger.error("Rung %d (eps=%g) failed at t=%.6g: %s", k, eps, exc.t, exc)
            _write_continuation_tables(out_dir, ladder, reports, finals)
            return EXIT_SOLVER
        if step_times is None:
            step_times = trajectory.times[1:].tolist()
        reports.append(report)
        finals.append(trajectory.final)

    _write_continuation_tables(out_dir, ladder, reports, finals)
    return EXIT_OK


# -------------------------------------------------------------------------
# Manufactured solutions
# -------------------------------------------------------------------------

def cmd_mms(cfg: RunConfig, levels: Optional[List[int]] = None,
            out: Optional[PathLike] = None) -> int:
    """Convergence study; writes errors.csv and orders.csv."""
    levels = list(levels if levels is not None else cfg.mms.levels)
    if len(levels) < 3:
        raise ConfigError(f"mms needs at least 3 refinement levels, got {len(levels)}")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigError("refinement levels must be increasing")
    out_dir = output.ensure_dir(resolve_out_dir(cfg, out))
    output.write_text(out_dir / "config.txt", serialize_config(cfg))
    try:
        study = convergence_study(cfg.physics, cfg.grid, cfg.mms, cfg.solver, levels)
    except StepError as exc:
        logger.error("MMS level failed at t=%.6g: %s", exc.t, exc)
        return EXIT_SOLVER

    error_columns = ["n", "h", "dt", "steps", "err_u_l2", "err_u_linf", "err_theta_l2", "err_theta_linf"]
    output.write_table(out_dir / "errors.csv", error_columns,
                       [[getattr(row, c) for c in error_columns] for row in study.rows])
    order_columns = ["n_coarse", "n_fine", "order_u_l2", "order_u_linf", "order_theta_l2", "order_theta_linf"]
    output.write_table(out_dir / "orders.csv", order_columns,
                       [[entry[c] for c in order_columns] for entry in study.orders])
    for entry in study.orders:
        logger.info("Observed orders %d->%d: u=%.3f theta=%.3f", entry["n_coarse"], entry["n_fine"],
                    entry["order_u_l2"], entry["order_theta_l2"])
    return EXIT_OK


# -------------------------------------------------------------------------
# Report
# -------------------------------------------------------------------------

def load_snapshot_trajectory(run_dir: PathLike) -> Trajectory:
    """States rebuilt from the u/theta snapshot pairs of a run directory."""
    snap_dir = Path(run_dir) / "snapshots"
    states = []
    for step, files in output.list_snapshots(snap_dir).items():
        if "u" not in files or "theta" not in files:
            logger.warning("Snapshot step %d is incomplete; skipped", step)
            continue
        header, grid, u = output.read_snapshot(files["u"])
        _, _, theta = output.read_snapshot(files["theta"])
        states.append(State(grid, float(header["time"]), u, theta, step))
    if not states:
        raise output.OutputError("no snapshots to report on", snap_dir)
    return Trajectory(states=states)


def cmd_report(run_dir: PathLike) -> int:
    """
    Recompute balances and monitors from stored snapshots.

    Time integrals are taken over the snapshot times, so they are coarser
    than the ones written during the run unless the stride was 1.
    """
    run_dir = Path(run_dir)
    cfg = load_config(run_dir / "config.txt")
    params = cfg.physics
    averaging = cfg.solver.face_averaging
    trajectory = load_snapshot_trajectory(run_dir)

    rows: List[StepRow] = []
    previous: Optional[State] = None
    for state in trajectory.states:
        record = balances(state, params, averaging)
        dt = state.t - previous.t if previous is not None else 0.0
        rows.append(StepRow(**record.model_dump(), dt=dt, newton_iters=0))
        previous = state
    output.write_table(run_dir / "report_balances.csv", output.BALANCE_COLUMNS,
                       [output.balance_values(r) for r in rows])
    output.write_model(run_dir / "report_monitor.json", norm_monitors(trajectory, params, averaging))
    return EXIT_OK

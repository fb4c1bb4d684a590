"""Command-line entry point.

Subcommands mirror the pipeline stages: ``semiclassical`` (Bessel-series
damping landscape and limit-cycle solutions), ``steady`` (unconditional
steady state and its metrics), ``trajectory`` (one conditional trajectory),
``ensemble`` (trajectory batch with full conditional statistics), ``sweep``
(grid minimization of the steady-state or conditional Fano factor), and
``wigner`` (mechanical Wigner field).  All file output lands in one run
directory indexed by ``manifest.json``.

Exit codes: 0 success, 1 configuration/validation error, 2 physics-degenerate
(no stable limit cycle where one is required), 3 numerical failure.
"""

from __future__ import annotations

import dataclasses
import sys
from pathlib import Path

import click
import numpy as np

from . import io as io_mod
from .config import ConfigError, RunConfig, load_config
from .ensemble import (
    bootstrap_se,
    decompose_fano,
    fano_histogram,
    fit_conditional_decay,
    run_ensemble,
    sweep_optimize,
)
from .fock import build_space, partial_trace_cavity
from .lindblad import (
    SteadyStateError,
    build_liouvillian,
    steady_metrics,
    steady_state,
)
from .semiclassical import damping_landscape, find_limit_cycles
from .unraveling import (
    MeasurementConfig,
    StepConvergenceError,
    StepSizeError,
    run_trajectory,
)
from .wigner import wigner as wigner_transform
from .fock import truncation_tail

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DEGENERATE = 2
EXIT_NUMERICAL = 3


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="YAML run configuration.")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Override one config key (dotted path), repeatable.")
@click.option("--workers", type=int, default=1, show_default=True,
              help="Trajectory worker processes.")
@click.option("--seed", type=int, default=None,
              help="Override campaign.master_seed.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Override output.directory.")
@click.pass_context
def main(ctx, config_path, overrides, workers, seed, out_dir):
    """Conditional dynamics of optomechanical limit cycles."""
    ctx.ensure_object(dict)
    ctx.obj.update(config_path=config_path, overrides=list(overrides),
                   workers=workers, seed=seed, out_dir=out_dir)


def _load(ctx) -> RunConfig:
    opts = ctx.obj
    try:
        cfg = load_config(opts["config_path"], overrides=opts["overrides"])
    except ConfigError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_CONFIG)
    except OSError as exc:
        click.echo(f"cannot read config: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    if opts["seed"] is not None:
        cfg.master_seed = int(opts["seed"])
    if opts["out_dir"] is not None:
        cfg.output_dir = Path(opts["out_dir"])
    return cfg


def _stable_cycles(cfg: RunConfig):
    return [s for s in find_limit_cycles(cfg.system, cfg.r_max)
            if s.stable]


def _t_rel_of(cfg: RunConfig):
    cycles = _stable_cycles(cfg)
    return (min(cycles, key=lambda s: s.b_ss).t_rel if cycles else None)


def _steady_rho(cfg: RunConfig):
    space = build_space(*cfg.space)
    liou = build_liouvillian(space, cfg.system)
    return space, liou, steady_state(liou)


def _fail_numerical(exc):
    click.echo(f"numerical failure: {exc}", err=True)
    sys.exit(EXIT_NUMERICAL)


@main.command()
@click.pass_context
def semiclassical(ctx):
    """Damping landscape over r and the limit-cycle solutions."""
    cfg = _load(ctx)
    out = cfg.output_dir
    r_values = np.linspace(1e-6, cfg.r_max, cfg.r_points)
    rows = damping_landscape(cfg.system, r_values)
    sols = find_limit_cycles(cfg.system, cfg.r_max)
    io_mod.write_landscape_csv(out / "landscape.csv",
                               [row[0] for row in rows],
                               [row[1] for row in rows],
                               [row[2] for row in rows])
    payload = {"solutions": [dataclasses.asdict(s) for s in sols]}
    io_mod.write_json(out / "solutions.json", payload)
    io_mod.write_manifest(out, "semiclassical", {
        "landscape.csv": "landscape_csv",
        "solutions.json": "json",
    })
    stable = [s for s in sols if s.stable]
    for s in sols:
        click.echo(f"r={s.r:.4f}  B_ss={s.b_ss:.4f}  "
                   f"gamma_rel={s.gamma_rel:.6f}  stable={s.stable}")
    if not stable:
        click.echo("no stable limit cycle for these parameters", err=True)
        sys.exit(EXIT_DEGENERATE)


@main.command()
@click.pass_context
def steady(ctx):
    """Unconditional steady state and its mechanical metrics."""
    cfg = _load(ctx)
    out = cfg.output_dir
    try:
        space, liou, rho = _steady_rho(cfg)
    except SteadyStateError as exc:
        _fail_numerical(exc)
    metrics = steady_metrics(liou, rho)
    tail_a, tail_b = truncation_tail(space, rho)
    resid_scaled = metrics.residual / liou.norm_bound()
    payload = {
        "n_ss": metrics.n_ss, "f_ss": metrics.f_ss,
        "s_ss": metrics.s_ss, "residual": metrics.residual,
        "residual_over_norm_bound": resid_scaled,
        "truncation_tail_cavity": tail_a, "truncation_tail_mech": tail_b,
        "space": {"n_a": cfg.space[0], "n_b": cfg.space[1]},
    }
    io_mod.write_json(out / "steady.json", payload)
    artifacts = {"steady.json": "json"}
    if cfg.dump_state:
        io_mod.dump_state(out / "steady_state.bin", rho, *cfg.space)
        artifacts["steady_state.bin"] = "state"
    io_mod.write_manifest(out, "steady", artifacts)
    click.echo(f"<n>={metrics.n_ss:.4f}  F={metrics.f_ss:.4f}  "
               f"S={metrics.s_ss:.4f}  residual={resid_scaled:.2e}")


@main.command()
@click.pass_context
def trajectory(ctx):
    """One conditional trajectory from the steady state."""
    cfg = _load(ctx)
    out = cfg.output_dir
    try:
        space, _, rho = _steady_rho(cfg)
        record = run_trajectory(
            rho, cfg.system, cfg.measurement, cfg.stepper, cfg.t_final,
            cfg.master_seed, space=space, t_rel=_t_rel_of(cfg))
    except (SteadyStateError, StepConvergenceError, StepSizeError) as exc:
        _fail_numerical(exc)
    io_mod.write_trajectory_csv(out / "trajectory.csv", record)
    io_mod.write_manifest(out, "trajectory", {
        "trajectory.csv": "trajectory_csv",
        "trajectory.json": "json",
    })
    click.echo(f"samples={len(record.times)}  final <n>={record.n_t[-1]:.4f}"
               f"  final F={record.f_t[-1]:.4f}")


@main.command()
@click.pass_context
def ensemble(ctx):
    """Trajectory batch: averaged series, histogram, fits, decomposition."""
    cfg = _load(ctx)
    out = cfg.output_dir
    workers = ctx.obj["workers"]
    try:
        space, liou, rho = _steady_rho(cfg)
    except SteadyStateError as exc:
        _fail_numerical(exc)
    metrics = steady_metrics(liou, rho)
    f_ss = metrics.f_ss
    t_rel = _t_rel_of(cfg)
    try:
        ens = run_ensemble(cfg.system, cfg.measurement, cfg.stepper, cfg.m,
                           cfg.t_final, cfg.master_seed, space=space,
                           rho0=rho, t_rel=t_rel, workers=workers)
    except RuntimeError as exc:
        _fail_numerical(exc)

    t_start = cfg.t_start
    if t_start is None:
        t_start = 2.5 * t_rel if t_rel else 0.25 * cfg.t_final

    artifacts = {}
    io_mod.write_series_csv(out / "ensemble_series.csv", ens.times, t_rel,
                            ens.n_mean, ens.s_mean, ens.f_mean)
    artifacts["ensemble_series.csv"] = "series_csv"
    for index, rec in enumerate(ens.records):
        name = f"trajectory_{index:03d}.csv"
        io_mod.write_trajectory_csv(out / name, rec)
        artifacts[name] = "trajectory_csv"
        artifacts[name.replace(".csv", ".json")] = "json"

    summary = {
        "f_ss": f_ss, "n_ss": metrics.n_ss, "s_ss": metrics.s_ss,
        "t_start": t_start, "t_rel": t_rel,
        "m": ens.m, "master_seed": ens.master_seed, "seeds": ens.seeds,
    }
    try:
        hist = fano_histogram(ens, f_ss, t_start)
    except ValueError as exc:
        summary["histogram_error"] = str(exc)
        hist = None
    if hist is not None:
        io_mod.write_histogram_csv(out / "fano_histogram.csv", hist)
        artifacts["fano_histogram.csv"] = "histogram_csv"
        summary.update(
            f_cond=hist.f_cond, f_cond_se=hist.f_cond_se,
            p_below=hist.p_below, range70=list(hist.range70),
            histogram_samples=hist.n_samples)
        deco = decompose_fano(ens, f_ss, t_start)
        summary["decomposition"] = dataclasses.asdict(deco)
    if t_rel is not None:
        gamma_rel = 1.0 / t_rel
        span_ok = ens.times[-1] - ens.times[0] >= 3.0 / (2.0 * gamma_rel)
        if span_ok:
            for label, series in (("fano", "f_t"), ("entropy", "s_t")):
                per_traj = np.stack([getattr(r, series) for r in ens.records])
                fit = fit_conditional_decay(ens.times, per_traj, gamma_rel)
                summary[f"decay_fit_{label}"] = _fit_payload(fit)
    io_mod.write_json(out / "summary.json", summary)
    artifacts["summary.json"] = "json"
    io_mod.write_manifest(out, "ensemble", artifacts,
                          extra={"master_seed": ens.master_seed})
    f_cond_txt = (f"f_cond={hist.f_cond:.4f}  p_below={hist.p_below:.3f}"
                  if hist else "histogram unavailable")
    click.echo(f"f_ss={f_ss:.4f}  {f_cond_txt}  (M={ens.m})")


def _fit_payload(fit):
    payload = dataclasses.asdict(fit)
    if fit.pinned is not None:
        payload["pinned"] = dataclasses.asdict(fit.pinned)
        payload["pinned"].pop("pinned", None)
    return payload


@main.command()
@click.pass_context
def sweep(ctx):
    """Minimize f_ss or f_cond over detuning and/or homodyne-angle grids."""
    cfg = _load(ctx)
    out = cfg.output_dir
    workers = ctx.obj["workers"]
    if cfg.sweep_delta is None and cfg.sweep_phi is None:
        click.echo("sweep requires sweep.delta and/or sweep.phi_over_pi",
                   err=True)
        sys.exit(EXIT_CONFIG)
    objective = cfg.sweep_objective

    def eval_f_ss(params, phi):
        space = build_space(*cfg.space)
        liou = build_liouvillian(space, params)
        rho = steady_state(liou)
        return steady_metrics(liou, rho).f_ss

    def eval_f_cond(params, phi):
        space = build_space(*cfg.space)
        liou = build_liouvillian(space, params)
        rho = steady_state(liou)
        meas = MeasurementConfig(kind=cfg.measurement.kind,
                                 eta=cfg.measurement.eta, phi=phi)
        stable = [s for s in find_limit_cycles(params, cfg.r_max) if s.stable]
        t_rel = min(stable, key=lambda s: s.b_ss).t_rel if stable else None
        ens = run_ensemble(params, meas, cfg.stepper, cfg.m, cfg.t_final,
                           cfg.master_seed, space=space, rho0=rho,
                           t_rel=t_rel, workers=workers)
        t_start = cfg.t_start
        if t_start is None:
            t_start = 2.5 * t_rel if t_rel else 0.25 * cfg.t_final
        return ens.pooled("f_t", t_start).mean()

    evaluator = eval_f_ss if objective == "f_ss" else eval_f_cond
    try:
        result = sweep_optimize(cfg.system, delta_grid=cfg.sweep_delta,
                                phi_grid=cfg.sweep_phi, objective=objective,
                                evaluator=evaluator)
    except ValueError as exc:
        if "no valid grid point" in str(exc):
            click.echo(str(exc), err=True)
            sys.exit(EXIT_DEGENERATE)
        click.echo(str(exc), err=True)
        sys.exit(EXIT_CONFIG)
    except (SteadyStateError, RuntimeError) as exc:
        _fail_numerical(exc)

    io_mod.write_sweep_csv(out / "sweep_table.csv", result.table)
    best_cfg = dict(cfg.raw)
    best_cfg["system"] = dict(best_cfg["system"], delta=result.best.delta)
    best_cfg["measurement"] = dict(
        best_cfg["measurement"],
        phi_over_pi=result.best.phi / np.pi)
    io_mod.write_json(out / "sweep_best.json", {
        "objective": objective,
        "best": dataclasses.asdict(result.best),
        "config": best_cfg,
    })
    io_mod.write_manifest(out, "sweep", {
        "sweep_table.csv": "sweep_csv",
        "sweep_best.json": "json",
    })
    click.echo(f"best {objective}={result.best.objective:.4f} at "
               f"delta={result.best.delta:.3f} "
               f"phi/pi={result.best.phi / np.pi:.3f}")


@main.command()
@click.pass_context
def wigner(ctx):
    """Mechanical Wigner field of the steady state or a trajectory snapshot."""
    cfg = _load(ctx)
    out = cfg.output_dir
    try:
        space, _, rho = _steady_rho(cfg)
        if cfg.wigner_snapshot_time is not None:
            record = run_trajectory(
                rho, cfg.system, cfg.measurement, cfg.stepper,
                cfg.wigner_snapshot_time, cfg.master_seed, space=space,
                t_rel=_t_rel_of(cfg), store_final_state=True)
            rho_b = _snapshot_mech(record)
        else:
            rho_b = partial_trace_cavity(space, rho)
    except (SteadyStateError, StepConvergenceError, StepSizeError) as exc:
        _fail_numerical(exc)
    grid = np.linspace(-cfg.wigner_extent, cfg.wigner_extent,
                       cfg.wigner_points)
    field = wigner_transform(rho_b, grid, grid)
    io_mod.write_wigner_csv(out / "wigner.csv", field)
    io_mod.write_manifest(out, "wigner", {"wigner.csv": "wigner_csv"})
    click.echo(f"wigner field on {cfg.wigner_points}x{cfg.wigner_points} "
               f"grid, extent {cfg.wigner_extent}")


def _snapshot_mech(record):
    from .fock import build_space as _bs, partial_trace_cavity as _ptc
    from .fock import displacement_matrix
    final = record.final_state
    rho = final["rho"]
    sp = _bs(final["n_a"], final["n_b"])
    rho_b = _ptc(sp, rho)
    beta = final.get("beta", 0.0)
    if beta:
        dm = displacement_matrix(final["n_b"], beta)
        rho_b = dm @ rho_b @ dm.conj().T
    return rho_b


if __name__ == "__main__":
    main()

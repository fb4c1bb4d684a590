"""Structured run configuration.

A run is described by one YAML document with nested sections; every physical
quantity is entered in units of the mechanical frequency (omega = 1 unless
overridden), and the homodyne angle as ``phi_over_pi``.  Scripted sweeps use
dotted-path overrides (``system.delta=0.36``) applied before validation, and
validation aggregates every problem into a single report instead of failing
on the first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .fock import SystemParams
from .unraveling import MeasurementConfig, StepperConfig

__all__ = ["RunConfig", "ConfigError", "load_config", "apply_overrides",
           "parse_scalar", "DEFAULT_CONFIG"]


class ConfigError(ValueError):
    """Aggregated configuration problems (one message per line)."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__(
            "invalid configuration:\n" + "\n".join(
                f"  - {p}" for p in self.problems))


#: every recognized key with its default; unknown keys are rejected
DEFAULT_CONFIG: dict = {
    "system": {
        "delta": 0.0,
        "omega": 1.0,
        "g0": 0.0,
        "kappa": 1.0,
        "gamma": 0.0,
        "n_ph": 0.0,
        "alpha_laser": 0.0,
    },
    "measurement": {
        "kind": "homodyne",
        "eta": 1.0,
        "phi_over_pi": 0.0,
    },
    "space": {
        "n_a": 8,
        "n_b": 32,
    },
    "stepper": {
        "dt": None,
        "sample_stride": 50,
        "renorm_stride": 100,
        "frame": "auto",
        "frame_dim": 16,
        "frame_spread": 3.0,
        "implicit_tol": 1e-10,
        "implicit_maxiter": 600,
    },
    "campaign": {
        "m": 1,
        "t_final": 100.0,
        "t_start": None,
        "master_seed": 1,
    },
    "sweep": {
        "delta": None,
        "phi_over_pi": None,
        "objective": "f_ss",
    },
    "semiclassical": {
        "r_max": 12.0,
        "r_points": 200,
    },
    "wigner": {
        "extent": 6.0,
        "points": 101,
        "snapshot_time": None,
    },
    "output": {
        "directory": "runs",
        "dump_state": False,
    },
}


@dataclass
class RunConfig:
    """Validated bundle of all per-run settings."""

    system: SystemParams
    measurement: MeasurementConfig
    space: tuple[int, int]
    stepper: StepperConfig
    m: int
    t_final: float
    t_start: float | None
    master_seed: int
    sweep_delta: list[float] | None
    sweep_phi: list[float] | None
    sweep_objective: str
    r_max: float
    r_points: int
    wigner_extent: float
    wigner_points: int
    wigner_snapshot_time: float | None
    output_dir: Path
    dump_state: bool
    raw: dict = field(default_factory=dict, repr=False)


def parse_scalar(text: str):
    """Parse one override value with YAML scalar rules."""
    return yaml.safe_load(text)


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings onto a nested config dict."""
    problems = []
    for item in overrides:
        if "=" not in item:
            problems.append(f"override {item!r} is not of the form key=value")
            continue
        path, _, value = item.partition("=")
        keys = path.strip().split(".")
        target = data
        for k in keys[:-1]:
            if not isinstance(target.get(k), dict):
                problems.append(f"override {item!r}: unknown section {k!r}")
                break
            target = target[k]
        else:
            if keys[-1] not in target:
                problems.append(
                    f"override {item!r}: unknown key {'.'.join(keys)!r}")
            else:
                try:
                    target[keys[-1]] = parse_scalar(value)
                except yaml.YAMLError as exc:
                    problems.append(f"override {item!r}: unparseable ({exc})")
    if problems:
        raise ConfigError(problems)
    return data


def _merge(defaults: dict, user: dict, path: str, problems: list) -> dict:
    out = {}
    for key, dval in defaults.items():
        if isinstance(dval, dict):
            sub = user.get(key, {})
            if sub is None:
                sub = {}
            if not isinstance(sub, dict):
                problems.append(f"section {path}{key} must be a mapping")
                sub = {}
            out[key] = _merge(dval, sub, f"{path}{key}.", problems)
        else:
            out[key] = user.get(key, dval)
    for key in user:
        if key not in defaults:
            problems.append(f"unknown key {path}{key}")
    return out


def _as_grid(value, name, problems):
    if value is None:
        return None
    if isinstance(value, (int, float)):
        return [float(value)]
    if isinstance(value, (list, tuple)) and value and all(
            isinstance(v, (int, float)) for v in value):
        return [float(v) for v in value]
    problems.append(f"{name} must be a number or list of numbers")
    return None


def load_config(path: str | Path | None = None, *, overrides=(),
                data: dict | None = None) -> RunConfig:
    """Load, override, merge with defaults, and validate a run config.

    Any combination of problems — unknown keys, malformed values, physics
    preconditions — is reported in one :class:`ConfigError`.
    """
    problems: list[str] = []
    if data is None:
        if path is None:
            data = {}
        else:
            text = Path(path).read_text()
            data = yaml.safe_load(text) or {}
            if not isinstance(data, dict):
                raise ConfigError([f"config root must be a mapping, got "
                                   f"{type(data).__name__}"])
    merged = _merge(DEFAULT_CONFIG, data, "", problems)
    if overrides:
        try:
            apply_overrides(merged, overrides)
        except ConfigError as exc:
            problems.extend(exc.problems)

    sys_d = merged["system"]
    system = None
    try:
        system = SystemParams(
            delta=float(sys_d["delta"]), omega=float(sys_d["omega"]),
            g0=float(sys_d["g0"]), kappa=float(sys_d["kappa"]),
            gamma=float(sys_d["gamma"]), n_ph=float(sys_d["n_ph"]),
            alpha_laser=float(sys_d["alpha_laser"]))
    except (ValueError, TypeError) as exc:
        problems.append(f"system: {exc}")

    meas_d = merged["measurement"]
    measurement = None
    try:
        measurement = MeasurementConfig(
            kind=meas_d["kind"], eta=float(meas_d["eta"]),
            phi=float(meas_d["phi_over_pi"]) * math.pi)
    except (ValueError, TypeError) as exc:
        problems.append(f"measurement: {exc}")

    sp_d = merged["space"]
    try:
        space = (int(sp_d["n_a"]), int(sp_d["n_b"]))
        if space[0] < 2 or space[1] < 2:
            problems.append("space: truncations n_a, n_b must be >= 2")
    except (ValueError, TypeError) as exc:
        space = (0, 0)
        problems.append(f"space: {exc}")

    st_d = merged["stepper"]
    stepper = None
    try:
        stepper = StepperConfig(
            dt=None if st_d["dt"] is None else float(st_d["dt"]),
            sample_stride=int(st_d["sample_stride"]),
            renorm_stride=int(st_d["renorm_stride"]),
            frame=st_d["frame"], frame_dim=int(st_d["frame_dim"]),
            frame_spread=float(st_d["frame_spread"]),
            implicit_tol=float(st_d["implicit_tol"]),
            implicit_maxiter=int(st_d["implicit_maxiter"]))
    except (ValueError, TypeError) as exc:
        problems.append(f"stepper: {exc}")

    camp = merged["campaign"]
    m = 0
    t_final = 0.0
    t_start = None
    master_seed = 0
    try:
        m = int(camp["m"])
        if m < 1:
            problems.append("campaign: m must be >= 1")
        t_final = float(camp["t_final"])
        if t_final <= 0:
            problems.append("campaign: t_final must be positive")
        t_start = (None if camp["t_start"] is None
                   else float(camp["t_start"]))
        if t_start is not None and not 0 <= t_start < t_final:
            problems.append("campaign: t_start must lie in [0, t_final)")
        master_seed = int(camp["master_seed"])
        if not 0 <= master_seed < 2 ** 64:
            problems.append("campaign: master_seed must fit in 64 bits")
    except (ValueError, TypeError) as exc:
        problems.append(f"campaign: {exc}")

    sw = merged["sweep"]
    sweep_delta = _as_grid(sw["delta"], "sweep.delta", problems)
    sweep_phi_pi = _as_grid(sw["phi_over_pi"], "sweep.phi_over_pi", problems)
    sweep_phi = (None if sweep_phi_pi is None
                 else [v * math.pi for v in sweep_phi_pi])
    if sw["objective"] not in ("f_ss", "f_cond"):
        problems.append("sweep: objective must be 'f_ss' or 'f_cond'")
    if sweep_phi_pi is not None and any(
            not 0 <= v < 1 for v in sweep_phi_pi):
        problems.append(
            "sweep: phi_over_pi grid must lie in [0, 1) — the angle and its "
            "half-turn shift measure the same quadrature")

    semi = merged["semiclassical"]
    r_max, r_points = 0.0, 0
    try:
        r_max = float(semi["r_max"])
        r_points = int(semi["r_points"])
        if r_max <= 0 or r_points < 2:
            problems.append("semiclassical: need r_max > 0 and r_points >= 2")
    except (ValueError, TypeError) as exc:
        problems.append(f"semiclassical: {exc}")

    wig = merged["wigner"]
    w_extent, w_points, w_time = 0.0, 0, None
    try:
        w_extent = float(wig["extent"])
        w_points = int(wig["points"])
        w_time = (None if wig["snapshot_time"] is None
                  else float(wig["snapshot_time"]))
        if w_extent <= 0 or w_points < 3:
            problems.append("wigner: need extent > 0 and points >= 3")
    except (ValueError, TypeError) as exc:
        problems.append(f"wigner: {exc}")

    out_d = merged["output"]
    output_dir = Path(str(out_d["directory"]))
    dump_state = bool(out_d["dump_state"])

    if problems:
        raise ConfigError(problems)
    return RunConfig(
        system=system, measurement=measurement, space=space, stepper=stepper,
        m=m, t_final=t_final, t_start=t_start, master_seed=master_seed,
        sweep_delta=sweep_delta, sweep_phi=sweep_phi,
        sweep_objective=sw["objective"], r_max=r_max, r_points=r_points,
        wigner_extent=w_extent, wigner_points=w_points,
        wigner_snapshot_time=w_time, output_dir=output_dir,
        dump_state=dump_state, raw=merged)

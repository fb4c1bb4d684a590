"""File emission and validation.

Every run writes plain CSV/JSON artifacts plus a manifest that indexes them;
:func:`validate_run_dir` re-reads everything against the declared schemas so
emitted data round-trips.  Density matrices are dumped in a small
self-describing binary format: a 16-byte header of four little-endian uint32
(magic, version, n_a, n_b) followed by the row-major complex matrix as
little-endian float64 (real, imag) pairs.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

__all__ = [
    "write_trajectory_csv", "write_series_csv", "write_histogram_csv",
    "write_landscape_csv", "write_wigner_csv", "write_json",
    "dump_state", "load_state", "write_manifest", "validate_run_dir",
]

STATE_MAGIC = 0x4F4D4C43  # "OMLC"
STATE_VERSION = 1

TRAJECTORY_HEADER = ["t", "t_over_Trel", "n", "S", "F"]
SERIES_HEADER = ["t", "t_over_Trel", "n_mean", "S_mean", "F_mean"]
HISTOGRAM_HEADER = ["bin_low", "bin_high", "count"]
LANDSCAPE_HEADER = ["r", "gamma_ba", "gamma_rel"]
WIGNER_HEADER = ["x", "p", "w"]
SWEEP_HEADER = ["delta", "phi", "objective", "valid"]


def _write_rows(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.12g}" if isinstance(v, float) else v
                             for v in row])


def _rel_times(times, t_rel):
    if t_rel:
        return times / t_rel
    return np.full_like(times, np.nan)


def write_trajectory_csv(path: str | Path, record) -> Path:
    """Sampled series of one trajectory + sidecar JSON with its identity."""
    path = Path(path)
    rel = _rel_times(record.times, record.t_rel)
    _write_rows(path, TRAJECTORY_HEADER,
                zip(record.times.tolist(), rel.tolist(),
                    record.n_t.tolist(), record.s_t.tolist(),
                    record.f_t.tolist()))
    sidecar = {
        "seed": record.seed,
        "kind": record.kind,
        "dt": record.dt,
        "t_rel": record.t_rel,
        "diagnostics": _jsonable(record.diagnostics),
        "record_kind": ("photocurrent" if record.kind == "homodyne"
                        else "jump_times" if record.kind == "counting"
                        else "none"),
        "record": np.asarray(record.record).tolist(),
    }
    side = path.with_suffix(".json")
    side.write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


def write_series_csv(path: str | Path, times, t_rel, n_mean, s_mean,
                     f_mean) -> Path:
    path = Path(path)
    rel = _rel_times(np.asarray(times), t_rel)
    _write_rows(path, SERIES_HEADER,
                zip(np.asarray(times).tolist(), rel.tolist(),
                    np.asarray(n_mean).tolist(), np.asarray(s_mean).tolist(),
                    np.asarray(f_mean).tolist()))
    return path


def write_histogram_csv(path: str | Path, histogram) -> Path:
    path = Path(path)
    edges = histogram.bin_edges
    _write_rows(path, HISTOGRAM_HEADER,
                zip(edges[:-1].tolist(), edges[1:].tolist(),
                    histogram.counts.tolist()))
    return path


def write_landscape_csv(path: str | Path, r_values, gamma_ba_values,
                        gamma_rel_values) -> Path:
    path = Path(path)
    _write_rows(path, LANDSCAPE_HEADER,
                zip(np.asarray(r_values).tolist(),
                    np.asarray(gamma_ba_values).tolist(),
                    np.asarray(gamma_rel_values).tolist()))
    return path


def write_wigner_csv(path: str | Path, field) -> Path:
    """Wigner field on its grid, one (x, p, w) row per grid node."""
    path = Path(path)
    xs, ps, w = field.x, field.p, field.w
    rows = ((float(xs[i]), float(ps[j]), float(w[j, i]))
            for j in range(len(ps)) for i in range(len(xs)))
    _write_rows(path, WIGNER_HEADER, rows)
    return path


def write_sweep_csv(path: str | Path, table) -> Path:
    """Sweep table: one row per grid point with validity flag."""
    path = Path(path)
    rows = ((pt.delta, pt.phi, pt.objective, float(pt.valid))
            for pt in table)
    _write_rows(path, SWEEP_HEADER, rows)
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, float) and obj != obj:  # NaN -> null
        return None
    return obj


def write_json(path: str | Path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True))
    return path


def dump_state(path: str | Path, rho: np.ndarray, n_a: int, n_b: int) -> Path:
    """Binary density-matrix dump (see module docstring for the layout)."""
    path = Path(path)
    rho = np.ascontiguousarray(rho, dtype=np.complex128)
    if rho.shape != (n_a * n_b, n_a * n_b):
        raise ValueError(
            f"state shape {rho.shape} does not match dims ({n_a}, {n_b})")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(struct.pack("<4I", STATE_MAGIC, STATE_VERSION, n_a, n_b))
        pairs = np.empty((rho.size, 2), dtype="<f8")
        flat = rho.reshape(-1)
        pairs[:, 0] = flat.real
        pairs[:, 1] = flat.imag
        fh.write(pairs.tobytes())
    return path


def load_state(path: str | Path) -> tuple[np.ndarray, int, int]:
    """Read back a binary state dump; the validator's inverse of dump_state."""
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise ValueError("state file too short for its header")
    magic, version, n_a, n_b = struct.unpack_from("<4I", raw, 0)
    if magic != STATE_MAGIC:
        raise ValueError("not a state dump (bad magic)")
    if version != STATE_VERSION:
        raise ValueError(f"unsupported state version {version}")
    dim = n_a * n_b
    expected = 16 + dim * dim * 16
    if len(raw) != expected:
        raise ValueError(
            f"state payload is {len(raw) - 16} bytes, expected "
            f"{expected - 16} for dims ({n_a}, {n_b})")
    pairs = np.frombuffer(raw, dtype="<f8", offset=16).reshape(-1, 2)
    rho = (pairs[:, 0] + 1j * pairs[:, 1]).reshape(dim, dim)
    return rho, n_a, n_b


# ---------------------------------------------------------------------------
# manifest + validation
# ---------------------------------------------------------------------------

_SCHEMAS = {
    "trajectory_csv": TRAJECTORY_HEADER,
    "series_csv": SERIES_HEADER,
    "histogram_csv": HISTOGRAM_HEADER,
    "landscape_csv": LANDSCAPE_HEADER,
    "wigner_csv": WIGNER_HEADER,
    "sweep_csv": SWEEP_HEADER,
}


def write_manifest(out_dir: str | Path, command: str, entries: dict,
                   extra: dict | None = None) -> Path:
    """Index every artifact of a run: {relative path: schema kind}."""
    out_dir = Path(out_dir)
    payload = {
        "command": command,
        "artifacts": {str(rel): kind for rel, kind in entries.items()},
    }
    if extra:
        payload.update(_jsonable(extra))
    return write_json(out_dir / "manifest.json", payload)


def validate_run_dir(out_dir: str | Path) -> list[str]:
    """Check every manifest-listed artifact against its schema.

    Returns a list of problems (empty means the directory validates).
    """
    out_dir = Path(out_dir)
    problems: list[str] = []
    manifest_path = out_dir / "manifest.json"
    if not manifest_path.exists():
        return [f"missing manifest.json in {out_dir}"]
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        return [f"manifest.json unparseable: {exc}"]
    artifacts = manifest.get("artifacts")
    if not isinstance(artifacts, dict):
        return ["manifest.json lacks an 'artifacts' mapping"]
    for rel, kind in artifacts.items():
        path = out_dir / rel
        if not path.exists():
            problems.append(f"{rel}: listed but missing")
            continue
        if kind in _SCHEMAS:
            problems.extend(_check_csv(path, rel, _SCHEMAS[kind]))
        elif kind == "json":
            try:
                json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                problems.append(f"{rel}: invalid JSON ({exc})")
        elif kind == "state":
            try:
                load_state(path)
            except ValueError as exc:
                problems.append(f"{rel}: {exc}")
        else:
            problems.append(f"{rel}: unknown artifact kind {kind!r}")
    return problems


def _check_csv(path: Path, rel: str, header: list[str]) -> list[str]:
    problems = []
    with path.open() as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            return [f"{rel}: empty file"]
        if first != header:
            problems.append(
                f"{rel}: header {first} does not match schema {header}")
            return problems
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                problems.append(f"{rel}:{lineno}: wrong column count")
                break
            for value in row:
                try:
                    float(value)
                except ValueError:
                    problems.append(
                        f"{rel}:{lineno}: non-numeric value {value!r}")
                    break
            else:
                continue
            break
    return problems

"""Trajectory, summary and per-figure exports.

Delimited files print every float with ``%.17g``; the JSON summary relies on
Python's shortest round-trip float repr. Both reproduce the binary value
exactly, so identical runs give byte-identical files.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .config import dump_scenario

FLOAT_FMT = "%.17g"


def _write_table(path: Path, header: list[str], columns: list[np.ndarray]):
    data = np.column_stack(columns)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, data, fmt=FLOAT_FMT, delimiter=",")


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def trajectory_columns(report, every: int = 1):
    log = report.log
    n = log.x.shape[1]
    m = log.k.shape[1]
    sl = slice(None, None, every)
    header = ["time"]
    cols = [log.times[sl]]
    for name, arr in (("x", log.x), ("x_m", log.x_m), ("e", log.e)):
        header += [f"{name}_{i + 1}" for i in range(n)]
        cols += [arr[sl, i] for i in range(n)]
    header += [f"K_{p + 1}_{j + 1}" for p in range(m) for j in range(n)]
    cols += [log.k[sl, p, j] for p in range(m) for j in range(n)]
    for name, arr in (("u", log.u), ("d", log.d)):
        header += [f"{name}_{p + 1}" for p in range(m)]
        cols += [arr[sl, p] for p in range(m)]
    if log.s is not None:
        header += [f"s_{p + 1}" for p in range(m)]
        cols += [log.s[sl, p] for p in range(m)]
    for key in ("V", "V_dot_fd", "V_dot_model", "topology_error", "tracking_error", "dispersion",
                "link_estimate", "link_true", "s_norm", "reaching_bound", "ramp_deviation"):
        if key in report.series:
            header.append(key)
            cols.append(report.series[key][sl])
    return header, cols


def write_figures(report, out: Path, every: int = 1) -> list[str]:
    """Per-figure data files named after the published figures."""
    log = report.log
    s = report.series
    t = log.times
    written = []
    for fig in report.meta.get("figures", []):
        path = out / f"{fig}.csv"
        if fig == "fig1":
            truth = np.asarray(report.meta["true_adjacency"])
            est = report.a_hat
            n = truth.shape[0]
            off = [(i, j) for i in range(n) for j in range(n) if i != j]
            header = ["time"] + [f"a_hat_{i + 1}_{j + 1}" for i, j in off]
            cols = [t] + [est[:, i, j] for i, j in off]
            header += [f"a_{i + 1}_{j + 1}" for i, j in off]
            cols += [np.full(t.size, truth[i, j]) for i, j in off]
        elif fig in ("fig3", "fig4", "fig5", "fig6"):
            header = ["time", "link_estimate", "link_true"]
            cols = [t, s["link_estimate"], s["link_true"]]
        elif fig == "fig7":
            header = ["time", "x_1", "x_m_1", "e_1"]
            cols = [t, log.x[:, 0], log.x_m[:, 0], log.e[:, 0]]
        elif fig == "fig8":
            n = log.x.shape[1]
            header = ["time"] + [f"x_{i + 1}" for i in range(n)] + ["ramp", "dispersion"]
            cols = [t] + [log.x[:, i] for i in range(n)] + [t, s["dispersion"]]
        else:
            continue
        _write_table(path, header, [c[::every] for c in cols])
        written.append(str(path))
    return written


def write_all(report, scenario, out_dir, formats=("csv", "summary"), figures: bool = True) -> list[str]:
    """Write the requested exports under ``out_dir/<name>/seed<seed>/``."""
    out = Path(out_dir) / scenario.name / f"seed{scenario.seed}"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        header, cols = trajectory_columns(report, scenario.metrics.csv_every)
        path = out / "trajectory.csv"
        _write_table(path, header, cols)
        written.append(str(path))
    if figures:
        written += write_figures(report, out, scenario.metrics.csv_every)
    if "summary" in formats:
        path = out / "summary.json"
        doc = _clean(report.summary())
        doc["meta"].pop("files", None)
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        written.append(str(path))
        cfg_path = out / "scenario.yaml"
        dump_scenario(scenario, cfg_path)
        written.append(str(cfg_path))
    return written

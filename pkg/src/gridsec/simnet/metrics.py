"""Metric tables and CSV / JSON export of run records."""
from __future__ import annotations

import csv
import json
import math

import numpy as np

from ..trust import majority
from .engine import ESTIMATORS, RunRecord


def window_average(series, start: int, end: int) -> float:
    """Mean of ``series[start..end]`` (inclusive), ignoring unrecorded steps."""
    seg = np.asarray(series, dtype=np.float64)[..., start:end + 1]
    if seg.size == 0 or np.all(np.isnan(seg)):
        return math.nan
    return float(np.nanmean(seg))


def post_detection_average(series, gamma, end: int) -> float:
    """Mean over ``[gamma, end]`` per trial, then over trials; trials without an alarm are skipped."""
    series = np.atleast_2d(np.asarray(series, dtype=np.float64))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=np.float64))
    vals = [
        np.nanmean(row[int(g):end + 1])
        for row, g in zip(series, gamma)
        if math.isfinite(g) and g <= end
    ]
    return float(np.mean(vals)) if vals else math.nan


def detection_delays(gamma, onset: int) -> np.ndarray:
    """``Gamma - onset`` per trial; ``inf`` where nothing alarmed."""
    return np.asarray(gamma, dtype=np.float64) - onset


def false_alarm_period(gamma, horizon: int):
    """Mean first-alarm time with unalarmed trials counted at the horizon (a lower bound)."""
    g = np.asarray(gamma, dtype=np.float64)
    censored = ~np.isfinite(g)
    return float(np.where(censored, horizon, g).mean()), int(censored.sum())


def declaration_times(votes, exclude=()) -> dict:
    """First strict-majority step per target from a ``(t, evaluator, target)`` vote array.

    Evaluators in ``exclude`` are dropped from the count but the majority
    threshold still uses the full node count.
    """
    votes = np.asarray(votes)
    L = votes.shape[1]
    out = {}
    for l in range(L):
        voters = [j for j in range(L) if j != l and j + 1 not in exclude]
        n_yes = votes[:, voters, l].sum(axis=1)
        hit = np.flatnonzero([majority(int(n), L) for n in n_yes])
        if hit.size:
            out[l + 1] = int(hit[0])
    return out


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, (np.floating, np.integer)):
        return _jsonable(v.item())
    return v


def collect_metrics(record: RunRecord, window=None) -> dict:
    """Per-estimator MSE series plus window and post-detection averages."""
    T = record.T
    start, end = window if window is not None else (1, T)
    out = {"mse_vs_time": {k: record.mse[k] for k in ESTIMATORS}, "window": [start, end]}
    out["window_average"] = {k: window_average(record.mse[k], start, end) for k in ESTIMATORS}
    g = record.gamma_net
    out["post_detection_average"] = (
        {k: post_detection_average(record.mse[k], g, end) for k in ESTIMATORS}
        if math.isfinite(g) else None
    )
    return out


def summary(record: RunRecord, window=None) -> dict:
    met = collect_metrics(record, window)
    sc = record.scenario
    onsets = [a.onset for a in sc.attacks] + [m.onset for m in sc.misbehaviors]
    first_onset = min(onsets) if onsets else None
    return {
        "seed": sc.seed,
        "T": record.T,
        "t_end": record.t_end,
        "threshold": sc.threshold,
        "alpha": sc.alpha,
        "gamma_net": _jsonable(record.gamma_net),
        "detection_delay": (
            _jsonable(record.gamma_net - first_onset) if first_onset is not None else None
        ),
        "recovery_point": record.t_R,
        "recovery_fallback": record.fallback,
        "measurement_alarms": {str(k): v for k, v in sorted(record.meas_alarm_at.items())},
        "trust_declarations": {str(k): v for k, v in sorted(record.declared_at.items())},
        "trust_declarations_without_hacked_votes": {
            str(k): v for k, v in sorted(declaration_times(record.votes, exclude=sc.hacked).items())
        },
        "alarm_events": [
            {"t": e.t, "kind": e.kind, "node": e.node, "change_point": e.change_point}
            for e in record.events
        ],
        "robust_rejections": record.robust_rejections,
        "network_events": [list(e) for e in record.network_events],
        "window": met["window"],
        "window_average_mse": {k: _jsonable(v) for k, v in met["window_average"].items()},
        "post_detection_average_mse": (
            {k: _jsonable(v) for k, v in met["post_detection_average"].items()}
            if met["post_detection_average"] else None
        ),
    }


def csv_columns(L: int) -> list[str]:
    cols = ["t"] + [f"mse_node{i}" for i in range(1, L + 1)] + ["mse_total"]
    for i in range(1, L + 1):
        cols += [f"g_meas_{i}", f"alarm_meas_{i}", f"g_trust_{i}", f"declared_{i}"]
    return cols + ["mse_centralized", "mse_robust", "mse_nominal"]


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def write_csv(record: RunRecord, path) -> None:
    """One row per recorded timestep; empty cells for values not computed at that step."""
    L = record.mse_nodes.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(csv_columns(L))
        for t in range(1, record.t_end + 1):
            row = [t] + [_fmt(v) for v in record.mse_nodes[t]] + [_fmt(record.mse["proposed"][t])]
            for i in range(1, L + 1):
                gt = record.g_trust[t, :, i - 1]
                gt = gt[~np.isnan(gt)]
                alarm = int(i in record.meas_alarm_at and record.meas_alarm_at[i] <= t)
                decl = int(i in record.declared_at and record.declared_at[i] <= t)
                row += [
                    _fmt(record.g_meas[t, i - 1]), alarm,
                    _fmt(gt.max() if gt.size else math.nan), decl,
                ]
            row += [_fmt(record.mse[k][t]) for k in ("centralized", "robust", "nominal")]
            w.writerow(row)


def write_json(record: RunRecord, path, window=None) -> None:
    with open(path, "w") as fh:
        json.dump(summary(record, window), fh, indent=2, sort_keys=True)

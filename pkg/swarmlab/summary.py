"""
Summary documents (summary.json) for simulation runs and presets.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_hash, to_document
from .errors import DomainError
from .harness import PresetResult, SummaryStats, population_trend, summarize_case
from .lyapunov import LyapunovConfig, derive_constants, empirical_drift, lyapunov_frame, rate_envelope_check, \
    recipe_violations
from .sim_engine import RunConfig, TrajectoryRecord

logger = logging.getLogger(__name__)

DRIFT_WINDOW_SAMPLES = 10


def lyapunov_setup(run: RunConfig, eta: float = 0.5,
                   epsilon_prime: float = 1.0) -> Tuple[Optional[LyapunovConfig], dict]:
    """
    Derive the Lyapunov constants of a run configuration.

    Returns:
        Tuple[Optional[LyapunovConfig], dict]: The constants (None when undefined) and the
        diagnostics header with status "success" or "undefined"
    """
    try:
        cfg = derive_constants(run.params, run.swarms, eta, epsilon_prime)
    except DomainError as err:
        logger.info("Lyapunov diagnostics undefined: %s", err)
        return None, {"status": "undefined", "reason": str(err)}
    return cfg, {
        "status": "success",
        "constants": cfg.as_dict(),
        "recipe_violations": recipe_violations(cfg, run.params, run.swarms),
    }


def trajectory_diagnostics(record: TrajectoryRecord, run: RunConfig, cfg: Optional[LyapunovConfig],
                           warmup: float) -> dict:
    if cfg is None:
        return {"status": "undefined"}
    frame = lyapunov_frame(record, cfg)
    totals = frame.groupby("t", sort=True)[["V1", "V2", "V3"]].sum().sum(axis=1)
    section = {"status": "success", "V_initial": float(totals.iloc[0]), "V_final": float(totals.iloc[-1]),
               "V_max": float(totals.max())}
    window = DRIFT_WINDOW_SAMPLES * run.sample_interval
    try:
        drift = empirical_drift(record, cfg, window)
    except DomainError as err:
        section["drift"] = {"status": "undefined", "reason": str(err)}
    else:
        tail = drift[drift["t"] >= warmup]
        section["drift"] = {
            "status": "success" if len(tail) else "undefined",
            "window": window,
            "mean_after_warmup": float(tail["drift"].mean()) if len(tail) else None,
            "mean_V1": float(tail["drift_V1"].mean()) if len(tail) else None,
            "mean_V2": float(tail["drift_V2"].mean()) if len(tail) else None,
            "mean_V3": float(tail["drift_V3"].mean()) if len(tail) else None,
        }
    if record.envelope is not None:
        section["rate_envelope"] = rate_envelope_check(record, run.params, run.swarms)
    return section


def summarize_run(experiment: ExperimentConfig, records: Sequence[TrajectoryRecord],
                  cfg: Optional[LyapunovConfig] = None, diagnostics: Optional[dict] = None) -> dict:
    """
    Summary of one simulated configuration, over all of its replications.

    Args:
        experiment (ExperimentConfig): The configuration that was run
        records (Sequence[TrajectoryRecord]): One record per replication
        cfg (LyapunovConfig, optional): Constants from `lyapunov_setup`
        diagnostics (dict, optional): Header from `lyapunov_setup`

    Returns:
        dict: summary.json content, or status "error" with a message
    """
    if not records:
        return {"status": "error", "error_message": "No trajectory records to summarize."}
    if diagnostics is None:
        cfg, diagnostics = lyapunov_setup(experiment.run)
    stats = summarize_case(records, experiment)
    counters = {}
    for record in records:
        for key, value in record.counters.items():
            counters[key] = counters.get(key, 0) + value
    document = to_document(experiment)
    runs = []
    for record in records:
        runs.append({
            "end_reason": record.end_reason,
            "end_time": record.end_time,
            "flush_out": record.flush_out,
            "all_introduced": record.all_introduced,
            "final": record.final_summary,
            "trend": population_trend(record),
            "lyapunov": trajectory_diagnostics(record, experiment.run, cfg, experiment.warmup),
        })
    return {
        "status": "success",
        "version": __version__,
        "config_hash": config_hash(document),
        "config": document,
        "counters": counters,
        "statistics": stats.to_dict(),
        "population_growth": stats.trend["growing"],
        "diagnostics": diagnostics,
        "runs": runs,
        "digest": digest(experiment.run.swarm_ids, stats),
    }


def summarize_preset(result: PresetResult) -> dict:
    """summary.json content for a preset: resolved case configs, statistics, references, verdicts and counters."""
    summary = result.to_dict()
    counters = {}
    for name, records in result.records.items():
        merged = {}
        for record in records:
            for key, value in record.counters.items():
                merged[key] = merged.get(key, 0) + value
        counters[name] = merged
    summary.update({
        "status": "success",
        "version": __version__,
        "counters": counters,
        "config": {c.name: to_document(c.experiment) for c in result.preset.cases},
        "case_config_hashes": {c.name: config_hash(to_document(c.experiment)) for c in result.preset.cases},
        "population_growth": {name: s.trend["growing"] for name, s in result.cases.items()},
        "digest": " ".join(_verdict_lines(result.verdicts)) or "No acceptance checks for this preset.",
    })
    return summary


def digest(swarm_ids: Sequence[str], stats: SummaryStats) -> str:
    """Plain-text account of the headline numbers."""
    parts: List[str] = []
    for sid in swarm_ids:
        entry = stats.sojourn.get(sid, {})
        if entry.get("status") == "ok":
            if entry["half_width"] is not None:
                parts.append(f"Swarm {sid}: mean sojourn {entry['mean']:.4g} "
                             f"(±{entry['half_width']:.3g} at {entry['confidence']:.0%}, {entry['samples']} peers).")
            else:
                parts.append(f"Swarm {sid}: mean sojourn {entry['mean']:.4g} ({entry['samples']} peers).")
        else:
            parts.append(f"Swarm {sid}: no post-warmup departures.")
    if stats.flush_out["status"] == "ok":
        parts.append(f"Roster emptied at t={stats.flush_out['mean']:.4g}.")
    if stats.trend["growing"]:
        parts.append(f"Population grows at {stats.trend['slope_mean']:.3g} peers per unit time.")
    else:
        parts.append(f"Peak population {stats.peak_population}.")
    return " ".join(parts)


def _verdict_lines(verdicts: Sequence[dict]) -> List[str]:
    lines = []
    for v in verdicts:
        value = v["value"]
        shown = f"{value:.4g}" if isinstance(value, (float, np.floating)) else str(value)
        lines.append(f"[{'pass' if v['passed'] else 'FAIL'}] {v['name']}: {shown} (expected {v['expected']}).")
    return lines

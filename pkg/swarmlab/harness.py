"""
Experiment harness: scenario types, replication runner and summary statistics.
"""

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .config import ExperimentConfig, config_hash, to_document
from .errors import DomainError
from .settings import thread_cap
from .sim_engine import TrajectoryRecord, run

logger = logging.getLogger(__name__)

DEFAULT_CONFIDENCE = 0.95
SINGLE_RUN_BATCHES = 10


@dataclass(frozen=True)
class ScenarioCase:
    name: str
    experiment: ExperimentConfig
    # values that distinguish this case inside its preset (policy, scale, K, ...)
    labels: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ScenarioPreset:
    """
    A named experiment: one or more cases, each replicated, plus reference values and tolerance checks.

    `evaluate` maps the per-case summaries to (derived statistics, verdicts).
    """
    name: str
    description: str
    cases: Tuple[ScenarioCase, ...]
    options: Mapping[str, Any]
    references: Mapping[str, float] = field(default_factory=dict)
    provenance: str = ""
    evaluate: Optional[Callable[[Dict[str, dict]], Tuple[dict, List[dict]]]] = field(default=None, compare=False)

    def violations(self) -> List[str]:
        problems = []
        for case in self.cases:
            problems.extend(f"{case.name}: {v}" for v in case.experiment.violations())
        return problems

    def document(self) -> dict:
        return {
            "name": self.name,
            "options": dict(sorted(self.options.items())),
            "cases": [{"name": c.name, "labels": dict(c.labels), "config": to_document(c.experiment)}
                      for c in self.cases],
        }

    def fingerprint(self) -> str:
        return config_hash(self.document())


@dataclass
class SummaryStats:
    """Statistics of one case across its replications."""
    replications: int
    confidence: float
    sojourn: Dict[str, dict]
    flush_out: dict
    peak_population: int
    final_population: Dict[str, float]
    min_population: Dict[str, int]
    last_quartile_max: Dict[str, int]
    # largest least-squares slope of a swarm population over the last quarter of the horizon
    last_quartile_slope: Dict[str, Optional[float]]
    # largest number of t=0 peers still live at the horizon
    cohort_left: Dict[str, int]
    introduction: Dict[str, dict]
    trend: dict
    empty_fraction: Optional[float]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PresetResult:
    preset: ScenarioPreset
    rng_seed: int
    cases: Dict[str, SummaryStats]
    records: Dict[str, List[TrajectoryRecord]]
    derived: dict
    verdicts: List[dict]

    @property
    def passed(self) -> bool:
        return all(v["passed"] for v in self.verdicts)

    def to_dict(self) -> dict:
        return {
            "preset": self.preset.name,
            "description": self.preset.description,
            "fingerprint": self.preset.fingerprint(),
            "rng_seed": self.rng_seed,
            "options": dict(self.preset.options),
            "provenance": self.preset.provenance,
            "references": dict(self.preset.references),
            "cases": {name: summary.to_dict() for name, summary in self.cases.items()},
            "derived": self.derived,
            "verdicts": self.verdicts,
            "passed": self.passed,
        }


# --- statistics ---

def derive_seed(root_seed: int, case: str, replication: int) -> int:
    """Independent 64-bit stream seed for one replication of one case."""
    digest = hashlib.blake2b(f"{root_seed}:{case}:{replication}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def steady_state_sojourn(records: Sequence[TrajectoryRecord], warmup: float, swarm: Optional[str] = None,
                         confidence: float = DEFAULT_CONFIDENCE) -> dict:
    """
    Mean sojourn of peers that arrived after the warmup, with a batch-means confidence interval.

    Batches are the replications; a single replication is cut into consecutive batches by arrival.

    Args:
        records (Sequence[TrajectoryRecord]): Replications of one configuration
        warmup (float): Arrivals before this time are discarded
        swarm (str, optional): Restrict to one swarm
        confidence (float): Confidence level of the interval

    Returns:
        dict: status "ok" with mean and interval, or "undefined" with a reason
    """
    if not records:
        raise DomainError("steady_state_sojourn needs at least one record.")
    if all(warmup >= r.t_end for r in records):
        return {"status": "undefined", "reason": "warmup reaches the horizon", "samples": 0}
    per_record = []
    for record in records:
        kept = sorted((s.arrival, s.departure - s.arrival) for s in record.sojourns
                      if s.arrival >= warmup and (swarm is None or s.swarm == swarm))
        if kept:
            per_record.append(np.array([d for _, d in kept]))
    if not per_record:
        return {"status": "undefined", "reason": "no departures after warmup", "samples": 0}
    pooled = np.sort(np.concatenate(per_record))
    if len(per_record) >= 2:
        batches = [b.mean() for b in per_record]
    else:
        only = per_record[0]
        batches = [chunk.mean() for chunk in np.array_split(only, min(SINGLE_RUN_BATCHES, len(only)))]
    batches = np.sort(np.array(batches))
    mean = float(pooled.mean())
    half = None
    if len(batches) >= 2:
        half = float(stats.sem(batches) * stats.t.ppf((1 + confidence) / 2.0, len(batches) - 1))
    return {
        "status": "ok",
        "mean": mean,
        "half_width": half,
        "ci_low": None if half is None else mean - half,
        "ci_high": None if half is None else mean + half,
        "confidence": confidence,
        "samples": int(pooled.size),
        "batches": int(len(batches)),
    }


def flush_out_time(record: TrajectoryRecord) -> dict:
    """First time the roster emptied in a run without arrivals; censored at the horizon otherwise."""
    if record.end_reason == "flushed":
        return {"status": "ok", "time": record.flush_out}
    return {"status": "censored", "time": record.end_time}


def linear_fit(xs: Sequence[float], ys: Sequence[float]) -> dict:
    if len(xs) < 2 or len(set(xs)) < 2:
        return {"status": "undefined", "reason": "need two distinct x values"}
    fit = stats.linregress(np.asarray(xs, dtype=float), np.asarray(ys, dtype=float))
    return {"status": "ok", "slope": float(fit.slope), "intercept": float(fit.intercept),
            "r_squared": float(fit.rvalue ** 2), "points": len(xs)}


def population_totals(record: TrajectoryRecord) -> Tuple[np.ndarray, np.ndarray]:
    frame = record.samples_frame()
    totals = frame.groupby("t", sort=True)["population"].sum()
    return totals.index.to_numpy(dtype=float), totals.to_numpy(dtype=float)


def population_trend(record: TrajectoryRecord) -> dict:
    """Least-squares trend of the total population; `growing` needs a positive slope and a rising level."""
    times, totals = population_totals(record)
    if len(times) < 4 or np.ptp(times) == 0:
        return {"status": "undefined", "reason": "too few samples", "growing": False}
    fit = linear_fit(times, totals)
    quarter = len(totals) // 4
    first, last = float(totals[:quarter].mean()), float(totals[-quarter:].mean())
    fit["growing"] = bool(fit["slope"] > 0 and last > first)
    fit["first_quartile_mean"] = first
    fit["last_quartile_mean"] = last
    return fit


def summarize_case(records: Sequence[TrajectoryRecord], experiment: ExperimentConfig,
                   confidence: float = DEFAULT_CONFIDENCE) -> SummaryStats:
    """Fold the replications of one case. The result does not depend on the order of `records`."""
    swarm_ids = experiment.run.swarm_ids
    warmup = experiment.warmup
    sojourn = {sid: steady_state_sojourn(records, warmup, sid, confidence) for sid in swarm_ids}
    sojourn["all"] = steady_state_sojourn(records, warmup, None, confidence)

    flushes = [flush_out_time(r) for r in records]
    times = sorted(f["time"] for f in flushes)
    censored = sum(f["status"] == "censored" for f in flushes)
    flush = {"status": "censored" if censored else "ok", "mean": float(np.mean(times)), "times": times,
             "censored": censored}

    peak = 0
    final_population: Dict[str, List[int]] = {sid: [] for sid in swarm_ids}
    min_population = {sid: 0 for sid in swarm_ids}
    last_quartile = {sid: 0 for sid in swarm_ids}
    tail_slopes: Dict[str, List[float]] = {sid: [] for sid in swarm_ids}
    cohort_left = {sid: max((r.cohort.get(sid, {}).get("left", 0) for r in records), default=0)
                   for sid in swarm_ids}
    for record in records:
        frame = record.samples_frame()
        peak = max(peak, int(frame.groupby("t")["population"].sum().max()))
        horizon = frame["t"].max()
        for sid, rows in frame.groupby("swarm"):
            pops = rows["population"].to_numpy()
            final_population[sid].append(int(pops[-1]))
            min_population[sid] = max(min_population[sid], int(pops.min()))
            tail = rows.loc[rows["t"] >= 0.75 * horizon]
            last_quartile[sid] = max(last_quartile[sid], int(tail["population"].max()))
            fit = linear_fit(tail["t"].tolist(), tail["population"].tolist())
            if fit["status"] == "ok":
                tail_slopes[sid].append(fit["slope"])

    introduction = {}
    for sid in swarm_ids:
        values = sorted(r.all_introduced[sid] for r in records if r.all_introduced.get(sid) is not None)
        introduction[sid] = {"mean": float(np.mean(values)) if values else None, "times": values,
                             "missing": len(records) - len(values)}

    trends = [population_trend(r) for r in records]
    slopes = sorted(t["slope"] for t in trends if t.get("status") == "ok")
    trend = {
        "slope_mean": float(np.mean(slopes)) if slopes else None,
        "slopes": slopes,
        "growing": bool(trends) and all(t["growing"] for t in trends),
    }

    empties = [r.final_summary.get("empty_fraction") for r in records]
    empties = sorted(e for e in empties if e is not None)
    return SummaryStats(
        replications=len(records),
        confidence=confidence,
        sojourn=sojourn,
        flush_out=flush,
        peak_population=peak,
        final_population={sid: float(np.mean(v)) for sid, v in final_population.items()},
        min_population=min_population,
        last_quartile_max=last_quartile,
        last_quartile_slope={sid: max(v) if v else None for sid, v in tail_slopes.items()},
        cohort_left=cohort_left,
        introduction=introduction,
        trend=trend,
        empty_fraction=float(np.mean(empties)) if empties else None,
    )


# --- runner ---

def _replicate(task: Tuple[int, int, ExperimentConfig]) -> Tuple[int, int, TrajectoryRecord]:
    case_index, replication, experiment = task
    return case_index, replication, run(experiment.run)


def run_scenario(preset: ScenarioPreset, rng_seed: int = 0, workers: Optional[int] = None) -> PresetResult:
    """
    Run every replication of every case, then summarize and evaluate.

    Args:
        preset (ScenarioPreset): Scenario to run
        rng_seed (int): Root seed; replication r of case c runs on derive_seed(rng_seed, c, r)
        workers (int, optional): Parallel processes, defaults to SWARMLAB_THREADS

    Returns:
        PresetResult: Summaries, records, derived statistics and verdicts
    """
    tasks = []
    for index, case in enumerate(preset.cases):
        for r in range(case.experiment.replications):
            tasks.append((index, r, case.experiment.with_seed(derive_seed(rng_seed, case.name, r))))
    workers = min(thread_cap() if workers is None else workers, len(tasks)) or 1
    logger.info("Preset %s: %d cases, %d replications, %d workers", preset.name, len(preset.cases),
                len(tasks), workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate, tasks))
    else:
        results = [_replicate(task) for task in tasks]
    results.sort(key=lambda item: (item[0], item[1]))

    records: Dict[str, List[TrajectoryRecord]] = {case.name: [] for case in preset.cases}
    for index, replication, record in results:
        case = preset.cases[index]
        records[case.name].append(record)
        logger.info("Preset %s case %s replication %d: %d events, end %s at t=%.3f", preset.name, case.name,
                    replication, record.counters["events"], record.end_reason, record.end_time)
    summaries = {case.name: summarize_case(records[case.name], case.experiment) for case in preset.cases}
    derived, verdicts = {}, []
    if preset.evaluate is not None:
        derived, verdicts = preset.evaluate({name: s.to_dict() for name, s in summaries.items()})
    return PresetResult(preset, rng_seed, summaries, records, derived, verdicts)


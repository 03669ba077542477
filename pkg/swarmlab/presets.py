"""
Scenario presets: the stability, scalability, sojourn-time and flash-crowd experiments as named scenarios.

Every preset is a builder over typed options. `build_preset` resolves the caller's overrides, builds the
cases and validates them; `run_preset` runs the result through the harness.
"""

import difflib
import logging
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

from .config import ExperimentConfig
from .errors import ConfigError, PresetError
from .harness import PresetResult, ScenarioCase, ScenarioPreset, linear_fit, run_scenario
from .net_model import BEHAVIORS, NetworkParams, SwarmSpec, apply_behavior, first_k, interval
from .piece_policies import PolicyConfig, PolicyKind, ZetaVariant
from .sim_engine import InitialCondition, RunConfig

logger = logging.getLogger(__name__)

BASE_PARAMS = NetworkParams(mu=1.0, mu_hat=1.0 / 3.0, L=3, U=1.0, p=0.0, y_opt=False)
WARMUP_SHARE = 0.2
# a tuned flash-crowd run counts as fastest within this share of the best flush-out time
TUNED_SLACK = 0.05

# mean sojourn (swarm W1, swarm W2) per behavior and arrival-rate multiplier
TABLE_II = {
    "altruistic": {1: (2.927, 4.400), 4: (3.088, 3.990), 16: (3.134, 3.971)},
    "opportunistic": {1: (3.704, 5.042), 4: (3.832, 5.341), 16: (3.956, 5.570)},
    "selfish": {1: (4.378, 6.394), 4: (4.590, 6.482), 16: (4.667, 6.604)},
    "autonomous": {1: (2.791, 3.769), 4: (2.712, 2.667), 16: (2.788, 2.740)},
}
# mean sojourn (MS, TMS, RFwPMS) and percent improvement of RFwPMS over MS, per file size
TABLE_III = {
    2: (6.246, 5.022, 5.178, 17.103),
    10: (18.250, 12.546, 12.525, 31.367),
    20: (31.741, 23.020, 23.058, 27.356),
    40: (55.648, 43.775, 43.750, 21.382),
    80: (100.300, 84.374, 84.421, 15.831),
    100: (121.804, 104.849, 104.610, 14.116),
    200: (226.998, 205.300, 205.176, 9.613),
    500: (533.737, 506.480, 506.351, 5.131),
}


@dataclass(frozen=True)
class PresetEntry:
    name: str
    description: str
    # option name -> (type, default)
    options: Mapping[str, Tuple[type, Any]]
    build: Callable[[Dict[str, Any]], Tuple[List[ScenarioCase], Dict[str, float], str, Callable]]


def _generic(t_end: float, replications: int = 1, sample_interval: float = 1.0,
             **extra: Tuple[type, Any]) -> Dict[str, Tuple[type, Any]]:
    options = {
        "t_end": (float, t_end),
        "replications": (int, replications),
        "warmup": (float, None),
        "sample_interval": (float, sample_interval),
    }
    options.update(extra)
    return options


# --- building blocks ---

def _swarm(sid: str, file: int, lam: float, opts: Mapping[str, Any], **changes: Any) -> SwarmSpec:
    spec = SwarmSpec(sid, file, file, frozenset({sid}), lam,
                     alpha=opts.get("alpha", 1e-9), beta=opts.get("beta", 1.5))
    return replace(spec, **changes) if changes else spec


def _case(name: str, params: NetworkParams, swarms, opts: Mapping[str, Any], policy: PolicyConfig = None,
          initial: InitialCondition = InitialCondition(), steady: bool = True, master: Optional[int] = None,
          **labels: Any) -> ScenarioCase:
    if policy is None:
        policy = PolicyConfig(opts.get("policy", PolicyKind.RFWPMS.value))
    t_end = opts["t_end"]
    warmup = opts["warmup"]
    if warmup is None:
        warmup = WARMUP_SHARE * t_end if steady else 0.0
    run_config = RunConfig(params=params, swarms=tuple(swarms), policy=policy, t_end=t_end,
                           initial=initial, sample_interval=opts["sample_interval"], master=master)
    experiment = ExperimentConfig(run_config, warmup=warmup, replications=opts["replications"])
    return ScenarioCase(name, experiment, labels)


def _verdict(name: str, passed: bool, value: Any, expected: Any) -> dict:
    return {"name": name, "passed": bool(passed), "value": value, "expected": expected}


def _within(name: str, value: Optional[float], reference: float, tolerance: float) -> dict:
    low, high = reference * (1 - tolerance), reference * (1 + tolerance)
    passed = value is not None and low <= value <= high
    return _verdict(name, passed, value, f"[{low:.4g}, {high:.4g}]")


def _mean_sojourn(summary: dict, swarm: str) -> Optional[float]:
    entry = summary["sojourn"].get(swarm, {})
    return entry.get("mean") if entry.get("status") == "ok" else None


# --- builders ---

def _fps(opts):
    k, lam = opts["k"], opts["lam"]
    params = BASE_PARAMS
    swarm = _swarm("W", first_k(k), lam, opts)
    expected = lam - params.L * params.U
    cases = [_case("fps", params, [swarm], opts, steady=False)]
    references = {"growth_slope": expected, "empty_fraction": 0.9}

    def evaluate(summaries):
        s = summaries["fps"]
        slope = s["trend"]["slope_mean"]
        return {"growth_slope": slope}, [
            _within("population growth slope", slope, expected, 0.3),
            _verdict("empty-peer fraction at the horizon", (s["empty_fraction"] or 0) >= 0.9,
                     s["empty_fraction"], ">= 0.9"),
        ]

    return cases, references, "First-piece syndrome under hard tit-for-tat (single swarm)", evaluate


def _lps(opts):
    k, size = opts["k"], opts["size"]
    params = replace(BASE_PARAMS, p=0.5)
    swarm = _swarm("W", first_k(k), opts["lam"], opts)
    initial = InitialCondition("one_club", {"W": size}, {"W": 1})
    policy = PolicyConfig(opts["policy"])
    cases = [_case("lps", params, [swarm], opts, policy=policy, initial=initial, steady=False)]
    threshold = 1.5 * size

    def evaluate(summaries):
        s = summaries["lps"]
        final = sum(s["final_population"].values())
        return {"final_population": final, "growing": s["trend"]["growing"]}, [
            _verdict("final population above 1.5x the one-club", final > threshold, final, f"> {threshold:g}"),
        ]

    return cases, {"final_population_min": threshold}, "Last-piece syndrome under a work-conserving policy", evaluate


def _two_swarm(behavior: str):
    def build(opts):
        master = first_k(25)
        swarms = [_swarm("W1", first_k(15), 20.0, opts), _swarm("W2", interval(10, 25), 20.0, opts)]
        params = replace(BASE_PARAMS, p=0.0, y_opt=True)
        swarms, params = apply_behavior(swarms, behavior, params, master)
        size = opts["size"]
        initial = InitialCondition("one_club", {"W1": size, "W2": size}, {"W1": 1, "W2": 11})
        cases = [_case(behavior, params, swarms, opts, initial=initial, steady=False, master=master,
                       behavior=behavior)]
        return cases, _escape_references(swarms, size), f"Two-swarm one-club escape, {behavior} swarms", \
            _escape_check(behavior, swarms, size)
    return build


def _escape_references(swarms, size: int) -> Dict[str, float]:
    references = {"cohort_left_max": 0.3 * size}
    references.update({f"{s.id}.slope_max": 0.25 * s.lam for s in swarms})
    return references


def _escape_check(case: str, swarms, size: int):
    """
    A swarm escapes when most of its one-club has left by the horizon and its population no longer climbs
    at anything near the arrival rate over the last quarter.
    """
    drop = 0.3 * size

    def evaluate(summaries):
        s = summaries[case]
        verdicts = []
        for spec in swarms:
            sid = spec.id
            left = s["cohort_left"][sid]
            verdicts.append(_verdict(f"{sid} one-club drops below {drop:g}", left < drop, left, f"< {drop:g}"))
            slope, ceiling = s["last_quartile_slope"][sid], 0.25 * spec.lam
            verdicts.append(_verdict(f"{sid} last-quartile growth below {ceiling:g} per unit time",
                                     slope is not None and slope < ceiling, slope, f"< {ceiling:g}"))
        derived = {key: s[key] for key in ("cohort_left", "last_quartile_slope", "min_population",
                                           "last_quartile_max")}
        return derived, verdicts

    return evaluate


def _three_swarm(opts):
    master = first_k(30)
    opts = dict(opts, alpha=0.0)
    swarms = [
        _swarm("W1", first_k(10), 8.0, opts),
        _swarm("W2", interval(6, 15), 4.0, opts),
        _swarm("W3", interval(16, 30), 2.0, opts),
    ]
    params = replace(BASE_PARAMS, U=1.0 / 3.0, p=0.5, y_opt=True)
    swarms, params = apply_behavior(swarms, "altruistic", params, master)
    size = opts["size"]
    initial = InitialCondition("one_club", {s.id: size for s in swarms}, {"W1": 1, "W2": 7, "W3": 17})
    cases = [_case("alpha0", params, swarms, opts, initial=initial, steady=False, master=master)]
    return cases, _escape_references(swarms, size), "Three swarms with alpha = 0 escape their one-clubs", \
        _escape_check("alpha0", swarms, size)


def _scale_cases(opts) -> List[int]:
    return [opts["scale"]] if opts["scale"] else [1, 4, 16]


def _table2(opts):
    behavior = opts["behavior"]
    master = first_k(18)
    params = replace(BASE_PARAMS, p=0.5, y_opt=False)
    cases = []
    for scale in _scale_cases(opts):
        swarms = [_swarm("W1", first_k(10), 4.0 * scale, opts), _swarm("W2", interval(8, 18), 2.0 * scale, opts)]
        swarms, case_params = apply_behavior(swarms, behavior, params, master)
        cases.append(_case(f"x{scale}", case_params, swarms, opts, master=master, scale=scale, behavior=behavior))
    row = TABLE_II[behavior]
    references = {f"x{scale}.{sid}": row[scale][i] for scale in row for i, sid in enumerate(("W1", "W2"))}

    def evaluate(summaries):
        means = {name: _mean_sojourn(s, "W1") for name, s in summaries.items()}
        verdicts = [_within(f"{name} W1 mean sojourn", means[name], references[f"{name}.W1"], 0.2)
                    for name in summaries]
        defined = [m for m in means.values() if m is not None]
        if len(defined) >= 2:
            spread = max(defined) / min(defined) - 1
            verdicts.append(_verdict("W1 sojourn independent of arrival rate", spread <= 0.15, spread, "<= 0.15"))
        derived = {name: {sid: _mean_sojourn(s, sid) for sid in ("W1", "W2")} for name, s in summaries.items()}
        return derived, verdicts

    return cases, references, f"Mean sojourn vs arrival-rate scale, {behavior} swarms", evaluate


def _filesize(opts):
    behavior = opts["behavior"]
    sizes = [opts["k1"]] if opts["k1"] else [10, 20, 30, 40, 50]
    params = replace(BASE_PARAMS, p=0.5, y_opt=True)
    cases = []
    for k1 in sizes:
        half = k1 // 2
        master = first_k(half + k1)
        swarms = [_swarm("W1", first_k(k1), 6.0, opts), _swarm("W2", interval(half, half + k1), 2.0, opts)]
        swarms, case_params = apply_behavior(swarms, behavior, params, master)
        cases.append(_case(f"k{k1}", case_params, swarms, opts, master=master, k=k1))
    ks = {case.name: case.labels["k"] for case in cases}

    def evaluate(summaries):
        derived, verdicts = {}, []
        for sid in ("W1", "W2"):
            points = [(ks[name], _mean_sojourn(s, sid)) for name, s in summaries.items()]
            points = [(k, m) for k, m in points if m is not None]
            fit = linear_fit([k for k, _ in points], [m for _, m in points])
            derived[sid] = dict(fit, points=points)
            if fit["status"] == "ok":
                verdicts.append(_verdict(f"{sid} sojourn linear in file size", fit["r_squared"] >= 0.95,
                                         fit["r_squared"], ">= 0.95"))
        return derived, verdicts

    return cases, {"r_squared_min": 0.95}, f"Mean sojourn vs file size, {behavior} swarms", evaluate


def _table3(opts):
    k = opts["k"]
    params = replace(BASE_PARAMS, mu_hat=1.0, L=1, U=1.0, y_opt=True)
    swarm = _swarm("W", first_k(k), 4.0, opts)
    cases = [_case(kind.value, params, [swarm], opts, policy=PolicyConfig(kind), policy_kind=kind.value, k=k)
             for kind in (PolicyKind.MS, PolicyKind.TMS, PolicyKind.RFWPMS)]
    references = {}
    if k in TABLE_III:
        ms, tms, rf, improvement = TABLE_III[k]
        references = {"MS": ms, "TMS": tms, "RFwPMS": rf, "improvement": improvement}

    def evaluate(summaries):
        means = {name: _mean_sojourn(s, "W") for name, s in summaries.items()}
        improvement = None
        if means["MS"] and means["RFwPMS"] is not None:
            improvement = 100.0 * (means["MS"] - means["RFwPMS"]) / means["MS"]
        derived = {"mean_sojourn": means, "improvement_percent": improvement}
        verdicts = []
        if references:
            verdicts = [_within(f"{name} mean sojourn", means[name], references[name], 0.15)
                        for name in ("MS", "TMS", "RFwPMS")]
            floor = 20.0 if references["improvement"] >= 20.0 else 0.0
            verdicts.append(_verdict("improvement over MS", improvement is not None and improvement >= floor,
                                     improvement, f">= {floor:g}%"))
        return derived, verdicts

    return cases, references, "Mode suppression vs threshold mode suppression vs RFwPMS", evaluate


def _flash_large(opts):
    k, size = opts["k"], opts["size"]
    params = replace(BASE_PARAMS, mu_hat=1.0, L=1, U=1.0, y_opt=True)
    swarm = _swarm("W", first_k(k), 0.0, opts)
    initial = InitialCondition("flash_crowd", {"W": size})
    kinds = (PolicyKind.MS, PolicyKind.TMS, PolicyKind.RFWPMS, PolicyKind.RNWPMS)
    cases = [_case(kind.value, params, [swarm], opts, policy=PolicyConfig(kind), initial=initial, steady=False,
                   policy_kind=kind.value) for kind in kinds]
    intro = k / params.U

    def evaluate(summaries):
        flush = {name: s["flush_out"]["mean"] for name, s in summaries.items()}
        verdicts = []
        for name, s in summaries.items():
            verdicts.append(_within(f"{name} all pieces introduced", s["introduction"]["W"]["mean"], intro, 0.25))
        verdicts.append(_verdict("RFwPMS flushes out in at most 0.6x MS", flush["RFwPMS"] <= 0.6 * flush["MS"],
                                 flush["RFwPMS"] / flush["MS"], "<= 0.6"))
        verdicts.append(_verdict("RNwPMS flushes out no sooner than MS", flush["RNwPMS"] >= flush["MS"],
                                 flush["RNwPMS"] / flush["MS"], ">= 1"))
        censored = [name for name, s in summaries.items() if s["flush_out"]["censored"]]
        return {"flush_out": flush, "censored": censored}, verdicts

    return cases, {"introduction_time": intro, "flush_ratio_max": 0.6}, \
        "Flash crowd of empty peers, large cache", evaluate


def _flash_small(opts):
    k, size = opts["k"], opts["size"]
    params = NetworkParams(mu=1.0, mu_hat=1.0, L=3, U=1.0 / 3.0, p=0.5, y_opt=True)
    initial = InitialCondition("flash_crowd", {"W": size})
    base = _swarm("W", first_k(k), 0.0, opts)
    cases = [
        _case("standard", params, [base], opts, policy=PolicyConfig(PolicyKind.RFWPMS), initial=initial,
              steady=False, variant="standard", beta=base.beta),
        _case("MS", params, [base], opts, policy=PolicyConfig(PolicyKind.MS), initial=initial, steady=False),
    ]
    tuned = PolicyConfig(PolicyKind.RFWPMS, ZetaVariant.FLASHCROWD)
    for beta in (0.2, 0.4, 0.5):
        cases.append(_case(f"flashcrowd_b{beta:g}", params, [replace(base, beta=beta)], opts, policy=tuned,
                           initial=initial, steady=False, variant="flashcrowd", beta=beta))

    def evaluate(summaries):
        flush = {name: s["flush_out"]["mean"] for name, s in summaries.items()}
        tails = {}
        for name, s in summaries.items():
            introduced = s["introduction"]["W"]["mean"]
            tails[name] = None if introduced is None else flush[name] - introduced
        tuned_runs = {name: t for name, t in flush.items() if name.startswith("flashcrowd_")}
        best = min(tuned_runs, key=tuned_runs.get)
        b04 = flush["flashcrowd_b0.4"]
        return {"flush_out": flush, "tail_after_introduction": tails, "fastest_tuned": best}, [
            _verdict("MS flushes out later than standard RFwPMS", flush["MS"] > flush["standard"],
                     flush["MS"] / flush["standard"], "> 1"),
            _verdict("beta 0.4 flushes out no later than beta 0.2", b04 <= flush["flashcrowd_b0.2"],
                     b04 / flush["flashcrowd_b0.2"], "<= 1"),
            _verdict(f"beta 0.4 within {TUNED_SLACK:.0%} of the fastest tuned run",
                     b04 <= (1 + TUNED_SLACK) * tuned_runs[best], b04 / tuned_runs[best],
                     f"<= {1 + TUNED_SLACK:g}"),
        ]

    return cases, {"ms_vs_standard_min": 1.0, "tuned_slack": TUNED_SLACK}, \
        "Flash crowd with a small seed and a long file", evaluate


def _policy_option(default: PolicyKind = PolicyKind.RFWPMS) -> Tuple[type, Any]:
    return (str, default.value)


_SHAPE = {"beta": (float, 1.5), "alpha": (float, 1e-9)}

REGISTRY: Dict[str, PresetEntry] = {}


def _register(entry: PresetEntry) -> None:
    REGISTRY[entry.name] = entry


_register(PresetEntry(
    "fps_hard_tft", "Single swarm K=10, lambda=4 > LU=3, hard tit-for-tat: the population grows linearly",
    _generic(1000.0, k=(int, 10), lam=(float, 4.0), policy=_policy_option(), **_SHAPE), _fps))
_register(PresetEntry(
    "lps_workconserving", "Single swarm K=10, rarest-first, lambda=6 from an 800-peer one-club: it never drains",
    _generic(1000.0, sample_interval=5.0, k=(int, 10), lam=(float, 6.0), size=(int, 800),
             policy=_policy_option(PolicyKind.RF), **_SHAPE), _lps))
for _behavior in BEHAVIORS:
    _register(PresetEntry(
        f"stability_two_swarm_{_behavior}",
        f"Two {_behavior} swarms W1=[15], W2=[10,25] escape 500-peer one-clubs under RFwPMS",
        _generic(400.0, size=(int, 500), policy=_policy_option(), **_SHAPE), _two_swarm(_behavior)))
_register(PresetEntry(
    "three_swarm_alpha0", "Three altruistic swarms with alpha=0 escape 300-peer one-clubs",
    _generic(400.0, size=(int, 300), policy=_policy_option(), beta=(float, 1.5)), _three_swarm))
_register(PresetEntry(
    "scalability_table2", "Mean sojourn of two swarms at 1x, 4x and 16x arrival rates",
    _generic(1000.0, replications=10, behavior=(str, "altruistic"), scale=(int, 0), policy=_policy_option(),
             **_SHAPE), _table2))
_register(PresetEntry(
    "sojourn_vs_filesize", "Mean sojourn of two swarms as the file grows from K1=10 to K1=50",
    _generic(500.0, replications=3, behavior=(str, "altruistic"), k1=(int, 0), policy=_policy_option(),
             **_SHAPE), _filesize))
_register(PresetEntry(
    "ms_comparison_table3", "MS, TMS and RFwPMS mean sojourn in a single swarm, beta=1.7",
    _generic(5000.0, sample_interval=10.0, k=(int, 10), beta=(float, 1.7), alpha=(float, 1e-9)), _table3))
_register(PresetEntry(
    "flash_crowd_large", "500 empty peers, K=100, no arrivals: flush-out time of MS, TMS, RFwPMS, RNwPMS",
    _generic(5000.0, sample_interval=5.0, k=(int, 100), size=(int, 500), **_SHAPE), _flash_large))
_register(PresetEntry(
    "flash_crowd_small", "100 empty peers, K=600, U=1/3: standard vs flash-crowd sharing factor",
    _generic(20000.0, replications=3, sample_interval=10.0, k=(int, 600), size=(int, 100), **_SHAPE), _flash_small))


def list_presets() -> List[Tuple[str, str]]:
    return [(entry.name, entry.description) for entry in REGISTRY.values()]


def resolve_options(entry: PresetEntry, overrides: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    """
    Merge overrides into a preset's defaults, coercing each value to the option's type.

    Raises:
        PresetError: An override the preset does not accept
        ConfigError: Values that cannot be coerced or are out of range
    """
    options = {name: default for name, (_, default) in entry.options.items()}
    problems = []
    for key, raw in (overrides or {}).items():
        key = key.replace("-", "_")
        if key not in entry.options:
            suggestions = difflib.get_close_matches(key, entry.options, n=3)
            raise PresetError(f"Preset {entry.name!r} has no option {key!r}", suggestions)
        kind = entry.options[key][0]
        try:
            options[key] = kind(raw) if raw is not None else None
        except (TypeError, ValueError):
            problems.append(f"override {key}: expected {kind.__name__}, got {raw!r}")
    if "policy" in options:
        try:
            PolicyKind(options["policy"])
        except ValueError:
            problems.append(f"override policy: unknown policy {options['policy']!r}")
    if "behavior" in options and options["behavior"] not in BEHAVIORS:
        problems.append(f"override behavior: expected one of {', '.join(BEHAVIORS)}")
    if options.get("scale") and options["scale"] not in (1, 4, 16):
        problems.append("override scale: expected 1, 4 or 16")
    if options.get("replications") is not None and options["replications"] < 1:
        problems.append("override replications: must be >= 1")
    if problems:
        raise ConfigError(problems, entry.name)
    return options


def build_preset(name: str, overrides: Optional[Mapping[str, Any]] = None) -> ScenarioPreset:
    """
    Build a named scenario with optional overrides.

    Args:
        name (str): Preset name, see `list_presets`
        overrides (Mapping[str, Any], optional): Option values replacing the preset's defaults

    Returns:
        ScenarioPreset: Validated scenario

    Raises:
        PresetError: Unknown preset or option
        ConfigError: Overrides that break a configuration invariant
    """
    entry = REGISTRY.get(name)
    if entry is None:
        raise PresetError(f"Unknown preset {name!r}", difflib.get_close_matches(name, REGISTRY, n=3))
    options = resolve_options(entry, overrides)
    cases, references, provenance, evaluate = entry.build(options)
    preset = ScenarioPreset(entry.name, entry.description, tuple(cases), options, references, provenance, evaluate)
    problems = preset.violations()
    if problems:
        raise ConfigError(problems, name)
    return preset


def run_preset(name: str, overrides: Optional[Mapping[str, Any]] = None, rng_seed: int = 0,
               workers: Optional[int] = None) -> PresetResult:
    """Build and run a preset. Replication r of case c runs on a seed derived from (rng_seed, c, r)."""
    preset = build_preset(name, overrides)
    logger.info("Running preset %s (%s)", name, preset.fingerprint()[:12])
    return run_scenario(preset, rng_seed, workers)

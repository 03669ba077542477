"""
Command-line coordinator: simulate a config file, run a named preset, list presets, validate a config.

    python -m swarm_coordinator simulate run.json --seed 7 --out out/run
    python -m swarm_coordinator preset ms_comparison_table3 --k 10 --check
    python -m swarm_coordinator list-presets
    python -m swarm_coordinator validate-config run.json

Exit codes: 0 success, 1 validation error, 2 runtime error, 3 acceptance check failed.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence

try:
    from swarmlab.config import load_config
except ImportError:
    # Add the project root to the Python path
    current_dir = os.path.dirname(os.path.abspath(__file__))
    project_root = os.path.join(current_dir, '..', '..')
    if project_root not in sys.path:
        sys.path.insert(0, project_root)
    from swarmlab.config import load_config

import numpy as np

from swarmlab.errors import ConfigError, PresetError, SwarmlabError
from swarmlab.harness import ScenarioCase, ScenarioPreset, run_scenario
from swarmlab.lyapunov import lyapunov_frame
from swarmlab.presets import build_preset, list_presets
from swarmlab.settings import default_out_dir, log_level
from swarmlab.sim_engine import SAMPLE_COLUMNS, TrajectoryRecord
from swarmlab.summary import lyapunov_setup, summarize_preset, summarize_run

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_CHECK = 3
TRAJECTORY_COLUMNS = SAMPLE_COLUMNS + ["V1", "V2", "V3"]
FLOAT_FORMAT = "%.10g"
MAX_SEED = 2 ** 64 - 1


def _error(kind: str, message: str, **extra: Any) -> dict:
    return {"status": "error", "error_kind": kind, "error_message": message, **extra}


def _invalid(err: ConfigError) -> dict:
    where = err.source or "configuration"
    return _error("validation", f"{where}: {len(err.violations)} problem(s)", violations=err.violations)


def validate_config(path: str) -> dict:
    """
    Parse and validate a config file without running it.

    Args:
        path (str): Config file path

    Returns:
        dict: Status and the resolved swarm ids, or every violation found
    """
    try:
        experiment = load_config(path)
    except ConfigError as err:
        return _invalid(err)
    return {"status": "success", "swarms": list(experiment.run.swarm_ids),
            "replications": experiment.replications, "t_end": experiment.run.t_end}


def simulate(path: str, seed: Optional[int] = None, out_dir: Optional[str] = None,
             replications: Optional[int] = None) -> dict:
    """
    Run a config file and write trajectory.csv, sojourns.csv and summary.json.

    Args:
        path (str): Config file path
        seed (int, optional): Root seed, replacing the config's rng_seed
        out_dir (str, optional): Output directory, defaults to SWARMLAB_OUT_DIR
        replications (int, optional): Replaces the config's replication count

    Returns:
        dict: Status, output directory and the run summary
    """
    try:
        experiment = load_config(path)
        if replications is not None:
            experiment = replace(experiment, replications=replications)
        if seed is not None:
            experiment = experiment.with_seed(seed)
        problems = experiment.violations()
        if problems:
            raise ConfigError(problems, path)
    except ConfigError as err:
        return _invalid(err)

    out_dir = out_dir or default_out_dir()
    try:
        scenario = ScenarioPreset("simulate", "config run", (ScenarioCase("simulate", experiment),), {})
        result = run_scenario(scenario, experiment.run.rng_seed)
        records = result.records["simulate"]
        cfg, diagnostics = lyapunov_setup(experiment.run)
        summary = summarize_run(experiment, records, cfg, diagnostics)
        os.makedirs(out_dir, exist_ok=True)
        for r, record in enumerate(records):
            target = out_dir if len(records) == 1 else os.path.join(out_dir, f"rep{r}")
            write_record(record, target, cfg)
        write_json(summary, os.path.join(out_dir, "summary.json"))
    except (SwarmlabError, OSError) as err:
        logger.exception("Simulation failed")
        return _error("runtime", str(err))
    return {"status": "success", "out_dir": out_dir, "summary": summary}


def run_named_preset(name: str, overrides: Optional[Dict[str, Any]] = None, seed: int = 0,
                     out_dir: Optional[str] = None, check: bool = False) -> dict:
    """
    Run a preset and write per-replication records plus an aggregate summary.json.

    Args:
        name (str): Preset name
        overrides (dict, optional): Preset option overrides
        seed (int): Root seed for the replication streams
        out_dir (str, optional): Output directory, defaults to SWARMLAB_OUT_DIR/<name>
        check (bool): Report failed acceptance checks as an error

    Returns:
        dict: Status, output directory and the preset summary
    """
    try:
        preset = build_preset(name, overrides)
    except PresetError as err:
        return _error("validation", str(err), suggestions=err.suggestions)
    except ConfigError as err:
        return _invalid(err)

    out_dir = out_dir or os.path.join(default_out_dir(), name)
    try:
        result = run_scenario(preset, seed)
        summary = summarize_preset(result)
        for case in preset.cases:
            cfg, _ = lyapunov_setup(case.experiment.run)
            for r, record in enumerate(result.records[case.name]):
                write_record(record, os.path.join(out_dir, case.name, f"rep{r}"), cfg)
        write_json(summary, os.path.join(out_dir, "summary.json"))
    except (SwarmlabError, OSError) as err:
        logger.exception("Preset %s failed", name)
        return _error("runtime", str(err))
    if check and not result.passed:
        failed = [v["name"] for v in result.verdicts if not v["passed"]]
        return _error("check", f"Acceptance checks failed: {', '.join(failed)}", out_dir=out_dir, summary=summary)
    return {"status": "success", "out_dir": out_dir, "summary": summary}


def list_available_presets() -> dict:
    return {"status": "success", "presets": [{"name": n, "description": d} for n, d in list_presets()]}


def write_record(record: TrajectoryRecord, out_dir: str, cfg=None) -> None:
    """Write trajectory.csv (samples with V1..V3, empty when undefined) and sojourns.csv."""
    os.makedirs(out_dir, exist_ok=True)
    if cfg is not None:
        frame = lyapunov_frame(record, cfg)
    else:
        frame = record.samples_frame()
        for name in ("V1", "V2", "V3"):
            frame[name] = np.nan
    frame[TRAJECTORY_COLUMNS].to_csv(os.path.join(out_dir, "trajectory.csv"), index=False,
                                     float_format=FLOAT_FORMAT)
    record.sojourns_frame().to_csv(os.path.join(out_dir, "sojourns.csv"), index=False, float_format=FLOAT_FORMAT)


def write_json(document: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(document, handle, indent=2, sort_keys=True, default=_json_default)
        handle.write("\n")


def _json_default(value: Any) -> Any:
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    raise TypeError(f"Cannot serialize {type(value).__name__}")


def parse_overrides(tokens: Sequence[str]) -> Dict[str, str]:
    """Turn leftover `--key value` / `--key=value` tokens into preset overrides."""
    overrides: Dict[str, str] = {}
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--") or len(token) == 2:
            raise ConfigError([f"unexpected argument {token!r}"])
        key = token[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        elif i + 1 < len(tokens) and not tokens[i + 1].startswith("--"):
            value = tokens[i + 1]
            i += 2
        else:
            raise ConfigError([f"override --{key} needs a value"])
        overrides[key.replace("-", "_")] = value
    return overrides


def _load_overrides(path: str) -> Dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as handle:
            doc = json.load(handle)
    except OSError as err:
        raise ConfigError([f"cannot read overrides: {err}"], path) from err
    except json.JSONDecodeError as err:
        raise ConfigError([f"line {err.lineno}: {err.msg}"], path) from err
    if not isinstance(doc, dict):
        raise ConfigError(["overrides must be a JSON object of preset options"], path)
    return doc


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swarm_coordinator",
                                     description="Multi-swarm piece-exchange simulator and experiment runner.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=_seed, default=None, help="root seed (unsigned 64-bit)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--replications", type=int, default=None, help="number of replications")
        p.add_argument("--quiet", action="store_true", help="only log warnings and errors")

    sim = sub.add_parser("simulate", help="run a config file")
    sim.add_argument("config_path", nargs="?", help="config file")
    sim.add_argument("--config", dest="config_flag", default=None, help="config file")
    common(sim)

    pre = sub.add_parser("preset", help="run a named preset; extra --option value pairs override it",
                         allow_abbrev=False)
    pre.add_argument("name")
    pre.add_argument("--config", default=None, help="JSON object of preset overrides")
    pre.add_argument("--overrides", default=None, help="JSON object of preset overrides, applied after --config")
    pre.add_argument("--check", action="store_true", help="exit 3 when an acceptance check fails")
    common(pre)

    lst = sub.add_parser("list-presets", help="list preset names and descriptions")
    lst.add_argument("--quiet", action="store_true")

    val = sub.add_parser("validate-config", help="validate a config file")
    val.add_argument("config_path", nargs="?", help="config file")
    val.add_argument("--config", dest="config_flag", default=None, help="config file")
    val.add_argument("--quiet", action="store_true")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level="WARNING" if args.quiet else log_level(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    if args.command != "preset" and extra:
        parser.error(f"unrecognized arguments: {' '.join(extra)}")

    if args.command == "list-presets":
        result = list_available_presets()
        for entry in result["presets"]:
            print(f"{entry['name']:<36} {entry['description']}")
        return EXIT_OK

    if args.command in ("simulate", "validate-config"):
        path = args.config_flag or args.config_path
        if not path:
            parser.error("a config file is required")
        if args.command == "validate-config":
            result = validate_config(path)
        else:
            result = simulate(path, args.seed, args.out, args.replications)
    else:
        try:
            overrides = _load_overrides(args.config) if args.config else {}
            if args.overrides:
                overrides.update(_load_overrides(args.overrides))
            overrides.update(parse_overrides(extra))
        except ConfigError as err:
            result = _invalid(err)
        else:
            if args.replications is not None:
                overrides["replications"] = args.replications
            result = run_named_preset(args.name, overrides, args.seed or 0, args.out, args.check)

    return report(result)


def report(result: dict) -> int:
    """Print the outcome and map its status to an exit code."""
    if result["status"] == "success":
        summary = result.get("summary")
        if summary is not None:
            print(summary.get("digest", ""))
            print(f"Outputs written to {result['out_dir']}")
        else:
            print(json.dumps({k: v for k, v in result.items() if k != "status"}, sort_keys=True))
        return EXIT_OK
    print(f"error: {result['error_message']}", file=sys.stderr)
    kind = result.get("error_kind")
    if kind == "validation":
        for violation in result.get("violations", []):
            print(f"  - {violation}", file=sys.stderr)
        return EXIT_VALIDATION
    if kind == "check":
        print(result["summary"].get("digest", ""))
        return EXIT_CHECK
    return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""
Config documents: JSON with top-level keys network, swarms, policy and sim.

Parsing collects every problem before failing, and anchors each message to the line of the
offending key when the source text is known.
"""

import hashlib
import json
import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from .errors import ConfigError, DomainError
from .net_model import MAX_PIECES, NetworkParams, SwarmSpec, mask_of, pieces_of
from .piece_policies import PolicyConfig, PolicyKind, ZetaVariant
from .sim_engine import InitialCondition, RunConfig

logger = logging.getLogger(__name__)

NETWORK_KEYS = {"mu", "mu_hat", "L", "U", "p", "y_opt", "mode", "seed_split", "scalability_mode"}
SWARM_KEYS = {"id", "file", "downloadable", "allies", "lambda", "alpha", "beta"}
POLICY_KEYS = {"kind", "zeta_variant", "tms_threshold"}
SIM_KEYS = {"t_end", "sample_interval", "rng_seed", "warmup", "replications", "initial", "record_envelope",
            "master"}
INITIAL_KEYS = {"kind", "sizes", "missing", "caches"}
_RANGE = re.compile(r"^\s*(\d+)\s*\.\.\s*(\d+)\s*$")


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunConfig
    warmup: float = 0.0
    replications: int = 1

    def violations(self) -> List[str]:
        problems = list(self.run.violations())
        if self.replications < 1:
            problems.append("sim: replications must be >= 1")
        if self.warmup < 0 or (self.run.t_end > 0 and self.warmup >= self.run.t_end):
            problems.append("sim: warmup must lie in [0, t_end)")
        return problems

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, rng_seed=seed))


class _Collector:
    """Accumulates (path, message) problems while a document is read."""

    def __init__(self):
        self.problems: List[Tuple[Tuple, str]] = []

    def add(self, path: Tuple, message: str) -> None:
        self.problems.append((path, message))

    def number(self, section: dict, key: str, path: Tuple, default: Any = None, integer: bool = False):
        value = section.get(key, default)
        if value is None:
            return default
        wanted = int if integer else (int, float)
        if isinstance(value, bool) or not isinstance(value, wanted):
            self.add(path + (key,), f"{key} must be {'an integer' if integer else 'a number'}")
            return default
        return value

    def flag(self, section: dict, key: str, path: Tuple, default: bool = False) -> bool:
        value = section.get(key, default)
        if not isinstance(value, bool):
            self.add(path + (key,), f"{key} must be true or false")
            return default
        return value

    def unknown(self, section: dict, allowed: set, path: Tuple, label: str) -> None:
        for key in section:
            if key not in allowed:
                self.add(path + (key,), f"{label}: unknown key {key!r}")


def parse_pieces(value: Any) -> int:
    """A piece-set from a list of indices or an inclusive range string "a..b"."""
    if isinstance(value, str):
        match = _RANGE.match(value)
        if not match:
            raise DomainError(f"Piece range {value!r} must look like 'a..b'.")
        lo, hi = int(match.group(1)), int(match.group(2))
        if not 1 <= lo <= hi <= MAX_PIECES:
            raise DomainError(f"Piece range {value!r} must satisfy 1 <= a <= b <= {MAX_PIECES}.")
        return mask_of(range(lo, hi + 1))
    if isinstance(value, list) and all(isinstance(i, int) and not isinstance(i, bool) for i in value):
        return mask_of(value)
    raise DomainError("A piece-set must be a list of integers or an 'a..b' range.")


def format_pieces(mask: int) -> Any:
    """Inverse of `parse_pieces`: a contiguous set becomes "a..b", anything else a list."""
    items = pieces_of(mask)
    if len(items) > 1 and items[-1] - items[0] + 1 == len(items):
        return f"{items[0]}..{items[-1]}"
    return items


def parse_document(doc: Any, text: Optional[str] = None, source: Optional[str] = None) -> ExperimentConfig:
    """
    Turn a config document into an ExperimentConfig.

    Args:
        doc: Decoded JSON document
        text (str, optional): Source text, used to anchor messages to lines
        source (str, optional): Name shown in the error

    Returns:
        ExperimentConfig: Validated configuration

    Raises:
        ConfigError: Listing every violation found
    """
    col = _Collector()
    if not isinstance(doc, dict):
        raise ConfigError(["config: top level must be an object"], source)
    col.unknown(doc, {"network", "swarms", "policy", "sim"}, (), "config")

    net = doc.get("network", {})
    if not isinstance(net, dict):
        col.add(("network",), "network must be an object")
        net = {}
    col.unknown(net, NETWORK_KEYS, ("network",), "network")
    seed_split = net.get("seed_split", {})
    if not isinstance(seed_split, dict) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in seed_split.values()):
        col.add(("network", "seed_split"), "seed_split must map swarm ids to numbers")
        seed_split = {}
    mode = net.get("mode", "shared")
    if not isinstance(mode, str):
        col.add(("network", "mode"), "mode must be a string")
        mode = "shared"
    params = NetworkParams(
        mu=col.number(net, "mu", ("network",), 1.0),
        mu_hat=col.number(net, "mu_hat", ("network",), 1.0 / 3.0),
        L=col.number(net, "L", ("network",), 3, integer=True),
        U=col.number(net, "U", ("network",), 1.0),
        p=col.number(net, "p", ("network",), 0.0),
        y_opt=col.flag(net, "y_opt", ("network",)),
        mode=mode,
        seed_split=dict(seed_split),
        scalability_mode=col.flag(net, "scalability_mode", ("network",)),
    )

    swarms = []
    raw_swarms = doc.get("swarms")
    if not isinstance(raw_swarms, list) or not raw_swarms:
        col.add(("swarms",), "swarms must be a non-empty list")
        raw_swarms = []
    for n, raw in enumerate(raw_swarms):
        spec = _parse_swarm(col, raw, ("swarms", n))
        if spec is not None:
            swarms.append(spec)

    pol = doc.get("policy", {})
    if not isinstance(pol, dict):
        col.add(("policy",), "policy must be an object")
        pol = {}
    col.unknown(pol, POLICY_KEYS, ("policy",), "policy")
    policy = PolicyConfig()
    try:
        policy = PolicyConfig(
            kind=PolicyKind(pol.get("kind", PolicyKind.RFWPMS.value)),
            zeta_variant=ZetaVariant(pol.get("zeta_variant", ZetaVariant.STANDARD.value)),
            tms_threshold=col.number(pol, "tms_threshold", ("policy",), None, integer=True),
        )
    except ValueError as err:
        col.add(("policy",), f"policy: {err}")

    sim = doc.get("sim", {})
    if not isinstance(sim, dict):
        col.add(("sim",), "sim must be an object")
        sim = {}
    col.unknown(sim, SIM_KEYS, ("sim",), "sim")
    initial = _parse_initial(col, sim.get("initial", {"kind": "empty"}), ("sim", "initial"))
    master = None
    if "master" in sim:
        try:
            master = parse_pieces(sim["master"])
        except DomainError as err:
            col.add(("sim", "master"), f"master: {err}")
    rng_seed = col.number(sim, "rng_seed", ("sim",), 0, integer=True)
    run = RunConfig(
        params=params,
        swarms=tuple(swarms),
        policy=policy,
        t_end=col.number(sim, "t_end", ("sim",), 100.0),
        rng_seed=rng_seed,
        initial=initial,
        sample_interval=col.number(sim, "sample_interval", ("sim",), 1.0),
        master=master,
        record_envelope=col.flag(sim, "record_envelope", ("sim",)),
    )
    experiment = ExperimentConfig(
        run=run,
        warmup=col.number(sim, "warmup", ("sim",), 0.0),
        replications=col.number(sim, "replications", ("sim",), 1, integer=True),
    )
    if not col.problems and swarms:
        for message in experiment.violations():
            col.add(_semantic_path(message), message)
    if col.problems:
        raise ConfigError([_anchor(text, path, message) for path, message in col.problems], source)
    return experiment


def _parse_swarm(col: _Collector, raw: Any, path: Tuple) -> Optional[SwarmSpec]:
    if not isinstance(raw, dict):
        col.add(path, "each swarm must be an object")
        return None
    col.unknown(raw, SWARM_KEYS, path, "swarm")
    sid = raw.get("id")
    if not isinstance(sid, str) or not sid:
        col.add(path + ("id",), "swarm id must be a non-empty string")
        return None
    try:
        file = parse_pieces(raw.get("file"))
    except DomainError as err:
        col.add(path + ("file",), f"swarm {sid!r}: file: {err}")
        return None
    downloadable = file
    if "downloadable" in raw:
        try:
            downloadable = parse_pieces(raw["downloadable"])
        except DomainError as err:
            col.add(path + ("downloadable",), f"swarm {sid!r}: downloadable: {err}")
    allies = raw.get("allies", [sid])
    if not isinstance(allies, list) or not all(isinstance(a, str) for a in allies):
        col.add(path + ("allies",), f"swarm {sid!r}: allies must be a list of swarm ids")
        allies = [sid]
    return SwarmSpec(
        id=sid,
        file=file,
        downloadable=downloadable,
        allies=frozenset(allies),
        lam=col.number(raw, "lambda", path, 0.0),
        alpha=col.number(raw, "alpha", path, 1e-9),
        beta=col.number(raw, "beta", path, 1.5),
    )


def _parse_initial(col: _Collector, raw: Any, path: Tuple) -> InitialCondition:
    if not isinstance(raw, dict):
        col.add(path, "initial must be an object")
        return InitialCondition()
    col.unknown(raw, INITIAL_KEYS, path, "initial")
    sizes = raw.get("sizes", {})
    missing = raw.get("missing", {})
    for key, value in (("sizes", sizes), ("missing", missing)):
        if not isinstance(value, dict) or not all(isinstance(v, int) and not isinstance(v, bool)
                                                  for v in value.values()):
            col.add(path + (key,), f"initial: {key} must map swarm ids to integers")
            return InitialCondition()
    caches = []
    for n, entry in enumerate(raw.get("caches", [])):
        if not (isinstance(entry, dict) and set(entry) <= {"swarm", "cache"} and isinstance(entry.get("swarm"), str)):
            col.add(path + ("caches", n), "initial: caches entries are {\"swarm\": id, \"cache\": pieces}")
            continue
        try:
            caches.append((entry["swarm"], parse_pieces(entry.get("cache", []))))
        except DomainError as err:
            col.add(path + ("caches", n), f"initial: cache: {err}")
    kind = raw.get("kind", "empty")
    return InitialCondition(kind=kind, sizes=dict(sizes), missing=dict(missing), caches=tuple(caches))


def _semantic_path(message: str) -> Tuple:
    head = message.split(":", 1)[0]
    if head.startswith("swarm "):
        return ("swarms", head[len("swarm "):].strip("'\""))
    if head == "initial":
        return ("sim", "initial")
    return (head,)


def _anchor(text: Optional[str], path: Tuple, message: str) -> str:
    if not text:
        return message
    pos = 0
    found = False
    for key in path:
        if not isinstance(key, str):
            continue
        idx = text.find(f'"{key}"', pos)
        if idx < 0:
            break
        pos, found = idx, True
    if not found:
        return message
    return f"line {text.count(chr(10), 0, pos) + 1}: {message}"


def load_config(path: str) -> ExperimentConfig:
    """
    Read and validate a config file.

    Raises:
        ConfigError: Unreadable file, malformed JSON (with its line) or invalid content
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError([f"cannot read config: {err}"], path) from err
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError([f"line {err.lineno}: {err.msg}"], path) from err
    return parse_document(doc, text, path)


def to_document(experiment: ExperimentConfig) -> Dict[str, Any]:
    """The fully resolved config document of an experiment (defaults filled in)."""
    run = experiment.run
    params = run.params
    doc = {
        "network": {
            "mu": params.mu, "mu_hat": params.mu_hat, "L": params.L, "U": params.U, "p": params.p,
            "y_opt": params.y_opt, "mode": params.mode, "seed_split": dict(sorted(params.seed_split.items())),
            "scalability_mode": params.scalability_mode,
        },
        "swarms": [
            {
                "id": s.id, "file": format_pieces(s.file), "downloadable": format_pieces(s.downloadable),
                "allies": sorted(s.allies), "lambda": s.lam, "alpha": s.alpha, "beta": s.beta,
            }
            for s in run.swarms
        ],
        "policy": {
            "kind": run.policy.kind.value, "zeta_variant": run.policy.zeta_variant.value,
            "tms_threshold": run.policy.tms_threshold,
        },
        "sim": {
            "t_end": run.t_end, "sample_interval": run.sample_interval, "rng_seed": run.rng_seed,
            "warmup": experiment.warmup, "replications": experiment.replications,
            "record_envelope": run.record_envelope,
            "initial": {
                "kind": run.initial.kind, "sizes": dict(run.initial.sizes), "missing": dict(run.initial.missing),
                "caches": [{"swarm": sid, "cache": format_pieces(cache)} for sid, cache in run.initial.caches],
            },
        },
    }
    if run.master is not None:
        doc["sim"]["master"] = format_pieces(run.master)
    return doc


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("utf-8")


def config_hash(doc: Any) -> str:
    return hashlib.sha256(canonical_json(doc)).hexdigest()

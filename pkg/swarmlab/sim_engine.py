"""
Event-driven simulation of the multi-swarm contact process.

All Poisson clocks are superposed: each step draws the holding time, then the event category in
proportion to its rate, then the initiator and target uniformly. Draw order per event:
exponential holding time, category, initiator index, target index, then the contact's own draws
(Bernoulli trials for tit-for-tat k=1 then k=2, policy draws for direction 1 then direction 2).
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigError, DomainError
from .net_model import (
    MAX_PIECES,
    NetworkParams,
    NetworkState,
    PeerRecord,
    SwarmSpec,
    iter_pieces,
    mismatch_summary,
)
from .piece_policies import EXTRA, NONRARE, NOTHING, RARE, PolicyConfig, PushContext, Selection, select_piece

logger = logging.getLogger(__name__)

SAMPLE_COLUMNS = ["t", "swarm", "population", "nu_min", "nu_max", "mbar", "M", "P"]
SOJOURN_COLUMNS = ["swarm", "arrival", "departure"]


class EventKind(str, Enum):
    ARRIVAL = "arrival"
    SEED_TICK = "seed_tick"
    TIT_FOR_TAT = "tit_for_tat"
    UNCHOKE = "unchoke"


@dataclass(frozen=True)
class InitialCondition:
    """
    Starting roster.

    kind "empty" has no peers; "one_club" gives `sizes[W]` swarm-W peers holding all of W except
    `missing[W]`; "flash_crowd" gives `sizes[W]` empty peers; "explicit" lists (swarm, cache) pairs.
    """
    kind: str = "empty"
    sizes: Mapping[str, int] = field(default_factory=dict)
    missing: Mapping[str, int] = field(default_factory=dict)
    caches: Tuple[Tuple[str, int], ...] = ()

    def violations(self, swarms: Mapping[str, SwarmSpec]) -> List[str]:
        problems = []
        if self.kind not in ("empty", "one_club", "flash_crowd", "explicit"):
            return [f"initial: unknown kind {self.kind!r}"]
        for sid, size in self.sizes.items():
            if sid not in swarms:
                problems.append(f"initial: unknown swarm {sid!r}")
            elif size < 0:
                problems.append(f"initial: size for {sid!r} must be >= 0")
        if self.kind == "one_club":
            for sid in self.sizes:
                piece = self.missing.get(sid)
                in_range = isinstance(piece, int) and 1 <= piece <= MAX_PIECES
                if sid in swarms and (not in_range or not (1 << piece) & swarms[sid].file):
                    problems.append(f"initial: one-club missing piece for {sid!r} must lie in its file")
        for sid, cache in self.caches:
            spec = swarms.get(sid)
            if spec is None:
                problems.append(f"initial: unknown swarm {sid!r}")
            elif cache & ~spec.downloadable or not spec.file & ~cache:
                problems.append(f"initial: cache for {sid!r} must be downloadable and miss part of its file")
        return problems

    def populate(self, state: NetworkState) -> None:
        if self.kind in ("one_club", "flash_crowd"):
            for sid, size in self.sizes.items():
                spec = state.swarms[sid]
                cache = spec.file & ~(1 << self.missing[sid]) if self.kind == "one_club" else 0
                for _ in range(size):
                    state.add_peer(sid, cache)
        elif self.kind == "explicit":
            for sid, cache in self.caches:
                state.add_peer(sid, cache)


@dataclass(frozen=True)
class RunConfig:
    params: NetworkParams
    swarms: Tuple[SwarmSpec, ...]
    policy: PolicyConfig = PolicyConfig()
    t_end: float = 100.0
    rng_seed: int = 0
    initial: InitialCondition = InitialCondition()
    sample_interval: float = 1.0
    master: Optional[int] = None
    record_envelope: bool = False

    def __post_init__(self):
        object.__setattr__(self, "swarms", tuple(self.swarms))

    @property
    def swarm_ids(self) -> Tuple[str, ...]:
        return tuple(s.id for s in self.swarms)

    @property
    def master_file(self) -> int:
        if self.master is not None:
            return self.master
        union = 0
        for spec in self.swarms:
            union |= spec.downloadable
        return union

    def violations(self) -> List[str]:
        problems = []
        ids = self.swarm_ids
        if not ids:
            problems.append("swarms: at least one swarm is required")
        if len(set(ids)) != len(ids):
            problems.append("swarms: ids must be unique")
        master = self.master_file
        if master.bit_count() < 2:
            problems.append("swarms: the master-file needs at least two pieces")
        by_id = {s.id: s for s in self.swarms}
        for spec in self.swarms:
            problems.extend(spec.violations(master))
            unknown = spec.allies - set(ids)
            if unknown:
                problems.append(f"swarm {spec.id!r}: unknown allies {sorted(unknown)}")
        problems.extend(self.params.violations(ids))
        problems.extend(self.policy.violations())
        if not self.t_end >= 0:
            problems.append("sim: t_end must be >= 0")
        if not self.sample_interval > 0:
            problems.append("sim: sample_interval must be > 0")
        if not 0 <= self.rng_seed < 2 ** 64:
            problems.append("sim: rng_seed must be an unsigned 64-bit integer")
        problems.extend(self.initial.violations(by_id))
        return problems

    def validate(self) -> "RunConfig":
        problems = self.violations()
        if problems:
            raise ConfigError(problems)
        return self

    def build_state(self) -> NetworkState:
        state = NetworkState(self.swarms, self.master_file)
        self.initial.populate(state)
        return state


class Sample(NamedTuple):
    t: float
    swarm: str
    population: int
    nu_min: int
    nu_max: int
    mbar: int
    M: int
    P: int


class Sojourn(NamedTuple):
    swarm: str
    arrival: float
    departure: float


@dataclass
class Outcome:
    """Resolved effect of one event."""
    kind: EventKind
    swarm: Optional[str] = None
    noop: bool = False
    # (pusher swarm or None for the seed, pusher cache, receiving swarm, revealed, selection)
    pushes: List[Tuple[Optional[str], int, str, int, Selection]] = field(default_factory=list)
    transfers: List[Tuple[PeerRecord, int]] = field(default_factory=list)
    departures: List[Sojourn] = field(default_factory=list)
    arrived: Optional[PeerRecord] = None


@dataclass
class EnvelopeTally:
    """
    Push-contact counts by ally-holders of each piece, and the integrals of the envelope rates.

    `observed[W][i]` counts committed push-contacts made by the seed or by a peer that holds i and
    counts W among its allies. `seed_time` integrates the seed's active push rate;
    `holder_time[V][i]` integrates ν_V^(i) over time when swarm-V holders have a contact partner.
    """
    observed: Dict[str, Dict[int, int]]
    seed_time: float = 0.0
    holder_time: Dict[str, Dict[int, float]] = field(default_factory=dict)
    elapsed: float = 0.0


@dataclass
class TrajectoryRecord:
    swarm_ids: Tuple[str, ...]
    samples: List[Sample] = field(default_factory=list)
    sojourns: List[Sojourn] = field(default_factory=list)
    counters: Dict[str, int] = field(default_factory=dict)
    final_summary: Dict = field(default_factory=dict)
    t_end: float = 0.0
    end_time: float = 0.0
    end_reason: str = "horizon"
    flush_out: Optional[float] = None
    introductions: Dict[str, Dict[int, float]] = field(default_factory=dict)
    all_introduced: Dict[str, Optional[float]] = field(default_factory=dict)
    # peers present at t=0, per swarm: how many there were and how many are still live at the end
    cohort: Dict[str, Dict[str, int]] = field(default_factory=dict)
    envelope: Optional[EnvelopeTally] = None

    def samples_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.samples, columns=SAMPLE_COLUMNS)

    def sojourns_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.sojourns, columns=SOJOURN_COLUMNS)


# --- rates ---

def seed_rates(state: NetworkState, params: NetworkParams) -> Dict[Optional[str], float]:
    """Seed clocks: one shared clock (key None) or one per swarm in autonomous mode."""
    if params.autonomous:
        return {sid: params.L * params.seed_capacity(sid) for sid in state.swarms}
    return {None: params.L * params.U}


def total_rate(state: NetworkState, params: NetworkParams) -> float:
    """
    Sum of all Poisson clock rates in the current state.

    Args:
        state (NetworkState): Current network
        params (NetworkParams): Contact parameters

    Returns:
        float: Σλ_W + seed rate + |x|(L - Y)μ + |x|·Y·μ̂
    """
    arrivals = sum(spec.lam for spec in state.swarms.values())
    seed = sum(seed_rates(state, params).values())
    size = state.size
    tft = size * params.tft_links * params.mu
    unchoke = size * params.mu_hat if params.y_opt else 0.0
    return arrivals + seed + tft + unchoke


# --- event resolution ---

def revealed_profile(state: NetworkState, pusher: Optional[PeerRecord], target_swarm: str) -> int:
    """The seed reveals the master-file; a peer reveals its cache to allies and nothing otherwise."""
    if pusher is None:
        return state.master
    if target_swarm in state.swarms[pusher.swarm].allies:
        return pusher.cache
    return 0


def resolve_tit_for_tat(state: NetworkState, peer1: PeerRecord, peer2: PeerRecord, params: NetworkParams,
                        policy: PolicyConfig, rng: np.random.Generator) -> Outcome:
    """Two-sided tit-for-tat contact, both directions computed on the pre-contact state."""
    outcome = Outcome(EventKind.TIT_FOR_TAT, peer1.swarm)
    pair = (peer1, peer2)
    shown = (revealed_profile(state, peer1, peer2.swarm), revealed_profile(state, peer2, peer1.swarm))
    commits = []
    for k in (0, 1):
        me, other = pair[k], pair[1 - k]
        benefit = shown[1 - k] & state.swarms[me.swarm].file & ~me.cache
        if benefit:
            commits.append(True)
        elif params.scalability_mode and other.cache == 0:
            commits.append(True)
        else:
            commits.append(bool(rng.random() < params.p))
    chosen = []
    for k in (0, 1):
        if not commits[k]:
            continue
        me, other = pair[k], pair[1 - k]
        ctx = PushContext(state, shown[k], other.swarm, other.cache, rng, params)
        selection = select_piece(ctx, policy)
        outcome.pushes.append((me.swarm, me.cache, other.swarm, shown[k], selection))
        chosen.append((other, selection))
    for receiver, selection in chosen:
        if selection.piece is not None:
            state.give_piece(receiver, selection.piece)
            outcome.transfers.append((receiver, selection.piece))
    for receiver, _ in chosen:
        _depart_if_complete(state, receiver, outcome)
    return outcome


def resolve_unchoke(state: NetworkState, initiator: Optional[PeerRecord], target: PeerRecord,
                    params: NetworkParams, policy: PolicyConfig, rng: np.random.Generator) -> Outcome:
    """One-directional push from a peer or from the seed (initiator None)."""
    kind = EventKind.SEED_TICK if initiator is None else EventKind.UNCHOKE
    outcome = Outcome(kind, None if initiator is None else initiator.swarm)
    shown = revealed_profile(state, initiator, target.swarm)
    ctx = PushContext(state, shown, target.swarm, target.cache, rng, params, from_seed=initiator is None)
    selection = select_piece(ctx, policy)
    pusher_swarm = None if initiator is None else initiator.swarm
    pusher_cache = state.master if initiator is None else initiator.cache
    outcome.pushes.append((pusher_swarm, pusher_cache, target.swarm, shown, selection))
    if selection.piece is not None:
        state.give_piece(target, selection.piece)
        outcome.transfers.append((target, selection.piece))
        _depart_if_complete(state, target, outcome)
    return outcome


def _depart_if_complete(state: NetworkState, peer: PeerRecord, outcome: Outcome) -> None:
    if peer.peer_id in state.roster and state.is_complete(peer):
        state.remove_peer(peer)
        outcome.departures.append(Sojourn(peer.swarm, peer.arrival_time, state.clock))


def advance(state: NetworkState, params: NetworkParams, policy: PolicyConfig,
            rng: np.random.Generator) -> Tuple[Outcome, float]:
    """
    Draw the next event, move the clock and resolve the event.

    Returns:
        tuple: (Outcome, dt)
    """
    rate = total_rate(state, params)
    if rate <= 0:
        raise DomainError("No clock is running: total rate is zero.")
    dt = float(rng.exponential(1.0 / rate))
    state.clock += dt
    return fire(state, params, policy, rng, rate), dt


def fire(state: NetworkState, params: NetworkParams, policy: PolicyConfig,
         rng: np.random.Generator, rate: float) -> Outcome:
    """Pick the event category in proportion to its rate and resolve it (the clock is already moved)."""
    u = rng.random() * rate
    for sid, spec in state.swarms.items():
        if u < spec.lam:
            peer = state.add_peer(sid, 0)
            return Outcome(EventKind.ARRIVAL, sid, arrived=peer)
        u -= spec.lam
    seeds = seed_rates(state, params)
    for sid, seed_rate in seeds.items():
        if u < seed_rate:
            return _seed_tick(state, sid, params, policy, rng)
        u -= seed_rate
    size = state.size
    tft = size * params.tft_links * params.mu
    if u < tft or not params.y_opt:
        kind = EventKind.TIT_FOR_TAT
    else:
        kind = EventKind.UNCHOKE
    if size == 0:
        return Outcome(kind, noop=True)
    initiator = state.peer_at(int(rng.integers(size)))
    target = _pick_partner(state, initiator, params, rng)
    if target is None:
        return Outcome(kind, initiator.swarm, noop=True)
    if kind is EventKind.TIT_FOR_TAT:
        return resolve_tit_for_tat(state, initiator, target, params, policy, rng)
    return resolve_unchoke(state, initiator, target, params, policy, rng)


def _seed_tick(state: NetworkState, swarm: Optional[str], params: NetworkParams, policy: PolicyConfig,
               rng: np.random.Generator) -> Outcome:
    count = state.size if swarm is None else state.population(swarm)
    if count == 0:
        return Outcome(EventKind.SEED_TICK, swarm, noop=True)
    index = int(rng.integers(count))
    target = state.peer_at(index) if swarm is None else state.swarm_peer_at(swarm, index)
    return resolve_unchoke(state, None, target, params, policy, rng)


def _pick_partner(state: NetworkState, initiator: PeerRecord, params: NetworkParams,
                  rng: np.random.Generator) -> Optional[PeerRecord]:
    """Uniform other peer (within the initiator's swarm in autonomous mode)."""
    if params.autonomous:
        count = state.population(initiator.swarm)
        if count <= 1:
            return None
        j = int(rng.integers(count - 1))
        if j >= state.swarm_index_of(initiator):
            j += 1
        return state.swarm_peer_at(initiator.swarm, j)
    count = state.size
    if count <= 1:
        return None
    j = int(rng.integers(count - 1))
    if j >= state.index_of(initiator):
        j += 1
    return state.peer_at(j)


# --- run loop ---

def run(config: RunConfig, state: Optional[NetworkState] = None) -> TrajectoryRecord:
    """
    Simulate a configuration until its horizon, or until the roster empties when no swarm has arrivals.

    Args:
        config (RunConfig): Validated run configuration
        state (NetworkState, optional): Starting state; built from `config.initial` when omitted

    Returns:
        TrajectoryRecord: Samples, sojourns, counters and milestones of the run
    """
    config.validate()
    params, policy = config.params, config.policy
    rng = np.random.default_rng(config.rng_seed)
    if state is None:
        state = config.build_state()
    record = TrajectoryRecord(swarm_ids=config.swarm_ids, t_end=config.t_end)
    record.counters = {kind.value: 0 for kind in EventKind}
    record.counters.update({
        "events": 0, "noop": 0, "pushes": 0, "push_rare": 0, "push_nonrare": 0, "push_suppressed": 0,
        "push_extra": 0, "push_empty": 0, "push_non_ally": 0, "transfers": 0, "departures": 0,
    })
    introduced = {sid: 0 for sid in state.swarms}
    record.introductions = {sid: {} for sid in state.swarms}
    record.all_introduced = {sid: None for sid in state.swarms}
    for peer in state.peers():
        for piece in iter_pieces(peer.cache & state.swarms[peer.swarm].file):
            _introduce(record, introduced, state, peer.swarm, piece)
    if config.record_envelope:
        record.envelope = EnvelopeTally(
            observed={sid: {i: 0 for i in iter_pieces(spec.file)} for sid, spec in state.swarms.items()},
            holder_time={sid: {i: 0.0 for i in table.nu} for sid, table in state.tables.items()},
        )
    initial_peers = [(peer.peer_id, peer.swarm) for peer in state.peers()]
    flush_run = all(spec.lam == 0 for spec in state.swarms.values())
    interval = config.sample_interval
    next_k = 0
    logger.info("Run start: %d swarms, %d peers, policy %s, t_end %g, seed %d",
                len(state.swarms), state.size, policy.kind.value, config.t_end, config.rng_seed)

    while True:
        if flush_run and state.size == 0:
            record.end_reason = "flushed"
            record.flush_out = state.clock
            break
        rate = total_rate(state, params)
        dt = float(rng.exponential(1.0 / rate)) if rate > 0 else float("inf")
        t_next = state.clock + dt
        horizon = min(t_next, config.t_end)
        while next_k * interval <= horizon:
            _sample(record, state, next_k * interval)
            next_k += 1
        if t_next > config.t_end:
            if record.envelope is not None:
                _accumulate_envelope(record.envelope, state, params, config.t_end - state.clock)
            state.clock = config.t_end
            break
        if record.envelope is not None:
            _accumulate_envelope(record.envelope, state, params, dt)
        state.clock = t_next
        outcome = fire(state, params, policy, rng, rate)
        _tally(record, outcome, state, introduced)
        if record.counters["events"] % 100000 == 0:
            logger.debug("t=%.3f events=%d peers=%d", state.clock, record.counters["events"], state.size)

    record.end_time = state.clock
    record.cohort = {sid: {"size": 0, "left": 0} for sid in state.swarms}
    for peer_id, sid in initial_peers:
        record.cohort[sid]["size"] += 1
        record.cohort[sid]["left"] += peer_id in state.roster
    if not record.samples or record.samples[-1].t < state.clock:
        _sample(record, state, state.clock)
    empty = sum(1 for peer in state.peers() if not peer.cache & state.swarms[peer.swarm].file)
    record.final_summary = {
        "clock": state.clock,
        "peers": state.size,
        "empty_fraction": empty / state.size if state.size else None,
        "swarms": {sid: mismatch_summary(state, sid)._asdict() | {"population": state.population(sid)}
                   for sid in state.swarms},
    }
    logger.info("Run end (%s): t=%.3f, %d events, %d departures, %d peers left", record.end_reason,
                state.clock, record.counters["events"], record.counters["departures"], state.size)
    return record


def _sample(record: TrajectoryRecord, state: NetworkState, t: float) -> None:
    for sid, table in state.tables.items():
        record.samples.append(Sample(t, sid, table.population, table.nu_min, table.nu_max, table.mbar,
                                     table.total_mismatch, table.total))


def _introduce(record: TrajectoryRecord, introduced: Dict[str, int], state: NetworkState, swarm: str,
               piece: int) -> None:
    bit = 1 << piece
    if introduced[swarm] & bit:
        return
    introduced[swarm] |= bit
    record.introductions[swarm][piece] = state.clock
    if introduced[swarm] == state.swarms[swarm].file:
        record.all_introduced[swarm] = state.clock


def _tally(record: TrajectoryRecord, outcome: Outcome, state: NetworkState, introduced: Dict[str, int]) -> None:
    counters = record.counters
    counters["events"] += 1
    counters[outcome.kind.value] += 1
    if outcome.noop:
        counters["noop"] += 1
    for pusher_swarm, pusher_cache, receiving, shown, selection in outcome.pushes:
        counters["pushes"] += 1
        if pusher_swarm is not None and receiving not in state.swarms[pusher_swarm].allies:
            counters["push_non_ally"] += 1
        if selection.suppressed:
            counters["push_suppressed"] += 1
        branch = selection.branch
        if branch == RARE:
            counters["push_rare"] += 1
        elif branch == NONRARE:
            counters["push_nonrare"] += 1
        elif branch == EXTRA:
            counters["push_extra"] += 1
        elif branch == NOTHING:
            counters["push_empty"] += 1
        if record.envelope is not None:
            _observe_push(record.envelope, state, pusher_swarm, pusher_cache)
    for peer, piece in outcome.transfers:
        counters["transfers"] += 1
        if (1 << piece) & state.swarms[peer.swarm].file:
            _introduce(record, introduced, state, peer.swarm, piece)
    for sojourn in outcome.departures:
        counters["departures"] += 1
        record.sojourns.append(sojourn)


def _observe_push(tally: EnvelopeTally, state: NetworkState, pusher_swarm: Optional[str], cache: int) -> None:
    if pusher_swarm is None:
        for counts in tally.observed.values():
            for i in counts:
                counts[i] += 1
        return
    for w in state.swarms[pusher_swarm].allies:
        counts = tally.observed[w]
        for i in iter_pieces(cache & state.swarms[w].file):
            counts[i] += 1


def _accumulate_envelope(tally: EnvelopeTally, state: NetworkState, params: NetworkParams, dt: float) -> None:
    if dt <= 0:
        return
    tally.elapsed += dt
    if params.autonomous:
        tally.seed_time += dt * sum(params.L * params.seed_capacity(sid)
                                    for sid in state.swarms if state.population(sid) > 0)
    elif state.size > 0:
        tally.seed_time += dt * params.L * params.U
    for sid, table in state.tables.items():
        partnered = state.population(sid) >= 2 if params.autonomous else state.size >= 2
        if not partnered:
            continue
        acc = tally.holder_time[sid]
        for i, count in table.nu.items():
            if count:
                acc[i] += dt * count

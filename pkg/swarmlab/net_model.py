"""
Network model: swarm specs, contact parameters, the peer roster and the per-swarm chunk tables.

Piece-sets are plain ints used as bitmasks over the master-file: bit i is set when piece i is in the
set. Pieces are numbered from 1, so bit 0 is never used.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, NamedTuple, Optional, Tuple

from .errors import DomainError

logger = logging.getLogger(__name__)

MAX_PIECES = 1024
SHARED = "shared"
AUTONOMOUS = "autonomous"
BEHAVIORS = ("altruistic", "opportunistic", "selfish", "autonomous")


# --- piece-set helpers ---

def mask_of(pieces: Iterable[int]) -> int:
    """Build a piece-set from piece indices."""
    mask = 0
    for i in pieces:
        if i < 1 or i > MAX_PIECES:
            raise DomainError(f"Piece index {i} outside [1, {MAX_PIECES}].")
        mask |= 1 << i
    return mask


def iter_pieces(mask: int) -> Iterator[int]:
    """Yield the pieces of a piece-set in ascending order."""
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def pieces_of(mask: int) -> List[int]:
    return list(iter_pieces(mask))


def first_k(d: int) -> int:
    """Interval notation [d] = {1, ..., d}."""
    return interval(0, d)


def interval(c: int, d: int) -> int:
    """Interval notation [c, d] = {c+1, ..., d}."""
    if not 0 <= c < d <= MAX_PIECES:
        raise DomainError(f"Invalid interval [{c}, {d}].")
    return ((1 << (d + 1)) - 1) & ~((1 << (c + 1)) - 1)


# --- domain types ---

@dataclass(frozen=True)
class SwarmSpec:
    """
    A swarm: peers primarily interested in the same file.

    `file` and `downloadable` are piece-sets (bitmasks); `lam` is the arrival rate λ_W.
    """
    id: str
    file: int
    downloadable: int
    allies: FrozenSet[str]
    lam: float
    alpha: float = 1e-9
    beta: float = 1.5

    def __post_init__(self):
        object.__setattr__(self, "allies", frozenset(self.allies))

    @property
    def k(self) -> int:
        return self.file.bit_count()

    @property
    def extras(self) -> int:
        return self.downloadable & ~self.file

    def violations(self, master: int) -> List[str]:
        problems = []
        where = f"swarm {self.id!r}"
        if not self.file:
            problems.append(f"{where}: file must be non-empty")
        if self.file & ~self.downloadable:
            problems.append(f"{where}: file must be a subset of downloadable")
        if self.downloadable & ~master:
            problems.append(f"{where}: downloadable must be a subset of the master-file")
        if self.id not in self.allies:
            problems.append(f"{where}: allies must contain the swarm itself")
        if not self.lam >= 0:
            problems.append(f"{where}: lambda must be >= 0")
        if not 0 <= self.alpha <= 1:
            problems.append(f"{where}: alpha must lie in [0, 1]")
        if not self.beta >= 0:
            problems.append(f"{where}: beta must be >= 0")
        return problems


@dataclass(frozen=True)
class NetworkParams:
    """Contact-process parameters shared by every peer and the seed."""
    mu: float = 1.0
    mu_hat: float = 1.0 / 3.0
    L: int = 3
    U: float = 1.0
    p: float = 0.0
    y_opt: bool = False
    mode: str = SHARED
    seed_split: Mapping[str, float] = field(default_factory=dict)
    scalability_mode: bool = False

    @property
    def tft_links(self) -> int:
        """Links used for tit-for-tat: L - 1{Y_opt}."""
        return self.L - int(self.y_opt)

    def delta(self, t: float) -> float:
        """Δ_t = 2(L - 1{Y_opt})·μ·t + 1{Y_opt}·μ̂."""
        return 2 * self.tft_links * self.mu * t + (self.mu_hat if self.y_opt else 0.0)

    @property
    def delta_p(self) -> float:
        return self.delta(self.p)

    @property
    def delta_1(self) -> float:
        return self.delta(1.0)

    @property
    def xi2(self) -> float:
        """Ratio bound between the upper and lower push-contact rate envelopes."""
        if self.y_opt:
            num = 2 * (self.L - 1) * self.mu + self.mu_hat
            den = 2 * (self.L - 1) * self.mu * self.p + self.mu_hat
        else:
            num, den = 1.0, self.p
        return 1.0 + num / den if den > 0 else math.inf

    @property
    def autonomous(self) -> bool:
        return self.mode == AUTONOMOUS

    def seed_capacity(self, swarm: Optional[str] = None) -> float:
        """Seed upload rate per link, U (shared) or U_W (autonomous, when a swarm is given)."""
        if swarm is not None and self.autonomous:
            return self.seed_split[swarm]
        return self.U

    def violations(self, swarm_ids: Iterable[str]) -> List[str]:
        problems = []
        if not self.mu > 0:
            problems.append("network: mu must be > 0")
        if not self.mu_hat >= 0:
            problems.append("network: mu_hat must be >= 0")
        if not (isinstance(self.L, int) and self.L >= 1):
            problems.append("network: L must be an integer >= 1")
        if not self.U > 0:
            problems.append("network: U must be > 0")
        if not 0 <= self.p <= 1:
            problems.append("network: p must lie in [0, 1]")
        if self.mode not in (SHARED, AUTONOMOUS):
            problems.append(f"network: mode must be {SHARED!r} or {AUTONOMOUS!r}")
        if self.autonomous:
            ids = set(swarm_ids)
            missing = ids - set(self.seed_split)
            if missing:
                problems.append(f"network: seed_split misses swarms {sorted(missing)}")
            unknown = set(self.seed_split) - ids
            if unknown:
                problems.append(f"network: seed_split names unknown swarms {sorted(unknown)}")
            if any(not share > 0 for share in self.seed_split.values()):
                problems.append("network: every seed_split share must be > 0")
            if sum(self.seed_split.values()) > self.U * (1 + 1e-12):
                problems.append("network: seed_split must sum to at most U")
        return problems


@dataclass(slots=True)
class PeerRecord:
    peer_id: int
    swarm: str
    cache: int
    arrival_time: float


class MismatchSummary(NamedTuple):
    nu_max: int
    nu_min: int
    mbar: int
    M: int
    P: int


class ChunkTable:
    """
    Chunk counts of one swarm, maintained incrementally.

    `nu` covers every downloadable piece; the extrema, the total and the count buckets cover the file
    W only. `by_count` maps a count value to the piece-set of W pieces holding exactly that count, so
    popcounts of its values form the count-of-counts histogram.
    """

    def __init__(self, spec: SwarmSpec):
        self.spec = spec
        self.file = spec.file
        self.k = spec.k
        self.nu: Dict[int, int] = {i: 0 for i in iter_pieces(spec.downloadable)}
        self.population = 0
        self.total = 0
        self.by_count: Dict[int, int] = {0: spec.file}
        self.nu_max = 0
        self.nu_min = 0

    @classmethod
    def recount(cls, spec: SwarmSpec, caches: Iterable[int]) -> "ChunkTable":
        """Rebuild a table from scratch (audit reference)."""
        table = cls(spec)
        for cache in caches:
            table.add_peer(cache)
        return table

    def add_peer(self, cache: int) -> None:
        self.population += 1
        for i in iter_pieces(cache):
            self.increment(i)

    def remove_peer(self, cache: int) -> None:
        for i in iter_pieces(cache):
            self.decrement(i)
        self.population -= 1

    def increment(self, piece: int) -> None:
        c = self.nu[piece]
        self.nu[piece] = c + 1
        bit = 1 << piece
        if not bit & self.file:
            return
        self.total += 1
        bucket = self.by_count[c] & ~bit
        if bucket:
            self.by_count[c] = bucket
        else:
            del self.by_count[c]
        self.by_count[c + 1] = self.by_count.get(c + 1, 0) | bit
        if c == self.nu_max:
            self.nu_max = c + 1
        if c == self.nu_min and not bucket:
            self.nu_min = c + 1

    def decrement(self, piece: int) -> None:
        c = self.nu[piece]
        self.nu[piece] = c - 1
        bit = 1 << piece
        if not bit & self.file:
            return
        self.total -= 1
        bucket = self.by_count[c] & ~bit
        if bucket:
            self.by_count[c] = bucket
        else:
            del self.by_count[c]
        self.by_count[c - 1] = self.by_count.get(c - 1, 0) | bit
        if c == self.nu_min:
            self.nu_min = c - 1
        if c == self.nu_max and not bucket:
            self.nu_max = c - 1

    @property
    def uniform(self) -> bool:
        return self.nu_max == self.nu_min

    @property
    def rare_mask(self) -> int:
        if self.uniform:
            return self.file
        return self.file & ~self.by_count[self.nu_max]

    @property
    def mbar(self) -> int:
        return self.nu_max - self.nu_min

    @property
    def total_mismatch(self) -> int:
        return self.k * self.nu_max - self.total

    def histogram(self) -> Dict[int, int]:
        return {c: mask.bit_count() for c, mask in sorted(self.by_count.items())}

    def rarest_of(self, candidates: int) -> int:
        """Sub-set of `candidates` (pieces of W) with the smallest count."""
        if self.nu_max - self.nu_min < len(self.by_count):
            counts: Iterable[int] = range(self.nu_min, self.nu_max + 1)
        else:
            counts = sorted(self.by_count)
        for c in counts:
            hit = self.by_count.get(c, 0) & candidates
            if hit:
                return hit
        return 0

    def clone(self) -> "ChunkTable":
        twin = ChunkTable.__new__(ChunkTable)
        twin.spec = self.spec
        twin.file = self.file
        twin.k = self.k
        twin.nu = dict(self.nu)
        twin.population = self.population
        twin.total = self.total
        twin.by_count = dict(self.by_count)
        twin.nu_max = self.nu_max
        twin.nu_min = self.nu_min
        return twin


class NetworkState:
    """
    Live peers plus the chunk table of every swarm. The seed is implicit and never in the roster.

    Peers are additionally kept in flat lists (globally and per swarm) so that uniform sampling is O(1).
    """

    def __init__(self, swarms: Iterable[SwarmSpec], master: Optional[int] = None, clock: float = 0.0):
        self.swarms: Dict[str, SwarmSpec] = {s.id: s for s in swarms}
        if not self.swarms:
            raise DomainError("A network needs at least one swarm.")
        union = 0
        for spec in self.swarms.values():
            union |= spec.downloadable
        self.master = master if master is not None else union
        self.clock = clock
        self.roster: Dict[int, PeerRecord] = {}
        self.tables: Dict[str, ChunkTable] = {sid: ChunkTable(spec) for sid, spec in self.swarms.items()}
        self.contributors: Dict[str, Tuple[str, ...]] = {
            w: tuple(v for v, spec in self.swarms.items() if v != w and w in spec.allies)
            for w in self.swarms
        }
        self._peers: List[PeerRecord] = []
        self._slot: Dict[int, int] = {}
        self._swarm_peers: Dict[str, List[PeerRecord]] = {sid: [] for sid in self.swarms}
        self._swarm_slot: Dict[int, int] = {}
        self._next_id = 0

    # --- roster ---

    @property
    def size(self) -> int:
        return len(self._peers)

    def population(self, swarm: str) -> int:
        return len(self._swarm_peers[self._spec(swarm).id])

    def peer_at(self, index: int) -> PeerRecord:
        return self._peers[index]

    def swarm_peer_at(self, swarm: str, index: int) -> PeerRecord:
        return self._swarm_peers[swarm][index]

    def index_of(self, peer: PeerRecord) -> int:
        return self._slot[peer.peer_id]

    def swarm_index_of(self, peer: PeerRecord) -> int:
        return self._swarm_slot[peer.peer_id]

    def peers(self, swarm: Optional[str] = None) -> List[PeerRecord]:
        if swarm is None:
            return list(self._peers)
        return list(self._swarm_peers[self._spec(swarm).id])

    def add_peer(self, swarm: str, cache: int = 0, arrival_time: Optional[float] = None) -> PeerRecord:
        spec = self._spec(swarm)
        if cache & ~spec.downloadable:
            raise DomainError(f"Cache holds pieces outside the downloadable set of swarm {swarm!r}.")
        if not spec.file & ~cache:
            raise DomainError(f"A live swarm-{swarm!r} peer must miss at least one piece of its file.")
        peer = PeerRecord(self._next_id, spec.id, cache, self.clock if arrival_time is None else arrival_time)
        self._next_id += 1
        self.roster[peer.peer_id] = peer
        self._slot[peer.peer_id] = len(self._peers)
        self._peers.append(peer)
        members = self._swarm_peers[spec.id]
        self._swarm_slot[peer.peer_id] = len(members)
        members.append(peer)
        self.tables[spec.id].add_peer(cache)
        return peer

    def give_piece(self, peer: PeerRecord, piece: int) -> None:
        """Add a piece to a live peer's cache. Departure is the caller's decision."""
        bit = 1 << piece
        if peer.cache & bit:
            raise DomainError(f"Peer {peer.peer_id} already holds piece {piece}.")
        peer.cache |= bit
        self.tables[peer.swarm].increment(piece)

    def is_complete(self, peer: PeerRecord) -> bool:
        return not self.swarms[peer.swarm].file & ~peer.cache

    def remove_peer(self, peer: PeerRecord) -> None:
        del self.roster[peer.peer_id]
        _swap_remove(self._peers, self._slot, peer)
        _swap_remove(self._swarm_peers[peer.swarm], self._swarm_slot, peer)
        self.tables[peer.swarm].remove_peer(peer.cache)

    def clone(self) -> "NetworkState":
        twin = NetworkState.__new__(NetworkState)
        twin.swarms = self.swarms
        twin.master = self.master
        twin.clock = self.clock
        twin.tables = {sid: table.clone() for sid, table in self.tables.items()}
        twin.contributors = self.contributors
        twin._peers = [PeerRecord(p.peer_id, p.swarm, p.cache, p.arrival_time) for p in self._peers]
        twin.roster = {p.peer_id: p for p in twin._peers}
        twin._slot = dict(self._slot)
        twin._swarm_peers = {sid: [twin.roster[p.peer_id] for p in members]
                             for sid, members in self._swarm_peers.items()}
        twin._swarm_slot = dict(self._swarm_slot)
        twin._next_id = self._next_id
        return twin

    def _spec(self, swarm: str) -> SwarmSpec:
        try:
            return self.swarms[swarm]
        except KeyError:
            raise DomainError(f"Unknown swarm {swarm!r}.") from None


def _swap_remove(items: List[PeerRecord], slots: Dict[int, int], peer: PeerRecord) -> None:
    index = slots.pop(peer.peer_id)
    last = items.pop()
    if last is not peer:
        items[index] = last
        slots[last.peer_id] = index


# --- operations ---

def chunk_count(state: NetworkState, swarm: str, piece: int) -> int:
    """
    Number of swarm-W peers holding a piece.

    Args:
        state (NetworkState): Network to query
        swarm (str): Swarm id W
        piece (int): Piece index, must be downloadable by swarm W

    Returns:
        int: ν_W^(i)
    """
    table = state.tables.get(swarm)
    if table is None:
        raise DomainError(f"Unknown swarm {swarm!r}.")
    if piece not in table.nu:
        raise DomainError(f"Piece {piece} is not downloadable by swarm {swarm!r}.")
    return table.nu[piece]


def frequency(state: NetworkState, swarm: str, piece: int) -> float:
    count = chunk_count(state, swarm, piece)
    population = state.tables[swarm].population
    return count / population if population else 0.0


def mismatch_summary(state: NetworkState, swarm: str) -> MismatchSummary:
    """Extremal counts, largest mismatch m̄_W, total mismatch M_W and total count P_W over the file W."""
    table = _table(state, swarm)
    return MismatchSummary(table.nu_max, table.nu_min, table.mbar, table.total_mismatch, table.total)


def mismatches(state: NetworkState, swarm: str) -> Dict[int, int]:
    """Per-piece mismatch m_W^(i) for every i in W."""
    table = _table(state, swarm)
    return {i: table.nu_max - table.nu[i] for i in iter_pieces(table.file)}


def complementary_count(state: NetworkState, swarm: str, piece: int) -> int:
    """Copies of a piece held by the other swarms that upload to `swarm` (d_W^(i))."""
    _table(state, swarm)
    total = 0
    for v in state.contributors[swarm]:
        total += state.tables[v].nu.get(piece, 0)
    return total


def rare_set(state: NetworkState, swarm: str) -> int:
    """Rare pieces R_W: below the swarm maximum, or all of W when counts are uniform."""
    return _table(state, swarm).rare_mask


def nonrare_set(state: NetworkState, swarm: str) -> int:
    table = _table(state, swarm)
    return table.file & ~table.rare_mask


def audit(state: NetworkState) -> dict:
    """
    Recompute every chunk table from the roster and compare with the maintained ones.

    Returns:
        dict: {"status": "clean"} or {"status": "discrepancy", ...} describing the first mismatch found
    """
    if len(state.roster) != len(state._peers):
        return _discrepancy(None, None, "roster_size", len(state.roster), len(state._peers))
    for peer in state._peers:
        spec = state.swarms[peer.swarm]
        if not spec.file & ~peer.cache:
            return _discrepancy(peer.swarm, None, f"peer {peer.peer_id} complete but live", 0, peer.cache)
        if peer.cache & ~spec.downloadable:
            return _discrepancy(peer.swarm, None, f"peer {peer.peer_id} holds non-downloadable pieces",
                                0, peer.cache & ~spec.downloadable)
    for sid, spec in state.swarms.items():
        table = state.tables[sid]
        members = state._swarm_peers[sid]
        expected = ChunkTable.recount(spec, (p.cache for p in members))
        for piece in sorted(expected.nu):
            if table.nu.get(piece) != expected.nu[piece]:
                return _discrepancy(sid, piece, "nu", expected.nu[piece], table.nu.get(piece))
        for name in ("population", "total", "nu_max", "nu_min"):
            if getattr(table, name) != getattr(expected, name):
                return _discrepancy(sid, None, name, getattr(expected, name), getattr(table, name))
        if table.by_count != expected.by_count:
            return _discrepancy(sid, None, "histogram", expected.histogram(), table.histogram())
    return {"status": "clean"}


def _discrepancy(swarm, piece, name, expected, found) -> dict:
    return {
        "status": "discrepancy",
        "swarm": swarm,
        "piece": piece,
        "field": name,
        "expected": expected,
        "found": found,
    }


def _table(state: NetworkState, swarm: str) -> ChunkTable:
    table = state.tables.get(swarm)
    if table is None:
        raise DomainError(f"Unknown swarm {swarm!r}.")
    return table


def apply_behavior(swarms: Iterable[SwarmSpec], behavior: str, params: NetworkParams,
                   master: Optional[int] = None) -> Tuple[Tuple[SwarmSpec, ...], NetworkParams]:
    """
    Rewrite swarm alliances and downloadable sets for an inter-swarm behavior.

    altruistic: every swarm is an ally, peers download the whole master-file.
    opportunistic: every swarm is an ally, peers download only their own file.
    selfish: swarms keep to themselves.
    autonomous: selfish, and the seed splits its capacity per swarm (evenly unless params give a split).

    Args:
        swarms (Iterable[SwarmSpec]): Swarms to rewrite
        behavior (str): One of BEHAVIORS
        params (NetworkParams): Contact parameters; mode and seed split are set for autonomous swarms
        master (int, optional): Master-file, defaults to the union of the files

    Returns:
        Tuple[Tuple[SwarmSpec, ...], NetworkParams]: Rewritten swarms and parameters
    """
    swarms = tuple(swarms)
    if behavior not in BEHAVIORS:
        raise DomainError(f"Unknown behavior {behavior!r}; expected one of {', '.join(BEHAVIORS)}.")
    ids = frozenset(s.id for s in swarms)
    if master is None:
        master = 0
        for spec in swarms:
            master |= spec.file
    rewritten = []
    for spec in swarms:
        allies = ids if behavior in ("altruistic", "opportunistic") else frozenset({spec.id})
        downloadable = master if behavior == "altruistic" else spec.file
        rewritten.append(replace(spec, allies=allies, downloadable=downloadable))
    if behavior == "autonomous":
        split = dict(params.seed_split) or {sid: params.U / len(ids) for sid in sorted(ids)}
        params = replace(params, mode=AUTONOMOUS, seed_split=split)
    else:
        params = replace(params, mode=SHARED, seed_split={})
    return tuple(rewritten), params

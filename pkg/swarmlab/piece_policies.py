"""
Piece-selection policies: swarm-based RFwPMS (rarest-first with partial mode suppression) and the
RNwPMS, MS, TMS, RF and RN baselines, all behind `select_piece` / `transferable_set`.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, NamedTuple, Optional

import numpy as np

from .errors import DomainError
from .net_model import NetworkParams, NetworkState, complementary_count, iter_pieces

logger = logging.getLogger(__name__)


class PolicyKind(str, Enum):
    RFWPMS = "RFwPMS"
    RNWPMS = "RNwPMS"
    MS = "MS"
    TMS = "TMS"
    RF = "RF"
    RN = "RN"


class ZetaVariant(str, Enum):
    STANDARD = "standard"
    FLASHCROWD = "flashcrowd"


RARE = "rare"
NONRARE = "nonrare"
EXTRA = "extra"
NOTHING = "none"


@dataclass(frozen=True)
class PolicyConfig:
    kind: PolicyKind = PolicyKind.RFWPMS
    zeta_variant: ZetaVariant = ZetaVariant.STANDARD
    # TMS only; None means 2·K_W of the target swarm
    tms_threshold: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        object.__setattr__(self, "zeta_variant", ZetaVariant(self.zeta_variant))

    def threshold_for(self, k: int) -> int:
        return 2 * k if self.tms_threshold is None else self.tms_threshold

    def violations(self) -> List[str]:
        if self.tms_threshold is not None and self.tms_threshold < 0:
            return ["policy: tms_threshold must be >= 0"]
        return []


@dataclass
class PushContext:
    """
    One push-contact seen from the receiving side.

    `revealed` is the pusher's revealed cache profile T̂ (the full master-file for the seed, the empty
    set from a non-ally); `target_cache` is the receiver's cache S.
    """
    state: NetworkState
    revealed: int
    target_swarm: str
    target_cache: int
    rng: Optional[np.random.Generator]
    params: NetworkParams
    # the fixed seed introduces pieces nobody in the swarm holds before any policy rule applies
    from_seed: bool = False


class Selection(NamedTuple):
    piece: Optional[int]
    branch: str
    # a non-rare piece of W was offered but held back
    suppressed: bool = False


def sharing_factor(ctx: PushContext, piece: int, variant: ZetaVariant = ZetaVariant.STANDARD) -> float:
    """
    Probability ζ that a non-rare piece passes the mode-suppression gate.

    Args:
        ctx (PushContext): Contact being resolved
        piece (int): Non-rare piece n of the target swarm's file
        variant (ZetaVariant): standard, or the flash-crowd tuned variant

    Returns:
        float: ζ_W(n) in [0, 1]
    """
    spec = ctx.state.swarms[ctx.target_swarm]
    if spec.beta == 0:
        return 0.0
    table = ctx.state.tables[ctx.target_swarm]
    d = complementary_count(ctx.state, ctx.target_swarm, piece)
    if ZetaVariant(variant) is ZetaVariant.FLASHCROWD:
        params = ctx.params
        crowd = min(spec.k, max(ctx.state.size, 1))
        rate = params.delta_1 / (spec.beta * params.L * params.U)
        return math.exp(-rate * (table.mbar + d) / crowd)
    d_term = d ** spec.alpha if d > 0 else 0.0
    return math.exp(-(table.mbar + d_term) / (spec.beta * spec.k))


def select_piece(ctx: PushContext, policy: PolicyConfig) -> Selection:
    """
    Run the policy on one push-contact. RNG draws happen in the order: rare pick, non-rare pick,
    Bernoulli gate, extra pick; picks from a single candidate consume no draw. A seed push that can
    offer a piece with no copy in the target swarm picks uniformly among those and skips the policy.
    """
    state = ctx.state
    spec = state.swarms.get(ctx.target_swarm)
    if spec is None:
        raise DomainError(f"Unknown swarm {ctx.target_swarm!r}.")
    novel = ctx.revealed & spec.downloadable & ~ctx.target_cache
    if not novel:
        return Selection(None, NOTHING)
    table = state.tables[ctx.target_swarm]
    primary = novel & spec.file
    extra = novel & ~spec.file
    rng = ctx.rng
    kind = policy.kind
    suppressed = False

    absent = _absent(ctx, primary, table)
    if absent:
        return Selection(_choose(absent, rng), RARE)
    if kind in (PolicyKind.RFWPMS, PolicyKind.RNWPMS):
        rare = primary & table.rare_mask
        if rare:
            pool = table.rarest_of(rare) if kind is PolicyKind.RFWPMS else rare
            return Selection(_choose(pool, rng), RARE)
        if primary:
            n = _choose(primary, rng)
            if rng.random() < sharing_factor(ctx, n, policy.zeta_variant):
                return Selection(n, NONRARE)
            suppressed = True
    elif primary:
        if kind is PolicyKind.RF:
            return _labelled(_choose(table.rarest_of(primary), rng), table)
        suppress = kind is PolicyKind.MS or (
            kind is PolicyKind.TMS and table.mbar > policy.threshold_for(spec.k))
        pool = primary & table.rare_mask if suppress else primary
        if pool:
            return _labelled(_choose(pool, rng), table)
        suppressed = True

    if extra:
        return Selection(_choose(extra, rng), EXTRA, suppressed)
    return Selection(None, NOTHING, suppressed)


def transferable_set(ctx: PushContext, policy: PolicyConfig) -> int:
    """Piece-set of at most one piece the pusher transfers (Algorithm 1 and baselines)."""
    choice = select_piece(ctx, policy)
    return 0 if choice.piece is None else 1 << choice.piece


def selection_distribution(ctx: PushContext, policy: PolicyConfig) -> Dict[Optional[int], float]:
    """
    Exact output law of `select_piece` for a context, keyed by piece (None for no transfer).
    The context's rng is not used.
    """
    state = ctx.state
    spec = state.swarms[ctx.target_swarm]
    table = state.tables[ctx.target_swarm]
    novel = ctx.revealed & spec.downloadable & ~ctx.target_cache
    primary = novel & spec.file
    extra = novel & ~spec.file
    law: Dict[Optional[int], float] = {}

    def spread(mask: int, weight: float) -> None:
        n = mask.bit_count()
        for i in iter_pieces(mask):
            law[i] = law.get(i, 0.0) + weight / n

    def fallback(weight: float) -> None:
        if extra:
            spread(extra, weight)
        elif weight > 0:
            law[None] = law.get(None, 0.0) + weight

    kind = policy.kind
    absent = _absent(ctx, primary, table)
    if absent:
        spread(absent, 1.0)
    elif not primary:
        fallback(1.0)
    elif kind in (PolicyKind.RFWPMS, PolicyKind.RNWPMS):
        rare = primary & table.rare_mask
        if rare:
            spread(table.rarest_of(rare) if kind is PolicyKind.RFWPMS else rare, 1.0)
        else:
            share = 1.0 / primary.bit_count()
            for n in iter_pieces(primary):
                zeta = sharing_factor(ctx, n, policy.zeta_variant)
                law[n] = law.get(n, 0.0) + share * zeta
                fallback(share * (1.0 - zeta))
    elif kind is PolicyKind.RF:
        spread(table.rarest_of(primary), 1.0)
    else:
        suppress = kind is PolicyKind.MS or (
            kind is PolicyKind.TMS and table.mbar > policy.threshold_for(spec.k))
        pool = primary & table.rare_mask if suppress else primary
        if pool:
            spread(pool, 1.0)
        else:
            fallback(1.0)
    return {piece: w for piece, w in law.items() if w > 0}


def _absent(ctx: PushContext, primary: int, table) -> int:
    """Pieces of `primary` with zero copies in the target swarm, offered only by the seed."""
    if not ctx.from_seed:
        return 0
    return primary & table.by_count.get(0, 0)


def _labelled(piece: int, table) -> Selection:
    return Selection(piece, RARE if (1 << piece) & table.rare_mask else NONRARE)


def _choose(mask: int, rng: np.random.Generator) -> int:
    """Uniform piece of a non-empty piece-set."""
    n = mask.bit_count()
    if n > 1:
        for _ in range(int(rng.integers(n))):
            mask &= mask - 1
    return (mask & -mask).bit_length() - 1

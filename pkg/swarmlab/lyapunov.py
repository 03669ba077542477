"""
Lyapunov diagnostics: constant derivation, V along states and trajectories, drift estimates,
the push-contact rate envelope check and an exact generator oracle for micro-states.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Mapping, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from .errors import DomainError
from .net_model import NetworkParams, NetworkState, SwarmSpec, iter_pieces
from .piece_policies import PolicyConfig, PushContext, selection_distribution
from .sim_engine import TrajectoryRecord, revealed_profile, seed_rates

logger = logging.getLogger(__name__)

# exp() overflows past this
_LOG_FLOAT_MAX = math.log(np.finfo(float).max)


@dataclass(frozen=True)
class SwarmConstants:
    k: int
    c1: float
    c2: float
    c3: float
    delta: float
    d: float
    d1: float
    d2: float
    n1: float
    capacity: float


@dataclass(frozen=True)
class LyapunovConfig:
    eta: float
    epsilon_prime: float
    epsilon: float
    c_star: float
    lam_total: float
    delta_p: float
    delta_1: float
    xi2: float
    swarms: Mapping[str, SwarmConstants]

    def as_dict(self) -> dict:
        return {
            "eta": self.eta,
            "epsilon_prime": self.epsilon_prime,
            "epsilon": self.epsilon,
            "C_star": self.c_star,
            "delta_p": self.delta_p,
            "delta_1": self.delta_1,
            "xi2": self.xi2,
            "swarms": {sid: asdict(c) for sid, c in self.swarms.items()},
        }


def _power_product(coefficient: float, factors: Iterable[Tuple[float, float]]) -> float:
    """coefficient · Π base^exponent evaluated in log space; inf when it overflows."""
    if coefficient == 0:
        return 0.0
    log_value = math.log(coefficient)
    for base, exponent in factors:
        if base == 0:
            return 0.0
        log_value += exponent * math.log(base)
    return math.inf if log_value > _LOG_FLOAT_MAX else math.exp(log_value)


def discrepancy_bound(params: NetworkParams, spec: SwarmSpec, eta: float) -> Tuple[float, float, float]:
    """Constant D_W bounding the positive drift from non-rare downloads, with its two parts."""
    if spec.beta == 0:
        return 0.0, 0.0, 0.0
    base = params.xi2 * (params.L * params.seed_capacity(spec.id) + params.delta_p)
    k = spec.k
    d1 = _power_product(12 * math.exp(-2) / eta ** 2 * base, [(spec.beta, 2), (k, 7)])
    d2 = 0.0
    if spec.allies - {spec.id}:
        if spec.alpha == 0:
            d2 = math.inf
        else:
            inv = 1.0 / spec.alpha
            d2 = _power_product(3 * math.exp(-2) / eta * base, [(spec.beta, 1 + inv), (k, 5 + inv)])
    return d1 + d2, d1, d2


def derive_constants(params: NetworkParams, swarms: Iterable[SwarmSpec], eta: float = 0.5,
                     epsilon_prime: float = 1.0) -> LyapunovConfig:
    """
    Set C1, C2, C3 and δ for every swarm so that V has negative drift outside a finite set.

    Args:
        params (NetworkParams): Contact parameters, must give Δ_p > 0
        swarms (Iterable[SwarmSpec]): Swarms of the network
        eta (float): η in (0, 1)
        epsilon_prime (float): ε' > 0; the recipe uses ε = 2ε'

    Returns:
        LyapunovConfig: Derived constants

    Raises:
        DomainError: Δ_p = 0, η or ε' out of range, or some D_W is not finite
    """
    swarms = list(swarms)
    if not 0 < eta < 1:
        raise DomainError("eta must lie in (0, 1).")
    if not epsilon_prime > 0:
        raise DomainError("epsilon_prime must be > 0.")
    delta_p = params.delta_p
    if delta_p <= 0:
        raise DomainError("Delta_p = 0: xi2 is infinite and the recipe is undefined.")
    xi2 = params.xi2
    epsilon = 2 * epsilon_prime
    lam = sum(s.lam for s in swarms)
    c1 = {s.id: 8.0 * s.k ** 2 for s in swarms}
    c_star = max(s.k * c1[s.id] for s in swarms)
    constants = {}
    for spec in swarms:
        k = spec.k
        d, d1, d2 = discrepancy_bound(params, spec, eta)
        if not math.isfinite(d):
            raise DomainError(f"D_W for swarm {spec.id!r} is not finite (alpha={spec.alpha}, beta={spec.beta}).")
        capacity = params.L * params.seed_capacity(spec.id)
        c2 = 4 * k * (lam * c_star + d + epsilon) / capacity
        delta = min(
            0.5 * (1 - eta),
            0.125 * c1[spec.id] * (1 - eta) / (2 * k ** 2 * xi2 * c2),
            0.25 * c2 * (1 - eta) / (2 * k ** 2 * xi2),
        )
        n1 = n1_bound(theta=lam * c_star + d, theta1=k, epsilon=epsilon, k=k, eta=eta,
                      capacity=capacity, delta_p=delta_p)
        c3 = max(
            2 + n1 * k / (1 - eta),
            2 + k * (k - eta) / (1 - eta) ** 2
            * (2 + (lam * c1[spec.id] + epsilon) * k / (0.125 * c1[spec.id] * delta_p)),
        )
        constants[spec.id] = SwarmConstants(k, c1[spec.id], c2, c3, delta, d, d1, d2, n1, capacity)
    return LyapunovConfig(eta, epsilon_prime, epsilon, c_star, lam, delta_p, params.delta_1, xi2, constants)


def n1_bound(theta: float, theta1: float, epsilon: float, k: int, eta: float, capacity: float,
             delta_p: float) -> float:
    """Smallest level of (K-η)ν̄ - Σν above which θ + g(θ1, θ2) ≤ -ε is guaranteed."""
    need = (theta + epsilon) * theta1 * k / (2 * (1 - eta)) - 2 * (1 - eta) * (capacity - 2 * (1 - eta) * delta_p)
    return max(0.0, need / min(capacity, 2 * (1 - eta) * delta_p))


def recipe_violations(cfg: LyapunovConfig, params: NetworkParams, swarms: Iterable[SwarmSpec],
                      rel_tol: float = 1e-9) -> List[str]:
    """Every constant-setting inequality the config fails (empty for `derive_constants` output)."""
    problems = []
    eta, eps = cfg.eta, cfg.epsilon
    swarms = list(swarms)
    c_star = max(spec.k * cfg.swarms[spec.id].c1 for spec in swarms)

    def check(ok_lhs: float, ok_rhs: float, label: str) -> None:
        if ok_lhs < ok_rhs - rel_tol * max(1.0, abs(ok_rhs)):
            problems.append(label)

    if abs(c_star - cfg.c_star) > rel_tol * c_star:
        problems.append("C_star != max K_W·C1_W")
    for spec in swarms:
        c = cfg.swarms[spec.id]
        k, sid = spec.k, spec.id
        if not math.isclose(c.capacity, params.L * params.seed_capacity(sid)):
            problems.append(f"{sid}: seed capacity differs from the network parameters")
        check(c.c1, 8 * k ** 2, f"{sid}: C1 >= 8K^2")
        check(0.25 / k * c.capacity * c.c2, cfg.lam_total * cfg.c_star + c.d + eps, f"{sid}: C2 floor")
        check(0.5 * (1 - eta), c.delta, f"{sid}: delta <= 0.5(1-eta)")
        check(0.125 * c.c1, 2 * c.delta / (1 - eta) * k ** 2 * cfg.xi2 * c.c2, f"{sid}: delta vs C1")
        check(0.25 * c.c2, 2 * c.delta / (1 - eta) * k ** 2 * cfg.xi2, f"{sid}: delta vs C2")
        check((c.c3 - 2) * (1 - eta) / k, c.n1, f"{sid}: C3 vs N1")
        check(0.125 * c.c1 / k * cfg.delta_p * ((c.c3 - 2) * (1 - eta) ** 2 / (k * (k - eta)) - 2),
              cfg.lam_total * c.c1 + eps, f"{sid}: C3 drift floor")
    return problems


# --- V ---

def swarm_components(cfg: LyapunovConfig, swarm: str, population: int, nu_max: int, M: int,
                     P: int) -> Tuple[float, float, float]:
    c = cfg.swarms[swarm]
    v1 = max(M - cfg.eta * nu_max, 0.0) ** 2
    v2 = c.c1 * (c.k * population - P)
    v3 = c.c2 * max(c.c3 - P, 0.0)
    return v1, v2, v3


def lyapunov_value(state: NetworkState, cfg: LyapunovConfig) -> Tuple[float, Dict[str, Tuple[float, float, float]]]:
    """
    V(x) and its per-swarm components (V_{W,1}, V_{W,2}, V_{W,3}).
    """
    parts = {}
    for sid, table in state.tables.items():
        parts[sid] = swarm_components(cfg, sid, table.population, table.nu_max, table.total_mismatch, table.total)
    return sum(sum(p) for p in parts.values()), parts


def lyapunov_frame(record: TrajectoryRecord, cfg: LyapunovConfig) -> pd.DataFrame:
    """Sample rows of a trajectory with V1, V2, V3 columns added."""
    frame = record.samples_frame()
    def column(name: str) -> np.ndarray:
        return frame["swarm"].map({sid: getattr(c, name) for sid, c in cfg.swarms.items()}).to_numpy(dtype=float)

    k, c1, c2, c3 = (column(name) for name in ("k", "c1", "c2", "c3"))
    frame["V1"] = np.clip(frame["M"] - cfg.eta * frame["nu_max"], 0, None) ** 2
    frame["V2"] = c1 * (k * frame["population"] - frame["P"])
    frame["V3"] = c2 * np.clip(c3 - frame["P"], 0, None)
    return frame


def empirical_drift(record: TrajectoryRecord, cfg: LyapunovConfig, window: float) -> pd.DataFrame:
    """
    Windowed drift (V(t+w) - V(t))/w along a trajectory, in total and per component.

    Raises:
        DomainError: window not positive or longer than the sampled span
    """
    frame = lyapunov_frame(record, cfg)
    totals = frame.groupby("t", sort=True)[["V1", "V2", "V3"]].sum()
    times = totals.index.to_numpy(dtype=float)
    if window <= 0:
        raise DomainError("Drift window must be positive.")
    if len(times) < 2 or window > times[-1] - times[0]:
        raise DomainError(f"Drift window {window} exceeds the sampled span.")
    spacing = float(np.median(np.diff(times)))
    step = max(1, int(round(window / spacing)))
    values = totals.to_numpy(dtype=float)
    total = values.sum(axis=1)
    span = times[step:] - times[:-step]
    out = pd.DataFrame({"t": times[:-step], "V": total[:-step]})
    out["drift"] = (total[step:] - total[:-step]) / span
    for j, name in enumerate(("V1", "V2", "V3")):
        out[f"drift_{name}"] = (values[step:, j] - values[:-step, j]) / span
    return out


# --- rate envelope ---

def rate_envelope_check(record: TrajectoryRecord, params: NetworkParams, swarms: Iterable[SwarmSpec],
                        confidence: float = 0.99, min_expected: float = 30.0) -> dict:
    """
    Check that push-contacts by ally-holders of every piece arrived at a rate inside the
    [Γ_lower, Γ_upper] envelope.

    Returns:
        dict: status "pass", "fail" or "inconclusive" with the tested cells
    """
    tally = record.envelope
    if tally is None:
        return {"status": "inconclusive", "reason": "run did not record push-contact exposures"}
    swarms = {s.id: s for s in swarms}
    delta_p, delta_1 = params.delta_p, params.delta_1
    cells = []
    for w, spec in swarms.items():
        contributors = [v for v, other in swarms.items() if w in other.allies]
        for i in iter_pieces(spec.file):
            held = sum(tally.holder_time[v].get(i, 0.0) for v in contributors)
            lower = tally.seed_time + delta_p * held
            upper = tally.seed_time + delta_1 * held
            cells.append((w, i, tally.observed[w][i], lower, upper))
    tested = [c for c in cells if c[3] >= min_expected]
    report = {"confidence": confidence, "xi2": params.xi2, "cells_total": len(cells),
              "cells_tested": len(tested)}
    if not tested:
        return {"status": "inconclusive", "reason": f"no cell reaches {min_expected} expected contacts", **report}
    z = float(stats.norm.ppf(1 - (1 - confidence) / (2 * len(tested))))
    violations = []
    for w, i, observed, lower, upper in tested:
        lo = lower - z * math.sqrt(lower)
        hi = upper + z * math.sqrt(upper)
        if not lo <= observed <= hi:
            violations.append({"swarm": w, "piece": i, "observed": observed, "lower": lower, "upper": upper})
    report["violations"] = violations
    return {"status": "fail" if violations else "pass", **report}


# --- exact generator oracle ---

def exact_drift(state: NetworkState, params: NetworkParams, policy: PolicyConfig, cfg: LyapunovConfig,
                max_peers: int = 6, max_pieces: int = 3) -> float:
    """
    QV(x): sum over every transition of rate × (V(x') - V(x)), enumerating contacts, Bernoulli
    outcomes and policy tie-breaks exactly. Only for micro-states.
    """
    if state.size > max_peers or any(spec.k > max_pieces for spec in state.swarms.values()):
        raise DomainError(f"exact_drift supports at most {max_peers} peers and {max_pieces} pieces per file.")
    base, _ = lyapunov_value(state, cfg)

    def gain(apply) -> float:
        twin = state.clone()
        apply(twin)
        return lyapunov_value(twin, cfg)[0] - base

    drift = 0.0
    for sid, spec in state.swarms.items():
        if spec.lam:
            drift += spec.lam * gain(lambda s, sid=sid: s.add_peer(sid, 0))

    for target_swarm, rate in seed_rates(state, params).items():
        targets = state.peers() if target_swarm is None else state.peers(target_swarm)
        for target in targets:
            law = _push_law(state, None, target, params, policy)
            drift += rate / len(targets) * _expected_gain(state, [(target, law)], gain)

    links = [(params.tft_links * params.mu, True)]
    if params.y_opt:
        links.append((params.mu_hat, False))
    for initiator in state.peers():
        partners = [p for p in (state.peers(initiator.swarm) if params.autonomous else state.peers())
                    if p.peer_id != initiator.peer_id]
        for partner in partners:
            for link_rate, two_sided in links:
                rate = link_rate / len(partners)
                if rate == 0:
                    continue
                if two_sided:
                    drift += rate * _tit_for_tat_gain(state, initiator, partner, params, policy, gain)
                else:
                    law = _push_law(state, initiator, partner, params, policy)
                    drift += rate * _expected_gain(state, [(partner, law)], gain)
    return drift


def _push_law(state: NetworkState, pusher, target, params: NetworkParams, policy: PolicyConfig) -> Dict:
    shown = revealed_profile(state, pusher, target.swarm)
    ctx = PushContext(state, shown, target.swarm, target.cache, None, params, from_seed=pusher is None)
    return selection_distribution(ctx, policy)


def _tit_for_tat_gain(state: NetworkState, peer1, peer2, params: NetworkParams, policy: PolicyConfig,
                      gain) -> float:
    pair = (peer1, peer2)
    shown = (revealed_profile(state, peer1, peer2.swarm), revealed_profile(state, peer2, peer1.swarm))
    commit_prob = []
    for k in (0, 1):
        me, other = pair[k], pair[1 - k]
        if shown[1 - k] & state.swarms[me.swarm].file & ~me.cache:
            commit_prob.append(1.0)
        elif params.scalability_mode and other.cache == 0:
            commit_prob.append(1.0)
        else:
            commit_prob.append(params.p)
    laws = [_push_law(state, pair[k], pair[1 - k], params, policy) for k in (0, 1)]
    total = 0.0
    for c1 in (True, False):
        for c2 in (True, False):
            weight = (commit_prob[0] if c1 else 1 - commit_prob[0]) * (commit_prob[1] if c2 else 1 - commit_prob[1])
            if weight == 0:
                continue
            pushes = []
            if c1:
                pushes.append((peer2, laws[0]))
            if c2:
                pushes.append((peer1, laws[1]))
            total += weight * _expected_gain(state, pushes, gain)
    return total


def _expected_gain(state: NetworkState, pushes: List, gain) -> float:
    """Average V change over the joint law of independent pushes, applied together then departures."""
    if not pushes:
        return 0.0
    outcomes = [[]]
    weights = [1.0]
    for receiver, law in pushes:
        outcomes = [o + [(receiver.peer_id, piece)] for o in outcomes for piece in law]
        weights = [w * p for w in weights for p in law.values()]

    def applier(choice):
        def apply(twin: NetworkState) -> None:
            touched = []
            for peer_id, piece in choice:
                peer = twin.roster[peer_id]
                touched.append(peer)
                if piece is not None:
                    twin.give_piece(peer, piece)
            for peer in touched:
                if peer.peer_id in twin.roster and twin.is_complete(peer):
                    twin.remove_peer(peer)
        return apply

    return sum(w * gain(applier(choice)) for choice, w in zip(outcomes, weights))

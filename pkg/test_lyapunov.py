#!/usr/bin/env python3
"""
Tests for the Lyapunov diagnostics: constants, V along states and runs, drift and the rate envelope.
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from swarmlab.errors import DomainError
from swarmlab.lyapunov import (
    derive_constants,
    discrepancy_bound,
    empirical_drift,
    exact_drift,
    lyapunov_frame,
    lyapunov_value,
    rate_envelope_check,
    recipe_violations,
    swarm_components,
)
from swarmlab.net_model import (
    NetworkParams,
    NetworkState,
    SwarmSpec,
    apply_behavior,
    first_k,
    interval,
    mask_of,
)
from swarmlab.piece_policies import PolicyConfig, PolicyKind
from swarmlab.sim_engine import RunConfig, advance, run, total_rate

SOFT = NetworkParams(p=0.5, y_opt=True)


def swarm(k=2, lam=1.0, **changes):
    return SwarmSpec("W", first_k(k), first_k(k), frozenset({"W"}), lam, **changes)


def two_swarms(behavior, alpha=1e-9):
    swarms = [
        SwarmSpec("W1", first_k(4), first_k(4), frozenset({"W1"}), 2.0, alpha=alpha),
        SwarmSpec("W2", interval(2, 8), interval(2, 8), frozenset({"W2"}), 1.0, alpha=alpha),
    ]
    return apply_behavior(swarms, behavior, SOFT, first_k(8))


@pytest.mark.parametrize("behavior, alpha", [("selfish", 1e-9), ("autonomous", 1e-9), ("opportunistic", 0.5)])
def test_derived_constants_satisfy_recipe(behavior, alpha):
    swarms, params = two_swarms(behavior, alpha)
    cfg = derive_constants(params, swarms)
    assert recipe_violations(cfg, params, swarms) == []
    for spec in swarms:
        c = cfg.swarms[spec.id]
        assert c.c1 == 8 * spec.k ** 2
        assert 0 < c.delta <= 0.5 * (1 - cfg.eta)
        assert c.capacity == pytest.approx(params.L * params.seed_capacity(spec.id))
    assert cfg.c_star == max(s.k * 8 * s.k ** 2 for s in swarms)


def test_recipe_check_flags_tampered_constants():
    params, spec = SOFT, swarm(3)
    cfg = derive_constants(params, [spec])
    tampered = replace(cfg, swarms={"W": replace(cfg.swarms["W"], c2=1.0)})
    assert "W: C2 floor" in recipe_violations(tampered, params, [spec])


def test_undefined_recipes_raise():
    with pytest.raises(DomainError):
        derive_constants(NetworkParams(p=0.0, y_opt=False), [swarm()])
    swarms, params = two_swarms("altruistic", alpha=0.0)
    with pytest.raises(DomainError):
        derive_constants(params, swarms)
    with pytest.raises(DomainError):
        derive_constants(SOFT, [swarm()], eta=1.0)


def test_discrepancy_bound_parts():
    selfish, params = two_swarms("selfish")
    d, d1, d2 = discrepancy_bound(params, selfish[0], 0.5)
    assert d2 == 0.0 and d == d1 > 0
    assert discrepancy_bound(params, swarm(beta=0.0), 0.5) == (0.0, 0.0, 0.0)
    allied, params = two_swarms("opportunistic", alpha=0.5)
    d, d1, d2 = discrepancy_bound(params, allied[0], 0.5)
    assert d2 > 0 and d == pytest.approx(d1 + d2)


def test_arrival_raises_v_by_k_c1():
    spec = swarm(3)
    cfg = derive_constants(SOFT, [spec])
    state = NetworkState([spec])
    state.add_peer("W", mask_of([1]))
    state.add_peer("W", mask_of([2, 3]))
    before, _ = lyapunov_value(state, cfg)
    state.add_peer("W")
    after, _ = lyapunov_value(state, cfg)
    assert after - before == pytest.approx(spec.k * cfg.swarms["W"].c1)


def test_download_without_departure_lowers_v2_by_c1():
    spec = swarm(3)
    cfg = derive_constants(SOFT, [spec])
    state = NetworkState([spec])
    peer = state.add_peer("W")
    state.add_peer("W", mask_of([1, 2]))
    _, before = lyapunov_value(state, cfg)
    state.give_piece(peer, 3)
    _, after = lyapunov_value(state, cfg)
    assert after["W"][1] - before["W"][1] == pytest.approx(-cfg.swarms["W"].c1)


def test_frame_matches_state_components():
    spec = swarm(3, lam=2.0)
    config = RunConfig(SOFT, (spec,), t_end=15.0, rng_seed=9)
    cfg = derive_constants(SOFT, [spec])
    record = run(config)
    frame = lyapunov_frame(record, cfg)
    row = frame.iloc[-1]
    v1, v2, v3 = swarm_components(cfg, "W", int(row.population), int(row.nu_max), int(row.M), int(row.P))
    assert (row.V1, row.V2, row.V3) == pytest.approx((v1, v2, v3))


@pytest.mark.parametrize("behavior", ["selfish", "autonomous"])
def test_v_dominates_every_swarm_population(behavior):
    swarms, params = two_swarms(behavior)
    cfg = derive_constants(params, swarms)
    record = run(RunConfig(params, swarms, t_end=60.0, rng_seed=13, master=first_k(8)))
    frame = lyapunov_frame(record, cfg)
    frame["V"] = frame[["V1", "V2", "V3"]].sum(axis=1)
    frame["floor"] = frame["swarm"].map({sid: c.c1 for sid, c in cfg.swarms.items()}) * frame["population"]
    by_time = frame.groupby("t").agg(V=("V", "sum"), floor=("floor", "max"))
    assert (by_time["V"] >= by_time["floor"]).all()
    assert by_time["floor"].max() > 0


def test_empirical_drift_windows():
    spec = swarm(3, lam=2.0)
    cfg = derive_constants(SOFT, [spec])
    record = run(RunConfig(SOFT, (spec,), t_end=40.0, rng_seed=2))
    drift = empirical_drift(record, cfg, 5.0)
    assert list(drift.columns) == ["t", "V", "drift", "drift_V1", "drift_V2", "drift_V3"]
    assert len(drift) == 41 - 5
    assert drift["drift"].to_numpy() == pytest.approx(
        drift[["drift_V1", "drift_V2", "drift_V3"]].sum(axis=1).to_numpy())
    with pytest.raises(DomainError):
        empirical_drift(record, cfg, 0.0)
    with pytest.raises(DomainError):
        empirical_drift(record, cfg, 100.0)


def test_rate_envelope():
    spec = swarm(4, lam=3.0)
    record = run(RunConfig(SOFT, (spec,), t_end=200.0, rng_seed=5, sample_interval=10.0))
    assert rate_envelope_check(record, SOFT, [spec])["status"] == "inconclusive"
    record = run(RunConfig(SOFT, (spec,), t_end=200.0, rng_seed=5, sample_interval=10.0, record_envelope=True))
    report = rate_envelope_check(record, SOFT, [spec])
    assert report["cells_tested"] == 4
    assert report["status"] == "pass", report.get("violations")


def micro_state():
    spec = swarm(2, lam=1.0)
    state = NetworkState([spec])
    state.add_peer("W", mask_of([1]))
    state.add_peer("W")
    state.add_peer("W", mask_of([1]))
    return spec, state


MONTE_CARLO_BUDGETS = [(20000, 4.0), pytest.param(10 ** 6, 3.0, marks=pytest.mark.slow)]


@pytest.mark.parametrize("samples, sigmas", MONTE_CARLO_BUDGETS)
@pytest.mark.parametrize("kind", [PolicyKind.RFWPMS, PolicyKind.MS, PolicyKind.RN])
def test_exact_drift_agrees_with_monte_carlo(kind, samples, sigmas):
    spec, state = micro_state()
    policy = PolicyConfig(kind)
    cfg = derive_constants(SOFT, [spec])
    exact = exact_drift(state, SOFT, policy, cfg)
    base, _ = lyapunov_value(state, cfg)
    rate = total_rate(state, SOFT)
    rng = np.random.default_rng(list(PolicyKind).index(kind))
    n = samples
    gains = np.empty(n)
    for j in range(n):
        twin = state.clone()
        advance(twin, SOFT, policy, rng)
        gains[j] = lyapunov_value(twin, cfg)[0] - base
    estimate = rate * gains.mean()
    error = rate * gains.std(ddof=1) / math.sqrt(n)
    assert abs(estimate - exact) <= sigmas * error + 1e-9 * abs(exact)


def test_exact_drift_refuses_large_states():
    spec = swarm(2)
    state = NetworkState([spec])
    for _ in range(7):
        state.add_peer("W")
    with pytest.raises(DomainError):
        exact_drift(state, SOFT, PolicyConfig(), derive_constants(SOFT, [spec]))

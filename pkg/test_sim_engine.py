#!/usr/bin/env python3
"""
Tests for the event-driven engine: contact resolution, run bookkeeping, sampling and replay.
"""

import numpy as np
import pytest

from swarmlab.errors import ConfigError
from swarmlab.net_model import (
    BEHAVIORS,
    NetworkParams,
    NetworkState,
    SwarmSpec,
    apply_behavior,
    audit,
    first_k,
    interval,
    mask_of,
    mismatch_summary,
)
from swarmlab.piece_policies import PolicyConfig, PolicyKind
from swarmlab.sim_engine import (
    SAMPLE_COLUMNS,
    EventKind,
    InitialCondition,
    RunConfig,
    advance,
    resolve_tit_for_tat,
    resolve_unchoke,
    run,
    total_rate,
)


def single_swarm_config(**changes):
    swarm = SwarmSpec("W", first_k(3), first_k(3), frozenset({"W"}), 2.0)
    base = dict(params=NetworkParams(p=0.5, y_opt=True), swarms=(swarm,), t_end=20.0, rng_seed=4)
    base.update(changes)
    return RunConfig(**base)


def two_swarm_config(behavior, policy=PolicyKind.RFWPMS, **changes):
    swarms = [
        SwarmSpec("W1", first_k(4), first_k(4), frozenset({"W1"}), 2.0),
        SwarmSpec("W2", interval(2, 6), interval(2, 6), frozenset({"W2"}), 1.5),
    ]
    swarms, params = apply_behavior(swarms, behavior, NetworkParams(p=0.3, y_opt=True), first_k(6))
    base = dict(params=params, swarms=swarms, policy=PolicyConfig(policy), t_end=30.0, rng_seed=21,
                master=first_k(6))
    base.update(changes)
    return RunConfig(**base)


def test_tit_for_tat_uses_pre_contact_state_and_departs_both():
    swarm = SwarmSpec("W", first_k(2), first_k(2), frozenset({"W"}), 0.0)
    state = NetworkState([swarm])
    a = state.add_peer("W", mask_of([1]))
    b = state.add_peer("W", mask_of([2]))
    outcome = resolve_tit_for_tat(state, a, b, NetworkParams(), PolicyConfig(), np.random.default_rng(0))
    assert len(outcome.pushes) == 2
    assert len(outcome.transfers) == 2
    assert len(outcome.departures) == 2
    assert state.size == 0
    assert audit(state)["status"] == "clean"


def test_hard_tit_for_tat_between_empty_peers_moves_nothing():
    swarm = SwarmSpec("W", first_k(2), first_k(2), frozenset({"W"}), 0.0)
    state = NetworkState([swarm])
    a = state.add_peer("W")
    b = state.add_peer("W")
    outcome = resolve_tit_for_tat(state, a, b, NetworkParams(p=0.0), PolicyConfig(), np.random.default_rng(0))
    assert outcome.pushes == [] and outcome.transfers == []


def test_seed_push_reveals_master_file():
    swarm = SwarmSpec("W", first_k(2), first_k(2), frozenset({"W"}), 0.0)
    state = NetworkState([swarm])
    peer = state.add_peer("W")
    outcome = resolve_unchoke(state, None, peer, NetworkParams(), PolicyConfig(), np.random.default_rng(1))
    assert outcome.kind is EventKind.SEED_TICK
    assert peer.cache.bit_count() == 1
    assert outcome.pushes[0][0] is None


def test_total_rate_adds_every_clock():
    config = single_swarm_config()
    state = config.build_state()
    state.add_peer("W")
    state.add_peer("W")
    params = config.params
    expected = 2.0 + params.L * params.U + 2 * params.tft_links * params.mu + 2 * params.mu_hat
    assert total_rate(state, params) == pytest.approx(expected)


@pytest.mark.parametrize("behavior", BEHAVIORS)
@pytest.mark.parametrize("kind", list(PolicyKind))
def test_audit_stays_clean_under_random_events(kind, behavior):
    config = two_swarm_config(behavior, kind)
    state = config.build_state()
    rng = np.random.default_rng([list(PolicyKind).index(kind), BEHAVIORS.index(behavior), 1])
    for _ in range(10_000):
        outcome, dt = advance(state, config.params, config.policy, rng)
        assert dt >= 0
        assert audit(state) == {"status": "clean"}
        for peer, _piece in outcome.transfers:
            if peer.peer_id in state.roster:
                assert not state.is_complete(peer)
        if config.params.autonomous:
            for pusher_swarm, _, receiving, _, _ in outcome.pushes:
                assert pusher_swarm is None or pusher_swarm == receiving


def test_run_is_reproducible():
    config = two_swarm_config("altruistic")
    first, second = run(config), run(config)
    assert first.samples == second.samples
    assert first.sojourns == second.sojourns
    assert first.counters == second.counters
    other = run(two_swarm_config("altruistic", rng_seed=22))
    assert other.samples != first.samples


def test_zero_horizon_gives_one_sample_per_swarm():
    record = run(two_swarm_config("selfish", t_end=0.0))
    assert [(s.t, s.swarm) for s in record.samples] == [(0.0, "W1"), (0.0, "W2")]
    assert list(record.samples_frame().columns) == SAMPLE_COLUMNS


def test_samples_on_a_regular_grid():
    record = run(single_swarm_config(t_end=10.0, sample_interval=2.5))
    assert sorted({s.t for s in record.samples}) == [0.0, 2.5, 5.0, 7.5, 10.0]
    for sample in record.samples:
        assert sample.mbar <= sample.M <= 2 * sample.mbar
        assert sample.nu_min <= sample.nu_max <= sample.population


def test_counters_are_consistent():
    record = run(two_swarm_config("opportunistic", t_end=50.0))
    c = record.counters
    assert c["events"] == sum(c[kind.value] for kind in EventKind)
    assert c["pushes"] == c["push_rare"] + c["push_nonrare"] + c["push_extra"] + c["push_empty"]
    assert c["departures"] == len(record.sojourns)
    assert all(s.departure >= s.arrival for s in record.sojourns)
    assert c["push_non_ally"] == 0


def test_empty_network_without_arrivals_flushes_at_once():
    swarm = SwarmSpec("W", first_k(3), first_k(3), frozenset({"W"}), 0.0)
    record = run(RunConfig(NetworkParams(), (swarm,), t_end=10.0))
    assert record.end_reason == "flushed"
    assert record.flush_out == 0.0
    assert len(record.samples) == 1


def test_flash_crowd_drains_and_introduces_every_piece():
    swarm = SwarmSpec("W", first_k(4), first_k(4), frozenset({"W"}), 0.0)
    initial = InitialCondition("flash_crowd", {"W": 12})
    config = RunConfig(NetworkParams(mu_hat=1.0, L=1, y_opt=True), (swarm,), t_end=2000.0, initial=initial)
    record = run(config)
    assert record.end_reason == "flushed"
    assert len(record.sojourns) == 12
    assert sorted(record.introductions["W"]) == [1, 2, 3, 4]
    assert record.all_introduced["W"] == max(record.introductions["W"].values())


def test_one_club_initial_condition():
    config = single_swarm_config(initial=InitialCondition("one_club", {"W": 5}, {"W": 2}))
    state = config.build_state()
    assert state.size == 5
    summary = mismatch_summary(state, "W")
    assert (summary.nu_max, summary.nu_min) == (5, 0)


def test_hard_tit_for_tat_leaves_newcomers_empty():
    swarm = SwarmSpec("W", first_k(10), first_k(10), frozenset({"W"}), 4.0)
    record = run(RunConfig(NetworkParams(p=0.0, y_opt=False), (swarm,), t_end=200.0, rng_seed=3,
                           sample_interval=5.0))
    assert record.final_summary["peers"] > 100
    assert record.final_summary["empty_fraction"] > 0.6


def test_invalid_run_config_lists_every_problem():
    swarm = SwarmSpec("W", first_k(3), first_k(3), frozenset({"W", "X"}), -1.0)
    config = RunConfig(NetworkParams(p=2.0), (swarm,), sample_interval=0.0)
    with pytest.raises(ConfigError) as info:
        config.validate()
    problems = info.value.violations
    assert "swarm 'W': lambda must be >= 0" in problems
    assert "swarm 'W': unknown allies ['X']" in problems
    assert "network: p must lie in [0, 1]" in problems
    assert "sim: sample_interval must be > 0" in problems


def test_envelope_tally_is_recorded_on_request():
    record = run(single_swarm_config(record_envelope=True, t_end=30.0))
    tally = record.envelope
    assert tally is not None
    assert tally.elapsed == pytest.approx(30.0)
    assert set(tally.observed["W"]) == {1, 2, 3}


@pytest.mark.parametrize("kind", [PolicyKind.RN, PolicyKind.RNWPMS, PolicyKind.TMS, PolicyKind.MS])
def test_seed_push_introduces_a_missing_piece(kind):
    swarm = SwarmSpec("W", first_k(6), first_k(6), frozenset({"W"}), 0.0)
    for trial in range(20):
        state = NetworkState([swarm])
        state.add_peer("W", mask_of([1, 2, 3]))
        state.add_peer("W", mask_of([1, 2]))
        target = state.add_peer("W", mask_of([1]))
        outcome = resolve_unchoke(state, None, target, NetworkParams(), PolicyConfig(kind, tms_threshold=0),
                                  np.random.default_rng(trial))
        assert outcome.transfers[0][1] in (4, 5, 6)


@pytest.mark.parametrize("missing", [-1, 0, 7, 5000])
def test_one_club_missing_piece_outside_the_file_is_a_violation(missing):
    config = single_swarm_config(initial=InitialCondition("one_club", {"W": 5}, {"W": missing}))
    assert config.violations() == ["initial: one-club missing piece for 'W' must lie in its file"]


def test_sampled_states_respect_chunk_bounds():
    record = run(two_swarm_config("altruistic", t_end=80.0))
    k = {"W1": 4, "W2": 4}
    for sample in record.samples:
        # every live peer misses at least one piece of its file
        assert sample.P <= (k[sample.swarm] - 1) * sample.population
        assert sample.mbar <= sample.M <= (k[sample.swarm] - 1) * sample.mbar


def test_arrivals_and_seed_ticks_follow_their_rates():
    swarm = SwarmSpec("W", first_k(3), first_k(3), frozenset({"W"}), 2.0)
    params = NetworkParams(p=0.5, y_opt=True)
    horizon = 500.0
    record = run(RunConfig(params, (swarm,), t_end=horizon, rng_seed=31, sample_interval=25.0))
    for observed, mean in ((record.counters["arrival"], swarm.lam * horizon),
                           (record.counters["seed_tick"], params.L * params.U * horizon)):
        # Poisson counts: variance equals the mean
        assert abs(observed - mean) <= 3 * np.sqrt(mean)


def test_run_counts_the_initial_cohort_still_live():
    config = single_swarm_config(initial=InitialCondition("one_club", {"W": 12}, {"W": 2}), t_end=6.0)
    state = config.build_state()
    record = run(config, state)
    survivors = sum(1 for peer in state.peers() if peer.arrival_time == 0.0)
    assert record.cohort == {"W": {"size": 12, "left": survivors}}
    assert record.counters["departures"] >= 12 - survivors

#!/usr/bin/env python3
"""
Tests for the network model: piece-set helpers, chunk tables, mismatch queries and the audit.
"""

import math

import numpy as np
import pytest

from swarmlab.errors import DomainError
from swarmlab.net_model import (
    AUTONOMOUS,
    NetworkParams,
    NetworkState,
    SwarmSpec,
    apply_behavior,
    audit,
    chunk_count,
    complementary_count,
    first_k,
    frequency,
    interval,
    mask_of,
    mismatch_summary,
    mismatches,
    nonrare_set,
    pieces_of,
    rare_set,
)


def single_swarm(k=3, lam=1.0):
    return SwarmSpec("W", first_k(k), first_k(k), frozenset({"W"}), lam)


def two_swarms(behavior="altruistic"):
    swarms = [
        SwarmSpec("W1", first_k(4), first_k(4), frozenset({"W1"}), 1.0),
        SwarmSpec("W2", interval(2, 6), interval(2, 6), frozenset({"W2"}), 1.0),
    ]
    return apply_behavior(swarms, behavior, NetworkParams(), first_k(6))


def test_interval_notation():
    assert pieces_of(first_k(3)) == [1, 2, 3]
    assert pieces_of(interval(10, 25)) == list(range(11, 26))
    assert interval(8, 18).bit_count() == 10
    with pytest.raises(DomainError):
        interval(5, 5)
    with pytest.raises(DomainError):
        mask_of([0])


def test_mismatch_summary_by_hand():
    state = NetworkState([single_swarm(3)])
    state.add_peer("W", mask_of([1]))
    state.add_peer("W", mask_of([1, 2]))
    assert chunk_count(state, "W", 1) == 2
    assert chunk_count(state, "W", 3) == 0
    assert frequency(state, "W", 2) == 0.5
    summary = mismatch_summary(state, "W")
    assert summary == (2, 0, 2, 3, 3)
    assert mismatches(state, "W") == {1: 0, 2: 1, 3: 2}
    assert pieces_of(rare_set(state, "W")) == [2, 3]
    assert pieces_of(nonrare_set(state, "W")) == [1]


def test_uniform_counts_make_every_piece_rare():
    state = NetworkState([single_swarm(3)])
    state.add_peer("W", mask_of([1, 2]))
    state.add_peer("W", mask_of([3]))
    assert state.tables["W"].uniform
    assert rare_set(state, "W") == first_k(3)
    assert nonrare_set(state, "W") == 0


def test_unknown_swarm_and_piece_raise():
    state = NetworkState([single_swarm(3)])
    with pytest.raises(DomainError):
        chunk_count(state, "X", 1)
    with pytest.raises(DomainError):
        chunk_count(state, "W", 9)
    with pytest.raises(DomainError):
        state.add_peer("W", first_k(3))


def test_complementary_count_follows_alliances():
    swarms, _ = two_swarms("altruistic")
    state = NetworkState(swarms, first_k(6))
    state.add_peer("W2", mask_of([3, 4]))
    state.add_peer("W2", mask_of([3]))
    assert complementary_count(state, "W1", 3) == 2
    assert complementary_count(state, "W1", 4) == 1

    selfish, _ = two_swarms("selfish")
    state = NetworkState(selfish, first_k(6))
    state.add_peer("W2", mask_of([3, 4]))
    assert complementary_count(state, "W1", 3) == 0


def test_apply_behavior_variants():
    altruistic, params = two_swarms("altruistic")
    assert all(s.allies == {"W1", "W2"} and s.downloadable == first_k(6) for s in altruistic)
    assert params.mode == "shared"

    opportunistic, _ = two_swarms("opportunistic")
    assert all(s.downloadable == s.file and s.allies == {"W1", "W2"} for s in opportunistic)

    autonomous, params = two_swarms("autonomous")
    assert all(s.allies == {s.id} for s in autonomous)
    assert params.mode == AUTONOMOUS
    assert params.seed_split == {"W1": 0.5, "W2": 0.5}

    with pytest.raises(DomainError):
        apply_behavior(autonomous, "generous", params)


def test_contact_parameters():
    assert math.isinf(NetworkParams(p=0.0, y_opt=False).xi2)
    assert NetworkParams(p=0.5, y_opt=False).xi2 == pytest.approx(3.0)
    assert NetworkParams(p=0.0, y_opt=True).xi2 == pytest.approx(14.0)
    assert NetworkParams(p=0.5, y_opt=True).delta_p == pytest.approx(2 + 1 / 3)
    assert NetworkParams(y_opt=True).tft_links == 2
    problems = NetworkParams(p=1.5, mode="autonomous", seed_split={"W": 2.0}).violations(["W"])
    assert "network: p must lie in [0, 1]" in problems
    assert "network: seed_split must sum to at most U" in problems


def test_incremental_tables_match_recount_under_fuzz():
    rng = np.random.default_rng(11)
    swarms, _ = two_swarms("altruistic")
    state = NetworkState(swarms, first_k(6))
    for _ in range(10_000):
        action = rng.random()
        if action < 0.35 or state.size == 0:
            spec = swarms[int(rng.integers(2))]
            cache = 0
            for piece in pieces_of(spec.downloadable):
                if rng.random() < 0.3:
                    cache |= 1 << piece
            if spec.file & ~cache:
                state.add_peer(spec.id, cache)
        elif action < 0.85:
            peer = state.peer_at(int(rng.integers(state.size)))
            missing = pieces_of(state.swarms[peer.swarm].downloadable & ~peer.cache)
            if missing:
                state.give_piece(peer, missing[int(rng.integers(len(missing)))])
                if state.is_complete(peer):
                    state.remove_peer(peer)
        else:
            state.remove_peer(state.peer_at(int(rng.integers(state.size))))
        assert audit(state) == {"status": "clean"}
        for sid in state.swarms:
            s = mismatch_summary(state, sid)
            k = state.swarms[sid].k
            assert s.mbar <= s.M <= (k - 1) * s.mbar


def test_audit_reports_first_discrepancy():
    state = NetworkState([single_swarm(3)])
    state.add_peer("W", mask_of([2]))
    state.tables["W"].nu[2] = 5
    report = audit(state)
    assert report["status"] == "discrepancy"
    assert (report["swarm"], report["piece"], report["field"]) == ("W", 2, "nu")
    assert report["expected"] == 1 and report["found"] == 5


def test_clone_is_independent():
    state = NetworkState([single_swarm(3)])
    peer = state.add_peer("W", mask_of([1]))
    twin = state.clone()
    twin.give_piece(twin.roster[peer.peer_id], 2)
    assert peer.cache == mask_of([1])
    assert chunk_count(state, "W", 2) == 0
    assert chunk_count(twin, "W", 2) == 1
    assert audit(twin)["status"] == "clean"

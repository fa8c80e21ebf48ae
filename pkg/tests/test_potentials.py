import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import log_ndtr
from scipy.stats import norm

from midorf.core import Bag, ModelParams
from midorf.potentials import (
    IMPOSSIBLE,
    LOG_PROB_FLOOR,
    augmented_edge,
    augmented_edge_table,
    augmented_node,
    augmented_node_table,
    augmented_states,
    cardinality_potential,
    is_impossible,
    log_interval_prob,
    logsumexp,
    node_log_potentials,
    node_potential,
    ordinal_backprop,
    ordinal_log_probs,
    total_energy,
)

from conftest import random_params


def test_interval_prob_matches_direct_difference():
    lo = np.array([-1.0, -0.3, 0.2])
    hi = np.array([0.5, 0.4, 2.0])
    np.testing.assert_allclose(log_interval_prob(lo, hi), np.log(norm.cdf(hi) - norm.cdf(lo)),
                               rtol=1e-12)


def test_interval_prob_tails():
    # far upper tail: Φ(-30) dominates Φ(-32)
    v = log_interval_prob(30.0, 32.0)
    assert np.isfinite(v)
    np.testing.assert_allclose(v, log_ndtr(-30.0), rtol=1e-10)
    # far lower tail, mirror image
    np.testing.assert_allclose(log_interval_prob(-32.0, -30.0), log_ndtr(-30.0), rtol=1e-10)
    # beyond double precision the floor applies
    assert log_interval_prob(60.0, 61.0) == LOG_PROB_FLOOR
    assert log_interval_prob(-np.inf, np.inf) == 0.0


def test_logsumexp_all_impossible():
    assert logsumexp(np.array([IMPOSSIBLE, IMPOSSIBLE])) == IMPOSSIBLE
    np.testing.assert_allclose(logsumexp(np.array([IMPOSSIBLE, 0.0])), 0.0)
    out = logsumexp(np.array([[IMPOSSIBLE, IMPOSSIBLE], [1.0, 1.0]]), axis=1)
    assert out[0] == IMPOSSIBLE and np.isclose(out[1], 1.0 + np.log(2.0))


@given(st.integers(2, 7), st.integers(1, 4), st.integers(0, 10_000))
def test_level_probs_sum_to_one(L, d, seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, L, d, scale=2.0)
    X = rng.normal(size=(5, d))
    probs = np.exp(node_log_potentials(p, X))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-10)


@given(st.integers(3, 7), st.integers(0, 10_000))
def test_level_probs_are_stochastically_ordered(L, seed):
    # a larger projection moves mass up: every cumulative P(h <= l) falls
    rng = np.random.default_rng(seed)
    p = random_params(rng, L, 1)
    beta = np.array([1.0])
    cuts = p.cutpoints
    x = np.sort(rng.normal(0.0, 2.0, 6))[:, None]
    cum = np.cumsum(np.exp(ordinal_log_probs(beta, cuts, x)), axis=1)[:, :-1]
    assert np.all(np.diff(cum, axis=0) <= 1e-12)


def test_node_potential_hand_value():
    # L=2, beta=1, b1=0, x=0.5: P(level 1) = Φ(-0.5)
    p = ModelParams([1.0], 0.0, [], np.zeros((2, 2)))
    assert np.isclose(node_potential(p, [0.5], 1), np.log(0.3085375387259869), rtol=1e-12)
    assert np.isclose(node_potential(p, [0.5], 2), np.log(0.6914624612740131), rtol=1e-12)
    with pytest.raises(ValueError):
        node_potential(p, [0.5], 3)


def test_ordinal_backprop_matches_finite_differences(rng):
    L, d = 5, 3
    p = random_params(rng, L, d)
    X = rng.normal(size=(7, d))
    G = rng.normal(size=(7, L))

    def f(beta, first, gaps):
        from midorf.core import decode_cutpoints_from
        return float(np.sum(G * ordinal_log_probs(beta, decode_cutpoints_from(first, gaps), X)))

    gb, gf, gg = ordinal_backprop(p.beta, p.first_cut, p.log_gaps, X, G)
    eps = 1e-6
    for i in range(d):
        e = np.zeros(d); e[i] = eps
        num = (f(p.beta + e, p.first_cut, p.log_gaps) - f(p.beta - e, p.first_cut, p.log_gaps)) / (2 * eps)
        assert np.isclose(gb[i], num, rtol=1e-6, atol=1e-8)
    num = (f(p.beta, p.first_cut + eps, p.log_gaps) - f(p.beta, p.first_cut - eps, p.log_gaps)) / (2 * eps)
    assert np.isclose(gf, num, rtol=1e-6, atol=1e-8)
    for i in range(L - 2):
        e = np.zeros(L - 2); e[i] = eps
        num = (f(p.beta, p.first_cut, p.log_gaps + e) - f(p.beta, p.first_cut, p.log_gaps - e)) / (2 * eps)
        assert np.isclose(gg[i], num, rtol=1e-6, atol=1e-8)


def test_cardinality_potential():
    p = ModelParams([0.0], 0.0, [0.0], np.zeros((3, 3)), card_weight=0.7)
    assert is_impossible(cardinality_potential(p, [1, 2, 1], 3))
    assert is_impossible(cardinality_potential(p, [1, 3, 1], 2))
    assert np.isclose(cardinality_potential(p, [2, 1, 2], 2), 1.4)


@pytest.mark.parametrize("L,T", [(2, 3), (3, 3), (3, 4)])
def test_augmented_chain_reproduces_original_energy(L, T):
    """Every constraint-satisfying assignment has exactly one admissible flag
    path whose score equals the original energy; every other assignment has
    none."""
    rng = np.random.default_rng(L * 10 + T)
    p = random_params(rng, L, 2)
    bag = Bag("x", rng.normal(size=(T, 2)), 1)
    for y in range(1, L + 1):
        for h in itertools.product(range(1, L + 1), repeat=T):
            scores = []
            for z in itertools.product((0, 1), repeat=T):
                s = sum(augmented_node(p, bag.instances[t], (h[t], z[t]), t + 1, T, y) for t in range(T))
                s += sum(augmented_edge(p, (h[t], z[t]), (h[t + 1], z[t + 1]), y) for t in range(T - 1))
                if np.isfinite(s):
                    scores.append(s)
            if max(h) == y:
                assert len(scores) == 1
                assert np.isclose(scores[0], total_energy(p, bag, np.array(h), y), atol=1e-12)
            else:
                assert scores == []
                assert is_impossible(total_energy(p, bag, np.array(h), y))


@given(st.integers(2, 5), st.integers(1, 6), st.integers(0, 10_000))
def test_tables_match_scalar_potentials(L, T, seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, L, 2)
    X = rng.normal(size=(T, 2))
    y = int(rng.integers(1, L + 1))
    node = augmented_node_table(node_log_potentials(p, X), p.card_weight, y)
    edge = augmented_edge_table(p.transition, y)
    states = augmented_states(L)
    for s, st_ in enumerate(states):
        assert st_ == (s % L + 1, s // L)
        for t in range(T):
            a = augmented_node(p, X[t], st_, t + 1, T, y)
            assert (is_impossible(a) and is_impossible(node[t, s])) or np.isclose(a, node[t, s])
        for r, st2 in enumerate(states):
            a = augmented_edge(p, st_, st2, y)
            assert (is_impossible(a) and is_impossible(edge[s, r])) or a == edge[s, r]

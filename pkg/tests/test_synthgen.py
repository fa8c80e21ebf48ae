import json

import numpy as np
import pytest

from midorf.io import bag_to_record
from midorf.synthgen import (
    SynthConfig,
    generate_dataset,
    generate_suite,
    sample_states,
    sample_transition,
    stationary_distribution,
    transition_concentrations,
)

SMALL = SynthConfig(num_datasets=3, n_train=20, n_test=10, n_val=5, length_range=(10, 20))


def serialized(ds):
    return json.dumps([bag_to_record(b) for b in ds.bags], sort_keys=True)


def test_bags_satisfy_max_constraint():
    for split in generate_dataset(SMALL, 0)[:3]:
        for b in split.bags:
            assert b.label == b.instance_labels.max()
            assert SMALL.length_range[0] <= b.length <= SMALL.length_range[1]
            assert b.instances.shape == (b.length, SMALL.feature_dim)


def test_split_sizes_and_default_scale():
    cfg = SynthConfig()
    assert (cfg.n_train, cfg.n_test, cfg.n_val, cfg.num_levels, cfg.feature_dim) == (100, 150, 50, 6, 10)
    train, test, val, _ = generate_dataset(SMALL, 1)
    assert (len(train), len(test), len(val)) == (20, 10, 5)


def test_mean_length():
    cfg = SynthConfig(n_train=1000, n_test=1, n_val=1, feature_dim=2, pool_size=200)
    train = generate_dataset(cfg, 0)[0]
    assert 61 <= np.mean([b.length for b in train.bags]) <= 64


def test_generation_is_deterministic():
    a = generate_dataset(SMALL, 2)
    b = generate_dataset(SMALL, 2)
    for x, y in zip(a[:3], b[:3]):
        assert serialized(x) == serialized(y)
    np.testing.assert_array_equal(a[3].beta, b[3].beta)


def test_datasets_differ_by_index_and_seed():
    suite = generate_suite(SMALL)
    assert len(suite) == SMALL.num_datasets
    assert not np.allclose(suite[0][3].beta, suite[1][3].beta)
    assert not np.allclose(suite[0][3].transition, suite[1][3].transition)
    other = generate_dataset(SynthConfig(**{**SMALL.to_dict(), "seed": 1}), 0)
    assert not np.allclose(other[3].beta, suite[0][3].beta)


@pytest.mark.parametrize("conc", [(1.0, 1.0, 1.0), (30.0, 1.0, 0.05)])
def test_transitions_are_row_stochastic(conc):
    cfg = SynthConfig(stay_concentration=conc[0], neighbour_concentration=conc[1],
                      far_concentration=conc[2])
    P = sample_transition(np.random.default_rng(0), cfg)
    assert np.all(P >= 0)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


def test_flat_concentrations_give_dirichlet_one_rows():
    cfg = SynthConfig(stay_concentration=1.0, neighbour_concentration=1.0, far_concentration=1.0)
    assert np.all(transition_concentrations(cfg) == 1.0)


def test_sampler_reaches_stationary_distribution():
    P = sample_transition(np.random.default_rng(3), SynthConfig(num_levels=4))
    h = sample_states(np.random.default_rng(4), P, 100_000)
    freq = np.bincount(h - 1, minlength=4) / h.size
    pi = stationary_distribution(P)
    np.testing.assert_allclose(pi @ P, pi, atol=1e-12)
    assert np.sum(freq * np.log(freq / pi)) < 0.05


def test_noise_free_levels_are_recoverable_from_features():
    cfg = SynthConfig(n_train=40, n_test=1, n_val=1, noise_sigma=0.0)
    train, _, _, truth = generate_dataset(cfg, 0)
    X = np.concatenate([b.instances for b in train.bags])
    h = np.concatenate([b.instance_labels for b in train.bags])
    assert np.mean(np.argmax(truth.level_probs(X), axis=1) + 1 == h) > 0.95


def test_every_level_is_used():
    train = generate_dataset(SynthConfig(n_test=1, n_val=1), 0)[0]
    h = np.concatenate([b.instance_labels for b in train.bags])
    assert set(np.unique(h)) == set(range(1, 7))
    assert len(np.unique(train.labels)) >= 2


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(length_range=(5, 2))
    with pytest.raises(ValueError):
        SynthConfig(num_levels=1)
    with pytest.raises(ValueError):
        SynthConfig.from_dict({"bogus": 1})
    assert SynthConfig.from_dict(SMALL.to_dict()) == SMALL

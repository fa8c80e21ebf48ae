import numpy as np
import pytest

from midorf.core import Bag, ModelParams, make_dataset
from midorf.inference import oracle_enumerate
from midorf.learning import (
    ChainSpec,
    TrainConfig,
    blocks_to_params,
    chain_objective,
    fit,
    fit_chain,
    gradient,
    make_batch,
    negative_log_likelihood,
    params_to_blocks,
    select_alpha,
)
from midorf.metrics import evaluate
from midorf.models import CHAIN_METHODS, fit_midorf_model, midorf_model, predict_dataset
from midorf.potentials import logsumexp
from midorf.synthgen import SynthConfig, generate_dataset

from conftest import random_dataset, random_params

CHAIN_SPECS = [(node, structure) for node, structure in CHAIN_METHODS.values()]


def random_blocks(spec, rng, scale=0.7):
    blocks = spec.initial(int(rng.integers(1 << 30)))
    for name, shape in spec.layout:
        if name == "first_cut":
            blocks[name] = float(rng.normal(-0.3, 0.3))
        elif name == "log_gaps":
            blocks[name] = rng.normal(0.0, 0.3, shape)
        else:
            v = rng.normal(0.0, scale, shape)
            blocks[name] = float(v) if shape == () else v
    return blocks


def finite_difference_errors(spec, blocks, batch, alpha, step=1e-5):
    """Relative error of every analytic partial against a central difference."""
    _, g = chain_objective(spec, blocks, batch, alpha)
    g = spec.pack(g)
    x = spec.pack(blocks)
    num = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        fp = chain_objective(spec, spec.unpack(x + e), batch, alpha, with_grad=False)[0]
        fm = chain_objective(spec, spec.unpack(x - e), batch, alpha, with_grad=False)[0]
        num[i] = (fp - fm) / (2 * step)
    return np.abs(g - num) / np.maximum(np.abs(num), 1e-3)


@pytest.mark.parametrize("node,structure", CHAIN_SPECS)
@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences(node, structure, seed):
    rng = np.random.default_rng(100 + seed)
    L = int(rng.integers(2, 4))
    d = int(rng.integers(1, 5))
    ds = random_dataset(rng, 4, L, d, (1, 6))
    spec = ChainSpec(node, structure, L, d)
    errs = finite_difference_errors(spec, random_blocks(spec, rng), make_batch(ds), alpha=0.3)
    assert errs.max() <= 1e-4


def test_hand_computed_nll():
    # one frame, L=2, beta=1, b1=0, x=0.5, label 2: NLL = -log Φ(0.5)
    p = ModelParams([1.0], 0.0, [], np.zeros((2, 2)))
    ds = make_dataset([Bag("a", [[0.5]], 2)], 2, 1)
    assert np.isclose(negative_log_likelihood(p, ds, 0.0), 0.368946415288656, rtol=1e-12)


def test_regularizer_is_linear_in_alpha(rng):
    p = random_params(rng, 3, 2)
    ds = random_dataset(rng, 5, 3, 2)
    f0 = negative_log_likelihood(p, ds, 0.0)
    f1 = negative_log_likelihood(p, ds, 0.5)
    f2 = negative_log_likelihood(p, ds, 1.0)
    penalty = float(p.beta @ p.beta + np.sum(p.transition ** 2))
    assert np.isclose(f1 - f0, 0.5 * penalty, rtol=1e-10)
    assert np.isclose(f2 - f0, 2.0 * (f1 - f0), rtol=1e-10)


def test_symmetric_problem_has_only_regularizer_gradient():
    # x=0 hides beta; cut at 0 makes both single-frame bags equally likely,
    # so clamped and free expectations cancel
    W = np.array([[0.3, -0.2], [0.1, 0.4]])
    p = ModelParams([0.7], 0.0, [], W, card_weight=0.0)
    ds = make_dataset([Bag("a", [[0.0]], 1), Bag("b", [[0.0]], 2)], 2, 1)
    alpha = 0.25
    expected = np.concatenate([2 * alpha * p.beta, [0.0], 2 * alpha * W.ravel(), [0.0]])
    np.testing.assert_allclose(gradient(p, ds, alpha), expected, atol=1e-12)


def test_cardinality_gradient_matches_oracle_counts(rng):
    L = 3
    p = random_params(rng, L, 2)
    ds = random_dataset(rng, 3, L, 2, (1, 5))
    expected = 0.0
    for bag in ds.bags:
        logs, counts = [], []
        for y in range(1, L + 1):
            lz, m = oracle_enumerate(p, bag, y)
            logs.append(lz)
            counts.append(m.node[:, y - 1].sum())
        post = np.exp(np.array(logs) - logsumexp(np.array(logs)))
        expected -= counts[bag.label - 1] - post @ np.array(counts)
    assert np.isclose(gradient(p, ds, 0.0)[-1], expected, atol=1e-10)


def test_gradient_is_sum_of_bag_gradients(rng):
    L, d, alpha = 3, 2, 0.4
    p = random_params(rng, L, d)
    ds = random_dataset(rng, 5, L, d)
    total = sum(gradient(p, make_dataset([b], L, d), 0.0) for b in ds.bags)
    reg = np.zeros(p.size)
    reg[:d] = 2 * alpha * p.beta
    reg[d + 1 + (L - 2):-1] = 2 * alpha * p.transition.ravel()
    np.testing.assert_allclose(gradient(p, ds, alpha), total + reg, atol=1e-10)


def test_training_never_reads_instance_labels(rng):
    ds = random_dataset(rng, 6, 3, 2)
    poisoned = make_dataset(
        [Bag(b.id, b.instances, b.label, np.full(b.length, b.label)) for b in ds.bags], 3, 2)
    cfg = TrainConfig(alpha=0.1, max_iterations=30)
    a, _ = fit(ds, cfg)
    b, _ = fit(poisoned, cfg)
    assert a == b


def test_zero_iterations_returns_initialization(rng):
    ds = random_dataset(rng, 4, 3, 2)
    p, trace = fit(ds, TrainConfig(max_iterations=0, seed=7))
    assert p == ModelParams.initial(3, 2, seed=7)
    assert trace.iterations == 0


def test_objective_never_increases(rng):
    ds = random_dataset(rng, 10, 4, 3, (2, 8))
    for node, structure in CHAIN_SPECS:
        spec = ChainSpec(node, structure, 4, 3)
        _, trace = fit_chain(spec, ds, TrainConfig(alpha=0.1, max_iterations=40))
        assert np.all(np.diff(trace.objective) <= 1e-9)
        assert len(trace.objective) == len(trace.gradient_norm) == len(trace.wall_time)


def test_warm_start_is_used(rng):
    ds = random_dataset(rng, 6, 3, 2)
    cfg = TrainConfig(alpha=0.1, max_iterations=50)
    first = fit_midorf_model(ds, cfg)
    again = fit_midorf_model(ds, TrainConfig(alpha=0.1, max_iterations=0), first)
    assert blocks_to_params(again.params) == blocks_to_params(first.params)


def test_select_alpha_single_value_grid(rng):
    train = random_dataset(rng, 8, 3, 2)
    val = random_dataset(rng, 6, 3, 2)
    alpha, model = select_alpha(train, val, TrainConfig(alpha_grid=(0.3,), max_iterations=20))
    assert alpha == 0.3
    assert model.train_meta["alpha"] == 0.3


def test_select_alpha_is_deterministic(rng):
    train = random_dataset(rng, 8, 3, 2)
    val = random_dataset(rng, 6, 3, 2)
    cfg = TrainConfig(alpha_grid=(0.01, 1.0), max_iterations=20)
    a1, m1 = select_alpha(train, val, cfg)
    a2, m2 = select_alpha(train, val, cfg)
    assert a1 == a2
    assert m1.midorf_params() == m2.midorf_params()


def test_select_alpha_rejects_empty_grid(rng):
    ds = random_dataset(rng, 4, 3, 2)
    with pytest.raises(ValueError):
        select_alpha(ds, ds, TrainConfig(alpha_grid=()))


def test_params_block_round_trip(rng):
    p = random_params(rng, 4, 3)
    assert blocks_to_params(params_to_blocks(p)) == p
    assert midorf_model(p).midorf_params() == p


@pytest.mark.slow
def test_fit_recovers_frame_levels_on_synthetic_data():
    cfg = SynthConfig(n_train=100, n_test=60, n_val=10, length_range=(30, 40))
    train, test, _, _ = generate_dataset(cfg, 0)
    p, _ = fit(train, TrainConfig(alpha=1.0))
    report = evaluate(predict_dataset(midorf_model(p), test), test)
    assert report.frame["icc"] >= 0.80

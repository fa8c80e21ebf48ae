"""Comparison methods sharing MI-DORF's train/predict surface.

* SIL-OR: static probit ordinal regression on instances that inherit their
  bag label; a bag is predicted as the maximum of its instance predictions.
* MI-OR: SIL-OR followed by alternating label correction (enforce
  ``max = bag label``) and refitting.
* MIR: linear instance scores whose log-sum-exp smooth maximum is
  regressed onto the bag label with a squared loss.
* MI-HCRF: MI-DORF with multinomial-logistic node potentials.
* HCRF / HCORF: latent chains with a per-step state/label compatibility
  table instead of the multi-instance constraint, with multinomial or
  ordinal node potentials respectively.
"""
from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from .core import Dataset, check_dataset, decode_cutpoints_from, encode_cutpoints, equal_mass_cutpoints
from .learning import ChainSpec, TrainConfig, fit_chain, lbfgs
from .models import CHAIN_METHODS, Model, fit_midorf_model, round_to_levels
from .potentials import ordinal_backprop, ordinal_log_probs

log = logging.getLogger(__name__)

MI_OR_MAX_ROUNDS = 50


# -- static ordinal regression ----------------------------------------------------------

def _ordinal_pack(b):
    return np.concatenate([b["beta"], [b["first_cut"]], b["log_gaps"]])


def _ordinal_unpack(v, d):
    return {"beta": v[:d], "first_cut": float(v[d]), "log_gaps": v[d + 1:]}


def ordinal_nll(blocks, X, labels, alpha):
    """Probit ordinal regression objective and gradient dict."""
    cuts = decode_cutpoints_from(blocks["first_cut"], blocks["log_gaps"])
    logp = ordinal_log_probs(blocks["beta"], cuts, X)
    rows = np.arange(len(labels))
    value = -float(logp[rows, labels - 1].sum()) + alpha * float(blocks["beta"] @ blocks["beta"])
    G = np.zeros_like(logp)
    G[rows, labels - 1] = -1.0
    gb, gf, gg = ordinal_backprop(blocks["beta"], blocks["first_cut"], blocks["log_gaps"], X, G)
    return value, {"beta": gb + 2 * alpha * blocks["beta"], "first_cut": gf, "log_gaps": gg}


def fit_ordinal_regression(X, labels, num_levels, config: TrainConfig, init=None):
    X = np.asarray(X, float)
    labels = np.asarray(labels, int)
    d = X.shape[1]
    if init is None:
        rng = np.random.default_rng(config.seed)
        first, gaps = encode_cutpoints(equal_mass_cutpoints(num_levels))
        init = {"beta": rng.normal(0.0, 0.01, d), "first_cut": first, "log_gaps": gaps}

    def fun(v):
        f, g = ordinal_nll(_ordinal_unpack(v, d), X, labels, config.alpha)
        return f, _ordinal_pack(g)

    v, trace = lbfgs(fun, _ordinal_pack(init), config.max_iterations, config.gradient_tolerance)
    return _ordinal_unpack(v, d), trace


def predict_ordinal(blocks, X) -> np.ndarray:
    cuts = decode_cutpoints_from(blocks["first_cut"], blocks["log_gaps"])
    return np.argmax(ordinal_log_probs(blocks["beta"], cuts, X), axis=1) + 1


def _stack(dataset: Dataset):
    X = np.concatenate([b.instances for b in dataset.bags])
    owner = np.concatenate([np.full(b.length, n) for n, b in enumerate(dataset.bags)])
    return X, owner


def _init_params(init: Optional[Model]):
    return None if init is None else init.params


def train_sil_or(dataset: Dataset, config: TrainConfig = TrainConfig(),
                 init: Optional[Model] = None) -> Model:
    ds = check_dataset(dataset).training_view()
    X, owner = _stack(ds)
    labels = ds.labels[owner]
    blocks, trace = fit_ordinal_regression(X, labels, ds.scale.num_levels, config,
                                           init=_init_params(init))
    return Model("sil-or", ds.scale.num_levels, ds.feature_dim, blocks,
                 {"seed": config.seed, "alpha": config.alpha, "iterations": trace.iterations,
                  "converged": trace.converged}, trace)


def mi_or_correct(predicted, bag_label: int) -> np.ndarray:
    """Make instance labels consistent with ``max = bag_label``.

    Predictions above the bag label are lowered to it; if every prediction
    is below it, the instances holding the maximum are raised to it.
    """
    h = np.minimum(np.asarray(predicted, int), bag_label)
    if h.max() < bag_label:
        h = np.where(h == h.max(), bag_label, h)
    return h


def train_mi_or(dataset: Dataset, config: TrainConfig = TrainConfig(),
                init: Optional[Model] = None, max_rounds: int = MI_OR_MAX_ROUNDS) -> Model:
    ds = check_dataset(dataset).training_view()
    L = ds.scale.num_levels
    X, owner = _stack(ds)
    bag_labels = ds.labels
    labels = bag_labels[owner]
    blocks, trace = fit_ordinal_regression(X, labels, L, config, init=_init_params(init))
    rounds, converged = 0, False
    for rounds in range(1, max_rounds + 1):
        pred = predict_ordinal(blocks, X)
        new = np.empty_like(labels)
        for n, y in enumerate(bag_labels):
            sel = owner == n
            new[sel] = mi_or_correct(pred[sel], y)
        if np.array_equal(new, labels):
            converged = True
            break
        labels = new
        blocks, trace = fit_ordinal_regression(X, labels, L, config, init=blocks)
    if not converged:
        log.warning("MI-OR label correction did not settle in %d rounds", max_rounds)
    return Model("mi-or", L, ds.feature_dim, blocks,
                 {"seed": config.seed, "alpha": config.alpha, "iterations": trace.iterations,
                  "rounds": rounds, "converged": converged}, trace)


# -- multi-instance regression -------------------------------------------------------------

def mir_objective(coef, intercept, X, lengths, labels, alpha, gamma=1.0):
    """Squared error between the smooth bag maximum and the bag label.

    ``X`` is padded ``(N, Tmax, d)``. Returns ``(value, g_coef, g_intercept)``.
    """
    s = X @ coef + intercept
    valid = np.arange(X.shape[1])[None, :] < lengths[:, None]
    gs = np.where(valid, gamma * s, -np.inf)
    top = gs.max(axis=1, keepdims=True)
    e = np.exp(gs - top)
    Z = e.sum(axis=1, keepdims=True)
    m = (np.log(Z[:, 0]) + top[:, 0]) / gamma
    soft = e / Z
    r = m - labels
    value = float(r @ r) + alpha * float(coef @ coef)
    w = 2.0 * r[:, None] * soft  # d value / d s
    g_coef = np.einsum("nt,ntd->d", w, X) + 2.0 * alpha * coef
    return value, g_coef, float(w.sum())


def train_mir(dataset: Dataset, config: TrainConfig = TrainConfig(),
              init: Optional[Model] = None, gamma: float = 1.0) -> Model:
    from .learning import make_batch

    ds = check_dataset(dataset).training_view()
    batch = make_batch(ds)
    d = ds.feature_dim
    labels = batch.labels.astype(float)

    def fun(v):
        f, gc, gi = mir_objective(v[:d], v[d], batch.X, batch.lengths, labels, config.alpha, gamma)
        return f, np.concatenate([gc, [gi]])

    x0 = np.zeros(d + 1) if init is None else np.append(init.params["coef"], init.params["intercept"])
    v, trace = lbfgs(fun, x0, config.max_iterations, config.gradient_tolerance)
    return Model("mir", ds.scale.num_levels, d,
                 {"coef": v[:d], "intercept": float(v[d]), "gamma": float(gamma)},
                 {"seed": config.seed, "alpha": config.alpha, "iterations": trace.iterations,
                  "converged": trace.converged}, trace)


def ridge_closed_form(X, y, alpha):
    """Ridge regression with an unpenalized intercept, for reference."""
    X = np.asarray(X, float)
    A = np.column_stack([X, np.ones(len(X))])
    P = alpha * np.eye(A.shape[1])
    P[-1, -1] = 0.0
    sol = np.linalg.solve(A.T @ A + P, A.T @ np.asarray(y, float))
    return sol[:-1], float(sol[-1])


# -- latent chain baselines ------------------------------------------------------------------

def _train_chain(method: str, dataset: Dataset, config: TrainConfig,
                 init: Optional[Model] = None) -> Model:
    node, structure = CHAIN_METHODS[method]
    spec = ChainSpec(node, structure, dataset.scale.num_levels, dataset.feature_dim)
    blocks, trace = fit_chain(spec, dataset, config, init=_init_params(init))
    return Model(method, spec.num_levels, spec.feature_dim, blocks,
                 {"seed": config.seed, "alpha": config.alpha, "iterations": trace.iterations,
                  "converged": trace.converged}, trace)


def train_mi_hcrf(dataset: Dataset, config: TrainConfig = TrainConfig(),
                 init: Optional[Model] = None) -> Model:
    return _train_chain("mi-hcrf", dataset, config, init)


def train_hcrf(dataset: Dataset, config: TrainConfig = TrainConfig(),
              init: Optional[Model] = None) -> Model:
    return _train_chain("hcrf", dataset, config, init)


def train_hcorf(dataset: Dataset, config: TrainConfig = TrainConfig(),
               init: Optional[Model] = None) -> Model:
    return _train_chain("hcorf", dataset, config, init)


def train_midorf(dataset: Dataset, config: TrainConfig = TrainConfig(),
                 init: Optional[Model] = None) -> Model:
    return fit_midorf_model(check_dataset(dataset), config, init)


TRAINERS = {
    "midorf": train_midorf,
    "sil-or": train_sil_or,
    "mi-or": train_mi_or,
    "mir": train_mir,
    "mi-hcrf": train_mi_hcrf,
    "hcrf": train_hcrf,
    "hcorf": train_hcorf,
}


def train(method: str, dataset: Dataset, config: TrainConfig = TrainConfig(),
          init: Optional[Model] = None) -> Model:
    try:
        trainer = TRAINERS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(TRAINERS)}") from None
    return trainer(dataset, config, init)


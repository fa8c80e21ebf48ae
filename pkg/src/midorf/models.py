"""Trained-model container and batched prediction for every method."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Bag, Dataset, ModelParams, decode_cutpoints_from
from .learning import (
    ChainSpec,
    TrainConfig,
    blocks_to_params,
    chain_statistics,
    fit_chain,
    TrainTrace,
    make_batch,
    midorf_spec,
    params_to_blocks,
)
from .potentials import logsumexp, ordinal_log_probs

#: CLI method name -> (node family, structure) for the latent chain models
CHAIN_METHODS = {
    "midorf": ("ordinal", "mi"),
    "mi-hcrf": ("multinomial", "mi"),
    "hcrf": ("multinomial", "hcrf"),
    "hcorf": ("ordinal", "hcrf"),
}
STATIC_ORDINAL_METHODS = ("sil-or", "mi-or")
METHODS = ("midorf", "sil-or", "mi-or", "mir", "mi-hcrf", "hcrf", "hcorf")
DISPLAY_NAMES = {"midorf": "MI-DORF", "sil-or": "SIL-OR", "mi-or": "MI-OR", "mir": "MIR",
                 "mi-hcrf": "MI-HCRF", "hcrf": "HCRF", "hcorf": "HCORF"}


@dataclass
class Prediction:
    id: str
    bag_pred: int
    frame_preds: np.ndarray
    bag_posterior: Optional[np.ndarray] = None


@dataclass
class Model:
    """A trained model of any supported method.

    ``params`` maps block names to arrays (or floats); its keys depend on
    ``method``.
    """

    method: str
    num_levels: int
    feature_dim: int
    params: dict
    train_meta: dict = field(default_factory=dict)
    trace: Optional[TrainTrace] = field(default=None, repr=False, compare=False)

    @property
    def kind(self) -> str:
        return self.method

    @property
    def probabilistic(self) -> bool:
        return self.method in CHAIN_METHODS

    @property
    def chain_spec(self) -> ChainSpec:
        node, structure = CHAIN_METHODS[self.method]
        return ChainSpec(node, structure, self.num_levels, self.feature_dim)

    def midorf_params(self) -> ModelParams:
        if self.method != "midorf":
            raise TypeError(f"{self.method} model has no MI-DORF parameters")
        return blocks_to_params(self.params)

    def predict(self, bag: Bag) -> Prediction:
        ds = Dataset((bag,), _scale(self.num_levels), self.feature_dim)
        return predict_dataset(self, ds)[0]


def _scale(L):
    from .core import OrdinalScale
    return OrdinalScale(L)


def midorf_model(params: ModelParams, train_meta: Optional[dict] = None) -> Model:
    return Model("midorf", params.num_levels, params.feature_dim, params_to_blocks(params),
                 dict(train_meta or {}))


def fit_midorf_model(dataset: Dataset, config: TrainConfig, init: Optional[Model] = None) -> Model:
    spec = midorf_spec(dataset.scale.num_levels, dataset.feature_dim)
    blocks, trace = fit_chain(spec, dataset, config, init=None if init is None else init.params)
    return Model("midorf", spec.num_levels, spec.feature_dim, blocks,
                 {"seed": config.seed, "alpha": config.alpha, "iterations": trace.iterations,
                  "converged": trace.converged}, trace)


def round_to_levels(values, num_levels: int) -> np.ndarray:
    """Half-up rounding clamped to ``1..L``."""
    return np.clip(np.floor(np.asarray(values, float) + 0.5), 1, num_levels).astype(int)


def smooth_max(scores, gamma: float = 1.0, axis=-1):
    """``(1/gamma) log sum exp(gamma * s)``, an upper bound on ``max(s)``."""
    return logsumexp(gamma * np.asarray(scores, float), axis=axis) / gamma


def predict_dataset(model: Model, dataset: Dataset, mix_labels: bool = False) -> list:
    """Predictions for every bag of ``dataset``, in order."""
    if dataset.feature_dim != model.feature_dim:
        raise ValueError(f"model expects dimension {model.feature_dim}, data has {dataset.feature_dim}")
    if dataset.scale.num_levels != model.num_levels:
        raise ValueError(f"model has {model.num_levels} levels, data has {dataset.scale.num_levels}")
    bags = dataset.bags
    if not bags:
        return []
    L = model.num_levels
    batch = make_batch(dataset, with_labels=False)
    out = []
    if model.method in CHAIN_METHODS:
        _, (log_z, node, _) = chain_statistics(model.chain_spec, model.params, batch)
        post = np.exp(log_z - logsumexp(log_z, axis=1)[:, None])
        y_hat = np.argmax(post, axis=1)
        for n, bag in enumerate(bags):
            T = bag.length
            if mix_labels:
                marg = np.tensordot(post[n], node[n, :, :T], axes=(0, 0))
            else:
                marg = node[n, y_hat[n], :T]
            out.append(Prediction(bag.id, int(y_hat[n]) + 1, np.argmax(marg, axis=1) + 1, post[n]))
    elif model.method in STATIC_ORDINAL_METHODS:
        p = model.params
        cuts = decode_cutpoints_from(p["first_cut"], p["log_gaps"])
        for bag in bags:
            frames = np.argmax(ordinal_log_probs(p["beta"], cuts, bag.instances), axis=1) + 1
            out.append(Prediction(bag.id, int(frames.max()), frames))
    elif model.method == "mir":
        p = model.params
        gamma = float(p.get("gamma", 1.0))
        for bag in bags:
            s = bag.instances @ p["coef"] + p["intercept"]
            m = float(smooth_max(s, gamma))
            out.append(Prediction(bag.id, int(round_to_levels(m, L)), round_to_levels(s, L)))
    else:
        raise ValueError(f"unknown method {model.method!r}")
    return out

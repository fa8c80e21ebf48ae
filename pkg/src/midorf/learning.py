"""Regularized maximum-likelihood training of latent chain models.

The objective for one bag is ``-log P(y | X)``, where ``P(y | X)`` is the
ratio of the label-``y`` partition function to the sum over labels. Its
gradient is the difference between expected sufficient statistics under
the label-clamped and the free posterior, so one forward-backward pass
per (bag, label) yields the full gradient.

Two node families and two label couplings share this machinery:

* node ``"ordinal"``: probit level probabilities (MI-DORF, HCORF, SIL/MI-OR)
* node ``"multinomial"``: log-softmax of per-level projections (MI-HCRF, HCRF)
* structure ``"mi"``: max-equals-label constraint with cardinality reward
* structure ``"hcrf"``: per-step state/label compatibility table
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize as _scipy_minimize
from scipy.special import log_softmax

from .core import (
    Dataset,
    ModelParams,
    check_dataset,
    decode_cutpoints_from,
    encode_cutpoints,
    equal_mass_cutpoints,
)
from .inference import hcrf_statistics, mi_statistics
from .potentials import logsumexp, ordinal_backprop, ordinal_log_probs

log = logging.getLogger(__name__)

DEFAULT_ALPHA_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)


class NumericalError(RuntimeError):
    """Non-finite objective or gradient."""


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    max_iterations: int = 500
    gradient_tolerance: float = 1e-5
    seed: int = 0
    alpha_grid: tuple = DEFAULT_ALPHA_GRID
    restarts: int = 1

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        if self.gradient_tolerance <= 0:
            raise ValueError("gradient_tolerance must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        object.__setattr__(self, "alpha_grid", tuple(float(a) for a in self.alpha_grid))

    def with_alpha(self, alpha: float) -> "TrainConfig":
        from dataclasses import replace
        return replace(self, alpha=float(alpha))


@dataclass
class TrainTrace:
    objective: list = field(default_factory=list)
    gradient_norm: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    converged: bool = False
    message: str = ""
    evaluations: int = 0

    @property
    def iterations(self) -> int:
        return max(len(self.objective) - 1, 0)

    def to_dict(self) -> dict:
        return {"objective": self.objective, "gradient_norm": self.gradient_norm,
                "wall_time": self.wall_time, "converged": self.converged,
                "message": self.message, "evaluations": self.evaluations,
                "iterations": self.iterations}


# -- parameter layouts -------------------------------------------------------------

@dataclass(frozen=True)
class ChainSpec:
    """Shape of a latent chain model: node family plus label coupling."""

    node: str
    structure: str
    num_levels: int
    feature_dim: int

    def __post_init__(self):
        if self.node not in ("ordinal", "multinomial"):
            raise ValueError(f"unknown node family {self.node!r}")
        if self.structure not in ("mi", "hcrf"):
            raise ValueError(f"unknown structure {self.structure!r}")

    @property
    def layout(self) -> list:
        L, d = self.num_levels, self.feature_dim
        blocks = ([("beta", (d,)), ("first_cut", ()), ("log_gaps", (L - 2,))]
                  if self.node == "ordinal" else [("coef", (L, d))])
        blocks.append(("transition", (L, L)))
        blocks.append(("card_weight", ()) if self.structure == "mi" else ("compat", (L, L)))
        return blocks

    @property
    def regularized(self) -> tuple:
        names = ["beta" if self.node == "ordinal" else "coef", "transition"]
        if self.structure == "hcrf":
            names.append("compat")
        return tuple(names)

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.layout)

    def pack(self, blocks: dict) -> np.ndarray:
        return np.concatenate([np.asarray(blocks[n], float).reshape(-1) for n, _ in self.layout])

    def unpack(self, vec) -> dict:
        vec = np.asarray(vec, float)
        out, i = {}, 0
        for name, shape in self.layout:
            k = int(np.prod(shape))
            block = vec[i:i + k].reshape(shape)
            out[name] = float(block) if shape == () else block
            i += k
        return out

    def initial(self, seed=0) -> dict:
        L, d = self.num_levels, self.feature_dim
        rng = np.random.default_rng(seed)
        blocks = {}
        if self.node == "ordinal":
            first, gaps = encode_cutpoints(equal_mass_cutpoints(L))
            blocks.update(beta=rng.normal(0.0, 0.01, d), first_cut=first, log_gaps=gaps)
        else:
            blocks["coef"] = rng.normal(0.0, 0.01, (L, d))
        blocks["transition"] = np.zeros((L, L))
        if self.structure == "mi":
            blocks["card_weight"] = 0.0
        else:
            blocks["compat"] = np.zeros((L, L))
        return blocks


def midorf_spec(num_levels: int, feature_dim: int) -> ChainSpec:
    return ChainSpec("ordinal", "mi", num_levels, feature_dim)


def params_to_blocks(p: ModelParams) -> dict:
    return {"beta": np.array(p.beta), "first_cut": p.first_cut, "log_gaps": np.array(p.log_gaps),
            "transition": np.array(p.transition), "card_weight": p.card_weight}


def blocks_to_params(b: dict) -> ModelParams:
    return ModelParams(b["beta"], b["first_cut"], b["log_gaps"], b["transition"], b["card_weight"])


# -- node families -------------------------------------------------------------------

def node_scores(spec: ChainSpec, blocks: dict, X) -> np.ndarray:
    if spec.node == "ordinal":
        cuts = decode_cutpoints_from(blocks["first_cut"], blocks["log_gaps"])
        return ordinal_log_probs(blocks["beta"], cuts, X)
    return log_softmax(np.asarray(X, float) @ blocks["coef"].T, axis=-1)


def node_backprop(spec: ChainSpec, blocks: dict, X, G) -> dict:
    """Gradient of ``sum(G * node_scores(...))`` per node block."""
    if spec.node == "ordinal":
        gb, gf, gg = ordinal_backprop(blocks["beta"], blocks["first_cut"], blocks["log_gaps"], X, G)
        return {"beta": gb, "first_cut": gf, "log_gaps": gg}
    X = np.asarray(X, float)
    logp = log_softmax(X @ blocks["coef"].T, axis=-1)
    R = G - np.exp(logp) * G.sum(axis=-1, keepdims=True)
    lead = list(range(X.ndim - 1))
    return {"coef": np.tensordot(R, X, axes=(lead, lead))}


# -- batched data ----------------------------------------------------------------------

@dataclass(frozen=True)
class Batch:
    X: np.ndarray        # (N, Tmax, d), zero padded
    lengths: np.ndarray  # (N,)
    labels: np.ndarray   # (N,) levels 1..L, or None for unlabeled data

    @property
    def size(self) -> int:
        return self.X.shape[0]


def make_batch(dataset: Dataset, with_labels: bool = True) -> Batch:
    bags = dataset.bags
    lengths = np.array([b.length for b in bags], dtype=int)
    X = np.zeros((len(bags), int(lengths.max()), dataset.feature_dim))
    for n, b in enumerate(bags):
        X[n, : b.length] = b.instances
    labels = np.array([b.label for b in bags], dtype=int) if with_labels else None
    return Batch(X, lengths, labels)


def chain_statistics(spec: ChainSpec, blocks: dict, batch: Batch):
    """Node scores and per-label ``(log_z, node, pair_sum)`` for a batch."""
    scores = node_scores(spec, blocks, batch.X)
    if spec.structure == "mi":
        stats = mi_statistics(scores, batch.lengths, blocks["transition"], blocks["card_weight"])
    else:
        stats = hcrf_statistics(scores, batch.lengths, blocks["transition"], blocks["compat"])
    return scores, stats


def chain_objective(spec: ChainSpec, blocks: dict, batch: Batch, alpha: float,
                    with_grad: bool = True):
    """Negative conditional log-likelihood plus ridge penalty.

    Returns ``(value, grads)`` with ``grads`` a dict keyed like ``blocks``
    (``None`` when ``with_grad`` is false).
    """
    _, (log_z, node, pair_sum) = chain_statistics(spec, blocks, batch)
    N, Y = log_z.shape
    rows = np.arange(N)
    lse = logsumexp(log_z, axis=1)
    nll = -float(np.sum(log_z[rows, batch.labels - 1] - lse))
    reg = alpha * sum(float(np.sum(np.square(blocks[n]))) for n in spec.regularized)
    value = nll + reg
    if not np.isfinite(value):
        raise NumericalError(f"non-finite objective {value}")
    if not with_grad:
        return value, None

    # d(-log P)/d(score) = free expectation - clamped expectation
    weight = np.exp(log_z - lse[:, None])
    weight[rows, batch.labels - 1] -= 1.0
    G = np.einsum("ny,nytl->ntl", weight, node)
    grads = node_backprop(spec, blocks, batch.X, G)
    grads["transition"] = np.einsum("ny,nyij->ij", weight, pair_sum)
    occupancy = node.sum(axis=2)  # (N, Y, L): expected visits per level given each label
    if spec.structure == "mi":
        L = spec.num_levels
        grads["card_weight"] = float(np.einsum("ny,nyy->", weight, occupancy[:, :, :L]))
    else:
        grads["compat"] = np.einsum("ny,nyl->ly", weight, occupancy)
    for n in spec.regularized:
        grads[n] = grads[n] + 2.0 * alpha * blocks[n]
    for n, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in block {n!r}")
    return value, grads


# -- optimizer -------------------------------------------------------------------------

def lbfgs(fun: Callable, x0, max_iterations: int, gradient_tolerance: float):
    """Limited-memory BFGS with a Wolfe line search.

    ``fun(x) -> (value, gradient)``. Returns ``(x_best, TrainTrace)``; the
    trace holds the objective at the start and after each accepted step.
    """
    x0 = np.asarray(x0, float)
    trace = TrainTrace()
    start = time.perf_counter()
    cache = {}

    def wrapped(x):
        trace.evaluations += 1
        f, g = fun(x)
        cache["last"] = (x.copy(), f, g)
        return f, g

    def record(x, f, g):
        trace.objective.append(float(f))
        trace.gradient_norm.append(float(np.max(np.abs(g))) if g.size else 0.0)
        trace.wall_time.append(time.perf_counter() - start)

    f0, g0 = wrapped(x0)
    record(x0, f0, g0)
    if max_iterations == 0:
        trace.converged = trace.gradient_norm[0] < gradient_tolerance
        trace.message = "max_iterations=0"
        return x0, trace
    if trace.gradient_norm[0] < gradient_tolerance:
        trace.converged = True
        trace.message = "initial point satisfies the gradient tolerance"
        return x0, trace

    best = {"x": x0, "f": f0}

    def callback(intermediate_result):
        x = intermediate_result.x
        cx, f, g = cache["last"]
        if not np.array_equal(cx, x):
            f, g = fun(x)
        record(x, f, g)
        if f <= best["f"]:
            best.update(x=x.copy(), f=f)

    res = _scipy_minimize(wrapped, x0, jac=True, method="L-BFGS-B", callback=callback,
                          options={"maxiter": max_iterations, "maxcor": 10,
                                   "gtol": gradient_tolerance, "ftol": 1e-10})
    if res.fun <= best["f"]:
        best.update(x=np.asarray(res.x, float), f=res.fun)
    trace.converged = bool(res.success)
    trace.message = str(res.message)
    return best["x"], trace


def fit_chain(spec: ChainSpec, dataset: Dataset, config: TrainConfig, init: Optional[dict] = None):
    """Fit any chain model; returns ``(blocks, trace)``.

    With ``config.restarts > 1`` extra runs start from fresh seeds and the
    run with the lowest final objective wins.
    """
    check_dataset(dataset)
    batch = make_batch(dataset.training_view())
    best = None
    for r in range(config.restarts):
        start = init if (init is not None and r == 0) else spec.initial(config.seed + r)

        def fun(x):
            f, g = chain_objective(spec, spec.unpack(x), batch, config.alpha)
            return f, spec.pack(g)

        x, trace = lbfgs(fun, spec.pack(start), config.max_iterations, config.gradient_tolerance)
        final = min(trace.objective)
        if best is None or final < best[2]:
            best = (x, trace, final)
    x, trace, _ = best
    if not trace.converged:
        log.warning("optimizer stopped before convergence: %s", trace.message)
    return spec.unpack(x), trace


# -- MI-DORF entry points -----------------------------------------------------------

def negative_log_likelihood(params: ModelParams, dataset: Dataset, alpha: float) -> float:
    spec = midorf_spec(params.num_levels, params.feature_dim)
    batch = make_batch(check_dataset(dataset).training_view())
    return chain_objective(spec, params_to_blocks(params), batch, alpha, with_grad=False)[0]


def gradient(params: ModelParams, dataset: Dataset, alpha: float) -> np.ndarray:
    """Gradient of :func:`negative_log_likelihood`, ordered like
    :meth:`ModelParams.to_vector`."""
    spec = midorf_spec(params.num_levels, params.feature_dim)
    batch = make_batch(check_dataset(dataset).training_view())
    _, grads = chain_objective(spec, params_to_blocks(params), batch, alpha)
    return spec.pack(grads)


def fit(dataset: Dataset, config: TrainConfig = TrainConfig()):
    """Train MI-DORF; returns ``(ModelParams, TrainTrace)``."""
    spec = midorf_spec(dataset.scale.num_levels, dataset.feature_dim)
    blocks, trace = fit_chain(spec, dataset, config)
    return blocks_to_params(blocks), trace


def select_alpha(train: Dataset, validation: Dataset, config: TrainConfig = TrainConfig(),
                 trainer: Optional[Callable] = None, warm_start: bool = True):
    """Fit once per grid value and keep the one with the best validation
    sequence-level ICC (ties go to the larger alpha).

    ``trainer(dataset, config, init) -> model`` defaults to MI-DORF; the
    model must be usable with :func:`midorf.models.predict_dataset`.
    With ``warm_start`` the grid is visited from the strongest penalty down
    and each fit starts from the previous grid point's model.
    Returns ``(alpha, model)``.
    """
    from .metrics import MetricError, icc
    from .models import fit_midorf_model, predict_dataset

    trainer = trainer or fit_midorf_model
    if not config.alpha_grid:
        raise ValueError("alpha_grid is empty")
    check_dataset(validation)
    truth = validation.labels.astype(float)
    results, errors = [], []
    grid = sorted(config.alpha_grid, reverse=True) if warm_start else config.alpha_grid
    previous = None
    for alpha in grid:
        try:
            model = trainer(train, config.with_alpha(alpha), previous)
        except Exception as exc:  # noqa: BLE001 - recorded, grid continues
            log.warning("fit failed at alpha=%g: %s", alpha, exc)
            errors.append((alpha, exc))
            continue
        if warm_start:
            previous = model
        preds = predict_dataset(model, validation)
        try:
            score = icc(np.array([p.bag_pred for p in preds], float), truth)
        except MetricError:
            score = -np.inf
        log.info("alpha=%g validation ICC=%.4f", alpha, score)
        results.append((score, alpha, model))
    if not results:
        raise RuntimeError(f"every alpha in the grid failed: {errors}")
    score, alpha, model = max(results, key=lambda r: (r[0], r[1]))
    return alpha, model

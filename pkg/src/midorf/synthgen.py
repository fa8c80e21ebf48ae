"""Synthetic multi-instance ordinal sequences with known instance labels.

Each dataset draws its own transition matrix and ordinal-probit generator.
A pool of Gaussian feature vectors is scored by the generator; every
latent state of a Markov chain then picks a pool vector with probability
proportional to the generator's probability of that state, the vector is
perturbed with Gaussian noise, and the bag label is the maximum state.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import ndtr

from .core import Bag, Dataset, OrdinalScale

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthConfig:
    num_datasets: int = 10
    n_train: int = 100
    n_test: int = 150
    n_val: int = 50
    length_range: tuple = (50, 75)
    feature_dim: int = 10
    num_levels: int = 6
    noise_sigma: float = 0.25
    pool_size: int = 1000
    seed: int = 0
    # Dirichlet concentration of each transition row, by distance from the
    # current level: 0 (stay), 1 (neighbour), >1 (far). (1, 1, 1) gives
    # flat Dirichlet(1) rows.
    stay_concentration: float = 30.0
    neighbour_concentration: float = 1.0
    far_concentration: float = 0.05
    # probit noise of the generating regressor, in units of the projection
    # standard deviation
    generator_sigma: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "length_range", tuple(int(v) for v in self.length_range))
        lo, hi = self.length_range
        if not 1 <= lo <= hi:
            raise ValueError(f"length_range must satisfy 1 <= lo <= hi, got {self.length_range}")
        for name in ("num_datasets", "n_train", "n_test", "n_val", "feature_dim", "pool_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.num_levels < 2:
            raise ValueError("num_levels must be at least 2")
        if self.noise_sigma < 0 or self.generator_sigma <= 0:
            raise ValueError("noise_sigma must be >= 0 and generator_sigma > 0")
        if min(self.stay_concentration, self.neighbour_concentration, self.far_concentration) <= 0:
            raise ValueError("Dirichlet concentrations must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synthetic config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["length_range"] = list(self.length_range)
        return d


@dataclass(frozen=True)
class GeneratorTruth:
    transition: np.ndarray  # row-stochastic (L, L)
    beta: np.ndarray
    cutpoints: np.ndarray   # interior, (L-1,)
    sigma: float            # absolute probit noise of the generator
    pool: np.ndarray = field(repr=False)

    def level_probs(self, X) -> np.ndarray:
        """Generator ``p(level | x)`` for rows of ``X``, shape ``(n, L)``."""
        proj = np.asarray(X, float) @ self.beta
        cuts = np.concatenate([[-np.inf], self.cutpoints, [np.inf]])
        cdf = ndtr((cuts[None, :] - proj[:, None]) / self.sigma)
        return np.clip(np.diff(cdf, axis=1), 0.0, None)

    def to_dict(self) -> dict:
        return {"transition": self.transition.tolist(), "beta": self.beta.tolist(),
                "cutpoints": self.cutpoints.tolist(), "sigma": self.sigma}


def transition_concentrations(cfg: SynthConfig) -> np.ndarray:
    L = cfg.num_levels
    dist = np.abs(np.subtract.outer(np.arange(L), np.arange(L)))
    return np.select([dist == 0, dist == 1], [cfg.stay_concentration, cfg.neighbour_concentration],
                     cfg.far_concentration)


def sample_transition(rng, cfg: SynthConfig) -> np.ndarray:
    conc = transition_concentrations(cfg)
    P = np.stack([rng.dirichlet(row) for row in conc])
    return P / P.sum(axis=1, keepdims=True)


def sample_generator(rng, cfg: SynthConfig, max_attempts: int = 10) -> GeneratorTruth:
    L, d = cfg.num_levels, cfg.feature_dim
    transition = sample_transition(rng, cfg)
    pool = rng.standard_normal((cfg.pool_size, d))
    for _ in range(max_attempts):
        beta = rng.standard_normal(d)
        proj = pool @ beta
        cuts = np.quantile(proj, np.arange(1, L) / L)
        truth = GeneratorTruth(transition, beta, cuts, cfg.generator_sigma * proj.std(), pool)
        mass = truth.level_probs(pool).sum(axis=0)
        if np.all(mass > 0) and np.all(np.diff(cuts) > 0):
            return truth
        log.debug("degenerate generator cut-points, resampling")
    raise RuntimeError(f"could not place non-degenerate cut-points in {max_attempts} attempts")


def sample_states(rng, transition, T: int) -> np.ndarray:
    L = transition.shape[0]
    cdf = np.cumsum(transition, axis=1)
    u = rng.random(T)
    h = np.empty(T, dtype=int)
    h[0] = rng.integers(L)
    for t in range(1, T):
        h[t] = min(np.searchsorted(cdf[h[t - 1]], u[t], side="right"), L - 1)
    return h + 1


def sample_bag(rng, truth: GeneratorTruth, pool_cdf, cfg: SynthConfig, bag_id: str) -> Bag:
    lo, hi = cfg.length_range
    T = int(rng.integers(lo, hi + 1))
    h = sample_states(rng, truth.transition, T)
    u = rng.random(T)
    idx = np.array([min(np.searchsorted(pool_cdf[s - 1], v, side="right"), cfg.pool_size - 1)
                    for s, v in zip(h, u)], dtype=int)
    X = truth.pool[idx] + cfg.noise_sigma * rng.standard_normal((T, cfg.feature_dim))
    return Bag(bag_id, X, int(h.max()), h)


def generate_dataset(cfg: SynthConfig, dataset_index: int):
    """Return ``(train, test, val, truth)`` for dataset ``dataset_index``.

    The result depends only on ``(cfg, dataset_index)``.
    """
    rng = np.random.default_rng([cfg.seed, dataset_index])
    truth = sample_generator(rng, cfg)
    weights = truth.level_probs(truth.pool).T  # (L, pool)
    pool_cdf = np.cumsum(weights / weights.sum(axis=1, keepdims=True), axis=1)
    scale = OrdinalScale(cfg.num_levels)
    splits = []
    for name, n in (("train", cfg.n_train), ("test", cfg.n_test), ("val", cfg.n_val)):
        bags = [sample_bag(rng, truth, pool_cdf, cfg, f"d{dataset_index}-{name}-{k:04d}")
                for k in range(n)]
        splits.append(Dataset(tuple(bags), scale, cfg.feature_dim))
    return splits[0], splits[1], splits[2], truth


def generate_suite(cfg: SynthConfig) -> list:
    return [generate_dataset(cfg, i) for i in range(cfg.num_datasets)]


def stationary_distribution(transition) -> np.ndarray:
    P = np.asarray(transition, float)
    vals, vecs = np.linalg.eig(P.T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    return v / v.sum()

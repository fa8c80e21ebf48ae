"""Domain types: ordinal scales, bags, datasets and MI-DORF parameters.

Ordinal levels are the integers ``1..L`` everywhere inside the package.
The 0-based labels used on disk are converted in :mod:`midorf.io` only.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm


@dataclass(frozen=True)
class OrdinalScale:
    num_levels: int

    def __post_init__(self):
        if int(self.num_levels) < 2:
            raise ValueError(f"an ordinal scale needs at least 2 levels, got {self.num_levels}")

    @property
    def levels(self) -> np.ndarray:
        return np.arange(1, self.num_levels + 1)

    def contains(self, label) -> bool:
        return 1 <= int(label) <= self.num_levels


@dataclass(frozen=True, eq=False)
class Bag:
    """A temporal sequence of feature vectors sharing one ordinal label.

    ``instance_labels`` is evaluation ground truth. Training code only sees
    the view returned by :meth:`without_instance_labels`.
    """

    id: str
    instances: np.ndarray
    label: int
    instance_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        try:
            x = np.array(self.instances, dtype=float)
        except ValueError:
            # ragged rows; kept so validate_dataset can report them
            rows = list(self.instances)
            x = np.empty(len(rows), dtype=object)
            x[:] = [np.asarray(r, dtype=float) for r in rows]
        if x.ndim == 1 and x.dtype != object:
            x = x[None, :] if x.size else x.reshape(0, 0)
        x.setflags(write=False)
        object.__setattr__(self, "instances", x)
        object.__setattr__(self, "label", int(self.label))
        if self.instance_labels is not None:
            h = np.asarray(self.instance_labels, dtype=int).copy()
            h.setflags(write=False)
            object.__setattr__(self, "instance_labels", h)

    @property
    def length(self) -> int:
        return self.instances.shape[0]

    @property
    def dim(self) -> int:
        return self.instances.shape[1] if self.instances.ndim == 2 else -1

    def without_instance_labels(self) -> "Bag":
        if self.instance_labels is None:
            return self
        return replace(self, instance_labels=None)

    def __eq__(self, other):
        if not isinstance(other, Bag):
            return NotImplemented
        same_h = (self.instance_labels is None and other.instance_labels is None) or (
            self.instance_labels is not None
            and other.instance_labels is not None
            and np.array_equal(self.instance_labels, other.instance_labels)
        )
        return (
            self.id == other.id
            and self.label == other.label
            and self.instances.shape == other.instances.shape
            and np.array_equal(self.instances, other.instances)
            and same_h
        )

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    bags: tuple
    scale: OrdinalScale
    feature_dim: int

    def __post_init__(self):
        object.__setattr__(self, "bags", tuple(self.bags))

    def __len__(self):
        return len(self.bags)

    def __iter__(self):
        return iter(self.bags)

    @property
    def labels(self) -> np.ndarray:
        return np.array([b.label for b in self.bags], dtype=int)

    def training_view(self) -> "Dataset":
        """Copy of the dataset with every instance label removed."""
        return replace(self, bags=tuple(b.without_instance_labels() for b in self.bags))

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return replace(self, bags=tuple(self.bags[i] for i in indices))


@dataclass(frozen=True)
class Violation:
    bag_id: str
    kind: str  # "label_range" | "dimension" | "empty" | "instance_labels"
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def summary(self) -> str:
        return "\n".join(f"{v.bag_id}: [{v.kind}] {v.message}" for v in self.violations)


class DataValidationError(ValueError):
    """Raised by train/predict entry points on an invalid dataset."""

    def __init__(self, report: ValidationReport):
        self.report = report
        super().__init__(f"{len(report.violations)} dataset violation(s):\n{report.summary()}")


def validate_dataset(ds: Dataset) -> ValidationReport:
    out = []
    L = ds.scale.num_levels
    if len(ds.bags) == 0:
        out.append(Violation("<dataset>", "empty", "dataset has no bags"))
    for bag in ds.bags:
        x = bag.instances
        if x.shape[0] == 0:
            out.append(Violation(bag.id, "empty", "bag has no instances"))
        elif x.ndim != 2:
            dims = sorted({r.size for r in x})
            out.append(Violation(bag.id, "dimension", f"mixed instance dimensions {dims}"))
        elif x.shape[1] != ds.feature_dim:
            out.append(Violation(bag.id, "dimension",
                                 f"instances have dimension {x.shape[1]}, expected {ds.feature_dim}"))
        elif not np.all(np.isfinite(x)):
            out.append(Violation(bag.id, "dimension", "instances contain non-finite values"))
        if not ds.scale.contains(bag.label):
            out.append(Violation(bag.id, "label_range", f"bag label {bag.label} outside 1..{L}"))
        h = bag.instance_labels
        if h is not None:
            if h.ndim != 1 or len(h) != x.shape[0]:
                out.append(Violation(bag.id, "instance_labels",
                                     f"{h.size} instance labels for {x.shape[0]} instances"))
            elif len(h) and (h.min() < 1 or h.max() > L):
                out.append(Violation(bag.id, "label_range", f"instance labels outside 1..{L}"))
    return ValidationReport(tuple(out))


def check_dataset(ds: Dataset) -> Dataset:
    report = validate_dataset(ds)
    if not report.ok:
        raise DataValidationError(report)
    return ds


def make_dataset(bags, num_levels: int, feature_dim: Optional[int] = None) -> Dataset:
    bags = tuple(bags)
    if feature_dim is None:
        feature_dim = bags[0].dim if bags else 0
    return Dataset(bags, OrdinalScale(num_levels), feature_dim)


# -- parameters -----------------------------------------------------------------

def decode_cutpoints_from(first_cut: float, log_gaps) -> np.ndarray:
    gaps = np.exp(np.asarray(log_gaps, dtype=float))
    interior = float(first_cut) + np.concatenate([[0.0], np.cumsum(gaps)])
    return np.concatenate([[-np.inf], interior, [np.inf]])


def encode_cutpoints(cuts) -> tuple[float, np.ndarray]:
    """Inverse of the cut-point decoding.

    Accepts either the interior cut-points ``b_1..b_{L-1}`` or the full
    vector with the infinite sentinels.
    """
    c = np.asarray(cuts, dtype=float)
    c = c[np.isfinite(c)]
    d = np.diff(c)
    if np.any(d <= 0):
        raise ValueError("cut-points must be strictly increasing")
    return float(c[0]), np.log(d)


def equal_mass_cutpoints(num_levels: int) -> np.ndarray:
    """Interior cut-points splitting a standard normal into equal-mass bins."""
    return norm.ppf(np.arange(1, num_levels) / num_levels)


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Learnable MI-DORF parameters.

    The cut-points are stored as a free first cut plus log-gaps, so any
    finite setting decodes to strictly increasing cut-points. The probit
    scale ``sigma`` is fixed at 1.
    """

    beta: np.ndarray
    first_cut: float
    log_gaps: np.ndarray
    transition: np.ndarray
    card_weight: float = 0.0

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).reshape(-1)
        gaps = np.array(self.log_gaps, dtype=float).reshape(-1)
        W = np.array(self.transition, dtype=float)
        L = gaps.size + 2
        if W.shape != (L, L):
            raise ValueError(f"transition must be {L}x{L} for {L} levels, got {W.shape}")
        for a in (beta, gaps, W):
            a.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "log_gaps", gaps)
        object.__setattr__(self, "transition", W)
        object.__setattr__(self, "first_cut", float(self.first_cut))
        object.__setattr__(self, "card_weight", float(self.card_weight))

    sigma = 1.0

    @property
    def num_levels(self) -> int:
        return self.log_gaps.size + 2

    @property
    def feature_dim(self) -> int:
        return self.beta.size

    @property
    def cutpoints(self) -> np.ndarray:
        return decode_cutpoints(self)

    @property
    def size(self) -> int:
        L, d = self.num_levels, self.feature_dim
        return d + 1 + (L - 2) + L * L + 1

    def to_vector(self) -> np.ndarray:
        """Flatten as ``[beta, first_cut, log_gaps, W (row-major), w]``."""
        return np.concatenate([self.beta, [self.first_cut], self.log_gaps,
                               self.transition.ravel(), [self.card_weight]])

    @classmethod
    def from_vector(cls, vec, num_levels: int, feature_dim: int) -> "ModelParams":
        L, d = num_levels, feature_dim
        v = np.asarray(vec, dtype=float)
        if v.size != d + 1 + (L - 2) + L * L + 1:
            raise ValueError("parameter vector has the wrong size")
        i = 0
        beta = v[i:i + d]; i += d
        first = v[i]; i += 1
        gaps = v[i:i + L - 2]; i += L - 2
        W = v[i:i + L * L].reshape(L, L); i += L * L
        return cls(beta, first, gaps, W, v[i])

    @classmethod
    def initial(cls, num_levels: int, feature_dim: int, seed=0) -> "ModelParams":
        """Default starting point: tiny random projection, equal-mass cuts,
        neutral transitions and no cardinality reward."""
        rng = np.random.default_rng(seed)
        first, gaps = encode_cutpoints(equal_mass_cutpoints(num_levels))
        return cls(rng.normal(0.0, 0.01, feature_dim), first, gaps,
                   np.zeros((num_levels, num_levels)), 0.0)

    def replace(self, **kw) -> "ModelParams":
        return replace(self, **kw)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (self.beta.shape == other.beta.shape
                and self.log_gaps.shape == other.log_gaps.shape
                and np.array_equal(self.to_vector(), other.to_vector()))

    __hash__ = None


def decode_cutpoints(params: ModelParams) -> np.ndarray:
    """Return ``[-inf, b_1, ..., b_{L-1}, +inf]``."""
    return decode_cutpoints_from(params.first_cut, params.log_gaps)


@dataclass(frozen=True)
class LatentAssignment:
    states: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))

    def __len__(self):
        return len(self.states)

    def as_array(self) -> np.ndarray:
        return np.array(self.states, dtype=int)


def as_states(h) -> np.ndarray:
    if isinstance(h, LatentAssignment):
        return h.as_array()
    return np.asarray(h, dtype=int)

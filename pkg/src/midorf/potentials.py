"""Log-domain potentials of the MI-DORF energy and of its augmented chain.

Scores are compatibilities: the model uses ``P ∝ exp(+score)``. A
configuration that breaks the multi-instance ordinal constraint scores
:data:`IMPOSSIBLE`.

Augmented states pair a level ``h`` with a flag ``ζ`` that records
whether the prefix ``h_1..h_t`` already contains the bag label. They are
indexed ``s = ζ * L + (h - 1)``, i.e. the first ``L`` slots carry ``ζ=0``.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.special import log_ndtr

from .core import Bag, ModelParams, as_states, decode_cutpoints_from

#: Score of an inadmissible configuration. Reductions in this package skip
#: it explicitly (see :func:`logsumexp`), so it never meets ``-inf - -inf``.
IMPOSSIBLE = -np.inf

#: Probabilities below this are clamped before taking the log.
PROB_FLOOR = 1e-300
LOG_PROB_FLOOR = np.log(PROB_FLOOR)

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class AugmentedState(NamedTuple):
    level: int
    flag: int


def is_impossible(score) -> np.ndarray:
    return np.isneginf(score)


def logsumexp(a, axis=None, keepdims=False):
    """Log-sum-exp that treats an all-:data:`IMPOSSIBLE` slice as impossible."""
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    if not keepdims:
        out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    return out


def _log1mexp(a):
    """``log(1 - exp(a))`` for ``a <= 0``."""
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    near = a > -np.log(2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[near] = np.log(-np.expm1(a[near]))
        out[~near] = np.log1p(-np.exp(a[~near]))
    return out


def log_interval_prob(lo, hi):
    """``log(Φ(hi) - Φ(lo))`` for ``lo < hi``, accurate in both tails and
    floored at ``log(1e-300)``."""
    lo, hi = np.broadcast_arrays(np.asarray(lo, float), np.asarray(hi, float))
    upper = lo > 0
    # in the upper tail use Φ(-lo) - Φ(-hi) to avoid cancellation
    big = np.where(upper, log_ndtr(-lo), log_ndtr(hi))
    small = np.where(upper, log_ndtr(-hi), log_ndtr(lo))
    with np.errstate(invalid="ignore"):
        diff = small - big
    diff = np.where(np.isneginf(small), -np.inf, np.minimum(diff, 0.0))
    out = big + _log1mexp(diff)
    return np.maximum(out, LOG_PROB_FLOOR)


def ordinal_log_probs(beta, cuts, X) -> np.ndarray:
    """Probit level log-probabilities for every row of ``X``.

    ``cuts`` is the full ``[-inf, b_1, ..., b_{L-1}, inf]`` vector; the last
    axis of the result runs over levels ``1..L``.
    """
    proj = np.asarray(X, float) @ np.asarray(beta, float)
    z = cuts - proj[..., None]
    return log_interval_prob(z[..., :-1], z[..., 1:])


def node_log_potentials(params: ModelParams, X) -> np.ndarray:
    """Ordinal node scores for a ``(T, d)`` sequence, shape ``(T, L)``."""
    return ordinal_log_probs(params.beta, params.cutpoints, X)


def node_potential(params: ModelParams, x, level: int) -> float:
    L = params.num_levels
    if not 1 <= level <= L:
        raise ValueError(f"level {level} outside 1..{L}")
    return float(node_log_potentials(params, np.asarray(x, float)[None, :])[0, level - 1])


def ordinal_backprop(beta, first_cut, log_gaps, X, G):
    """Gradient of ``sum(G * ordinal_log_probs(...))`` w.r.t. the probit
    parameters.

    ``X`` has shape ``(..., d)`` and ``G`` shape ``(..., L)``. Returns
    ``(g_beta, g_first_cut, g_log_gaps)``. Entries floored at
    :data:`PROB_FLOOR` contribute no gradient.
    """
    X = np.asarray(X, float)
    G = np.asarray(G, float)
    cuts = decode_cutpoints_from(first_cut, log_gaps)
    proj = X @ beta
    z = cuts - proj[..., None]
    logp = log_interval_prob(z[..., :-1], z[..., 1:])
    live = logp > LOG_PROB_FLOOR
    with np.errstate(invalid="ignore", over="ignore"):
        log_pdf = -0.5 * z * z - _LOG_SQRT_2PI
        log_pdf = np.where(np.isfinite(z), log_pdf, -np.inf)
        r_hi = np.where(live, np.exp(log_pdf[..., 1:] - logp), 0.0)
        r_lo = np.where(live, np.exp(log_pdf[..., :-1] - logp), 0.0)
    Gh, Gl = G * r_hi, G * r_lo
    # d logp_l / d proj = -(r_hi - r_lo)
    g_proj = -(Gh - Gl).sum(axis=-1)
    g_beta = np.tensordot(g_proj, X, axes=(list(range(g_proj.ndim)), list(range(g_proj.ndim))))
    lead = tuple(range(G.ndim - 1))
    # interior cut b_k is the upper edge of level k and the lower edge of level k+1
    g_cuts = Gh.sum(axis=lead)[:-1] - Gl.sum(axis=lead)[1:]
    g_first = g_cuts.sum()
    tail = np.cumsum(g_cuts[::-1])[::-1]  # tail[k] = sum_{j>=k} g_cuts[j]
    g_gaps = np.exp(np.asarray(log_gaps, float)) * tail[1:]
    return g_beta, float(g_first), g_gaps


def edge_potential(params: ModelParams, frm: int, to: int) -> float:
    return float(params.transition[frm - 1, to - 1])


def cardinality_potential(params: ModelParams, h, y: int) -> float:
    """``w * #{t: h_t = y}`` if ``max(h) = y``, else :data:`IMPOSSIBLE`."""
    h = as_states(h)
    if h.max() != y:
        return IMPOSSIBLE
    return params.card_weight * float(np.count_nonzero(h == y))


def total_energy(params: ModelParams, bag: Bag, h, y: int) -> float:
    h = as_states(h)
    if len(h) != bag.length:
        raise ValueError(f"assignment of length {len(h)} for a bag of length {bag.length}")
    card = cardinality_potential(params, h, y)
    if is_impossible(card):
        return IMPOSSIBLE
    nodes = node_log_potentials(params, bag.instances)
    score = nodes[np.arange(len(h)), h - 1].sum()
    score += params.transition[h[:-1] - 1, h[1:] - 1].sum()
    return float(score + card)


def augmented_node(params: ModelParams, x, state, t: int, T: int, y: int) -> float:
    """Redefined node score at 1-based time ``t`` of a length-``T`` bag."""
    level, flag = state
    if not 1 <= t <= T:
        raise ValueError(f"time index {t} outside 1..{T}")
    if level > y:
        return IMPOSSIBLE
    if t == 1 and not ((flag == 0 and level < y) or (flag == 1 and level == y)):
        return IMPOSSIBLE
    if t == T and flag != 1:
        return IMPOSSIBLE
    return node_potential(params, x, level) + params.card_weight * (level == y)


def augmented_edge(params: ModelParams, frm, to, y: int) -> float:
    (a, za), (b, zb) = frm, to
    ok = (za == 0 and zb == 0 and b != y) or (za == 0 and zb == 1 and b == y) or (za == 1 and zb == 1)
    return float(params.transition[a - 1, b - 1]) if ok else IMPOSSIBLE


def augmented_states(L: int) -> list[AugmentedState]:
    return [AugmentedState(level, flag) for flag in (0, 1) for level in range(1, L + 1)]


def augmented_node_mask(L: int, y: int, T: int) -> np.ndarray:
    """Admissibility of each augmented state per time step, shape ``(T, 2L)``."""
    levels = np.arange(1, L + 1)
    below = levels <= y
    mask = np.tile(np.concatenate([below, below]), (T, 1))
    # first step: ζ=0 needs level < y, ζ=1 needs level = y
    mask[0] &= np.concatenate([levels < y, levels == y])
    # last step: ζ must be 1
    mask[T - 1, :L] = False
    return mask


def augmented_node_table(node_scores, card_weight: float, y: int) -> np.ndarray:
    """Augmented node scores ``(T, 2L)`` from plain node scores ``(T, L)``."""
    node_scores = np.asarray(node_scores, float)
    T, L = node_scores.shape
    base = node_scores + card_weight * (np.arange(1, L + 1) == y)
    table = np.concatenate([base, base], axis=1)
    return np.where(augmented_node_mask(L, y, T), table, IMPOSSIBLE)


def augmented_edge_mask(L: int, y: int) -> np.ndarray:
    not_y = np.arange(1, L + 1) != y
    mask = np.zeros((2 * L, 2 * L), dtype=bool)
    mask[:L, :L] = not_y[None, :]
    mask[:L, L:] = ~not_y[None, :]
    mask[L:, L:] = True
    return mask


def augmented_edge_table(transition, y: int) -> np.ndarray:
    W = np.asarray(transition, float)
    L = W.shape[0]
    return np.where(augmented_edge_mask(L, y), np.tile(W, (2, 2)), IMPOSSIBLE)

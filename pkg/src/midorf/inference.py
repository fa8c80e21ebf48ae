"""Exact inference for MI-DORF and related chain models.

The multi-instance ordinal constraint couples every latent state to the
bag label. Augmenting each state with a flag that records whether the
label has been reached turns the model back into a linear chain over
``2L`` states per label, so forward-backward gives exact partition
functions and marginals in ``O(T (2L)^2)`` per label.

The batched engine pads bags to a common length and processes every
(bag, label) lattice at once. Its default recursion works in probability
space with per-step normalization and falls back to a pure log-space
recursion for a batch in which any normalizer underflows.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Bag, ModelParams
from .potentials import (
    IMPOSSIBLE,
    augmented_edge_table,
    augmented_node_table,
    logsumexp,
    node_log_potentials,
)

MAX_ENUMERATION = 10**6


@dataclass(frozen=True)
class AugmentedLattice:
    """Augmented scores for one bag and one candidate label."""

    node: np.ndarray  # (T, 2L)
    edge: np.ndarray  # (2L, 2L)
    y: int

    @property
    def length(self) -> int:
        return self.node.shape[0]

    @property
    def num_levels(self) -> int:
        return self.node.shape[1] // 2


@dataclass(frozen=True)
class Marginals:
    node: np.ndarray  # (T, L): p(h_t = l)
    pair: np.ndarray  # (T-1, L, L): p(h_t = a, h_{t+1} = b)


@dataclass(frozen=True)
class ChainStats:
    """Batched forward-backward output.

    ``node`` and ``pair_sum`` are zero wherever the lattice has no
    admissible path (``log_z`` impossible) or the time step is padding.
    """

    log_z: np.ndarray     # (N, Y)
    node: np.ndarray      # (N, Y, Tmax, S)
    pair_sum: np.ndarray  # (N, Y, S, S), summed over t
    pair: Optional[np.ndarray] = None  # (N, Y, Tmax-1, S, S)


# -- batched engine ----------------------------------------------------------------

def _finite_max(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    return np.where(np.isfinite(m), m, 0.0)


def forward_backward(nodes, edges, lengths, pairwise: bool = False,
                     engine: str = "auto") -> ChainStats:
    """Forward-backward over a batch of chain lattices.

    Parameters
    ----------
    nodes : array (N, Y, Tmax, S)
        Per-step state scores. Inadmissible states hold ``IMPOSSIBLE``;
        steps at or beyond a bag's length are ignored.
    edges : array (Y, S, S)
        Transition scores shared across time.
    lengths : int array (N,)
    pairwise : bool
        Also return per-step pairwise marginals (always computed in log space).
    engine : {"auto", "scaled", "log"}
        ``"auto"`` tries the scaled recursion and reruns in log space if it
        underflows; ``"scaled"`` raises ``FloatingPointError`` instead.
    """
    nodes = np.asarray(nodes, float)
    edges = np.asarray(edges, float)
    lengths = np.asarray(lengths, int)
    if engine not in ("auto", "scaled", "log"):
        raise ValueError(f"unknown engine {engine!r}")
    if engine != "log" and not pairwise:
        out = _scaled_forward_backward(nodes, edges, lengths)
        if out is not None:
            return out
        if engine == "scaled":
            raise FloatingPointError("scaled forward-backward underflowed")
    return _log_forward_backward(nodes, edges, lengths, pairwise)


def _scaled_forward_backward(nodes, edges, lengths) -> Optional[ChainStats]:
    """Probability-space recursion with per-step normalizers.

    Returns ``None`` when a normalizer is not a positive finite number,
    which covers both underflow and lattices without admissible paths.
    """
    N, Y, Tmax, S = nodes.shape
    valid = np.arange(Tmax)[None, :] < lengths[:, None]
    nodes = np.where(valid[:, None, :, None], nodes, 0.0)
    n_max = _finite_max(nodes, axis=-1)  # (N, Y, Tmax, 1)
    P = np.exp(nodes - n_max)
    e_max = _finite_max(edges, axis=(1, 2))
    exp_e = np.exp(edges - e_max)
    block = np.zeros((Y * S, Y * S))
    for y in range(Y):
        block[y * S:(y + 1) * S, y * S:(y + 1) * S] = exp_e[y]
    block_t = np.ascontiguousarray(block.T)

    P_t = np.ascontiguousarray(np.moveaxis(P, 2, 0)).reshape(Tmax, N, Y * S)
    live = np.ascontiguousarray(valid.T)  # (Tmax, N)
    alpha = np.empty_like(P_t)
    c = np.ones((Tmax, N, Y))
    a = P_t[0]
    c[0] = a.reshape(N, Y, S).sum(axis=-1)
    if not np.all(c[0] > 0):
        return None
    alpha[0] = (a.reshape(N, Y, S) / c[0][..., None]).reshape(N, Y * S)
    for t in range(1, Tmax):
        a = (alpha[t - 1] @ block) * P_t[t]
        ct = a.reshape(N, Y, S).sum(axis=-1)
        ct = np.where(live[t][:, None], ct, 1.0)
        if not np.all((ct > 0) & np.isfinite(ct)):
            return None
        c[t] = ct
        a = (a.reshape(N, Y, S) / ct[..., None]).reshape(N, Y * S)
        alpha[t] = np.where(live[t][:, None], a, alpha[t - 1])

    beta = np.ones_like(P_t)
    # weighted successor terms P_{t+1} beta_{t+1} / c_{t+1}, reused for pairs
    succ = np.zeros_like(P_t)
    for t in range(Tmax - 2, -1, -1):
        step = live[t + 1][:, None]
        w = (P_t[t + 1] * beta[t + 1]).reshape(N, Y, S) / c[t + 1][..., None]
        w = w.reshape(N, Y * S)
        succ[t] = np.where(step, w, 0.0)
        beta[t] = np.where(step, w @ block_t, 1.0)

    log_z = (np.log(c).sum(axis=0) + np.where(valid[:, None, :], n_max[..., 0], 0.0).sum(axis=2)
             + (lengths - 1)[:, None] * e_max[None, :, 0, 0])
    node = np.moveaxis((alpha * beta).reshape(Tmax, N, Y, S), 0, 2)
    node = np.where(valid[:, None, :, None], node, 0.0)
    if Tmax > 1:
        A = alpha[:-1].reshape(Tmax - 1, N, Y, S)
        B = succ[:-1].reshape(Tmax - 1, N, Y, S)
        pair_sum = np.einsum("tnyi,tnyj->nyij", A, B) * exp_e[None]
    else:
        pair_sum = np.zeros((N, Y, S, S))
    if not (np.all(np.isfinite(node)) and np.all(np.isfinite(pair_sum))):
        return None
    return ChainStats(log_z, node, pair_sum)


def _log_forward_backward(nodes, edges, lengths, pairwise: bool) -> ChainStats:
    """Log-space recursion; robust to any dynamic range."""
    N, Y, Tmax, S = nodes.shape
    valid = np.arange(Tmax)[None, :] < lengths[:, None]  # (N, Tmax)
    nodes = np.where(valid[:, None, :, None], nodes, 0.0)

    e_max = _finite_max(edges, axis=(1, 2))  # (Y, 1, 1)
    exp_e = np.exp(edges - e_max)
    # one block-diagonal transition matrix serves every label in a single product
    block = np.zeros((Y * S, Y * S))
    for y in range(Y):
        block[y * S:(y + 1) * S, y * S:(y + 1) * S] = exp_e[y]
    block_t = np.ascontiguousarray(block.T)
    inner_steps = np.arange(Tmax)[None, :] < (lengths - 1)[:, None]  # (N, Tmax)

    # recursions run on time-major copies so each step touches contiguous memory
    nodes_t = np.ascontiguousarray(np.moveaxis(nodes, 2, 0)).reshape(Tmax, N, Y * S)
    alpha_t = np.empty_like(nodes_t)
    beta_t = np.zeros_like(nodes_t)
    shift_flat = np.repeat(e_max[:, 0, 0], S)[None, :]
    with np.errstate(divide="ignore"):
        alpha_t[0] = nodes_t[0]
        for t in range(1, Tmax):
            prev = alpha_t[t - 1].reshape(N, Y, S)
            m = _finite_max(prev, axis=-1)
            s = np.exp(prev - m).reshape(N, Y * S) @ block
            alpha_t[t] = nodes_t[t] + np.log(s) + np.repeat(m[..., 0], S, axis=1) + shift_flat
        for t in range(Tmax - 2, -1, -1):
            nxt = (nodes_t[t + 1] + beta_t[t + 1]).reshape(N, Y, S)
            m = _finite_max(nxt, axis=-1)
            s = np.exp(nxt - m).reshape(N, Y * S) @ block_t
            rec = np.log(s) + np.repeat(m[..., 0], S, axis=1) + shift_flat
            beta_t[t] = np.where(inner_steps[:, t, None], rec, 0.0)
    alpha = np.moveaxis(alpha_t.reshape(Tmax, N, Y, S), 0, 2)
    beta = np.moveaxis(beta_t.reshape(Tmax, N, Y, S), 0, 2)

    idx = np.clip(lengths - 1, 0, Tmax - 1)
    final = alpha[np.arange(N), :, idx]  # (N, Y, S)
    log_z = logsumexp(final, axis=-1)
    possible = np.isfinite(log_z)
    lz = np.where(possible, log_z, 0.0)

    # padded steps may overflow here; they are masked out below
    with np.errstate(over="ignore", invalid="ignore"):
        node = np.exp(alpha + beta - lz[..., None, None])
    node = np.where(valid[:, None, :, None] & possible[..., None, None], node, 0.0)

    pair_sum = np.zeros((N, Y, S, S))
    pair = None
    if Tmax > 1:
        inner = (np.arange(Tmax - 1)[None, :] < (lengths - 1)[:, None])[:, None, :, None]
        inner = inner & possible[..., None, None]
        b = nodes[:, :, 1:] + beta[:, :, 1:]
        mb = _finite_max(b, -1)
        # p(s_t=i, s_t+1=j) = p(s_t=i) exp(E_ij + b_j - beta_i); each factor below stays bounded
        with np.errstate(over="ignore", invalid="ignore"):
            C = node[:, :, :-1] * np.exp(mb + e_max[None, :, :, 0][..., None] - beta[:, :, :-1])
        C = np.where(inner & (node[:, :, :-1] > 0), C, 0.0)
        B = np.exp(b - mb)
        with np.errstate(over="ignore", invalid="ignore"):
            pair_sum = (C.swapaxes(-1, -2) @ B) * exp_e[None]
        if pairwise or not np.all(np.isfinite(pair_sum)):
            with np.errstate(over="ignore", invalid="ignore"):
                full = np.exp(alpha[:, :, :-1, :, None] + edges[None, :, None] + b[..., None, :]
                              - lz[..., None, None, None])
            full = np.where(inner[..., None], np.nan_to_num(full, nan=0.0), 0.0)
            pair_sum = full.sum(axis=2)
            if pairwise:
                pair = full
    elif pairwise:
        pair = np.zeros((N, Y, 0, S, S))
    return ChainStats(log_z, node, pair_sum, pair)


def pad_scores(score_list, fill=0.0):
    """Stack ``(T_n, L)`` score matrices into ``(N, Tmax, L)`` plus lengths."""
    lengths = np.array([s.shape[0] for s in score_list], dtype=int)
    Tmax = int(lengths.max())
    L = score_list[0].shape[1]
    out = np.full((len(score_list), Tmax, L), fill)
    for n, s in enumerate(score_list):
        out[n, : s.shape[0]] = s
    return out, lengths


def mi_lattices(node_scores, lengths, transition, card_weight):
    """Augmented lattices for every bag and every candidate label.

    ``node_scores`` has shape ``(N, Tmax, L)``. Returns ``(nodes, edges)`` of
    shapes ``(N, L, Tmax, 2L)`` and ``(L, 2L, 2L)``; the label axis runs
    over ``y = 1..L``.
    """
    node_scores = np.asarray(node_scores, float)
    N, Tmax, L = node_scores.shape
    lengths = np.asarray(lengths, int)
    levels = np.arange(1, L + 1)
    ys = levels[:, None]  # (Y, 1)
    bonus = card_weight * (levels[None, :] == ys)  # (Y, L)
    base = node_scores[:, None, :, :] + bonus[None, :, None, :]
    nodes = np.concatenate([base, base], axis=-1)  # (N, Y, Tmax, 2L)

    below = levels[None, :] <= ys
    mask = np.broadcast_to(np.concatenate([below, below], axis=1)[None, :, None, :],
                           (N, L, Tmax, 2 * L)).copy()
    first = np.concatenate([levels[None, :] < ys, levels[None, :] == ys], axis=1)  # (Y, 2L)
    mask[:, :, 0, :] &= first[None]
    mask[np.arange(N), :, lengths - 1, :L] = False
    nodes = np.where(mask, nodes, IMPOSSIBLE)
    edges = np.stack([augmented_edge_table(transition, y) for y in levels])
    return nodes, edges


def collapse_flags(node, pair_sum, L):
    """Sum the flag out of augmented node and pairwise quantities."""
    node_h = node[..., :L] + node[..., L:]
    pair_h = (pair_sum[..., :L, :L] + pair_sum[..., :L, L:]
              + pair_sum[..., L:, :L] + pair_sum[..., L:, L:])
    return node_h, pair_h


def mi_statistics(node_scores, lengths, transition, card_weight):
    """Per-label partition functions and flag-free expectations.

    Returns ``(log_z (N, L), node (N, L, Tmax, L), pair_sum (N, L, L, L))``
    where the second axis is the conditioning label.
    """
    L = node_scores.shape[-1]
    nodes, edges = mi_lattices(node_scores, lengths, transition, card_weight)
    st = forward_backward(nodes, edges, lengths)
    node_h, pair_h = collapse_flags(st.node, st.pair_sum, L)
    return st.log_z, node_h, pair_h


def hcrf_statistics(node_scores, lengths, transition, compat):
    """Same as :func:`mi_statistics` for a chain with a per-step
    state/label compatibility table ``compat[h, y]`` and no MI constraint."""
    node_scores = np.asarray(node_scores, float)
    L = node_scores.shape[-1]
    compat = np.asarray(compat, float)
    Y = compat.shape[1]
    nodes = node_scores[:, None, :, :] + compat.T[None, :, None, :]
    edges = np.broadcast_to(np.asarray(transition, float), (Y, L, L))
    st = forward_backward(nodes, edges, lengths)
    return st.log_z, st.node, st.pair_sum


# -- single-bag API ------------------------------------------------------------------

def build_lattice(params: ModelParams, bag: Bag, y: int) -> AugmentedLattice:
    nodes = node_log_potentials(params, bag.instances)
    return AugmentedLattice(augmented_node_table(nodes, params.card_weight, y),
                            augmented_edge_table(params.transition, y), y)


def _lattice_stats(lat: AugmentedLattice, pairwise=False) -> ChainStats:
    return forward_backward(lat.node[None, None], lat.edge[None], [lat.length], pairwise=pairwise)


def log_partition_given_label(params: ModelParams, bag: Bag, y: int) -> float:
    """``log sum_{h, ζ} exp(score)`` for label ``y``; ``IMPOSSIBLE`` if no
    admissible path exists."""
    _check_label(params, y)
    return float(_lattice_stats(build_lattice(params, bag, y)).log_z[0, 0])


def _all_log_partitions(params: ModelParams, bag: Bag) -> np.ndarray:
    nodes = node_log_potentials(params, bag.instances)[None]
    log_z, _, _ = mi_statistics(nodes, [bag.length], params.transition, params.card_weight)
    return log_z[0]


def label_posterior(params: ModelParams, bag: Bag) -> np.ndarray:
    lz = _all_log_partitions(params, bag)
    return np.exp(lz - logsumexp(lz))


def marginals_given_label(params: ModelParams, bag: Bag, y: int) -> Marginals:
    _check_label(params, y)
    L = params.num_levels
    st = _lattice_stats(build_lattice(params, bag, y), pairwise=True)
    node = st.node[0, 0]
    pair = st.pair[0, 0]
    node_h = node[:, :L] + node[:, L:]
    pair_h = pair[:, :L, :L] + pair[:, :L, L:] + pair[:, L:, :L] + pair[:, L:, L:]
    return Marginals(node_h, pair_h)


def argmax_low(p, axis=-1):
    """Argmax with ties broken toward the lowest index."""
    return np.argmax(np.asarray(p), axis=axis)


def predict_bag_label(params: ModelParams, bag: Bag) -> int:
    return int(argmax_low(label_posterior(params, bag))) + 1


def predict_instance_labels(params: ModelParams, bag: Bag, mix_labels: bool = False) -> np.ndarray:
    """Per-instance levels from node marginals.

    By default the marginals are conditioned on the predicted bag label.
    With ``mix_labels`` they are averaged over labels under the label
    posterior instead, which drops the guarantee that no instance exceeds
    the predicted bag label.
    """
    nodes = node_log_potentials(params, bag.instances)[None]
    log_z, node, _ = mi_statistics(nodes, [bag.length], params.transition, params.card_weight)
    if mix_labels:
        post = np.exp(log_z[0] - logsumexp(log_z[0]))
        marg = np.tensordot(post, node[0], axes=(0, 0))
    else:
        y = int(argmax_low(log_z[0]))
        marg = node[0, y]
    return argmax_low(marg, axis=-1) + 1


def _check_label(params, y):
    if not 1 <= y <= params.num_levels:
        raise ValueError(f"label {y} outside 1..{params.num_levels}")


# -- brute-force oracle -------------------------------------------------------------

def enumerate_assignments(T: int, L: int) -> np.ndarray:
    """All ``L**T`` assignments as a ``(L**T, T)`` array of levels ``1..L``."""
    if L ** T > MAX_ENUMERATION:
        raise ValueError(f"refusing to enumerate {L}**{T} assignments (limit {MAX_ENUMERATION})")
    return np.array(list(itertools.product(range(1, L + 1), repeat=T)), dtype=int).reshape(-1, T)


def enumerate_chain(node_scores, transition, extra):
    """Exhaustive log-partition and marginals of a chain model.

    ``extra(H)`` maps the ``(K, T)`` assignment array to per-assignment
    additional scores (``IMPOSSIBLE`` to exclude an assignment).
    """
    node_scores = np.asarray(node_scores, float)
    W = np.asarray(transition, float)
    T, L = node_scores.shape
    H = enumerate_assignments(T, L)
    score = node_scores[np.arange(T), H - 1].sum(axis=1)
    if T > 1:
        score = score + W[H[:, :-1] - 1, H[:, 1:] - 1].sum(axis=1)
    score = score + extra(H)
    log_z = float(logsumexp(score))
    if not np.isfinite(log_z):
        return log_z, Marginals(np.zeros((T, L)), np.zeros((max(T - 1, 0), L, L)))
    p = np.exp(score - log_z)
    node = np.zeros((T, L))
    pair = np.zeros((max(T - 1, 0), L, L))
    for t in range(T):
        np.add.at(node[t], H[:, t] - 1, p)
        if t < T - 1:
            np.add.at(pair[t], (H[:, t] - 1, H[:, t + 1] - 1), p)
    return log_z, Marginals(node, pair)


def mi_extra(card_weight: float, y: int):
    def extra(H):
        ok = H.max(axis=1) == y
        return np.where(ok, card_weight * (H == y).sum(axis=1), IMPOSSIBLE)
    return extra


def oracle_enumerate(params: ModelParams, bag: Bag, y: int):
    """Brute-force ``(log_partition, Marginals)`` by summing the original
    energy over all assignments; no auxiliary variables involved."""
    _check_label(params, y)
    nodes = node_log_potentials(params, bag.instances)
    log_z, marg = enumerate_chain(nodes, params.transition, mi_extra(params.card_weight, y))
    # the constant assignment h = y always satisfies the constraint
    assert np.isfinite(log_z)
    return log_z, marg


def oracle_map(params: ModelParams, bag: Bag, y: int) -> np.ndarray:
    nodes = node_log_potentials(params, bag.instances)
    T, L = nodes.shape
    H = enumerate_assignments(T, L)
    score = nodes[np.arange(T), H - 1].sum(axis=1)
    if T > 1:
        score += params.transition[H[:, :-1] - 1, H[:, 1:] - 1].sum(axis=1)
    score = score + mi_extra(params.card_weight, y)(H)
    return H[int(np.argmax(score))]

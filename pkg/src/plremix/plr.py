"""Reliable negative sets and the contrastive losses built on them.

Every loss takes two batches of unit-norm embeddings (two strong views of the
same samples, row i of each forming the positive pair) and returns
``(loss, d_loss/d_q1, d_loss/d_q2)``. Negatives for anchor ``q1[i]`` are rows
of ``q2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp


@dataclass(frozen=True)
class NegativeSets:
    """``mask[i, j]`` is True iff j is a reliable negative of anchor i."""

    mask: np.ndarray
    kappa: int
    used_labels: bool

    @property
    def sets(self) -> list[list[int]]:
        return [np.flatnonzero(row).tolist() for row in self.mask]

    def sizes(self) -> np.ndarray:
        return self.mask.sum(axis=1)


def topk_indices(t_row: np.ndarray, kappa: int) -> np.ndarray:
    """Indices of the kappa largest entries, ties going to the lower index."""
    t_row = np.asarray(t_row)
    if not 1 <= kappa <= t_row.shape[-1]:
        raise ValueError(f"kappa must lie in [1, {t_row.shape[-1]}], got {kappa}")
    return np.sort(np.argsort(-t_row, kind="stable")[:kappa])


def topk_membership(t: np.ndarray, kappa: int) -> np.ndarray:
    """Boolean b x C matrix marking each row's top-kappa classes."""
    b, C = t.shape
    if not 1 <= kappa <= C:
        raise ValueError(f"kappa must lie in [1, {C}], got {kappa}")
    order = np.argsort(-t, axis=1, kind="stable")[:, :kappa]
    member = np.zeros((b, C), dtype=bool)
    member[np.arange(b)[:, None], order] = True
    return member


def reliable_negative_set(t: np.ndarray, y: np.ndarray | None, kappa: int,
                          use_labels: bool = False) -> NegativeSets:
    """j is a negative of i when their top-kappa sets (optionally with labels added) are disjoint."""
    t = np.asarray(t)
    member = topk_membership(t, kappa)
    if use_labels:
        member[np.arange(t.shape[0]), np.asarray(y)] = True
    m = member.astype(np.int64)
    overlap = (m @ m.T) > 0
    mask = ~overlap
    np.fill_diagonal(mask, False)
    return NegativeSets(mask, kappa, use_labels)


def full_negative_set(b: int) -> NegativeSets:
    mask = ~np.eye(b, dtype=bool)
    return NegativeSets(mask, 0, False)


def _check_views(q1, q2, tau):
    if q1.shape != q2.shape:
        raise ValueError("views must have the same shape")
    if tau <= 0:
        raise ValueError("temperature must be positive")


def _masked_softmax(logits: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    big = np.where(allowed, logits, -np.inf)
    mx = big.max(axis=1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.where(allowed, np.exp(big - mx), 0.0)
    s = e.sum(axis=1, keepdims=True)
    return np.divide(e, s, out=np.zeros_like(e), where=s > 0)


def plr_infonce(q1: np.ndarray, q2: np.ndarray, ns: NegativeSets, tau: float = 0.25):
    """InfoNCE restricted to each anchor's reliable negatives, averaged over all anchors.

    Anchors with no negatives contribute zero.
    """
    _check_views(q1, q2, tau)
    b = q1.shape[0]
    S = q1 @ q2.T / tau
    allowed = ns.mask | np.eye(b, dtype=bool)
    P = _masked_softmax(S, allowed)
    diag = np.diag(P)
    with np.errstate(divide="ignore"):
        per_anchor = -np.log(diag)
    loss = float(np.sum(per_anchor) / b)
    dS = P.copy()
    dS[np.diag_indices(b)] -= 1.0
    dS /= b
    return loss, dS @ q2 / tau, dS.T @ q1 / tau


def vanilla_infonce(q1: np.ndarray, q2: np.ndarray, tau: float = 0.25):
    """Standard in-batch InfoNCE: every other sample's second view is a negative."""
    return plr_infonce(q1, q2, full_negative_set(q1.shape[0]), tau)


def flat_logsumexp_terms(q1: np.ndarray, q2: np.ndarray, ns: NegativeSets, tau: float = 0.25):
    """Per-anchor logsumexp over negatives of the similarity gap to the positive.

    Returns ``(ell, nonempty, P)``: ``ell`` is 0 for anchors with no negatives and
    ``P`` is the softmax over each anchor's negatives.
    """
    _check_views(q1, q2, tau)
    S = q1 @ q2.T / tau
    rel = S - np.diag(S)[:, None]
    nonempty = ns.mask.any(axis=1)
    P = _masked_softmax(rel, ns.mask)
    with np.errstate(divide="ignore", invalid="ignore"):
        ell = logsumexp(np.where(ns.mask, rel, -np.inf), axis=1)
    ell = np.where(nonempty, ell, 0.0)
    return ell, nonempty, P


def plr_flatnce(q1: np.ndarray, q2: np.ndarray, ns: NegativeSets, tau: float = 0.25):
    """FlatNCE form: value exp(ell - stopgrad(ell)) == 1 per nonempty anchor, gradient = grad of ell.

    The returned scalar is the mean over all anchors, so it equals the
    fraction of anchors that have at least one negative.
    """
    ell, nonempty, P = flat_logsumexp_terms(q1, q2, ns, tau)
    b = q1.shape[0]
    loss = float(np.sum(np.exp(ell - ell)[nonempty]) / b)
    dS = P.copy()
    dS[np.diag_indices(b)] -= nonempty.astype(float)
    dS /= b
    return loss, dS @ q2 / tau, dS.T @ q1 / tau


def scl_loss(q1: np.ndarray, q2: np.ndarray, pseudo_labels: np.ndarray, tau: float = 0.25):
    """Supervised-contrastive ablation loss.

    For anchor ``q1[i]`` the positives are the second views of every sample
    sharing its pseudo label (its own view included) and the denominator runs
    over all second views. An anchor contributes zero when it is the only
    member of its class in the batch or when it has no negatives.
    """
    _check_views(q1, q2, tau)
    y = np.asarray(pseudo_labels)
    b = q1.shape[0]
    S = q1 @ q2.T / tau
    same = y[:, None] == y[None, :]
    n_pos = same.sum(axis=1)
    active = (n_pos >= 2) & (n_pos < b)
    S_shift = S - S.max(axis=1, keepdims=True)
    logZ = np.log(np.exp(S_shift).sum(axis=1))
    P = np.exp(S_shift - logZ[:, None])
    log_prob = S_shift - logZ[:, None]
    per_anchor = -np.sum(np.where(same, log_prob, 0.0), axis=1) / n_pos
    per_anchor = np.where(active, per_anchor, 0.0)
    loss = float(per_anchor.sum() / b)
    dS = P - same / n_pos[:, None]
    dS = np.where(active[:, None], dS, 0.0) / b
    return loss, dS @ q2 / tau, dS.T @ q1 / tau

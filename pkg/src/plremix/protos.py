"""Momentum class prototypes, prototype similarity and self-adaptive thresholds."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


def normalize_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


@dataclass(frozen=True)
class ProtoState:
    P: np.ndarray
    tau_g: float
    tau_c_tilde: np.ndarray
    eta: float = 0.99
    tau_s: float = 0.1
    alpha: float = 0.5

    @property
    def num_classes(self) -> int:
        return self.P.shape[0]

    @property
    def class_thresholds(self) -> np.ndarray:
        """tau_c^k = (tilde tau_c^k / max_k' tilde tau_c^k) * tau_g."""
        return self.tau_c_tilde / self.tau_c_tilde.max() * self.tau_g


def init_prototypes(q_all: np.ndarray, noisy_labels: np.ndarray, num_classes: int,
                    eta: float = 0.99, tau_s: float = 0.1, alpha: float = 0.5,
                    zero_tol: float = 1e-12) -> ProtoState:
    """Class means of the embeddings grouped by noisy label, normalized; thresholds start at 1/C."""
    y = np.asarray(noisy_labels)
    rows = []
    for k in range(num_classes):
        members = q_all[y == k]
        if len(members) == 0:
            raise ValueError(f"class {k} has no samples; cannot initialise its prototype")
        mean = members.mean(axis=0)
        nrm = np.linalg.norm(mean)
        if nrm <= zero_tol:
            raise ValueError(f"class {k} embeddings average to the zero vector")
        rows.append(mean / nrm)
    C = num_classes
    return ProtoState(np.stack(rows), 1.0 / C, np.full(C, 1.0 / C), eta, tau_s, alpha)


def similarity(q: np.ndarray, ps: ProtoState) -> np.ndarray:
    """Softmax over classes of cosine similarity to each prototype, temperature tau_s."""
    logits = q @ ps.P.T / ps.tau_s
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def pseudo_soft_label(t: np.ndarray, s: np.ndarray, alpha: float) -> np.ndarray:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return alpha * t + (1.0 - alpha) * s


def update_thresholds(ps: ProtoState, y_hat: np.ndarray) -> ProtoState:
    eta = ps.eta
    tau_g = eta * ps.tau_g + (1 - eta) * float(np.mean(y_hat.max(axis=1)))
    tau_c = eta * ps.tau_c_tilde + (1 - eta) * y_hat.mean(axis=0)
    return replace(ps, tau_g=tau_g, tau_c_tilde=tau_c)


def confident_set(y_hat: np.ndarray, ps: ProtoState) -> tuple[np.ndarray, np.ndarray]:
    """Indices whose top pseudo-label confidence beats that class's threshold, with the hard labels."""
    hard = np.argmax(y_hat, axis=1)
    conf = y_hat[np.arange(len(hard)), hard]
    keep = conf > ps.class_thresholds[hard]
    idx = np.flatnonzero(keep)
    return idx, hard[idx]


def update_prototypes(ps: ProtoState, q: np.ndarray, labels: np.ndarray) -> ProtoState:
    """Sequential EMA pull of each labelled prototype toward the (normalized) embedding."""
    eta = ps.eta
    P = ps.P.copy()
    qn = normalize_rows(np.asarray(q, dtype=float)) if len(q) else q
    for qi, k in zip(qn, labels):
        p = eta * P[k] + (1 - eta) * qi
        P[k] = p / np.linalg.norm(p)
    return replace(ps, P=P)

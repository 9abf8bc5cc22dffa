"""Clean/noisy sample selection from per-sample loss pairs with a two-component GMM."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12
COV_FLOOR = 1e-6


def loss_pairs(t: np.ndarray, s: np.ndarray, y: np.ndarray) -> np.ndarray:
    """N x 2 array of (-log t[y], -log s[y]), probabilities clamped at 1e-12."""
    idx = np.arange(len(y))
    l_cls = -np.log(np.maximum(t[idx, y], PROB_CLAMP))
    l_proto = -np.log(np.maximum(s[idx, y], PROB_CLAMP))
    return np.column_stack([l_cls, l_proto])


def normalize_losses(pairs: np.ndarray) -> np.ndarray:
    """Per-column min-max scaling to [0, 1]; a constant column becomes zeros."""
    pairs = np.asarray(pairs, dtype=float)
    if pairs.shape[0] < 2:
        raise ValueError("need at least two samples to normalize")
    lo = pairs.min(axis=0)
    rng = pairs.max(axis=0) - lo
    out = np.zeros_like(pairs)
    ok = rng > 0
    out[:, ok] = (pairs[:, ok] - lo[ok]) / rng[ok]
    return out


@dataclass
class Gmm:
    """Two-component Gaussian mixture in D dimensions (D = 2 for the joint fit)."""

    means: np.ndarray
    covs: np.ndarray
    weights: np.ndarray
    log_likelihoods: list[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False

    def component_log_prob(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        N, D = X.shape
        out = np.empty((N, len(self.weights)))
        for k in range(len(self.weights)):
            L = np.linalg.cholesky(self.covs[k])
            diff = np.linalg.solve(L, (X - self.means[k]).T)
            maha = np.sum(diff * diff, axis=0)
            logdet = 2.0 * np.sum(np.log(np.diag(L)))
            with np.errstate(divide="ignore"):
                logw = np.log(self.weights[k])
            out[:, k] = logw - 0.5 * (D * np.log(2 * np.pi) + logdet + maha)
        return out

    def responsibilities(self, X: np.ndarray) -> np.ndarray:
        lp = self.component_log_prob(X)
        return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))

    def mean_log_likelihood(self, X: np.ndarray) -> float:
        return float(np.mean(logsumexp(self.component_log_prob(X), axis=1)))


def _floor_eigen(cov: np.ndarray, floor: float) -> np.ndarray:
    """Clip eigenvalues from below; this is the exact constrained M-step, so EM stays monotone."""
    vals, vecs = np.linalg.eigh((cov + cov.T) / 2)
    return (vecs * np.maximum(vals, floor)) @ vecs.T


def fit_gmm(points: np.ndarray, max_iters: int = 100, tol: float = 1e-8,
            cov_floor: float = COV_FLOOR) -> Gmm:
    """EM for a two-component full-covariance mixture.

    Starts from centers at the per-coordinate 10th and 90th percentiles with
    equal weights and the shared data covariance. Stops once the mean
    log-likelihood improves by less than ``tol``.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    N, D = X.shape
    if N < 4:
        raise ValueError("need at least 4 points")
    if not np.all(np.isfinite(X)):
        raise ValueError("points must be finite")
    if np.all(X == X[0]):
        raise ValueError("all points identical; mixture density is degenerate")

    lo, hi = np.percentile(X, [10, 90], axis=0)
    if np.allclose(lo, hi):
        lo, hi = X.min(axis=0), X.max(axis=0)
    cov0 = _floor_eigen(np.atleast_2d(np.cov(X.T, bias=True)), cov_floor)
    gmm = Gmm(np.stack([lo, hi]), np.stack([cov0, cov0]), np.array([0.5, 0.5]))

    for it in range(max_iters):
        lp = gmm.component_log_prob(X)
        lse = logsumexp(lp, axis=1, keepdims=True)
        ll = float(np.mean(lse))
        if gmm.log_likelihoods and ll - gmm.log_likelihoods[-1] < tol:
            gmm.log_likelihoods.append(ll)
            gmm.converged = True
            break
        gmm.log_likelihoods.append(ll)
        resp = np.exp(lp - lse)
        Nk = np.maximum(resp.sum(axis=0), 1e-10)
        means = (resp.T @ X) / Nk[:, None]
        covs = np.empty((2, D, D))
        for k in range(2):
            diff = X - means[k]
            covs[k] = _floor_eigen((resp[:, k, None] * diff).T @ diff / Nk[k], cov_floor)
        gmm.means, gmm.covs, gmm.weights = means, covs, Nk / Nk.sum()
        gmm.n_iter = it + 1
    return gmm


def fit_gmm2d(points: np.ndarray, max_iters: int = 100, tol: float = 1e-8,
              seed: int | None = None, cov_floor: float = COV_FLOOR) -> Gmm:
    """Joint (l_cls, l_proto) fit. Initialisation is deterministic; ``seed`` is accepted for API symmetry."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError("expected an N x 2 array")
    return fit_gmm(points, max_iters, tol, cov_floor)


def clean_component(gmm: Gmm) -> int:
    norms = np.linalg.norm(gmm.means, axis=1)
    if norms[0] == norms[1]:
        log.warning("GMM component means have equal norm; treating component 0 as clean")
        return 0
    return int(np.argmin(norms))


def clean_posterior(gmm: Gmm, points: np.ndarray) -> np.ndarray:
    """Posterior of the component whose mean is closest to the origin."""
    return gmm.responsibilities(points)[:, clean_component(gmm)]


def fit_gmm1d(values: np.ndarray, max_iters: int = 100, tol: float = 1e-8,
              cov_floor: float = COV_FLOOR) -> tuple[Gmm, np.ndarray]:
    """1-D baseline on the classification loss alone; clean is the lower-mean component."""
    x = np.asarray(values, dtype=float).reshape(-1, 1)
    gmm = fit_gmm(x, max_iters, tol, cov_floor)
    resp = gmm.responsibilities(x)
    return gmm, resp[:, int(np.argmin(gmm.means[:, 0]))]


@dataclass(frozen=True)
class Partition:
    clean_probs: np.ndarray
    clean_idx: np.ndarray
    noisy_idx: np.ndarray
    threshold: float


def partition(w: np.ndarray, threshold: float = 0.5) -> Partition:
    w = np.asarray(w, dtype=float)
    clean = w > threshold
    return Partition(w, np.flatnonzero(clean), np.flatnonzero(~clean), threshold)

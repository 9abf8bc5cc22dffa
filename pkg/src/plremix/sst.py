"""Semi-supervised objective: pseudo targets, sharpening, MixUp and the three-term loss.

Loss functions return gradients with respect to the logits that produced the
predictions, ready for :func:`plremix.net.backward`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import SeedLike, as_rng
from .net import softmax


def sharpen(p: np.ndarray, T: float) -> np.ndarray:
    """Temperature sharpening p^(1/T) / sum p^(1/T), row-wise."""
    if T <= 0:
        raise ValueError("sharpening temperature must be positive")
    p = np.asarray(p, dtype=float)
    # log-space keeps small T from underflowing every entry
    with np.errstate(divide="ignore"):
        lp = np.log(p) / T
    lp = lp - lp.max(axis=-1, keepdims=True)
    e = np.exp(lp)
    return e / e.sum(axis=-1, keepdims=True)


def refine_labeled(y: np.ndarray, w: np.ndarray, t_weak: np.ndarray, T: float = 0.5) -> np.ndarray:
    """Co-refinement: sharpen(w onehot(y) + (1 - w) mean_aug t).

    ``t_weak`` is (num_aug, b, C), or (num_aug, C) for a single sample.
    """
    t_weak = np.asarray(t_weak, dtype=float)
    mean_t = t_weak.mean(axis=0)
    C = mean_t.shape[-1]
    onehot = np.eye(C)[np.asarray(y)]
    w = np.asarray(w, dtype=float)[..., None]
    return sharpen(w * onehot + (1 - w) * mean_t, T)


def guess_unlabeled(t_all: np.ndarray, T: float = 0.5) -> np.ndarray:
    """Co-guessing: sharpen the mean over every (augmentation, model) prediction along axis 0."""
    return sharpen(np.asarray(t_all, dtype=float).mean(axis=0), T)


@dataclass(frozen=True)
class MixedBatch:
    x: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    perm: np.ndarray


def mixup(x: np.ndarray, y: np.ndarray, beta: float = 4.0, seed: SeedLike = None,
          lam: float | np.ndarray | None = None, use_max: bool = False) -> MixedBatch:
    """Convex mixing with a random partner; one lambda ~ Beta(beta, beta) per row.

    ``lam`` overrides the draw. ``use_max`` applies lambda <- max(lambda, 1 - lambda).
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    rng = as_rng(seed)
    n = x.shape[0]
    if lam is None:
        lam = rng.beta(beta, beta, size=n)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (n,)).copy()
    if use_max:
        lam = np.maximum(lam, 1 - lam)
    perm = rng.permutation(n)
    lx = lam[:, None]
    return MixedBatch(lx * x + (1 - lx) * x[perm], lx * y + (1 - lx) * y[perm], lam, perm)


def softmax_backward(t: np.ndarray, dt: np.ndarray) -> np.ndarray:
    """Pull a gradient on softmax outputs back onto the logits."""
    return t * (dt - np.sum(dt * t, axis=1, keepdims=True))


def cross_entropy(z: np.ndarray, targets: np.ndarray):
    """Mean soft-target CE. ``targets`` may be class indices or probability rows."""
    t = softmax(z)
    n = z.shape[0]
    if targets.ndim == 1:
        targets = np.eye(z.shape[1])[targets]
    logt = z - z.max(axis=1, keepdims=True)
    logt = logt - np.log(np.exp(logt).sum(axis=1, keepdims=True))
    loss = float(-np.sum(targets * logt) / n)
    dz = (t * targets.sum(axis=1, keepdims=True) - targets) / n
    return loss, dz


def mse_loss(z: np.ndarray, targets: np.ndarray):
    """Mean over rows of ||targets - softmax(z)||^2."""
    t = softmax(z)
    n = z.shape[0]
    diff = t - targets
    loss = float(np.sum(diff * diff) / n)
    return loss, softmax_backward(t, 2 * diff / n)


def uniform_prior_reg(z: np.ndarray):
    """KL(uniform || mean prediction) = sum_c (1/C) log((1/C) / tbar_c)."""
    t = softmax(z)
    n, C = t.shape
    tbar = t.mean(axis=0)
    pi = 1.0 / C
    loss = float(np.sum(pi * np.log(pi / tbar)))
    dt = np.broadcast_to(-pi / (tbar * n), t.shape)
    return loss, softmax_backward(t, dt)


@dataclass(frozen=True)
class SSTResult:
    loss: float
    ce: float
    mse: float
    reg: float
    dz_x: np.ndarray
    dz_u: np.ndarray


def sst_loss(z_x: np.ndarray, y_x: np.ndarray, z_u: np.ndarray, y_u: np.ndarray,
             lambda_u: float = 1.0) -> SSTResult:
    """Labelled CE + lambda_u * unlabelled MSE + uniform-prior regulariser on the joint batch.

    Either pool may be empty, in which case its term is dropped.
    """
    nx, nu = z_x.shape[0], z_u.shape[0]
    if nx == 0 and nu == 0:
        raise ValueError("both labelled and unlabelled sets are empty")
    ce = mse = 0.0
    dz_x = np.zeros_like(z_x)
    dz_u = np.zeros_like(z_u)
    if nx:
        ce, dz_x = cross_entropy(z_x, y_x)
    if nu:
        mse, g = mse_loss(z_u, y_u)
        dz_u = lambda_u * g
    reg, g_reg = uniform_prior_reg(np.concatenate([z_x, z_u]))
    dz_x = dz_x + g_reg[:nx]
    dz_u = dz_u + g_reg[nx:]
    return SSTResult(ce + lambda_u * mse + reg, ce, mse, reg, dz_x, dz_u)

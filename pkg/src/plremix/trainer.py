"""Warmup, the alternating two-network co-divide loop, and per-epoch bookkeeping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import diag
from .config import TrainConfig, validate_schedule
from .datagen import AugmentSpec, Dataset, augment
from .net import DivergenceError, NetDims, NetState, SGDState, backward, forward, sgd_step
from .plr import (NegativeSets, full_negative_set, plr_flatnce, plr_infonce,
                  reliable_negative_set, scl_loss, vanilla_infonce)
from .protos import (ProtoState, confident_set, init_prototypes, pseudo_soft_label,
                     similarity, update_prototypes, update_thresholds)
from .selection import (clean_posterior, fit_gmm1d, fit_gmm2d, loss_pairs,
                        normalize_losses, partition)
from .sst import cross_entropy, guess_unlabeled, mixup, refine_labeled, sst_loss

log = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "epoch", "net", "test_acc", "sel_auc_2d", "sel_auc_1d", "neg_select_ratio",
    "neg_correct_ratio", "ent_median", "mag_ratio_median", "loss_total", "loss_sst", "loss_plr",
]

Hook = Callable[[str, dict], None]


@dataclass
class RunState:
    nets: list[NetState]
    opts: list[SGDState]
    protos: list[ProtoState | None]
    rng: np.random.Generator
    epoch: int = 0
    history: list[dict] = field(default_factory=list)
    fig4: list[dict] = field(default_factory=list)
    fig5: list[dict] = field(default_factory=list)
    fig6: dict | None = None


def kappa_at(epoch: int, schedule: list[tuple[int, int]]) -> tuple[int, bool]:
    """Piecewise-constant kappa at a post-warmup epoch; labels join the top-k sets while kappa >= 2."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    validate_schedule(schedule)
    kappa = schedule[0][1]
    for start, k in schedule:
        if epoch >= start:
            kappa = k
    return kappa, kappa >= 2


def init_state(cfg: TrainConfig, data: Dataset) -> RunState:
    ss = np.random.SeedSequence(cfg.seed)
    s_net0, s_net1, s_run = ss.spawn(3)
    dims = NetDims(data.dim, cfg.hidden_widths, data.num_classes, cfg.proj_hidden, cfg.d_proj)
    nets = [NetState.init(dims, s_net0), NetState.init(dims, s_net1)]
    return RunState(nets, [SGDState(), SGDState()], [None, None], np.random.default_rng(s_run))


def _aug_spec(cfg: TrainConfig) -> AugmentSpec:
    return AugmentSpec(cfg.weak_sigma, cfg.strong_sigma, cfg.strong_dropout_p, cfg.num_weak, 2)


def _lr(cfg: TrainConfig, epoch: int) -> float:
    return cfg.lr * (cfg.lr_decay_factor if epoch >= cfg.resolved_lr_decay_epoch() else 1.0)


def _batches(rng: np.random.Generator, n: int, b: int):
    perm = rng.permutation(n)
    for start in range(0, n, b):
        idx = perm[start:start + b]
        if len(idx) >= 2:
            yield idx


def _check_finite(value: float, grad: np.ndarray, where: str) -> None:
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise DivergenceError(f"non-finite loss or gradient at {where}")


def _contrastive(variant: str, q1, q2, ns: NegativeSets, cfg: TrainConfig, pseudo=None):
    if variant == "plr":
        fn = plr_flatnce if cfg.use_flat else plr_infonce
        return fn(q1, q2, ns, cfg.tau)
    if variant == "vanilla":
        return vanilla_infonce(q1, q2, cfg.tau)
    if variant == "scl":
        return scl_loss(q1, q2, pseudo, cfg.tau)
    raise ValueError(variant)


def _test_accuracy(net: NetState, data: Dataset, test: Dataset | None) -> float:
    ref = test if test is not None else data
    pred = np.argmax(forward(net, ref.features).z, axis=1)
    return float(np.mean(pred == ref.true_labels))


def _eval_pass(net: NetState, data: Dataset, cfg: TrainConfig, rng):
    """Single weak view of the whole dataset."""
    return forward(net, augment(data.features, _aug_spec(cfg), "weak", rng))


def _warmup_pass(state: RunState, n: int, data: Dataset, cfg: TrainConfig, epoch: int) -> dict:
    aug = _aug_spec(cfg)
    use_crl = cfg.method == "plremix" and cfg.crl_variant != "none"
    rng = state.rng
    totals, ces, crls = [], [], []
    for idx in _batches(rng, len(data), cfg.batch_size):
        net = state.nets[n]
        xb, yb = data.features[idx], data.noisy_labels[idx]
        out = forward(net, augment(xb, aug, "weak", rng))
        ce, dz = cross_entropy(out.z, yb)
        grad = backward(net, out, dz=dz)
        crl = 0.0
        if use_crl:
            o1 = forward(net, augment(xb, aug, "strong", rng))
            o2 = forward(net, augment(xb, aug, "strong", rng))
            crl, d1, d2 = vanilla_infonce(o1.q, o2.q, cfg.tau)
            grad = grad + cfg.lambda_i * (backward(net, o1, dq=d1) + backward(net, o2, dq=d2))
        total = ce + cfg.lambda_i * crl
        _check_finite(total, grad, f"warmup epoch {epoch} net {n}")
        state.nets[n] = sgd_step(net, grad, _lr(cfg, epoch), cfg.momentum, cfg.weight_decay, state.opts[n])
        totals.append(total)
        ces.append(ce)
        crls.append(crl)
    return {"loss_total": np.mean(totals), "loss_sst": np.mean(ces),
            "loss_plr": np.mean(crls) if use_crl else None}


def init_all_prototypes(state: RunState, data: Dataset, cfg: TrainConfig) -> None:
    for n in (0, 1):
        out = _eval_pass(state.nets[n], data, cfg, state.rng)
        state.protos[n] = init_prototypes(out.q, data.noisy_labels, data.num_classes,
                                          cfg.eta, cfg.tau_s, cfg.alpha)


def warmup(state: RunState, data: Dataset, cfg: TrainConfig, test: Dataset | None = None,
           num_epochs: int | None = None, init_protos: bool = True) -> RunState:
    """CE on noisy labels plus vanilla InfoNCE for both networks, then prototype initialisation."""
    num_epochs = cfg.warmup_epochs if num_epochs is None else num_epochs
    for epoch in range(num_epochs):
        for n in (0, 1):
            losses = _warmup_pass(state, n, data, cfg, epoch)
            state.history.append({"epoch": epoch, "net": n,
                                  "test_acc": _test_accuracy(state.nets[n], data, test), **losses})
        state.epoch = epoch + 1
    if init_protos:
        init_all_prototypes(state, data, cfg)
    return state


@dataclass
class Selection:
    pairs: np.ndarray
    w: np.ndarray
    w2d: np.ndarray
    w1d: np.ndarray


def select_samples(net: NetState, ps: ProtoState, data: Dataset, cfg: TrainConfig, rng) -> Selection:
    """Loss pairs from one network, both GMM fits, and the posterior chosen by ``gmm_variant``."""
    out = _eval_pass(net, data, cfg, rng)
    s = similarity(out.q, ps)
    pairs = loss_pairs(out.t, s, data.noisy_labels)
    pts = normalize_losses(pairs) if cfg.normalize_losses else pairs
    w2 = clean_posterior(fit_gmm2d(pts, cfg.gmm_max_iters, cov_floor=cfg.gmm_cov_floor), pts)
    _, w1 = fit_gmm1d(pts[:, 0], cfg.gmm_max_iters, cov_floor=cfg.gmm_cov_floor)
    return Selection(pairs, w2 if cfg.gmm_variant == "2d" else w1, w2, w1)


def _refresh_prototypes(state: RunState, n: int, data: Dataset, cfg: TrainConfig) -> None:
    out = _eval_pass(state.nets[n], data, cfg, state.rng)
    ps = state.protos[n]
    y_hat = pseudo_soft_label(out.t, similarity(out.q, ps), ps.alpha)
    ps = update_thresholds(ps, y_hat)
    idx, hard = confident_set(y_hat, ps)
    state.protos[n] = update_prototypes(ps, out.q[idx], hard)


def _sst_pass(state: RunState, n: int, m: int, data: Dataset, sel: Selection, clean: np.ndarray,
              cfg: TrainConfig, epoch: int, kappa: int, use_labels: bool,
              hooks: Hook | None, want_fig4: bool) -> dict:
    """One pass over the data training network n with partition fitted on network m."""
    aug = _aug_spec(cfg)
    rng = state.rng
    C = data.num_classes
    X, Y = data.features, data.noisy_labels
    lr = _lr(cfg, epoch)
    variant = cfg.crl_variant
    acc = {"total": [], "sst": [], "plr": [], "ent": [], "ratio": [],
           "sel": 0, "cor": 0, "pos": 0}

    for bi, idx in enumerate(_batches(rng, len(data), cfg.batch_size)):
        net, other = state.nets[n], state.nets[m]
        xb, yb = X[idx], Y[idx]
        weak = [augment(xb, aug, "weak", rng) for _ in range(cfg.num_weak)]
        t_n = np.stack([forward(net, v).t for v in weak])
        t_m = np.stack([forward(other, v).t for v in weak])
        lab = clean[idx]
        targets = np.empty((len(idx), C))
        if lab.any():
            targets[lab] = refine_labeled(yb[lab], sel.w[idx][lab], t_n[:, lab], cfg.T)
        if (~lab).any():
            targets[~lab] = guess_unlabeled(np.concatenate([t_n[:, ~lab], t_m[:, ~lab]]), cfg.T)

        v1 = augment(xb, aug, "strong", rng)
        v2 = augment(xb, aug, "strong", rng)
        mx = mixup(v1[lab], targets[lab], cfg.beta, rng, use_max=cfg.mixup_max)
        mu = mixup(v1[~lab], targets[~lab], cfg.beta, rng, use_max=cfg.mixup_max)
        nx = mx.x.shape[0]
        out_mix = forward(net, np.concatenate([mx.x, mu.x]))
        res = sst_loss(out_mix.z[:nx], mx.y, out_mix.z[nx:], mu.y, cfg.lambda_u)
        g_sst = backward(net, out_mix, dz=np.concatenate([res.dz_x, res.dz_u]))

        loss_crl, g_crl = 0.0, None
        if variant != "none":
            o1, o2 = forward(net, v1), forward(net, v2)
            t_top = t_n.mean(axis=0)
            ns_plr = reliable_negative_set(t_top, yb, kappa, use_labels)
            pseudo = np.argmax(targets, axis=1)
            grads = {}

            def crl_grad(kind):
                if kind not in grads:
                    value, d1, d2 = _contrastive(kind, o1.q, o2.q, ns_plr, cfg, pseudo)
                    grads[kind] = (value, backward(net, o1, dq=d1) + backward(net, o2, dq=d2))
                return grads[kind]

            loss_crl, g_crl = crl_grad(variant)
            if variant == "plr":
                ns_active = ns_plr
            elif variant == "vanilla":
                ns_active = full_negative_set(len(idx))
            else:
                ns_active = NegativeSets(pseudo[:, None] != pseudo[None, :], 0, False)
            nps = diag.neg_pair_stats(ns_active, data.true_labels[idx])
            acc["sel"] += nps.n_selected
            acc["cor"] += nps.n_correct
            acc["pos"] += nps.n_possible

            if cfg.diag_conflict and np.any(g_sst):
                acc["ent"].append(diag.entanglement(g_crl, g_sst))
                acc["ratio"].append(diag.magnitude_ratio(g_crl, g_sst))
                if want_fig4:
                    rec = {"epoch": epoch, "net": n, "batch": bi}
                    for kind in ("plr", "vanilla"):
                        g = crl_grad(kind)[1]
                        rec[f"ent_{kind}"] = diag.entanglement(g, g_sst)
                        rec[f"ratio_{kind}"] = diag.magnitude_ratio(g, g_sst)
                    state.fig4.append(rec)

        total = res.loss + cfg.lambda_i * loss_crl
        grad = g_sst if g_crl is None else g_sst + cfg.lambda_i * g_crl
        _check_finite(total, grad, f"epoch {epoch} net {n} batch {bi}")
        if hooks:
            hooks("batch", {"epoch": epoch, "net": n, "batch": bi, "loss_total": total,
                            "loss_sst": res.loss, "loss_plr": loss_crl, "lambda_i": cfg.lambda_i,
                            # enough to recompute the objective from scratch
                            "net_state": net, "grad": grad, "x_mix": (mx.x, mu.x),
                            "y_mix": (mx.y, mu.y), "views": (v1, v2),
                            "neg_sets": ns_plr if variant != "none" else None,
                            "pseudo": np.argmax(targets, axis=1)})
        state.nets[n] = sgd_step(net, grad, lr, cfg.momentum, cfg.weight_decay, state.opts[n])
        acc["total"].append(total)
        acc["sst"].append(res.loss)
        acc["plr"].append(loss_crl)

    has_crl = variant != "none"
    return {
        "loss_total": np.mean(acc["total"]),
        "loss_sst": np.mean(acc["sst"]),
        "loss_plr": np.mean(acc["plr"]) if has_crl else None,
        "neg_select_ratio": acc["sel"] / acc["pos"] if has_crl and acc["pos"] else None,
        "neg_correct_ratio": acc["cor"] / acc["sel"] if has_crl and acc["sel"] else None,
        "ent_median": float(np.median(acc["ent"])) if acc["ent"] else None,
        "mag_ratio_median": float(np.median(acc["ratio"])) if acc["ratio"] else None,
    }


def _ce_epoch(state: RunState, data: Dataset, cfg: TrainConfig, epoch: int,
              test: Dataset | None) -> None:
    """Plain cross-entropy on the noisy labels (baseline arm)."""
    aug = _aug_spec(cfg)
    for n in (0, 1):
        losses = []
        for idx in _batches(state.rng, len(data), cfg.batch_size):
            net = state.nets[n]
            out = forward(net, augment(data.features[idx], aug, "weak", state.rng))
            loss, dz = cross_entropy(out.z, data.noisy_labels[idx])
            grad = backward(net, out, dz=dz)
            _check_finite(loss, grad, f"epoch {epoch} net {n}")
            state.nets[n] = sgd_step(net, grad, _lr(cfg, epoch), cfg.momentum, cfg.weight_decay, state.opts[n])
            losses.append(loss)
        state.history.append({"epoch": epoch, "net": n, "test_acc": _test_accuracy(state.nets[n], data, test),
                              "loss_total": np.mean(losses), "loss_sst": np.mean(losses)})


def train_epoch(state: RunState, data: Dataset, cfg: TrainConfig, epoch: int,
                test: Dataset | None = None, hooks: Hook | None = None) -> RunState:
    """Select with network m, train network 1 - m on that split, refresh its prototypes; m = 0 then 1."""
    if any(p is None for p in state.protos):
        raise RuntimeError("train_epoch called before warmup initialised the prototypes")
    kappa, use_labels = kappa_at(epoch - cfg.warmup_epochs, cfg.kappa_steps())
    is_clean = data.clean_mask()  # diagnostics only
    want_fig4 = epoch == cfg.resolved_fig4_epoch()
    for m in (0, 1):
        n = 1 - m
        sel = select_samples(state.nets[m], state.protos[m], data, cfg, state.rng)
        part = partition(sel.w, cfg.p_threshold)
        clean = np.zeros(len(data), dtype=bool)
        clean[part.clean_idx] = True
        if hooks:
            hooks("partition", {"epoch": epoch, "fitted_on": m, "trains": n,
                                "n_clean": len(part.clean_idx), "net_theta": state.nets[m].theta})
        if epoch == cfg.resolved_fig6_epoch():
            state.fig6 = {"net": m, "l_cls": sel.pairs[:, 0], "l_proto": sel.pairs[:, 1],
                          "w": sel.w, "is_true_clean": is_clean}
        stats = _sst_pass(state, n, m, data, sel, clean, cfg, epoch, kappa, use_labels, hooks, want_fig4)
        _refresh_prototypes(state, n, data, cfg)
        if hooks:
            hooks("protos", {"epoch": epoch, "net": n, "protos": state.protos[n]})
        row = {"epoch": epoch, "net": n, "test_acc": _test_accuracy(state.nets[n], data, test),
               "sel_auc_2d": _auc(sel.w2d, is_clean), "sel_auc_1d": _auc(sel.w1d, is_clean), **stats}
        state.history.append(row)
        if cfg.crl_variant != "none":
            state.fig5.append({"epoch": epoch, "net": n, "kappa": kappa,
                               "select_ratio": stats["neg_select_ratio"],
                               "correct_ratio": stats["neg_correct_ratio"]})
    state.epoch = epoch + 1
    return state


def _auc(w, is_clean) -> float | None:
    if is_clean.all() or not is_clean.any():
        return None
    return diag.separation_auc(w, is_clean)


def run(cfg: TrainConfig, data: Dataset, test: Dataset | None = None,
        hooks: Hook | None = None) -> RunState:
    """Warmup followed by the co-divide loop; ``state.history`` holds one metrics row per epoch and network."""
    state = init_state(cfg, data)
    try:
        if cfg.method == "ce":
            for epoch in range(cfg.epochs):
                _ce_epoch(state, data, cfg, epoch, test)
                state.epoch = epoch + 1
            return state
        warm = min(cfg.warmup_epochs, cfg.epochs)
        warmup(state, data, cfg, test, num_epochs=warm, init_protos=cfg.epochs > warm)
        for epoch in range(cfg.warmup_epochs, cfg.epochs):
            train_epoch(state, data, cfg, epoch, test, hooks)
            log.debug("epoch %d: %s", epoch, state.history[-1])
    except DivergenceError as e:
        e.state = state  # partial history for the diagnostic dump
        raise
    return state


def best_last(history: list[dict], last_k: int = 10) -> tuple[float, float]:
    """Per-epoch accuracy is the mean over both networks' rows.

    Best is its maximum; Last is its mean over the final ``last_k`` epochs.
    """
    accs: dict[int, list[float]] = {}
    for row in history:
        accs.setdefault(row["epoch"], []).append(float(row["test_acc"]))
    per_epoch = [float(np.mean(accs[e])) for e in sorted(accs)]
    if not per_epoch:
        return float("nan"), float("nan")
    return max(per_epoch), float(np.mean(per_epoch[-last_k:]))

import numpy as np
import pytest

from plremix import trainer
from plremix.cli import make_data
from plremix.config import TrainConfig
from plremix.net import forward
from plremix.plr import plr_infonce
from plremix.sst import sst_loss

TINY = dict(num_classes=3, n_per_class=30, n_test_per_class=10, dim=6, separation=4.0,
            hidden="16", proj_hidden=8, d_proj=4, batch_size=16, epochs=4, warmup_epochs=2)


def tiny(**kw):
    return TrainConfig(**(TINY | kw))


def run_tiny(hooks=None, **kw):
    cfg = tiny(**kw)
    train, test = make_data(cfg)
    return cfg, train, trainer.run(cfg, train, test, hooks)


def test_kappa_schedule_examples():
    sched = [(0, 3), (40, 2), (70, 1)]
    assert trainer.kappa_at(39, sched) == (3, True)
    assert trainer.kappa_at(40, sched) == (2, True)
    assert trainer.kappa_at(70, sched) == (1, False)
    assert all(trainer.kappa_at(e, [(0, 1)]) == (1, False) for e in range(0, 200, 17))
    with pytest.raises(ValueError):
        trainer.kappa_at(3, [])
    with pytest.raises(ValueError):
        trainer.kappa_at(-1, sched)


def test_kappa_non_increasing():
    sched = TrainConfig(epochs=60, warmup_epochs=10).kappa_steps()
    assert sched == [(0, 3), (20, 2), (35, 1)]
    ks = [trainer.kappa_at(e, sched)[0] for e in range(50)]
    assert all(a >= b for a, b in zip(ks, ks[1:]))


def test_networks_do_not_share_storage():
    cfg = tiny()
    state = trainer.init_state(cfg, make_data(cfg)[0])
    assert not np.shares_memory(state.nets[0].theta, state.nets[1].theta)
    assert not np.array_equal(state.nets[0].theta, state.nets[1].theta)


def test_co_divide_direction():
    events = []
    trained_from = {}

    def hook(kind, info):
        if kind == "partition":
            trained_from[info["trains"]] = info["net_theta"]
            events.append((info["epoch"], info["fitted_on"], info["trains"]))
        elif kind == "batch":
            assert info["net"] in trained_from

    run_tiny(hook)
    assert events == [(e, m, 1 - m) for e in (2, 3) for m in (0, 1)]


def test_loss_decomposition_recomputed():
    checked = []

    def hook(kind, info):
        if kind != "batch":
            return
        net = info["net_state"]
        (xx, xu), (yx, yu) = info["x_mix"], info["y_mix"]
        out = forward(net, np.concatenate([xx, xu]))
        sst = sst_loss(out.z[:len(xx)], yx, out.z[len(xx):], yu, 1.0).loss
        v1, v2 = info["views"]
        crl = plr_infonce(forward(net, v1).q, forward(net, v2).q, info["neg_sets"], 0.25)[0]
        assert abs(sst - info["loss_sst"]) <= 1e-10
        assert abs(crl - info["loss_plr"]) <= 1e-10
        assert abs(sst + info["lambda_i"] * crl - info["loss_total"]) <= 1e-10
        checked.append(1)

    run_tiny(hook)
    assert checked


def test_warmup_only_rows():
    cfg, _, state = run_tiny(epochs=2)
    assert {r["epoch"] for r in state.history} == {0, 1}
    assert all("sel_auc_2d" not in r for r in state.history)
    assert state.protos == [None, None]


def test_zero_warmup_initialises_prototypes():
    _, _, state = run_tiny(warmup_epochs=0, epochs=1)
    for ps in state.protos:
        assert np.allclose(np.linalg.norm(ps.P, axis=1), 1)


def test_warmup_beats_chance():
    cfg = tiny(warmup_epochs=3, epochs=3, noise_ratio=0.3)
    train, _ = make_data(cfg)
    state = trainer.warmup(trainer.init_state(cfg, train), train, cfg)
    pred = np.argmax(forward(state.nets[0], train.features).z, axis=1)
    assert np.mean(pred == train.noisy_labels) > 1 / 3
    assert all(p is not None for p in state.protos)


def test_prototypes_unit_norm_every_epoch():
    norms = []
    run_tiny(lambda k, info: norms.append(np.linalg.norm(info["protos"].P, axis=1)) if k == "protos" else None)
    assert len(norms) == 4
    assert all(np.allclose(n, 1, atol=1e-12) for n in norms)


def test_same_seed_same_history():
    a = run_tiny()[2].history
    b = run_tiny()[2].history
    assert a == b
    c = run_tiny(seed=1)[2].history
    assert a != c


@pytest.mark.parametrize("kw", [dict(lambda_i=0.0), dict(crl_variant="none", gmm_variant="1d"),
                                dict(crl_variant="scl"), dict(crl_variant="vanilla"),
                                dict(use_flat=True), dict(method="ce")])
def test_arms_share_schema(kw):
    _, _, state = run_tiny(**kw)
    last = state.history[-1]
    assert set(last) <= set(trainer.METRIC_COLUMNS)
    assert np.isfinite(last["test_acc"])
    if kw.get("crl_variant") == "none":
        assert last["loss_plr"] is None


def test_lambda_zero_drops_contrastive_gradient():
    seen = []

    def hook(kind, info):
        if kind == "batch":
            seen.append(info["loss_total"] == info["loss_sst"])

    run_tiny(hook, lambda_i=0.0)
    assert all(seen)


def test_train_epoch_requires_warmup():
    cfg = tiny()
    train, _ = make_data(cfg)
    with pytest.raises(RuntimeError):
        trainer.train_epoch(trainer.init_state(cfg, train), train, cfg, 0)


def test_best_last():
    hist = [{"epoch": e, "test_acc": a} for e, a in enumerate([0.1, 0.5, 0.3])]
    assert trainer.best_last(hist) == (0.5, pytest.approx(0.3))
    hist = [{"epoch": e // 2, "test_acc": e / 10} for e in range(24)]
    best, last = trainer.best_last(hist)
    assert best == pytest.approx(2.25)
    assert last == pytest.approx(np.mean([(2 * e + 0.5) / 10 for e in range(2, 12)]))

import numpy as np
import pytest

from plremix.cli import main
from plremix.config import TrainConfig, build_config, load_config, parse_pairs, write_config
from plremix.datagen import load_csv

TINY = ["num_classes=3", "n_per_class=20", "n_test_per_class=5", "dim=6", "hidden=12",
        "proj_hidden=8", "d_proj=4", "batch_size=16", "epochs=3", "warmup_epochs=1"]


def sets(pairs):
    return [a for p in pairs for a in ("--set", p)]


def test_unknown_key_named():
    with pytest.raises(KeyError, match="bogus"):
        build_config({"bogus": "1"})


def test_unknown_key_cli_exit(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path), "--set", "lernrate=0.1"]) == 2
    assert "lernrate" in capsys.readouterr().err


def test_config_parse_and_round_trip(tmp_path):
    pairs = parse_pairs(["# comment", "", "lr = 0.01  # inline", "use_flat=true", "hidden = 32,16"])
    cfg = build_config(pairs)
    assert cfg.lr == 0.01 and cfg.use_flat is True and cfg.hidden_widths == (32, 16)
    write_config(cfg, tmp_path / "c.txt")
    assert load_config(tmp_path / "c.txt") == cfg
    assert load_config(tmp_path / "c.txt", ["lr=0.2"]).lr == 0.2


@pytest.mark.parametrize("bad", [{"crl_variant": "x"}, {"kappa_schedule": "0:2,5:3"},
                                 {"kappa_schedule": "3:2"}, {"use_flat": "maybe"}, {"batch_size": "1"}])
def test_invalid_config(bad):
    with pytest.raises(ValueError):
        build_config(bad)


def test_gen_noise_free(tmp_path):
    assert main(["gen", "--out", str(tmp_path), *sets(TINY), "--set", "noise_ratio=0"]) == 0
    ds = load_csv(tmp_path / "train.csv")
    assert np.array_equal(ds.noisy_labels, ds.true_labels)


def test_gen_deterministic(tmp_path):
    for d in ("a", "b"):
        main(["gen", "--out", str(tmp_path / d), *sets(TINY)])
    assert (tmp_path / "a/train.csv").read_bytes() == (tmp_path / "b/train.csv").read_bytes()


def test_gen_realized_fraction(tmp_path, capsys):
    main(["gen", "--out", str(tmp_path), "--set", "num_classes=10", "--set", "n_per_class=500",
          "--set", "n_test_per_class=1", "--set", "dim=4", "--set", "noise_ratio=0.5"])
    line = capsys.readouterr().out.splitlines()[0]
    assert abs(float(line.split()[2]) - 0.45) < 0.02


def test_train_header_only(tmp_path):
    assert main(["train", "--out", str(tmp_path), *sets(TINY), "--set", "epochs=0",
                 "--set", "warmup_epochs=0"]) == 0
    assert (tmp_path / "metrics.csv").read_text() == (
        "epoch,net,test_acc,sel_auc_2d,sel_auc_1d,neg_select_ratio,neg_correct_ratio,"
        "ent_median,mag_ratio_median,loss_total,loss_sst,loss_plr\n")


def test_train_from_csv_and_manifest_rerun(tmp_path):
    main(["gen", "--out", str(tmp_path / "data"), *sets(TINY)])
    paths = [f"data_path={tmp_path / 'data/train.csv'}", f"test_path={tmp_path / 'data/test.csv'}"]
    assert main(["train", "--out", str(tmp_path / "r1"), *sets(TINY + paths)]) == 0
    for f in ("metrics.csv", "fig5.csv", "fig6_epoch2.csv", "fig4_epoch2.csv", "manifest.txt"):
        assert (tmp_path / "r1" / f).is_file(), f
    assert main(["train", "--config", str(tmp_path / "r1/manifest.txt"), "--out", str(tmp_path / "r2")]) == 0
    assert (tmp_path / "r1/metrics.csv").read_bytes() == (tmp_path / "r2/metrics.csv").read_bytes()
    assert main(["diag", "--out", str(tmp_path / "r1")]) == 0
    assert (tmp_path / "r1/diag_summary.txt").read_text().startswith("best = ")


def test_manifest_hash_mismatch(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path), *sets(TINY), "--set", "expect_dataset_hash=abc"]) == 2
    assert "does not match" in capsys.readouterr().err


def test_missing_dataset(tmp_path):
    assert main(["train", "--out", str(tmp_path), "--set", f"data_path={tmp_path / 'nope.csv'}"]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(tmp_path):
    code = main(["train", "--out", str(tmp_path), *sets(TINY), "--set", "lr=1e200",
                 "--set", "momentum=0", "--set", "weight_decay=0"])
    assert code == 3
    assert (tmp_path / "divergence.txt").is_file()


def test_ablate_kappa_fixed(tmp_path):
    assert main(["ablate", "--axis", "kappa_fixed", "--out", str(tmp_path), *sets(TINY)]) == 0
    rows = (tmp_path / "ablation_summary.csv").read_text().splitlines()
    assert rows[0] == "arm,best,last,dataset_hash"
    assert [r.split(",")[0] for r in rows[1:]] == [
        "kappa_fixed=3", "kappa_fixed=2", "kappa_fixed=1", "kappa_fixed=schedule"]
    assert "kappa_schedule = 0:2" in (tmp_path / "kappa_fixed=2/manifest.txt").read_text()


def test_ablate_crl_shared_hash_and_schema(tmp_path):
    assert main(["ablate", "--axis", "crl_variant", "--values", "plr,vanilla", "--out", str(tmp_path),
                 *sets(TINY)]) == 0
    rows = [r.split(",") for r in (tmp_path / "ablation_summary.csv").read_text().splitlines()[1:]]
    assert len(rows) == 2 and rows[0][3] == rows[1][3]
    heads = {(tmp_path / f"crl_variant={v}/metrics.csv").read_text().splitlines()[0] for v in ("plr", "vanilla")}
    assert len(heads) == 1


def test_single_arm(tmp_path):
    assert main(["ablate", "--axis", "gmm_variant", "--values", "1d", "--out", str(tmp_path), *sets(TINY)]) == 0
    assert len((tmp_path / "ablation_summary.csv").read_text().splitlines()) == 2

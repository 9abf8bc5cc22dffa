"""Command-line entry point: ``gen``, ``train``, ``ablate`` and ``diag``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import diag, trainer
from .config import TrainConfig, build_config, load_config, write_config
from .datagen import (Dataset, NoiseSpec, dump_csv, inject_noise, load_csv, make_train_test,
                      nearest_class_map)
from .net import DivergenceError

log = logging.getLogger("plremix")

EXIT_USAGE = 2
EXIT_DIVERGED = 3

ABLATION_AXES = {
    "crl_variant": ["plr", "vanilla", "scl", "none"],
    "gmm_variant": ["2d", "1d"],
    "kappa_fixed": ["3", "2", "1", "schedule"],
}


def make_data(cfg: TrainConfig) -> tuple[Dataset, Dataset]:
    """Generate the (noisy train, clean test) pair described by the data keys of ``cfg``."""
    train, test = make_train_test(cfg.num_classes, cfg.n_per_class, cfg.n_test_per_class, cfg.dim,
                                  cfg.separation, cfg.spread, cfg.data_seed)
    mapping = nearest_class_map(train) if cfg.noise_kind == "asymmetric" else None
    spec = NoiseSpec(cfg.noise_kind, cfg.noise_ratio, mapping)
    return inject_noise(train, spec, np.random.default_rng([cfg.data_seed, 1])), test


def prepare_data(cfg: TrainConfig) -> tuple[Dataset, Dataset | None]:
    """Load CSVs named by ``data_path``/``test_path`` or generate in memory, then check the hash."""
    if cfg.data_path:
        if not Path(cfg.data_path).is_file():
            raise FileNotFoundError(f"dataset not found: {cfg.data_path}")
        train = load_csv(cfg.data_path, cfg.num_classes)
        test = load_csv(cfg.test_path, cfg.num_classes) if cfg.test_path else None
    else:
        train, test = make_data(cfg)
    if cfg.expect_dataset_hash and train.digest() != cfg.expect_dataset_hash:
        raise ValueError(f"dataset hash {train.digest()} does not match manifest "
                         f"{cfg.expect_dataset_hash}")
    return train, test


def write_outputs(state: trainer.RunState, cfg: TrainConfig, data: Dataset, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    diag.write_rows(out / "metrics.csv", trainer.METRIC_COLUMNS, state.history)
    if state.fig4:
        diag.export_fig4(out / f"fig4_epoch{cfg.resolved_fig4_epoch()}.csv", state.fig4)
    if state.fig5:
        diag.export_fig5(out / "fig5.csv", state.fig5)
    if state.fig6 is not None:
        f6 = state.fig6
        diag.export_fig6(out / f"fig6_epoch{cfg.resolved_fig6_epoch()}.csv",
                         f6["l_cls"], f6["l_proto"], f6["w"], f6["is_true_clean"])
    best, last = trainer.best_last(state.history)
    (out / "summary.txt").write_text(
        f"best = {best!r}\nlast = {last!r}\ndataset_hash = {data.digest()}\n")


def train_one(cfg: TrainConfig, out: Path) -> tuple[float, float, str]:
    """Run training and write the manifest and all exports into ``out``."""
    data, test = prepare_data(cfg)
    out.mkdir(parents=True, exist_ok=True)
    manifest = dataclasses.replace(cfg, expect_dataset_hash=data.digest())
    write_config(manifest, out / "manifest.txt",
                 ["resolved run manifest; rerun with: plremix train --config manifest.txt --out DIR"])
    try:
        state = trainer.run(cfg, data, test)
    except DivergenceError as e:
        partial = getattr(e, "state", None)
        if partial is not None:
            write_outputs(partial, cfg, data, out)
        (out / "divergence.txt").write_text(f"{e}\nlast completed epoch: "
                                            f"{partial.epoch - 1 if partial else 'none'}\n")
        raise
    write_outputs(state, cfg, data, out)
    best, last = trainer.best_last(state.history)
    return best, last, data.digest()


def cmd_gen(cfg: TrainConfig, out: Path) -> int:
    train, test = make_data(cfg)
    out.mkdir(parents=True, exist_ok=True)
    dump_csv(train, out / "train.csv")
    dump_csv(test, out / "test.csv")
    print(f"realized_noise = {train.realized_noise():.4f} (nominal {cfg.noise_ratio})")
    print(f"dataset_hash = {train.digest()}")
    return 0


def cmd_train(cfg: TrainConfig, out: Path) -> int:
    best, last, digest = train_one(cfg, out)
    print(f"best = {best:.4f}  last = {last:.4f}  dataset_hash = {digest}")
    return 0


def arm_config(cfg: TrainConfig, axis: str, value: str) -> TrainConfig:
    if axis == "kappa_fixed":
        sched = "" if value == "schedule" else f"0:{int(value)}"
        return dataclasses.replace(cfg, kappa_schedule=sched)
    return build_config({axis: value}, cfg)


def cmd_ablate(cfg: TrainConfig, out: Path, axis: str, values: list[str]) -> int:
    rows = []
    for value in values:
        arm = f"{axis}={value}"
        best, last, digest = train_one(arm_config(cfg, axis, value), out / arm)
        rows.append({"arm": arm, "best": best, "last": last, "dataset_hash": digest})
        print(f"{arm}: best = {best:.4f}  last = {last:.4f}")
    write_summary(out / "ablation_summary.csv", rows)
    return 0


def write_summary(path: Path, rows: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write("arm,best,last,dataset_hash\n")
        for r in rows:
            fh.write(f"{r['arm']},{r['best']!r},{r['last']!r},{r['dataset_hash']}\n")


def summarize_run(run_dir: Path) -> list[str]:
    """Plain-text digest of a finished run directory."""
    lines = []
    metrics = diag.read_rows(run_dir / "metrics.csv")
    if metrics:
        hist = [{"epoch": int(r["epoch"]), "test_acc": float(r["test_acc"])} for r in metrics]
        best, last = trainer.best_last(hist)
        lines.append(f"best = {best:.4f}  last = {last:.4f}")
        aucs = [r for r in metrics if r["sel_auc_2d"]]
        if aucs:
            end = [r for r in aucs if r["epoch"] == aucs[-1]["epoch"]]
            a2 = np.mean([float(r["sel_auc_2d"]) for r in end])
            a1 = np.mean([float(r["sel_auc_1d"]) for r in end])
            lines.append(f"final selection AUC: 2d = {a2:.4f}  1d = {a1:.4f}")
    for f4 in sorted(run_dir.glob("fig4_epoch*.csv")):
        for variant, s in diag.summarize_fig4(diag.read_rows(f4)).items():
            lines.append(f"{f4.name} {variant}: batches = {s['n']}  frac(E<0) = "
                         f"{s['frac_negative']:.3f}  median R = {s['median_ratio']:.3f}")
    f5 = run_dir / "fig5.csv"
    if f5.is_file():
        cr = [float(r["correct_ratio"]) for r in diag.read_rows(f5) if r["correct_ratio"]]
        if cr:
            lines.append(f"fig5: min correct_ratio = {min(cr):.4f}")
    for f6 in sorted(run_dir.glob("fig6_epoch*.csv")):
        rows = diag.read_rows(f6)
        w = np.array([float(r["w"]) for r in rows])
        clean = np.array([r["is_true_clean"] == "1" for r in rows])
        if clean.any() and not clean.all():
            lines.append(f"{f6.name}: AUC = {diag.separation_auc(w, clean):.4f}")
    return lines


def cmd_diag(out: Path) -> int:
    if not (out / "metrics.csv").is_file():
        raise FileNotFoundError(f"no metrics.csv in {out}")
    lines = summarize_run(out)
    print("\n".join(lines))
    (out / "diag_summary.txt").write_text("\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="plremix", description=__doc__)
    p.add_argument("verb", choices=["gen", "train", "ablate", "diag"])
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True, help="output directory (run directory for diag)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key; repeatable")
    p.add_argument("--axis", choices=sorted(ABLATION_AXES), default="crl_variant",
                   help="ablation axis")
    p.add_argument("--values", help="comma-separated arm values (default: every value of the axis)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        if args.verb == "diag":
            return cmd_diag(out)
        cfg = load_config(args.config, args.overrides)
        if args.verb == "gen":
            return cmd_gen(cfg, out)
        if args.verb == "train":
            return cmd_train(cfg, out)
        values = args.values.split(",") if args.values else ABLATION_AXES[args.axis]
        return cmd_ablate(cfg, out, args.axis, values)
    except DivergenceError as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (KeyError, ValueError, FileNotFoundError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

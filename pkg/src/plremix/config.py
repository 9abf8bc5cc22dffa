"""Flat ``key = value`` run configuration covering data generation and training."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


@dataclass
class TrainConfig:
    # data generation
    num_classes: int = 8
    n_per_class: int = 500
    n_test_per_class: int = 250
    dim: int = 32
    separation: float = 4.0
    spread: float = 1.0
    noise_kind: str = "symmetric"
    noise_ratio: float = 0.5
    data_seed: int = 0
    data_path: str = ""
    test_path: str = ""
    expect_dataset_hash: str = ""
    # augmentation
    weak_sigma: float = 0.1
    strong_sigma: float = 0.4
    strong_dropout_p: float = 0.2
    num_weak: int = 2
    # network
    hidden: str = "64,64"
    proj_hidden: int = 64
    d_proj: int = 32
    # optimisation
    method: str = "plremix"
    epochs: int = 60
    warmup_epochs: int = 10
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay_epoch: int = -1
    lr_decay_factor: float = 0.1
    # method
    tau: float = 0.25
    tau_s: float = 0.1
    T: float = 0.5
    alpha: float = 0.5
    beta: float = 4.0
    eta: float = 0.99
    lambda_u: float = 1.0
    lambda_i: float = 1.0
    kappa_schedule: str = ""
    use_flat: bool = False
    crl_variant: str = "plr"
    gmm_variant: str = "2d"
    p_threshold: float = 0.5
    gmm_cov_floor: float = 1e-3
    gmm_max_iters: int = 100
    normalize_losses: bool = True
    mixup_max: bool = False
    seed: int = 0
    # diagnostics
    diag_conflict: bool = True
    fig4_epoch: int = -1
    fig6_epoch: int = -1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        choices = {
            "method": ("plremix", "ce"),
            "crl_variant": ("plr", "vanilla", "scl", "none"),
            "gmm_variant": ("2d", "1d"),
            "noise_kind": ("symmetric", "asymmetric"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ValueError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        self.kappa_steps()

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return tuple(int(h) for h in self.hidden.split(",") if h.strip())

    @property
    def post_warmup_epochs(self) -> int:
        return max(self.epochs - self.warmup_epochs, 0)

    def kappa_steps(self) -> list[tuple[int, int]]:
        """(start_epoch, kappa) pairs counted from the first post-warmup epoch."""
        if not self.kappa_schedule.strip():
            return default_kappa_schedule(self.post_warmup_epochs)
        steps = []
        for part in self.kappa_schedule.split(","):
            start, k = part.split(":")
            steps.append((int(start), int(k)))
        validate_schedule(steps)
        return steps

    def resolved_lr_decay_epoch(self) -> int:
        return int(0.8 * self.epochs) if self.lr_decay_epoch < 0 else self.lr_decay_epoch

    def resolved_fig4_epoch(self) -> int:
        """Default: halfway through post-warmup training."""
        if self.fig4_epoch >= 0:
            return self.fig4_epoch
        return self.warmup_epochs + self.post_warmup_epochs // 2

    def resolved_fig6_epoch(self) -> int:
        return self.epochs - 1 if self.fig6_epoch < 0 else self.fig6_epoch

    def to_lines(self) -> list[str]:
        return [f"{f.name} = {_render(getattr(self, f.name))}" for f in dataclasses.fields(self)]


def default_kappa_schedule(post_epochs: int) -> list[tuple[int, int]]:
    """3 -> 2 -> 1 with breakpoints at 40% and 70% of post-warmup training (40/70 of 100)."""
    return [(0, 3), (round(0.4 * post_epochs), 2), (round(0.7 * post_epochs), 1)]


def validate_schedule(steps: list[tuple[int, int]]) -> None:
    if not steps:
        raise ValueError("kappa schedule is empty")
    if steps[0][0] != 0:
        raise ValueError("kappa schedule must start at post-warmup epoch 0")
    for (s0, k0), (s1, k1) in zip(steps, steps[1:]):
        if s1 < s0 or k1 > k0:
            raise ValueError("kappa schedule must be ordered by epoch and non-increasing in kappa")
    if any(k < 1 for _, k in steps):
        raise ValueError("kappa must be at least 1")


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(name: str, typ: str, raw: str):
    raw = raw.strip()
    if typ == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    return raw


def parse_pairs(lines, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def build_config(pairs: dict[str, str], base: TrainConfig | None = None) -> TrainConfig:
    """Apply string key/values on top of ``base``; unknown keys are rejected by name."""
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    values = dataclasses.asdict(base) if base is not None else {}
    for key, raw in pairs.items():
        if key not in types:
            raise KeyError(f"unknown config key: {key}")
        values[key] = _coerce(key, types[key], raw)
    return TrainConfig(**values)


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> TrainConfig:
    pairs = {}
    if path is not None:
        pairs.update(parse_pairs(Path(path).read_text().splitlines(), str(path)))
    pairs.update(parse_pairs(overrides or [], "--set"))
    return build_config(pairs)


def write_config(cfg: TrainConfig, path: str | Path, comments: list[str] = ()) -> None:
    text = "".join(f"# {c}\n" for c in comments) + "\n".join(cfg.to_lines()) + "\n"
    Path(path).write_text(text)

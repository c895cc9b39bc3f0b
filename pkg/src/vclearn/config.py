"""Experiment configuration and TOML loading."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .bench import BenchConfig

STRATEGIES = ("baseline", "discard", "keep", "vc")
PC_MODES = ("temporal", "cross")
SCALE_MODES = ("constant", "adaptive")


@dataclass
class ExperimentConfig:
    seed: int = 0
    label_ratio: float = 0.01
    iterations: int = 6000
    warmup_iters: int = 400
    lr: float = 0.1
    lambda_u: float = 2.0
    ema_momentum: float = 0.999
    score_thr: float = 0.7
    score_temp: float = 0.6
    nms_thr: float = 0.5
    fg_thr: float = 0.5
    bg_thr: float = 0.5
    iou_close_thr: float = 0.5
    t_loc: float = 0.05
    scale_mode: str = "constant"
    scale: float = 3.5
    focal_gamma: float = 1.5
    pc_mode: str = "temporal"
    strategy: str = "vc"
    reg_star_enabled: bool = False
    unlabelled_per_step: int = 4
    bg_sample_ratio: float = 0.5
    eval_interval: int = 200
    eval_teacher: bool = True
    bench: BenchConfig = field(default_factory=BenchConfig)

    def __post_init__(self):
        if self.warmup_iters >= self.iterations:
            raise ValueError("warmup_iters must be smaller than iterations")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.pc_mode not in PC_MODES:
            raise ValueError(f"unknown pc_mode {self.pc_mode!r}")
        if self.scale_mode not in SCALE_MODES:
            raise ValueError(f"unknown scale_mode {self.scale_mode!r}")
        for name in ("score_thr", "iou_close_thr"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ValueError(f"{name} must be in (0,1), got {v}")
        if self.t_loc <= 0 or self.lr <= 0 or self.lambda_u < 0:
            raise ValueError("t_loc and lr must be positive, lambda_u non-negative")
        if self.score_temp <= 0:
            raise ValueError(f"score_temp must be positive, got {self.score_temp}")
        if not (0.0 <= self.ema_momentum < 1.0):
            raise ValueError(f"ema_momentum must be in [0,1), got {self.ema_momentum}")

    def replace(self, **kwargs) -> "ExperimentConfig":
        return dataclasses.replace(self, **kwargs)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["bench"]["pairs"] = [list(p) for p in self.bench.pairs]
        return d


def load_config(path: str) -> ExperimentConfig:
    """Read a TOML config file; unknown keys are an error."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    bench_raw = raw.pop("bench", {})
    bench_fields = {f.name for f in dataclasses.fields(BenchConfig)}
    unknown = set(bench_raw) - bench_fields
    if unknown:
        raise ValueError(f"unknown [bench] keys: {sorted(unknown)}")
    if "pairs" in bench_raw:
        bench_raw["pairs"] = [tuple(p) for p in bench_raw["pairs"]]
    bench = BenchConfig(**bench_raw)

    exp_fields = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"bench"}
    unknown = set(raw) - exp_fields
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(bench=bench, **raw)

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, Tuple, Union

from src.attention import EntropyScaleConfig, TttConfig
from src.attention.ttt import ConvTarget, LossKind
from src.errors import ConfigError, ContractViolation
from src.model import ExecutionConfig, GlobalMode, ModelConfig, Precision
from src.runner import ShardStrategy

BENCH_MODES = ("softmax", "linear", "ttt", "ttt_offload", "ttt_sharded")
GLOBAL_MODES = {"softmax": GlobalMode.SOFTMAX_REFERENCE, "linear": GlobalMode.LINEAR}
DEFAULT_OUTPUTS = {
    "bench": "scaling.csv",
    "map": "scene.vgt3",
    "query": "query.csv",
    "ablate-steps": "ablate_steps.csv",
    "ablate-conv": "ablate_conv.csv",
}


@dataclass(frozen=True)
class RunConfig:
    modes: Tuple[str, ...] = ("ttt", "softmax")
    frames: Tuple[int, ...] = (32, 64, 128, 256)
    tokens_per_frame: int = 64
    grid_h: int = 0
    grid_w: int = 0
    specials_per_frame: int = 2
    dim: int = 128
    heads: int = 4
    layers: int = 4
    expansion: int = 4
    steps: int = 2
    lr: float = 0.1
    ns_iters: int = 5
    eps: float = 1e-7
    conv_kernel_size: int = 3
    conv_target: str = "values"
    loss: str = "dot"
    scale_lr_by_minibatches: bool = False
    entropy_scaling: bool = True
    n_train_tokens: int = 32856
    seed: int = 42
    precision: str = "64"
    workers: int = 4
    strategy: str = "contiguous"
    resident_limit: int = 1
    threads: int = 0
    repeats: int = 3
    warmup: int = 1
    max_attention_mb: int = 4096
    out: str = ""
    scene: str = "scene.vgt3"
    query_frames: int = 1
    query_seed: int = 7
    suite: str = "all"
    mode: str = "ttt"
    csv: str = "scaling.csv"
    ablate_steps: Tuple[int, ...] = (0, 1, 2, 3, 4)
    conv_configs: Tuple[str, ...] = ("none", "V-3", "V-5", "KV-3")

    def __post_init__(self):
        unknown = [m for m in self.modes if m not in BENCH_MODES]
        if unknown:
            raise ConfigError(f"unknown bench modes {unknown}; expected a subset of {list(BENCH_MODES)}")
        if self.repeats < 1 or self.warmup < 0:
            raise ConfigError(f"repeats must be >= 1 and warmup >= 0, got {self.repeats}/{self.warmup}")
        for name in ("tokens_per_frame", "dim", "heads", "layers", "expansion", "workers", "resident_limit",
                     "query_frames"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("specials_per_frame", "threads", "grid_h", "grid_w"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        h, w = self.grid
        if h * w != self.tokens_per_frame:
            raise ConfigError(f"grid {h}x{w} does not hold {self.tokens_per_frame} tokens per frame")

    @property
    def grid(self) -> Tuple[int, int]:
        """Explicit grid_h x grid_w, or the most square factorization of tokens_per_frame."""
        if self.grid_h and self.grid_w:
            return self.grid_h, self.grid_w
        n = self.tokens_per_frame
        h = int(math.isqrt(n))
        while h > 1 and n % h:
            h -= 1
        return h, n // h

    def output_path(self, command: str) -> str:
        return self.out or DEFAULT_OUTPUTS.get(command, "out.csv")

    def echo(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name}={value}")
        return "\n".join(lines)

    def ttt_config(self, **overrides) -> TttConfig:
        try:
            cfg = TttConfig(steps=self.steps, lr=self.lr, ns_iters=self.ns_iters, eps=self.eps,
                            conv_kernel_size=self.conv_kernel_size, conv_target=ConvTarget(self.conv_target),
                            expansion=self.expansion, loss=LossKind(self.loss),
                            scale_lr_by_minibatches=self.scale_lr_by_minibatches)
            return replace(cfg, **overrides)
        except (ValueError, ContractViolation) as e:
            raise ConfigError(str(e)) from e

    def model_config(self, mode: str = "ttt", **ttt_overrides) -> ModelConfig:
        """ModelConfig for one bench mode (see BENCH_MODES)."""
        if mode not in BENCH_MODES:
            raise ConfigError(f"unknown mode {mode!r}")
        threads = self.threads or None
        if mode == "ttt_offload":
            execution = ExecutionConfig(resident_limit=self.resident_limit, threads=threads)
        elif mode == "ttt_sharded":
            execution = ExecutionConfig(workers=self.workers, strategy=ShardStrategy(self.strategy), threads=threads)
        else:
            execution = ExecutionConfig(threads=threads)
        try:
            return ModelConfig(
                layers=self.layers, d=self.dim, heads=self.heads, expansion=self.expansion,
                global_mode=GLOBAL_MODES.get(mode, GlobalMode.TTT),
                ttt_cfg=self.ttt_config(**ttt_overrides),
                entropy_cfg=EntropyScaleConfig(self.n_train_tokens, self.entropy_scaling),
                seed=self.seed, precision=Precision(self.precision), execution=execution)
        except (ValueError, ContractViolation) as e:
            raise ConfigError(str(e)) from e


def _parse_value(name: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, tuple):
            item_type = type(default[0]) if default else str
            return tuple(item_type(part.strip()) for part in raw.split(",") if part.strip())
        return type(default)(raw)
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for {name}") from None


def apply_overrides(base: RunConfig, overrides: Dict[str, str]) -> RunConfig:
    """Parse string overrides against the field types of RunConfig; unknown keys are rejected."""
    known = {f.name: f for f in fields(RunConfig)}
    changes = {}
    for key, raw in overrides.items():
        name = key.replace("-", "_")
        if name not in known:
            raise ConfigError(f"unknown config key {key!r}")
        changes[name] = _parse_value(name, str(raw), getattr(base, name))
    return replace(base, **changes)


def parse_config_text(text: str) -> Dict[str, str]:
    entries = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def load_run_config(path: Union[str, Path, None] = None, flags: Dict[str, str] = None) -> RunConfig:
    """Defaults, then the key=value file, then command-line flags."""
    cfg = RunConfig()
    if path:
        cfg = apply_overrides(cfg, parse_config_text(Path(path).read_text()))
    if flags:
        cfg = apply_overrides(cfg, flags)
    return cfg

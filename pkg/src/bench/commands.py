import csv
import hashlib
import statistics
import time
from pathlib import Path
from typing import List, Tuple

import numpy as np

from src.attention import flops_linear, flops_sdpa, flops_ttt
from src.attention.softmax import DEFAULT_QUERY_BLOCK
from src.bench.BenchRecord import BenchRecord, append_records
from src.bench.RunConfig import RunConfig
from src.bench.fit import fit_scaling_exponent
from src.errors import ConfigError, RunError
from src.model import Model, SceneState, TokenGrid, tokenize_synthetic
from src.runner import event_emitter

QUERY_COLUMNS = ["frame", "mean", "std", "mean_row_norm", "wall_ms"]


def synthetic_tokens(cfg: RunConfig, n_frames: int, seed: int) -> TokenGrid:
    h, w = cfg.grid
    return tokenize_synthetic(n_frames, h, w, cfg.dim, seed, cfg.specials_per_frame)


def attention_buffer_mb(n_tokens: int, query_block: int = DEFAULT_QUERY_BLOCK) -> float:
    """Size of one row block of float64 attention scores (heads run one after another)."""
    return min(n_tokens, query_block) * n_tokens * 8 / 2 ** 20


def model_flops(cfg: RunConfig, mode: str, n_tokens: int) -> int:
    if mode == "softmax":
        return cfg.layers * flops_sdpa(n_tokens, cfg.dim, cfg.heads)
    if mode == "linear":
        return cfg.layers * flops_linear(n_tokens, cfg.dim, cfg.heads)
    return cfg.layers * flops_ttt(n_tokens, cfg.dim, cfg.expansion * cfg.dim, cfg.steps, cfg.ns_iters)


def _time_forward(model: Model, tokens: TokenGrid, warmup: int, repeats: int) -> float:
    for _ in range(warmup):
        model.forward(tokens)
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        model.forward(tokens)
        samples.append((time.perf_counter() - start) * 1000.0)
    return statistics.median(samples)


def _check_sweep(cfg: RunConfig):
    if not cfg.frames or not cfg.modes:
        raise ConfigError("the frame sweep and the mode list must not be empty")
    if any(f < 1 for f in cfg.frames):
        raise ConfigError(f"frame counts must be >= 1, got {list(cfg.frames)}")
    if "softmax" in cfg.modes:
        n_tokens = max(cfg.frames) * (cfg.tokens_per_frame + cfg.specials_per_frame)
        needed = attention_buffer_mb(n_tokens)
        if needed > cfg.max_attention_mb:
            raise ConfigError(
                f"softmax at {max(cfg.frames)} frames needs ~{needed:.0f} MB of attention scores per block "
                f"(max_attention_mb={cfg.max_attention_mb}); drop softmax from --modes or shrink --frames")


def cmd_bench_scaling(cfg: RunConfig) -> List[BenchRecord]:
    """Times one forward pass per (mode, n_frames) and appends the rows to the CSV."""
    _check_sweep(cfg)
    out = cfg.output_path("bench")
    records = []
    for mode in cfg.modes:
        model = Model(cfg.model_config(mode))
        for n_frames in cfg.frames:
            tokens = synthetic_tokens(cfg, n_frames, cfg.seed)
            wall_ms = _time_forward(model, tokens, cfg.warmup, cfg.repeats)
            record = BenchRecord(mode, n_frames, cfg.tokens_per_frame, cfg.steps, wall_ms,
                                 model_flops(cfg, mode, len(tokens)), model.peak_resident_minibatches, cfg.seed)
            append_records(out, [record])
            event_emitter.emit('bench_row', record)
            records.append(record)
    return records


def _single_frame_count(cfg: RunConfig) -> int:
    if len(cfg.frames) != 1:
        raise ConfigError(f"map takes a single --frames value, got {list(cfg.frames)}")
    return cfg.frames[0]


def cmd_map(cfg: RunConfig) -> Tuple[SceneState, int, float]:
    """Maps a synthetic scene and writes its fast weights; returns (scene, bytes written, wall_ms)."""
    n_frames = _single_frame_count(cfg)
    model = Model(cfg.model_config("ttt"))
    tokens = synthetic_tokens(cfg, n_frames, cfg.seed)
    start = time.perf_counter()
    _, scene = model.forward(tokens)
    wall_ms = (time.perf_counter() - start) * 1000.0
    size = scene.save(cfg.output_path("map"))
    print(f"layers={len(scene.layers)} bytes={size} wall_ms={wall_ms:.2f}")
    return scene, size, wall_ms


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_query(cfg: RunConfig) -> Tuple[np.ndarray, float]:
    """
    Runs the frozen-query pass for `query_frames` synthetic frames against the
    stored scene and writes per-frame output statistics. Nothing is written
    when the scene does not belong to the configured model.
    """
    scene_path = Path(cfg.scene)
    checksum = _sha256(scene_path)
    scene = SceneState.load(scene_path)
    model = Model(cfg.model_config("ttt"))
    scene.verify(model.config)

    tokens = synthetic_tokens(cfg, cfg.query_frames, cfg.query_seed)
    start = time.perf_counter()
    out = model.query(scene, tokens)
    wall_ms = (time.perf_counter() - start) * 1000.0

    if _sha256(scene_path) != checksum:
        raise RunError(f"scene file {scene_path} changed during the query")

    with Path(cfg.output_path("query")).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(QUERY_COLUMNS)
        for frame in range(out.n_frames):
            rows = out.frame_tokens(frame)
            writer.writerow([frame, f"{rows.mean():.10g}", f"{rows.std():.10g}",
                             f"{np.linalg.norm(rows, axis=1).mean():.10g}", f"{wall_ms:.3f}"])
    print(f"query_frames={out.n_frames} scene_frames={scene.n_frames} "
          f"flops={model.query_flops(scene, tokens)} wall_ms={wall_ms:.2f}")
    return out.tokens, wall_ms


def cmd_fit(cfg: RunConfig) -> float:
    exponent = fit_scaling_exponent(cfg.csv, cfg.mode)
    print(f"mode={cfg.mode} exponent={exponent:.4f}")
    return exponent

"""
Ablations over the number of inner optimizer steps and over the ShortConv2D
filter configuration. For every setting and frame count the TTT stack is run
on synthetic tokens and compared against the softmax stack that shares its
slow weights. The kernelized linear-attention stack on the same weights is
reported alongside as a baseline.
"""
import csv
from dataclasses import dataclass, fields, astuple
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from src.attention import inner_loss, prepare_ttt_inputs
from src.attention.ttt import ConvTarget
from src.bench.RunConfig import RunConfig
from src.bench.commands import synthetic_tokens
from src.errors import ConfigError
from src.model import Model, TokenGrid, frame_self_attention

CONV_TARGETS = {"V": ConvTarget.VALUES, "K": ConvTarget.KEYS, "KV": ConvTarget.KEYS_AND_VALUES}


@dataclass(frozen=True)
class AblationRecord:
    setting: str
    n_frames: int
    layer: int
    inner_loss_per_token: float
    relative_deviation: float
    linear_relative_deviation: float
    seed: int

    @classmethod
    def columns(cls) -> List[str]:
        return [f.name for f in fields(cls)]


def parse_conv_config(name: str) -> Dict:
    """'none', or '<V|K|KV>-<odd kernel size>' such as 'V-3' or 'KV-5'."""
    if name == "none":
        return {"conv_target": ConvTarget.NONE}
    target, _, size = name.partition("-")
    if target not in CONV_TARGETS or not size.isdigit():
        raise ConfigError(f"unknown conv config {name!r}; expected none or one of V-k, K-k, KV-k")
    return {"conv_target": CONV_TARGETS[target], "conv_kernel_size": int(size)}


def layer_losses(model: Model, tokens: TokenGrid) -> Tuple[TokenGrid, List[float]]:
    """TTT forward that also reports each global layer's final inner loss per token."""
    x = model.cast(tokens)
    losses = []
    for layer, ttt_layer in zip(model.params.layers, model.ttt_layers):
        x = frame_self_attention(x, layer.frame, model.config.ttt_cfg.eps)
        _, k, vp = prepare_ttt_inputs(x.tokens, x.grid, x.special_mask, layer.global_)
        x, theta = ttt_layer.run(x)
        losses.append(inner_loss(theta, k, vp, model.config.ttt_cfg.loss) / len(x))
    return x, losses


def relative_deviation(out: np.ndarray, reference: np.ndarray) -> float:
    return float(np.linalg.norm(out - reference) / np.linalg.norm(reference))


def _run_setting(cfg: RunConfig, setting: str, **ttt_overrides) -> List[AblationRecord]:
    ttt_model = Model(cfg.model_config("ttt", **ttt_overrides))
    softmax_model = Model(cfg.model_config("softmax", **ttt_overrides), ttt_model.params)
    linear_model = Model(cfg.model_config("linear", **ttt_overrides), ttt_model.params)
    records = []
    for n_frames in cfg.frames:
        tokens = synthetic_tokens(cfg, n_frames, cfg.seed)
        out, losses = layer_losses(ttt_model, tokens)
        reference, _ = softmax_model.forward(tokens)
        deviation = relative_deviation(out.tokens, reference.tokens)
        linear, _ = linear_model.forward(tokens)
        linear_deviation = relative_deviation(linear.tokens, reference.tokens)
        records += [AblationRecord(setting, n_frames, index, loss, deviation, linear_deviation, cfg.seed)
                    for index, loss in enumerate(losses)]
    return records


def write_ablation(path, records: List[AblationRecord]):
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(AblationRecord.columns())
        for record in records:
            writer.writerow(astuple(record))


def cmd_ablate_steps(cfg: RunConfig) -> List[AblationRecord]:
    if not cfg.ablate_steps or not cfg.frames:
        raise ConfigError("ablate-steps needs at least one step count and one frame count")
    records = []
    for steps in cfg.ablate_steps:
        records += _run_setting(cfg, f"steps={steps}", steps=steps)
    write_ablation(cfg.output_path("ablate-steps"), records)
    return records


def cmd_ablate_conv(cfg: RunConfig) -> List[AblationRecord]:
    if not cfg.conv_configs or not cfg.frames:
        raise ConfigError("ablate-conv needs at least one conv config and one frame count")
    records = []
    for name in cfg.conv_configs:
        records += _run_setting(cfg, name, **parse_conv_config(name))
    write_ablation(cfg.output_path("ablate-conv"), records)
    return records

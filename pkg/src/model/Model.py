from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from src.attention import (AttentionParams, EntropyScaleConfig, FeatureMap, TttLayerParams, attention_block_reference,
                           flops_sdpa, flops_ttt)
from src.errors import ContractViolation
from src.model.GlobalLayer import GlobalLayer
from src.model.ModelConfig import GlobalMode, ModelConfig
from src.model.SceneState import MASK64, SceneState
from src.model.TokenGrid import TokenGrid
from src.model.layers.LinearGlobalLayer import LinearGlobalLayer
from src.model.layers.SoftmaxGlobalLayer import SoftmaxGlobalLayer
from src.model.layers.TttGlobalLayer import TttGlobalLayer
from src.numerics import Rng
from src.runner.EventEmitter import event_emitter

READOUT_DIM = 3
NO_ENTROPY_SCALING = EntropyScaleConfig(enabled=False)


def frame_self_attention(tokens: TokenGrid, params: AttentionParams, eps: float = 1e-7) -> TokenGrid:
    """Attention restricted to each frame (block-diagonal over frames)."""
    if tokens.n_frames == 0:
        return tokens
    out = [attention_block_reference(tokens.frame_tokens(f), params, NO_ENTROPY_SCALING, eps)
           for f in range(tokens.n_frames)]
    return tokens.with_tokens(np.concatenate(out))


@dataclass(frozen=True, eq=False)
class LayerParams:
    frame: AttentionParams
    global_: TttLayerParams
    feature_map: FeatureMap


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Fixed, seeded slow weights. The softmax and linear baselines reuse the TTT layer's projections."""
    layers: Tuple[LayerParams, ...]
    readout_weights: np.ndarray

    @classmethod
    def seeded(cls, config: ModelConfig) -> "ModelParams":
        dtype = config.precision.dtype
        root = Rng(config.seed)
        blocks = []
        for index in range(config.layers):
            rng = root.spawn(index)
            frame = AttentionParams.seeded(config.d, config.heads, rng, dtype=dtype)
            global_attn = AttentionParams.seeded(config.d, config.heads, rng, dtype=dtype)
            blocks.append((frame, TttLayerParams.seeded(global_attn, config.ttt_cfg, rng)))
        readout_weights = root.normal(config.d, READOUT_DIM, dtype) / np.sqrt(config.d)
        # feature maps have their own stream; TTT settings never change them
        features = root.spawn(config.layers)
        layers = []
        for index, (frame, global_) in enumerate(blocks):
            feature_map = FeatureMap.seeded(config.d, config.heads, features.spawn(index), dtype=dtype)
            layers.append(LayerParams(frame, global_, feature_map))
        return cls(tuple(layers), readout_weights)


class Model:
    """
    Alternating stack: frame-wise self-attention followed by a global layer,
    repeated `config.layers` times.
    """

    def __init__(self, config: ModelConfig, params: Optional[ModelParams] = None):
        self.config = config
        self.params = params or ModelParams.seeded(config)
        if len(self.params.layers) != config.layers:
            raise ContractViolation(f"{len(self.params.layers)} layer params for {config.layers} layers")
        eps = config.ttt_cfg.eps
        self.ttt_layers = [TttGlobalLayer(p.global_, config.execution) for p in self.params.layers]
        if config.global_mode is GlobalMode.TTT:
            self.global_layers: List[GlobalLayer] = list(self.ttt_layers)
        elif config.global_mode is GlobalMode.LINEAR:
            self.global_layers = [LinearGlobalLayer(p.global_.attn, p.feature_map, eps) for p in self.params.layers]
        else:
            self.global_layers = [SoftmaxGlobalLayer(p.global_.attn, config.entropy_cfg, eps)
                                  for p in self.params.layers]

    def __repr__(self):
        return f"Model(layers={self.config.layers}, d={self.config.d}, mode={self.config.global_mode.value})"

    def _check(self, tokens: TokenGrid):
        if tokens.d != self.config.d:
            raise ContractViolation(f"tokens have d={tokens.d}, model expects {self.config.d}")

    def cast(self, tokens: TokenGrid) -> TokenGrid:
        dtype = self.config.precision.dtype
        if tokens.tokens.dtype == dtype:
            return tokens
        return tokens.with_tokens(tokens.tokens.astype(dtype))

    def forward(self, tokens: TokenGrid) -> Tuple[TokenGrid, SceneState]:
        self._check(tokens)
        x = self.cast(tokens)
        states = []
        for index, (layer, global_layer) in enumerate(zip(self.params.layers, self.global_layers)):
            x = frame_self_attention(x, layer.frame, self.config.ttt_cfg.eps)
            x, theta = global_layer.run(x)
            if theta is not None:
                states.append(theta)
            event_emitter.emit('layer_done', index, global_layer.kind)

        if self.config.global_mode is GlobalMode.TTT:
            scene = SceneState(tuple(states), self.config.config_hash(), self.config.seed & MASK64,
                               tokens.n_frames)
        else:
            scene = SceneState.empty_for(self.config, tokens.n_frames)
        return x, scene

    def query(self, scene: SceneState, query_tokens: TokenGrid) -> TokenGrid:
        """
        Frozen pass: every global layer applies the stored fast weights, nothing
        is updated. Frames are processed one at a time, so a frame's output does
        not depend on which other frames are queried with it.
        """
        scene.verify(self.config)
        self._check(query_tokens)
        if query_tokens.n_frames < 1:
            raise ContractViolation("query needs at least one frame")
        x = self.cast(query_tokens)
        thetas = [theta.astype(self.config.precision.dtype) for theta in scene.layers]
        outputs = []
        for f in range(x.n_frames):
            frame = x.select_frames([f])
            for layer, ttt_layer, theta in zip(self.params.layers, self.ttt_layers, thetas):
                frame = frame_self_attention(frame, layer.frame, self.config.ttt_cfg.eps)
                frame, _ = ttt_layer.run(frame, theta)
            outputs.append(frame.tokens)
        return x.with_tokens(np.concatenate(outputs))

    def query_flops(self, scene: SceneState, query_tokens: TokenGrid) -> int:
        """Operation count of `query`. Scene size enters only through the fixed fast-weight shapes."""
        t = query_tokens.tokens_per_frame
        per_layer = flops_sdpa(t, self.config.d, self.config.heads) + flops_ttt(t, scene.d, scene.m, 0)
        return query_tokens.n_frames * len(scene.layers) * per_layer

    def readout(self, tokens: TokenGrid) -> np.ndarray:
        """Linear readout to 3 pseudo-coordinates per token."""
        return tokens.tokens @ self.params.readout_weights

    @property
    def peak_resident_minibatches(self) -> int:
        return max((layer.peak_resident_minibatches for layer in self.global_layers), default=0)


def forward(config: ModelConfig, tokens: TokenGrid) -> Tuple[TokenGrid, SceneState]:
    return Model(config).forward(tokens)


def query(config: ModelConfig, scene: SceneState, query_tokens: TokenGrid) -> TokenGrid:
    return Model(config).query(scene, query_tokens)

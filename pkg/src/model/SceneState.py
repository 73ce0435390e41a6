"""
Scene file layout (little-endian):

    magic "VGT3" | u32 version | u32 layer_count | u32 d | u32 m
    | u64 config_hash | u64 seed | u32 n_frames
    | per layer: w1 (d x m), w3 (d x m), w2 (m x d) as float32, row-major
"""
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from src.attention import FastWeights
from src.errors import FingerprintMismatch
from src.model.ModelConfig import ModelConfig

logger = logging.getLogger(__name__)

MAGIC = b"VGT3"
VERSION = 1
HEADER = struct.Struct("<4sIIIIQQI")
WEIGHT_DTYPE = np.dtype("<f4")
MASK64 = (1 << 64) - 1


@dataclass(frozen=True, eq=False)
class SceneState:
    layers: Tuple[FastWeights, ...]
    config_hash: int
    seed: int
    n_frames: int

    def __repr__(self):
        return f"SceneState(layers={len(self.layers)}, n_frames={self.n_frames}, hash={self.config_hash:#018x})"

    @property
    def d(self) -> int:
        return self.layers[0].d if self.layers else 0

    @property
    def m(self) -> int:
        return self.layers[0].m if self.layers else 0

    @property
    def empty(self) -> bool:
        return not self.layers

    @classmethod
    def empty_for(cls, config: ModelConfig, n_frames: int) -> "SceneState":
        return cls((), config.config_hash(), config.seed & MASK64, n_frames)

    def verify(self, config: ModelConfig):
        if self.config_hash != config.config_hash() or self.seed != (config.seed & MASK64):
            raise FingerprintMismatch(
                f"scene fingerprint {self.config_hash:#018x}/seed {self.seed} does not match "
                f"config {config.config_hash():#018x}/seed {config.seed}")
        if len(self.layers) != config.layers or self.d != config.d or self.m != config.m:
            raise FingerprintMismatch(
                f"scene has {len(self.layers)} layers of {self.d}x{self.m}, "
                f"config expects {config.layers} layers of {config.d}x{config.m}")

    def to_bytes(self) -> bytes:
        parts = [HEADER.pack(MAGIC, VERSION, len(self.layers), self.d, self.m,
                             self.config_hash, self.seed, self.n_frames)]
        for theta in self.layers:
            for w in theta:
                parts.append(np.ascontiguousarray(w, dtype=WEIGHT_DTYPE).tobytes())
        data = b"".join(parts)
        logger.debug(f"serialized {len(self.layers)} layers, {len(data)} bytes")
        return data

    @classmethod
    def from_bytes(cls, data: bytes) -> "SceneState":
        if len(data) < HEADER.size:
            raise FingerprintMismatch(f"scene data too short for a header: {len(data)} bytes")
        magic, version, layer_count, d, m, config_hash, seed, n_frames = HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise FingerprintMismatch(f"bad magic {magic!r}")
        if version != VERSION:
            raise FingerprintMismatch(f"unsupported scene version {version}")

        expected = HEADER.size + layer_count * 3 * d * m * WEIGHT_DTYPE.itemsize
        if len(data) != expected:
            raise FingerprintMismatch(f"scene data is {len(data)} bytes, header implies {expected}")

        offset = HEADER.size
        layers = []
        for _ in range(layer_count):
            mats = []
            for shape in ((d, m), (d, m), (m, d)):
                count = shape[0] * shape[1]
                w = np.frombuffer(data, dtype=WEIGHT_DTYPE, count=count, offset=offset).reshape(shape)
                mats.append(w.astype(np.float64))
                offset += count * WEIGHT_DTYPE.itemsize
            layers.append(FastWeights(*mats))
        logger.debug(f"deserialized {layer_count} layers of {d}x{m}")
        return cls(tuple(layers), config_hash, seed, n_frames)

    def save(self, path: Union[str, Path]) -> int:
        data = self.to_bytes()
        Path(path).write_bytes(data)
        return len(data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SceneState":
        return cls.from_bytes(Path(path).read_bytes())

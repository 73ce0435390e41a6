from src.model.TokenGrid import TokenGrid, tokenize_synthetic
from src.model.ModelConfig import ExecutionConfig, GlobalMode, ModelConfig, Precision
from src.model.SceneState import SceneState
from src.model.Model import Model, ModelParams, LayerParams, frame_self_attention, forward, query

from src.attention.FastWeights import FastWeights
from src.attention.softmax import (
    AttentionParams,
    EntropyScaleConfig,
    NormMode,
    project_qkv,
    entropy_scale,
    sdpa_global,
    attention_block_reference,
    flops_sdpa,
)
from src.attention.ttt import (
    BlockMode,
    ConvTarget,
    LossKind,
    TttConfig,
    TttLayerParams,
    fast_forward,
    short_conv2d_values,
    inner_loss,
    inner_grad,
    newton_schulz5,
    muon_step,
    ttt_update,
    ttt_apply,
    ttt_block,
    prepare_ttt_inputs,
    flops_ttt,
)
from src.attention.linear import (
    FeatureMap,
    linear_attention_global,
    linear_attention_block,
    flops_linear,
)

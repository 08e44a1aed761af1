"""Network layers: modality encoders, the MMoE-Pro expert network and AdaIN refinement."""
from .encoders import (
    PAD_ID,
    EmptySequenceError,
    ImagePatternEncoder,
    ImageSemanticEncoder,
    IndivisibleGridError,
    IPProjection,
    KernelTooLargeError,
    OutOfVocabularyError,
    TaskIndexError,
    TextEncoder,
    constrain_kernel,
    encode_image_pattern,
    encode_image_semantic,
    encode_text,
    project_ip,
)
from .moe_pro import MMoEPro, MoEOutput, TokenAttention, gate_weights, mmoe_pro_forward, token_attention
from .refine import (
    REDUCED_DIM,
    AdjustedSet,
    CoarseHead,
    StyleBank,
    StyleGenerator,
    StyleParams,
    adain,
    adjust_all,
    coarse_predict,
    style_from_output,
)
from .transformer_block import SelfAttention, TransformerBlock

__all__ = [
    "PAD_ID",
    "TextEncoder",
    "ImageSemanticEncoder",
    "ImagePatternEncoder",
    "IPProjection",
    "OutOfVocabularyError",
    "IndivisibleGridError",
    "KernelTooLargeError",
    "EmptySequenceError",
    "TaskIndexError",
    "constrain_kernel",
    "encode_text",
    "encode_image_semantic",
    "encode_image_pattern",
    "project_ip",
    "MMoEPro",
    "MoEOutput",
    "TokenAttention",
    "token_attention",
    "gate_weights",
    "mmoe_pro_forward",
    "TransformerBlock",
    "SelfAttention",
    "REDUCED_DIM",
    "CoarseHead",
    "StyleGenerator",
    "StyleBank",
    "StyleParams",
    "AdjustedSet",
    "coarse_predict",
    "style_from_output",
    "adain",
    "adjust_all",
]

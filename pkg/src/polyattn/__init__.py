"""Power-softmax attention variants and polynomial replacement of
transformer blocks, with depth accounting for encrypted evaluation."""

from .tensor import Matrix, ShapeError, identity, matmul, rowwise_reduce
from .attention import (
    AttentionConfig,
    attend,
    attention_weights,
    length_agnostic_power_softmax,
    lipschitz_power_softmax,
    mean_attention_distance,
    power_softmax,
    softmax,
    stable_power_softmax,
)
from .polyapprox import (
    DepthLedger,
    DomainError,
    GoldschmidtConfig,
    PolyApprox,
    depth_of,
    eval_poly,
    fit_sigmoid,
    gelu_poly,
    goldschmidt_inv_sqrt,
    goldschmidt_reciprocal,
)
from .polymodel import (
    ApproxConfig,
    BlockWeights,
    ConversionReport,
    ConvertedBlock,
    UnsupportedConversionError,
    block_internals,
    convert_block,
    exact_block,
    load_block_weights,
    random_block_weights,
    range_penalty,
    save_block_weights,
    stack_forward,
    stack_internals,
)
from .gradcheck import (
    GradResult,
    ToyTrainConfig,
    ToyTrainResult,
    block_value_and_grad,
    grad_check,
    standard_battery,
    toy_train,
)
from .analysis import (
    NormalizerComparison,
    SweepResult,
    SweepSpec,
    compare_normalizers,
    epsilon_error_sweep,
    length_growth_contrast,
    locality_sweep,
    summarize_attention_distance,
)

__all__ = [
    "ApproxConfig",
    "AttentionConfig",
    "BlockWeights",
    "ConversionReport",
    "ConvertedBlock",
    "DepthLedger",
    "DomainError",
    "GoldschmidtConfig",
    "GradResult",
    "Matrix",
    "NormalizerComparison",
    "PolyApprox",
    "ShapeError",
    "SweepResult",
    "SweepSpec",
    "ToyTrainConfig",
    "ToyTrainResult",
    "UnsupportedConversionError",
    "attend",
    "attention_weights",
    "block_internals",
    "block_value_and_grad",
    "compare_normalizers",
    "convert_block",
    "depth_of",
    "epsilon_error_sweep",
    "eval_poly",
    "exact_block",
    "fit_sigmoid",
    "gelu_poly",
    "goldschmidt_inv_sqrt",
    "goldschmidt_reciprocal",
    "grad_check",
    "identity",
    "length_agnostic_power_softmax",
    "length_growth_contrast",
    "lipschitz_power_softmax",
    "load_block_weights",
    "locality_sweep",
    "matmul",
    "mean_attention_distance",
    "power_softmax",
    "random_block_weights",
    "range_penalty",
    "save_block_weights",
    "softmax",
    "stable_power_softmax",
    "stack_forward",
    "stack_internals",
    "standard_battery",
    "summarize_attention_distance",
    "toy_train",
]

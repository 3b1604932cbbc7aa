"""Uniformity-aware information-balanced test-time adaptation.

Adapts a frozen zero-shot image classifier to corrupted inputs by
optimizing entropy, embedding uniformity, and EMA-teacher distillation
over low-rank adapters injected into the encoder's attention weights.
"""

from .corruption import (
    KINDS,
    CorruptionSpec,
    CorruptionStream,
    ImageBatch,
    Provenance,
    apply_corruption,
    corruption_suite,
)
from .diagnostics import (
    DiagnosticsReport,
    collect_batch_metrics,
    modality_gap_emd,
    spherical_pca_project,
)
from .encoder import (
    EncoderConfig,
    ToyViT,
    attention_forward,
    encoder_forward,
    merge_lora,
)
from .engine import (
    CSV_COLUMNS,
    MetricsRecord,
    StreamResult,
    TTAConfig,
    TTAState,
    evaluate_stream,
    init_tta_state,
    optimizer_step,
    records_to_csv,
    run_stream,
    tta_step,
)
from .hypersphere import (
    EmbeddingBatch,
    PredictionBatch,
    PrototypeBank,
    batch_accuracy,
    normalize_rows,
    zero_shot_probs,
)
from .lora import (
    LoRAConfig,
    LoRAParams,
    TeacherState,
    ema_update,
    init_lora,
    lora_effective_weight,
)
from .objectives import (
    PRESETS,
    BalanceConfig,
    LossBreakdown,
    balance_weight,
    composite_loss,
    distillation_loss,
    entropy_loss,
    marginal_entropy,
    mutual_information,
    preset_config,
    uniformity_loss,
    uniformity_metric,
)
from .prompts import (
    corruption_synonyms,
    ensemble_prototypes,
    load_prototypes,
    make_toy_bank,
    prompt_templates,
)
from .toydata import CLASS_NAMES, make_toy_dataset, pretrain_stem

__all__ = [
    "KINDS",
    "CorruptionSpec",
    "CorruptionStream",
    "ImageBatch",
    "Provenance",
    "apply_corruption",
    "corruption_suite",
    "DiagnosticsReport",
    "collect_batch_metrics",
    "modality_gap_emd",
    "spherical_pca_project",
    "EncoderConfig",
    "ToyViT",
    "attention_forward",
    "encoder_forward",
    "merge_lora",
    "CSV_COLUMNS",
    "MetricsRecord",
    "StreamResult",
    "TTAConfig",
    "TTAState",
    "evaluate_stream",
    "init_tta_state",
    "optimizer_step",
    "records_to_csv",
    "run_stream",
    "tta_step",
    "EmbeddingBatch",
    "PredictionBatch",
    "PrototypeBank",
    "batch_accuracy",
    "normalize_rows",
    "zero_shot_probs",
    "LoRAConfig",
    "LoRAParams",
    "TeacherState",
    "ema_update",
    "init_lora",
    "lora_effective_weight",
    "PRESETS",
    "BalanceConfig",
    "LossBreakdown",
    "balance_weight",
    "composite_loss",
    "distillation_loss",
    "entropy_loss",
    "marginal_entropy",
    "mutual_information",
    "preset_config",
    "uniformity_loss",
    "uniformity_metric",
    "corruption_synonyms",
    "ensemble_prototypes",
    "load_prototypes",
    "make_toy_bank",
    "prompt_templates",
    "CLASS_NAMES",
    "make_toy_dataset",
    "pretrain_stem",
]

"""Sequential recommendation with similarity-guided deterministic diffusion
for contrastive data augmentation."""

from .errors import ConfigError, DataError, NumericError, SimDiffRecError
from .dataio import (
    PAD_ID,
    Batch,
    Catalog,
    DatasetStats,
    InteractionLog,
    SequenceDataset,
    build_sequences,
    kcore_filter,
    load_bundle,
    load_interactions,
    make_batches,
    pad_sequence,
    save_bundle,
    split_leave_one_out,
    stats,
)
from .encoder import (
    EncoderConfig,
    HiddenStates,
    SequenceEncoder,
    attention_bias,
    generator_dropout,
    last_nonpad_state,
    next_item_logits,
    sample_negatives,
    sample_negatives_batch,
    sequence_representation,
    sr_loss,
)
from .diffusion import (
    DenoiserConfig,
    DiffusionState,
    NoiseMode,
    NoiseSchedule,
    NoiseTensor,
    SequenceDenoiser,
    SinusoidalTimeEmbedding,
    batch_similarity_noise,
    denoise_predict,
    diffusion_loss,
    forward_closed,
    forward_step,
    gaussian_noise,
    reverse_chain,
    round_to_items,
    rounding_log_probs,
    rounding_logits,
    sample_t,
    similarity_noise,
    similarity_scores,
    top_k_similar,
)
from .augment import (
    AugmentationPlan,
    ConfidenceVector,
    augment_batch,
    build_hard_negative,
    build_positive,
    confidence,
    k_aug_from_ratio,
    make_plan,
    position_distributions,
    random_positions,
    ranked_items,
    select_positions,
    sequence_hash,
)
from .contrastive import ContrastiveConfig, contrastive_loss, cosine_sim, info_nce
from .evalmetrics import (
    AggregateReport,
    MetricsReport,
    aggregate_runs,
    evaluate,
    evaluate_model,
    export_embeddings,
    hr_at_k,
    ndcg_at_k,
    rank_of_target,
    report_from_ranks,
)
from .checkpoint import (
    CheckpointBundle,
    load_checkpoint,
    load_into_models,
    model_tensors,
    save_checkpoint,
)
from .trainer import (
    ABLATION_MODES,
    ALPHA_BETA_GRID,
    EpochLog,
    Models,
    RngStreams,
    RunRecord,
    StepLosses,
    TrainConfig,
    ablate,
    build_models,
    fit,
    make_stream,
    metric_row,
    models_from_checkpoint,
    stream_seed,
    sweep,
    tensor_hash,
    train_step,
    write_metrics_json,
)
from .estimator import SimDiffRecommender

__version__ = "0.1.0"

__all__ = [
    "ablate",
    "ABLATION_MODES",
    "aggregate_runs",
    "AggregateReport",
    "ALPHA_BETA_GRID",
    "attention_bias",
    "augment_batch",
    "AugmentationPlan",
    "Batch",
    "batch_similarity_noise",
    "build_hard_negative",
    "build_models",
    "build_positive",
    "build_sequences",
    "Catalog",
    "CheckpointBundle",
    "confidence",
    "ConfidenceVector",
    "ConfigError",
    "contrastive_loss",
    "ContrastiveConfig",
    "cosine_sim",
    "DataError",
    "DatasetStats",
    "denoise_predict",
    "DenoiserConfig",
    "diffusion_loss",
    "DiffusionState",
    "EncoderConfig",
    "EpochLog",
    "evaluate",
    "evaluate_model",
    "export_embeddings",
    "fit",
    "forward_closed",
    "forward_step",
    "gaussian_noise",
    "generator_dropout",
    "HiddenStates",
    "hr_at_k",
    "info_nce",
    "InteractionLog",
    "k_aug_from_ratio",
    "kcore_filter",
    "last_nonpad_state",
    "load_bundle",
    "load_checkpoint",
    "load_interactions",
    "load_into_models",
    "make_batches",
    "make_plan",
    "make_stream",
    "metric_row",
    "MetricsReport",
    "model_tensors",
    "Models",
    "models_from_checkpoint",
    "ndcg_at_k",
    "next_item_logits",
    "NoiseMode",
    "NoiseSchedule",
    "NoiseTensor",
    "NumericError",
    "PAD_ID",
    "pad_sequence",
    "position_distributions",
    "random_positions",
    "rank_of_target",
    "ranked_items",
    "report_from_ranks",
    "reverse_chain",
    "RngStreams",
    "round_to_items",
    "rounding_log_probs",
    "rounding_logits",
    "RunRecord",
    "sample_negatives",
    "sample_negatives_batch",
    "sample_t",
    "save_bundle",
    "save_checkpoint",
    "select_positions",
    "sequence_hash",
    "sequence_representation",
    "SequenceDataset",
    "SequenceDenoiser",
    "SequenceEncoder",
    "SimDiffRecError",
    "SimDiffRecommender",
    "similarity_noise",
    "similarity_scores",
    "SinusoidalTimeEmbedding",
    "split_leave_one_out",
    "sr_loss",
    "stats",
    "StepLosses",
    "stream_seed",
    "sweep",
    "tensor_hash",
    "top_k_similar",
    "train_step",
    "TrainConfig",
    "write_metrics_json",
]

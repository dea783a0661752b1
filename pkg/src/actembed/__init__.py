"""Subject-invariant distributed embeddings for discrete activity time-series.

Trains segment-level embeddings of integer activity sequences with
negative-sampled content and context losses, an ordinal magnitude loss,
temporal smoothing, and an adversarial subject discriminator, then evaluates
them on disorder-classification tasks with linear classifiers.
"""

from actembed.corpus import (ActivitySequence, Corpus, CorpusError,
                             SegmentIndex, Vocabulary, build_vocabulary,
                             encode_corpus, load_corpus, oov_blend,
                             resolve_oov, save_corpus, segment,
                             segment_noise_distribution,
                             symbol_noise_distribution)
from actembed.downstream import (EvalReport, ProbeReport, evaluate_task,
                                 f1_scores, predict, subject_probe,
                                 train_logreg)
from actembed.losses import (LossGrad, adversarial_loss, combined_loss_value,
                             discriminator_loss, discriminator_probs,
                             neighbor_context_loss, ordinal_class_probs,
                             ordinal_loss, segment_content_loss, sigmoid,
                             smoothing_loss)
from actembed.model import (ModelFormatError, ModelParams,
                            infer_unseen_segment, init_params, load_model,
                            lookup_segment, lookup_symbol, save_model,
                            subject_representation)
from actembed.synth import SynthConfig, TaskEffect, describe_planted_effects, \
    generate_cohort
from actembed.trainer import (NumericalError, TrainConfig, TrainReport,
                              evaluate_epoch_loss, lambda_schedule,
                              positive_symbol_schedule, project_thresholds,
                              sample_negatives, train)

__version__ = "0.1.0"

__all__ = [
    "ActivitySequence", "Corpus", "CorpusError", "SegmentIndex", "Vocabulary",
    "build_vocabulary", "encode_corpus", "load_corpus", "oov_blend",
    "resolve_oov", "save_corpus", "segment", "segment_noise_distribution",
    "symbol_noise_distribution", "EvalReport", "ProbeReport", "evaluate_task",
    "f1_scores", "predict", "subject_probe", "train_logreg", "LossGrad",
    "adversarial_loss", "combined_loss_value", "discriminator_loss",
    "discriminator_probs", "neighbor_context_loss", "ordinal_class_probs",
    "ordinal_loss", "segment_content_loss", "sigmoid", "smoothing_loss",
    "ModelFormatError", "ModelParams", "infer_unseen_segment", "init_params",
    "load_model", "lookup_segment", "lookup_symbol", "save_model",
    "subject_representation", "SynthConfig", "TaskEffect",
    "describe_planted_effects", "generate_cohort", "NumericalError",
    "TrainConfig", "TrainReport", "evaluate_epoch_loss", "lambda_schedule",
    "positive_symbol_schedule", "project_thresholds", "sample_negatives",
    "train", "__version__",
]

"""Self-distillation training framework for low-data fine-grained classification."""

from .augment import AugConfig, CropParams, ViewTriplet, make_triplet, sample_crop
from .config import RunConfig, build_run_config, read_ini
from .data import (Dataset, ImageSample, SubsetManifest, load_dataset,
                   materialize, sample_subset)
from .errors import AdnetError
from .evalsuite import (ActivationDiff, UncertaintyReport, accuracy,
                        activation_diff, curve_report, mc_dropout_sweep)
from .model import (BackboneSpec, ForwardBundle, ModelState, forward,
                    forward_triplet, init_model, load_checkpoint,
                    save_checkpoint)
from .objectives import (LossConfig, aggregate, alpha_at, cross_entropy,
                         kl_feature_distill, softmax_normalize)
from .rng import RngStream, derive_rng
from .synth import SynthSpec, generate
from .trainer import (MomentumSGD, ScheduleState, TrainConfig, TrainLog,
                      TrainLogRecord, build_schedule, classifier_lr_ratio,
                      fit, train_step)

__version__ = "0.1.0"

__all__ = [
    "AugConfig", "CropParams", "ViewTriplet", "make_triplet", "sample_crop",
    "RunConfig", "build_run_config", "read_ini",
    "Dataset", "ImageSample", "SubsetManifest", "load_dataset",
    "materialize", "sample_subset",
    "AdnetError",
    "ActivationDiff", "UncertaintyReport", "accuracy", "activation_diff",
    "curve_report", "mc_dropout_sweep",
    "BackboneSpec", "ForwardBundle", "ModelState", "forward",
    "forward_triplet", "init_model", "load_checkpoint", "save_checkpoint",
    "LossConfig", "aggregate", "alpha_at", "cross_entropy",
    "kl_feature_distill", "softmax_normalize",
    "RngStream", "derive_rng",
    "SynthSpec", "generate",
    "MomentumSGD", "ScheduleState", "TrainConfig", "TrainLog",
    "TrainLogRecord", "build_schedule", "classifier_lr_ratio", "fit",
    "train_step",
]

"""Multimodal product classification by hierarchical fusion of frozen
text and image embeddings, trained with hand-written backpropagation."""

from .data import (
    DatasetDescriptor,
    ManifestRow,
    SyntheticSpec,
    load_dataset,
    read_embeddings,
    split_dataset,
    synth_generate,
    validate,
    write_embeddings,
)
from .fusion import FusionOp, FusionPlan, build_plan, fuse, fused_dim, region_average
from .metrics import MetricsReport, macro_f1, render_report
from .model import (
    ClassifierHead,
    HeadVariant,
    ImageAdapter,
    ModalitySample,
    ModelParams,
    init_model,
    load_params,
    model_forward,
    save_params,
)
from .numeric import (
    LinearLayer,
    OptimizerState,
    cross_entropy,
    dropout,
    grad_check,
    linear_backward,
    linear_forward,
    make_optimizer,
    optimizer_step,
    relu,
    softmax,
)
from .rng import SeededRng
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ClassifierHead",
    "DatasetDescriptor",
    "FusionOp",
    "FusionPlan",
    "HeadVariant",
    "ImageAdapter",
    "LinearLayer",
    "ManifestRow",
    "MetricsReport",
    "ModalitySample",
    "ModelParams",
    "OptimizerState",
    "SeededRng",
    "SyntheticSpec",
    "TrainConfig",
    "build_plan",
    "cross_entropy",
    "dropout",
    "evaluate",
    "fuse",
    "fused_dim",
    "grad_check",
    "init_model",
    "linear_backward",
    "linear_forward",
    "load_dataset",
    "load_params",
    "macro_f1",
    "make_optimizer",
    "model_forward",
    "optimizer_step",
    "read_embeddings",
    "region_average",
    "relu",
    "render_report",
    "save_params",
    "softmax",
    "split_dataset",
    "synth_generate",
    "train",
    "validate",
    "write_embeddings",
]

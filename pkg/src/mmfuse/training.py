"""Mini-batch training over frozen embeddings with best-epoch selection on
validation macro-F1, plus split evaluation."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, expand_mask, validate
from .errors import ConfigError
from .fusion import FusionPlan
from .metrics import MetricsReport, confusion_matrix, report_from_confusion
from .model import (
    HeadVariant,
    ModelParams,
    init_model,
    model_backward_batch,
    model_forward_batch,
)
from .numeric import cross_entropy, cross_entropy_grad, make_optimizer, optimizer_step
from .rng import SeededRng

EVAL_BATCH = 256


@dataclass
class TrainConfig:
    plan: FusionPlan
    epochs: int = 20
    batch_size: int = 32
    optimizer: str = "adam"  # adam (lr 1e-3) | adamw (lr 2e-5, decay 0.01)
    lr: float | None = None
    weight_decay: float | None = None
    seed: int = 0
    variant: HeadVariant = HeadVariant.BASIC
    dropout_p: float = 0.3
    hidden_dims: tuple[int, int] = (512, 256)
    kernel_len: int = 9
    unimodal_mask: frozenset[str] = frozenset()  # modalities zeroed out

    def check(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        expand_mask(self.unimodal_mask)


def _forward_split(params, plan, dataset, ids, mask) -> np.ndarray:
    """Inference-mode predictions for the given sample ids, in order."""
    predictions = np.empty(len(ids), dtype=np.int64)
    for start in range(0, len(ids), EVAL_BATCH):
        chunk = ids[start:start + EVAL_BATCH]
        probs, _ = model_forward_batch(dataset.batch(chunk, mask), plan, params, training=False)
        predictions[start:start + len(chunk)] = probs.argmax(axis=-1)  # ties -> lowest index
    return predictions


def evaluate(
    params: ModelParams,
    plan: FusionPlan,
    dataset: Dataset,
    split: str,
    unimodal_mask: frozenset[str] = frozenset(),
) -> MetricsReport:
    """Confusion-matrix metrics for one split; never mutates params."""
    ids = dataset.indices(split)
    if not ids:
        raise ConfigError(f"split {split!r} is empty")
    mask = expand_mask(unimodal_mask)
    predictions = _forward_split(params, plan, dataset, ids, mask)
    labels = dataset.labels[ids]
    confusion = confusion_matrix(labels, predictions, dataset.desc.c)
    return report_from_confusion(confusion, split=split)


def train(config: TrainConfig, dataset: Dataset) -> tuple[ModelParams, MetricsReport]:
    """Train the adapter + head; returns the parameters of the epoch with the
    highest validation macro-F1 (ties to the earliest epoch) and a report
    carrying the loss / accuracy / validation history.

    Each epoch reshuffles the train split with its own seeded substream and
    keeps the last partial batch. Gradients are averaged over the batch.
    """
    config.check()
    violations = validate(dataset)
    if violations:
        summary = "; ".join(str(v) for v in violations[:5])
        raise ConfigError(f"dataset failed validation ({len(violations)} violations): {summary}")
    plan = config.plan
    if plan.d_text != dataset.desc.d_text or plan.d_image_raw != dataset.desc.d_image_raw:
        raise ConfigError(
            f"plan dims (d_text={plan.d_text}, d_image_raw={plan.d_image_raw}) do not match "
            f"dataset (d_text={dataset.desc.d_text}, d_image_raw={dataset.desc.d_image_raw})"
        )

    train_ids = dataset.indices("train")
    val_ids = dataset.indices("val")
    if not train_ids or not val_ids:
        raise ConfigError(
            f"need non-empty train and val splits, got {len(train_ids)} train / {len(val_ids)} val"
        )
    mask = expand_mask(config.unimodal_mask)
    labels = dataset.labels

    params = init_model(
        plan,
        dataset.desc.c,
        SeededRng(config.seed, "init"),
        variant=config.variant,
        hidden_dims=config.hidden_dims,
        dropout_p=config.dropout_p,
        kernel_len=config.kernel_len,
    )
    optimizer = make_optimizer(
        config.optimizer,
        params.parameter_arrays(),
        lr=config.lr,
        weight_decay=config.weight_decay,
    )
    # dropout sits after the final fusion (layer 0) or before the extra
    # layer (layer 1); at most one is active per variant
    dropout_layer = 1 if config.variant is HeadVariant.WITH_MORE_LAYERS else 0
    needs_dropout_rng = config.variant is not HeadVariant.BASIC

    loss_curve: list[float] = []
    val_f1_curve: list[float] = []
    train_acc_curve: list[float] = []
    best_f1 = -1.0
    best_epoch = -1
    best_params = params.copy()
    best_val_report: MetricsReport | None = None
    step = 0

    for epoch in range(config.epochs):
        order = list(train_ids)
        SeededRng(config.seed, f"shuffle:{epoch}").shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            chunk = order[start:start + config.batch_size]
            batch = dataset.batch(chunk, mask)
            params.zero_grad()
            rng = (
                SeededRng(config.seed, f"dropout:{dropout_layer}:{step}")
                if needs_dropout_rng else None
            )
            probs, cache = model_forward_batch(batch, plan, params, training=True, rng=rng)
            losses = cross_entropy(probs, labels[chunk])
            grad_logits = cross_entropy_grad(probs, labels[chunk]) / len(chunk)
            model_backward_batch(grad_logits, cache, plan, params)
            optimizer_step(optimizer, params.parameter_arrays(), params.gradient_arrays())
            epoch_loss += float(np.sum(losses))
            step += 1
        loss_curve.append(epoch_loss / len(order))

        train_preds = _forward_split(params, plan, dataset, train_ids, mask)
        train_acc_curve.append(float(np.mean(train_preds == labels[train_ids])))
        val_report = evaluate(params, plan, dataset, "val", config.unimodal_mask)
        val_f1_curve.append(val_report.macro_f1)
        if val_report.macro_f1 > best_f1:
            best_f1 = val_report.macro_f1
            best_epoch = epoch
            best_params = params.copy()
            best_val_report = val_report

    history = replace(
        best_val_report,
        loss_curve=loss_curve,
        val_macro_f1_curve=val_f1_curve,
        train_accuracy_curve=train_acc_curve,
        best_epoch=best_epoch,
    )
    return best_params, history

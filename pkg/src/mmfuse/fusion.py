"""Parameter-free fusion operators, regional image pooling, and dimension
inference for the three-slot fusion graph.

The graph fuses title with description per text encoder (inner slot),
fuses the two encoder branches (outer slot), then fuses the adapted image
vector with the text vector (final slot, image argument first).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ShapeError


class FusionOp(Enum):
    ADDITION = "add"
    CONCATENATION = "concat"
    AVERAGE = "avg"


def parse_fusion_op(name: str) -> FusionOp:
    try:
        return FusionOp(name.strip().lower())
    except ValueError:
        valid = ", ".join(op.value for op in FusionOp)
        raise ShapeError(f"unknown fusion op {name!r} (expected one of: {valid})") from None


def fuse(kind: FusionOp, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Combine two representations along their last axis.

    Concatenation keeps x1 first; addition and average require equal dims.
    """
    if kind is FusionOp.CONCATENATION:
        return np.concatenate([x1, x2], axis=-1)
    if x1.shape[-1] != x2.shape[-1]:
        raise ShapeError(
            f"{kind.value} fusion requires equal dims, got {x1.shape[-1]} and {x2.shape[-1]}"
        )
    if kind is FusionOp.ADDITION:
        return x1 + x2
    return (x1 + x2) * 0.5


def fuse_backward(kind: FusionOp, grad_out: np.ndarray, d1: int, d2: int):
    """Distribute the upstream gradient to the two fusion inputs."""
    if kind is FusionOp.CONCATENATION:
        return grad_out[..., :d1], grad_out[..., d1:]
    if kind is FusionOp.ADDITION:
        return grad_out, grad_out
    return grad_out * 0.5, grad_out * 0.5


def fused_dim(kind: FusionOp, d1: int, d2: int) -> int:
    if d1 < 1 or d2 < 1:
        raise ShapeError(f"fusion dims must be positive, got {d1} and {d2}")
    if kind is FusionOp.CONCATENATION:
        return d1 + d2
    if d1 != d2:
        raise ShapeError(f"{kind.value} fusion requires equal dims, got {d1} and {d2}")
    return d1


def region_average(stack: np.ndarray) -> np.ndarray:
    """Mean over the region axis: (N_r, d) -> (d,), or batched (B, N_r, d) -> (B, d).

    Accumulates at float64 so the result is insensitive to row order even
    when the mean is near zero, then returns the input dtype.
    """
    if stack.ndim < 2 or stack.shape[-2] < 1:
        raise ShapeError(f"region_average: need a non-empty (N_r, d) stack, got shape {stack.shape}")
    return stack.mean(axis=-2, dtype=np.float64).astype(stack.dtype)


@dataclass(frozen=True)
class FusionPlan:
    """The three fusion slots plus every dimension inferred from them."""

    slot_inner: FusionOp
    slot_outer: FusionOp
    slot_final: FusionOp
    d_text: int
    d_image_raw: int
    branch_dim: int  # per-encoder title+description fusion output
    text_dim: int  # cross-encoder fusion output
    adapter_target: int  # image adapter output dim
    d_fused: int  # final fused vector dim


def build_plan(
    slot_inner: FusionOp,
    slot_outer: FusionOp,
    slot_final: FusionOp,
    d_text: int = 768,
    d_image_raw: int = 2048,
) -> FusionPlan:
    """Run dimension inference for the fusion graph.

    The image adapter is sized to the full text vector when the final slot
    adds or averages, and to the single-encoder dim when it concatenates,
    so the image never has to be blown up past the raw feature size just
    to sit next to a wide concatenated text vector.
    """
    if d_text < 1 or d_image_raw < 1:
        raise ShapeError(f"plan dims must be positive, got d_text={d_text}, d_image_raw={d_image_raw}")
    branch_dim = fused_dim(slot_inner, d_text, d_text)
    text_dim = fused_dim(slot_outer, branch_dim, branch_dim)
    adapter_target = d_text if slot_final is FusionOp.CONCATENATION else text_dim
    if d_image_raw < adapter_target:
        raise ShapeError(
            f"slot_final {slot_final.value}: image dim {d_image_raw} cannot be "
            f"pooled up to adapter target {adapter_target}"
        )
    d_fused = fused_dim(slot_final, adapter_target, text_dim)
    return FusionPlan(
        slot_inner=slot_inner,
        slot_outer=slot_outer,
        slot_final=slot_final,
        d_text=d_text,
        d_image_raw=d_image_raw,
        branch_dim=branch_dim,
        text_dim=text_dim,
        adapter_target=adapter_target,
        d_fused=d_fused,
    )

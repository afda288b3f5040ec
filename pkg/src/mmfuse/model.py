"""The trainable model: image adapter, three-layer classifier head, and the
full fused forward/backward pass.

Embeddings are frozen inputs; the only trainable parameters are the
adapter's convolution kernel and the head's linear layers. The forward
and backward passes operate on batches (rows of samples) and the
single-sample entry points are batches of one, so training, evaluation,
and the gradient checker all exercise the same code path.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from .fusion import FusionOp, FusionPlan, build_plan, fuse, fuse_backward, region_average
from .numeric import (
    LinearLayer,
    cross_entropy,
    cross_entropy_grad,
    dropout_mask,
    grad_check,
    init_linear,
    linear_backward,
    linear_forward,
    relu,
    relu_backward,
    softmax,
)
from .rng import SeededRng

TEXT_MODALITIES = ("title_f", "title_c", "desc_f", "desc_c")


@dataclass
class ModalitySample:
    """One product: four frozen text embeddings, its region stack, a label."""

    sample_id: str
    title_f: np.ndarray
    title_c: np.ndarray
    desc_f: np.ndarray
    desc_c: np.ndarray
    regions: np.ndarray  # (N_r, d_image_raw)
    label: int


@dataclass
class ModalityBatch:
    """Stacked sample rows; the regions carry an extra leading batch axis."""

    title_f: np.ndarray  # (B, d_text)
    title_c: np.ndarray
    desc_f: np.ndarray
    desc_c: np.ndarray
    regions: np.ndarray  # (B, N_r, d_image_raw)

    def __len__(self) -> int:
        return self.title_f.shape[0]


def batch_of_one(sample: ModalitySample) -> ModalityBatch:
    return ModalityBatch(
        title_f=sample.title_f[None, :],
        title_c=sample.title_c[None, :],
        desc_f=sample.desc_f[None, :],
        desc_c=sample.desc_c[None, :],
        regions=sample.regions[None, :, :],
    )


# ---------------------------------------------------------------------------
# image adapter

@dataclass
class ImageAdapter:
    """Trainable same-padded 1-D convolution followed by non-overlapping max
    pooling down to exactly `target_dim`."""

    kernel: np.ndarray  # odd length
    target_dim: int
    pool_window: int  # window for the plan's raw image dim
    grad_kernel: np.ndarray | None = None

    def __post_init__(self):
        if self.kernel.ndim != 1 or self.kernel.shape[0] % 2 == 0:
            raise ConfigError(f"adapter kernel must be 1-D with odd length, got shape {self.kernel.shape}")
        if self.target_dim < 1:
            raise ConfigError(f"adapter target_dim must be positive, got {self.target_dim}")
        if self.grad_kernel is None:
            self.grad_kernel = np.zeros_like(self.kernel)

    def zero_grad(self) -> None:
        self.grad_kernel[...] = 0


def make_adapter(
    target_dim: int, d_image_raw: int, rng: SeededRng, kernel_len: int = 9, dtype=np.float32
) -> ImageAdapter:
    if kernel_len < 1 or kernel_len % 2 == 0:
        raise ConfigError(f"kernel_len must be odd and positive, got {kernel_len}")
    if d_image_raw < target_dim:
        raise ConfigError(
            f"image adapter needs input dim >= target_dim ({d_image_raw} < {target_dim})"
        )
    bound = 1.0 / math.sqrt(kernel_len)
    kernel = ((rng.uniform_array(kernel_len) * 2.0 - 1.0) * bound).astype(dtype)
    window = -(-d_image_raw // target_dim)
    return ImageAdapter(kernel=kernel, target_dim=target_dim, pool_window=window)


@dataclass
class AdapterCache:
    xpad: np.ndarray  # (B, L + k - 1) zero-padded conv input
    conv: np.ndarray  # (B, L) convolution output
    length: int
    window: int
    argmax: np.ndarray  # (B, n_windows) in-window argmax positions
    n_keep: int


def adapter_forward(p_raw: np.ndarray, adapter: ImageAdapter):
    """Convolve, max-pool with window ceil(L / target_dim), then truncate or
    right-zero-pad the window outputs to exactly target_dim.

    Returns (output, cache); ties in a pooling window resolve to the lowest
    index. Accepts (L,) or (B, L) input.
    """
    single = p_raw.ndim == 1
    x = p_raw[None, :] if single else p_raw
    n_rows, length = x.shape
    if length < adapter.target_dim:
        raise ConfigError(
            f"image adapter needs input dim >= target_dim ({length} < {adapter.target_dim})"
        )
    k = adapter.kernel.shape[0]
    radius = k // 2
    xpad = np.zeros((n_rows, length + k - 1), dtype=x.dtype)
    xpad[:, radius:radius + length] = x
    conv = np.zeros((n_rows, length), dtype=x.dtype)
    for t in range(k):
        conv += adapter.kernel[t] * xpad[:, t:t + length]

    window = -(-length // adapter.target_dim)
    n_windows = -(-length // window)
    padded = np.full((n_rows, n_windows * window), -np.inf, dtype=x.dtype)
    padded[:, :length] = conv
    tiles = padded.reshape(n_rows, n_windows, window)
    argmax = tiles.argmax(axis=2)
    pooled = np.take_along_axis(tiles, argmax[:, :, None], axis=2)[:, :, 0]

    out = np.zeros((n_rows, adapter.target_dim), dtype=x.dtype)
    n_keep = min(n_windows, adapter.target_dim)
    out[:, :n_keep] = pooled[:, :n_keep]
    cache = AdapterCache(
        xpad=xpad, conv=conv, length=length, window=window, argmax=argmax, n_keep=n_keep
    )
    return (out[0] if single else out), cache


def adapter_backward(grad_out: np.ndarray, adapter: ImageAdapter, cache: AdapterCache) -> None:
    """Route pooling gradients to their argmax positions and accumulate the
    kernel gradient. The conv input is frozen, so no input gradient."""
    g = grad_out[None, :] if grad_out.ndim == 1 else grad_out
    n_rows = g.shape[0]
    grad_conv = np.zeros((n_rows, cache.length), dtype=g.dtype)
    # non-overlapping windows make these positions unique within each row
    src = np.arange(cache.n_keep) * cache.window + cache.argmax[:, :cache.n_keep]
    grad_conv[np.arange(n_rows)[:, None], src] = g[:, :cache.n_keep]
    for t in range(adapter.kernel.shape[0]):
        adapter.grad_kernel[t] += (grad_conv * cache.xpad[:, t:t + cache.length]).sum()


# ---------------------------------------------------------------------------
# classifier head and full model

class HeadVariant(Enum):
    BASIC = "basic"
    WITH_DROPOUT = "dropout"
    WITH_MORE_LAYERS = "more-layers"


def parse_head_variant(name: str) -> HeadVariant:
    try:
        return HeadVariant(name.strip().lower())
    except ValueError:
        valid = ", ".join(v.value for v in HeadVariant)
        raise ConfigError(f"unknown head variant {name!r} (expected one of: {valid})") from None


@dataclass
class ClassifierHead:
    layer1: LinearLayer
    layer2: LinearLayer
    layer3: LinearLayer
    variant: HeadVariant
    dropout_p: float = 0.3
    extra_layer: LinearLayer | None = None

    def __post_init__(self):
        if self.variant is HeadVariant.WITH_MORE_LAYERS and self.extra_layer is None:
            raise ConfigError("more-layers head requires an extra layer")
        if self.variant is not HeadVariant.WITH_MORE_LAYERS and self.extra_layer is not None:
            raise ConfigError(f"{self.variant.value} head must not carry an extra layer")


@dataclass
class ModelParams:
    """The only trainable state: adapter kernel plus head layers."""

    adapter: ImageAdapter
    head: ClassifierHead

    def named_parameters(self) -> list[tuple[str, np.ndarray, np.ndarray]]:
        """(name, value, grad) triples in a fixed order."""
        out = [("adapter.kernel", self.adapter.kernel, self.adapter.grad_kernel)]
        layers = [("head.layer1", self.head.layer1), ("head.layer2", self.head.layer2)]
        if self.head.extra_layer is not None:
            layers.append(("head.extra", self.head.extra_layer))
        layers.append(("head.layer3", self.head.layer3))
        for name, layer in layers:
            out.append((f"{name}.weight", layer.weight, layer.grad_weight))
            out.append((f"{name}.bias", layer.bias, layer.grad_bias))
        return out

    def parameter_arrays(self) -> list[np.ndarray]:
        return [value for _, value, _ in self.named_parameters()]

    def gradient_arrays(self) -> list[np.ndarray]:
        return [grad for _, _, grad in self.named_parameters()]

    def zero_grad(self) -> None:
        for _, _, grad in self.named_parameters():
            grad[...] = 0

    def copy(self) -> "ModelParams":
        adapter = ImageAdapter(
            kernel=self.adapter.kernel.copy(),
            target_dim=self.adapter.target_dim,
            pool_window=self.adapter.pool_window,
            grad_kernel=self.adapter.grad_kernel.copy(),
        )

        def copy_layer(layer: LinearLayer) -> LinearLayer:
            return LinearLayer(
                layer.weight.copy(), layer.bias.copy(),
                layer.grad_weight.copy(), layer.grad_bias.copy(),
            )

        head = ClassifierHead(
            layer1=copy_layer(self.head.layer1),
            layer2=copy_layer(self.head.layer2),
            layer3=copy_layer(self.head.layer3),
            variant=self.head.variant,
            dropout_p=self.head.dropout_p,
            extra_layer=copy_layer(self.head.extra_layer) if self.head.extra_layer else None,
        )
        return ModelParams(adapter=adapter, head=head)


def init_model(
    plan: FusionPlan,
    n_classes: int,
    rng: SeededRng,
    variant: HeadVariant = HeadVariant.BASIC,
    hidden_dims: tuple[int, int] = (512, 256),
    dropout_p: float = 0.3,
    kernel_len: int = 9,
    dtype=np.float32,
) -> ModelParams:
    """Initialize adapter + head for a plan; draw order is fixed so a given
    (seed, plan, shape) always yields the same parameters."""
    if n_classes < 1:
        raise ConfigError(f"n_classes must be positive, got {n_classes}")
    h1, h2 = hidden_dims
    adapter = make_adapter(plan.adapter_target, plan.d_image_raw, rng, kernel_len, dtype)
    layer1 = init_linear(h1, plan.d_fused, rng, dtype)
    layer2 = init_linear(h2, h1, rng, dtype)
    extra = init_linear(h2, h2, rng, dtype) if variant is HeadVariant.WITH_MORE_LAYERS else None
    layer3 = init_linear(n_classes, h2, rng, dtype)
    head = ClassifierHead(
        layer1=layer1, layer2=layer2, layer3=layer3,
        variant=variant, dropout_p=dropout_p, extra_layer=extra,
    )
    return ModelParams(adapter=adapter, head=head)


@dataclass
class ForwardCache:
    fused: np.ndarray
    h_in: np.ndarray  # head input (fused after any post-fusion dropout)
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    h_mid: np.ndarray | None  # extra-layer input (more-layers only)
    z_extra: np.ndarray | None
    a_extra: np.ndarray | None
    mask_fused: np.ndarray | None
    mask_mid: np.ndarray | None
    adapter_cache: AdapterCache
    probs: np.ndarray


def _check_batch(batch: ModalityBatch, plan: FusionPlan) -> None:
    for name in TEXT_MODALITIES:
        arr = getattr(batch, name)
        if arr.shape[-1] != plan.d_text:
            raise ShapeError(f"{name}: expected dim {plan.d_text}, got {arr.shape[-1]}")
    if batch.regions.shape[-1] != plan.d_image_raw:
        raise ShapeError(
            f"image regions: expected dim {plan.d_image_raw}, got {batch.regions.shape[-1]}"
        )


def model_forward_batch(
    batch: ModalityBatch,
    plan: FusionPlan,
    params: ModelParams,
    training: bool = False,
    rng: SeededRng | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Full fused forward pass; returns (probs, cache for backward)."""
    _check_batch(batch, plan)
    head = params.head
    branch_f = fuse(plan.slot_inner, batch.title_f, batch.desc_f)
    branch_c = fuse(plan.slot_inner, batch.title_c, batch.desc_c)
    text = fuse(plan.slot_outer, branch_f, branch_c)
    p_raw = region_average(batch.regions)
    p_img, adapter_cache = adapter_forward(p_raw, params.adapter)
    fused = fuse(plan.slot_final, p_img, text)

    mask_fused = None
    h_in = fused
    if head.variant is HeadVariant.WITH_DROPOUT and training:
        mask_fused = dropout_mask(fused.shape, head.dropout_p, rng, dtype=fused.dtype)
        h_in = fused * mask_fused

    z1 = linear_forward(h_in, head.layer1)
    a1 = relu(z1)
    z2 = linear_forward(a1, head.layer2)
    a2 = relu(z2)

    h_mid = z_extra = a_extra = mask_mid = None
    if head.variant is HeadVariant.WITH_MORE_LAYERS:
        h_mid = a2
        if training:
            mask_mid = dropout_mask(a2.shape, head.dropout_p, rng, dtype=a2.dtype)
            h_mid = a2 * mask_mid
        z_extra = linear_forward(h_mid, head.extra_layer)
        a_extra = relu(z_extra)
        z3 = linear_forward(a_extra, head.layer3)
    else:
        z3 = linear_forward(a2, head.layer3)

    probs = softmax(z3)
    cache = ForwardCache(
        fused=fused, h_in=h_in, z1=z1, a1=a1, z2=z2, a2=a2,
        h_mid=h_mid, z_extra=z_extra, a_extra=a_extra,
        mask_fused=mask_fused, mask_mid=mask_mid,
        adapter_cache=adapter_cache, probs=probs,
    )
    return probs, cache


def model_backward_batch(
    grad_logits: np.ndarray,
    cache: ForwardCache,
    plan: FusionPlan,
    params: ModelParams,
) -> None:
    """Accumulate gradients for the adapter kernel and head layers.

    `grad_logits` is the gradient wrt the pre-softmax logits (for CE loss:
    probs - onehot, scaled by any batch averaging). Text embeddings are
    frozen, so their gradient is dropped at the final fusion slot.
    """
    head = params.head
    if head.variant is HeadVariant.WITH_MORE_LAYERS:
        g = linear_backward(cache.a_extra, head.layer3, grad_logits)
        g = relu_backward(cache.z_extra, g)
        g = linear_backward(cache.h_mid, head.extra_layer, g)
        if cache.mask_mid is not None:
            g = g * cache.mask_mid
    else:
        g = linear_backward(cache.a2, head.layer3, grad_logits)
    g = relu_backward(cache.z2, g)
    g = linear_backward(cache.a1, head.layer2, g)
    g = relu_backward(cache.z1, g)
    g = linear_backward(cache.h_in, head.layer1, g)
    if cache.mask_fused is not None:
        g = g * cache.mask_fused
    g_image, _g_text = fuse_backward(
        plan.slot_final, g, plan.adapter_target, plan.text_dim
    )
    adapter_backward(g_image, params.adapter, cache.adapter_cache)


def model_forward(
    sample: ModalitySample,
    plan: FusionPlan,
    params: ModelParams,
    training: bool = False,
    rng: SeededRng | None = None,
) -> np.ndarray:
    """Class probabilities for a single sample."""
    probs, _ = model_forward_batch(batch_of_one(sample), plan, params, training, rng)
    return probs[0]


# ---------------------------------------------------------------------------
# model-level gradient check

def _smoothness_margin(cache: ForwardCache, eps: float) -> float:
    """Distance of the evaluation point from the model's kinks, in units of
    the largest shift an eps-sized parameter perturbation can cause.

    Kinks are ReLU inputs at zero and near-ties inside pooling windows;
    central differences straddling one measure the wrong slope.
    """
    margins = []
    for z, h in ((cache.z1, cache.h_in), (cache.z2, cache.a1), (cache.z_extra, cache.h_mid)):
        if z is not None and z.size:
            scale = eps * (1.0 + float(np.abs(h).max()))
            margins.append(float(np.abs(z).min()) / scale)
    ac = cache.adapter_cache
    if ac.window > 1:
        n_windows = -(-ac.length // ac.window)
        padded = np.full((ac.conv.shape[0], n_windows * ac.window), -np.inf)
        padded[:, :ac.length] = ac.conv
        ranked = np.sort(padded.reshape(ac.conv.shape[0], n_windows, ac.window), axis=2)
        gaps = ranked[:, :, -1] - ranked[:, :, -2]
        gaps = gaps[np.isfinite(gaps)]
        if gaps.size:
            scale = eps * (1.0 + float(np.abs(ac.xpad).max()))
            margins.append(float(gaps.min()) / scale)
    return min(margins) if margins else np.inf


def model_grad_check(
    plan: FusionPlan,
    n_classes: int,
    seed: int,
    variant: HeadVariant = HeadVariant.BASIC,
    hidden_dims: tuple[int, int] = (12, 8),
    dropout_p: float = 0.3,
    batch_size: int = 2,
    n_regions: int = 4,
    eps: float = 1e-3,
) -> float:
    """Check the full model's analytic gradients against central differences.

    Runs at float64 on a random frozen batch. The probe batch is redrawn
    until every ReLU input and pooling window clears the kinks by a wide
    margin relative to eps, so the differences measure actual slopes;
    dropout variants replay the identical mask on every closure call.
    """
    rng = SeededRng(seed, "gradcheck")
    params = init_model(
        plan, n_classes, rng, variant=variant, hidden_dims=hidden_dims,
        dropout_p=dropout_p, dtype=np.float64,
    )

    def probe(attempt: int):
        draw_rng = SeededRng(seed, f"gradcheck:probe:{attempt}")

        def draw(*shape):
            return draw_rng.normal_array(int(np.prod(shape))).reshape(shape)

        batch = ModalityBatch(
            title_f=draw(batch_size, plan.d_text),
            title_c=draw(batch_size, plan.d_text),
            desc_f=draw(batch_size, plan.d_text),
            desc_c=draw(batch_size, plan.d_text),
            regions=draw(batch_size, n_regions, plan.d_image_raw),
        )
        targets = np.array([draw_rng.below(n_classes) for _ in range(batch_size)])
        return batch, targets

    def mask_rng():
        return SeededRng(seed, "dropout:gradcheck:0")

    best = None
    best_margin = -np.inf
    for attempt in range(64):
        batch, targets = probe(attempt)
        _, cache = model_forward_batch(batch, plan, params, training=True, rng=mask_rng())
        margin = _smoothness_margin(cache, eps)
        if margin > best_margin:
            best, best_margin = (batch, targets), margin
        if margin > 8.0:
            break
    batch, targets = best

    def loss_and_grads():
        params.zero_grad()
        probs, cache = model_forward_batch(batch, plan, params, training=True, rng=mask_rng())
        loss = float(np.mean(cross_entropy(probs, targets)))
        grad_logits = cross_entropy_grad(probs, targets) / batch_size
        model_backward_batch(grad_logits, cache, plan, params)
        return loss, [grad.copy() for grad in params.gradient_arrays()]

    return grad_check(loss_and_grads, params.parameter_arrays(), eps=eps)


def gradient_check_suite(
    seed: int = 7,
    d_text: int = 8,
    d_image_raw: int = 32,
    n_classes: int = 3,
    eps: float = 1e-3,
) -> list[tuple[str, float]]:
    """Max gradient error for all 9 (inner=outer, final) fusion plans crossed
    with the 3 head variants. Returns [(description, max_rel_err), ...]."""
    results = []
    for text_op in FusionOp:
        for final_op in FusionOp:
            plan = build_plan(text_op, text_op, final_op, d_text=d_text, d_image_raw=d_image_raw)
            for variant in HeadVariant:
                err = model_grad_check(plan, n_classes, seed, variant=variant)
                label = f"inner/outer={text_op.value} final={final_op.value} head={variant.value}"
                results.append((label, err))
    return results


# ---------------------------------------------------------------------------
# parameter file io

PARAMS_MAGIC = b"MMPR"
PARAMS_VERSION = 1


def save_params(path, params: ModelParams, plan: FusionPlan, n_classes: int) -> None:
    """Serialize trained parameters plus the plan needed to rebuild the model.

    Layout: magic, u16 version, u32 meta length, UTF-8 JSON meta, u32 array
    count, then per array: u16 name length, name, u8 ndim, u32 dims,
    float32 little-endian payload. Same inputs give identical bytes.
    """
    meta = {
        "slot_inner": plan.slot_inner.value,
        "slot_outer": plan.slot_outer.value,
        "slot_final": plan.slot_final.value,
        "d_text": plan.d_text,
        "d_image_raw": plan.d_image_raw,
        "n_classes": n_classes,
        "variant": params.head.variant.value,
        "dropout_p": params.head.dropout_p,
        "hidden_dims": [params.head.layer1.out_dim, params.head.layer2.out_dim],
        "kernel_len": int(params.adapter.kernel.shape[0]),
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    named = [(name, value) for name, value, _ in params.named_parameters()]
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(struct.pack("<HI", PARAMS_VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(named)))
        for name, value in named:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", value.ndim))
            fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
            fh.write(np.ascontiguousarray(value, dtype="<f4").tobytes())


def load_params(path) -> tuple[ModelParams, FusionPlan, int]:
    """Rebuild (params, plan, n_classes) from a file written by save_params."""
    data = Path(path).read_bytes()
    if len(data) < 10 or data[:4] != PARAMS_MAGIC:
        raise FormatError(f"not a parameter file: bad magic {data[:4]!r}", offset=0)
    version, meta_len = struct.unpack_from("<HI", data, 4)
    if version != PARAMS_VERSION:
        raise FormatError(f"unsupported parameter file version {version}", offset=4)
    offset = 10
    meta = json.loads(data[offset:offset + meta_len].decode("utf-8"))
    offset += meta_len
    (count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", data, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(data, dtype="<f4", count=size, offset=offset).reshape(shape).copy()
        offset += 4 * size
    if offset != len(data):
        raise FormatError("trailing bytes after parameter payload", offset=offset)

    plan = build_plan(
        FusionOp(meta["slot_inner"]), FusionOp(meta["slot_outer"]), FusionOp(meta["slot_final"]),
        d_text=meta["d_text"], d_image_raw=meta["d_image_raw"],
    )
    variant = HeadVariant(meta["variant"])
    params = init_model(
        plan, meta["n_classes"], SeededRng(0, "init"),
        variant=variant, hidden_dims=tuple(meta["hidden_dims"]),
        dropout_p=meta["dropout_p"], kernel_len=meta["kernel_len"],
    )
    for name, value, _ in params.named_parameters():
        stored = arrays.get(name)
        if stored is None or stored.shape != value.shape:
            raise FormatError(f"parameter {name} missing or mis-shaped in file", offset=offset)
        value[...] = stored
    return params, plan, meta["n_classes"]

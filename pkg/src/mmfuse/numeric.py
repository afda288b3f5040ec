"""Dense numerical kernel: linear layers, activations, loss, optimizers,
and a finite-difference gradient oracle.

Vectors are 1-D numpy arrays and float32 is the working precision. Every
routine also accepts a leading batch axis (each row one sample) and
preserves the dtype of its inputs, so the gradient oracle can drive the
exact same code at float64 where finite differences need the headroom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .rng import SeededRng

PROB_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# linear layer

@dataclass
class LinearLayer:
    """Fully connected layer with gradient accumulation buffers."""

    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    grad_weight: np.ndarray | None = None
    grad_bias: np.ndarray | None = None

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError(
                f"linear layer expects weight (out, in) and bias (out,), "
                f"got {self.weight.shape} and {self.bias.shape}"
            )
        if self.bias.shape[0] != self.weight.shape[0]:
            raise ShapeError(
                f"bias dim {self.bias.shape[0]} does not match weight rows {self.weight.shape[0]}"
            )
        if self.grad_weight is None:
            self.grad_weight = np.zeros_like(self.weight)
        if self.grad_bias is None:
            self.grad_bias = np.zeros_like(self.bias)

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    def zero_grad(self) -> None:
        self.grad_weight[...] = 0
        self.grad_bias[...] = 0


def init_linear(out_dim: int, in_dim: int, rng: SeededRng, dtype=np.float32) -> LinearLayer:
    """Uniform init of weight and bias in [-1/sqrt(in_dim), +1/sqrt(in_dim)]."""
    bound = 1.0 / math.sqrt(in_dim)
    w = (rng.uniform_array(out_dim * in_dim) * 2.0 - 1.0) * bound
    b = (rng.uniform_array(out_dim) * 2.0 - 1.0) * bound
    return LinearLayer(w.reshape(out_dim, in_dim).astype(dtype), b.astype(dtype))


def linear_forward(x: np.ndarray, layer: LinearLayer) -> np.ndarray:
    """y = W x + b for a vector, or row-wise X W^T + b for a batch."""
    if x.shape[-1] != layer.in_dim:
        raise ShapeError(
            f"linear_forward: expected input dim {layer.in_dim}, got {x.shape[-1]}"
        )
    if x.ndim == 1:
        return layer.weight @ x + layer.bias
    return x @ layer.weight.T + layer.bias


def linear_backward(x: np.ndarray, layer: LinearLayer, grad_out: np.ndarray) -> np.ndarray:
    """Returns grad wrt x and accumulates grad_weight / grad_bias in place."""
    if x.shape[-1] != layer.in_dim or grad_out.shape[-1] != layer.out_dim:
        raise ShapeError(
            f"linear_backward: got x dim {x.shape[-1]} (expected {layer.in_dim}) "
            f"and grad dim {grad_out.shape[-1]} (expected {layer.out_dim})"
        )
    if x.ndim != grad_out.ndim:
        raise ShapeError("linear_backward: x and grad_out must have matching batch axes")
    if x.ndim == 1:
        layer.grad_weight += np.outer(grad_out, x)
        layer.grad_bias += grad_out
        return layer.weight.T @ grad_out
    layer.grad_weight += grad_out.T @ x
    layer.grad_bias += grad_out.sum(axis=0)
    return grad_out @ layer.weight


# ---------------------------------------------------------------------------
# activations and loss

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Pass gradient where x > 0, zero where x <= 0."""
    return np.where(x > 0, grad_out, 0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by subtracting the row max."""
    if logits.shape[-1] < 1:
        raise ShapeError("softmax: need at least one class")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, target) -> float | np.ndarray:
    """Negative log-likelihood of the target class, floored at 1e-12.

    For a single distribution returns a float; for a batch of rows with a
    vector of targets returns the per-sample loss vector. The gradient wrt
    the pre-softmax logits is `cross_entropy_grad`.
    """
    n_classes = probs.shape[-1]
    if probs.ndim == 1:
        t = int(target)
        if not 0 <= t < n_classes:
            raise IndexError(f"cross_entropy: target {t} out of range for {n_classes} classes")
        return -math.log(max(float(probs[t]), PROB_FLOOR))
    targets = np.asarray(target)
    if targets.size and (targets.min() < 0 or targets.max() >= n_classes):
        raise IndexError(f"cross_entropy: target out of range for {n_classes} classes")
    picked = probs[np.arange(probs.shape[0]), targets]
    return -np.log(np.maximum(picked, PROB_FLOOR))


def cross_entropy_grad(probs: np.ndarray, target) -> np.ndarray:
    """Fused softmax + cross-entropy gradient wrt logits: probs - onehot."""
    grad = probs.copy()
    if probs.ndim == 1:
        t = int(target)
        if not 0 <= t < probs.shape[-1]:
            raise IndexError(f"cross_entropy_grad: target {t} out of range")
        grad[t] -= 1
        return grad
    grad[np.arange(probs.shape[0]), np.asarray(target)] -= 1
    return grad


def dropout_mask(shape, p: float, rng: SeededRng, dtype=np.float32) -> np.ndarray:
    """Inverted-dropout scale mask: 0 with probability p, else 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    size = int(np.prod(shape))
    keep = rng.uniform_array(size) >= p
    return (keep / (1.0 - p)).astype(dtype).reshape(shape)


def dropout(x: np.ndarray, p: float, training: bool, rng: SeededRng | None = None) -> np.ndarray:
    """Inverted dropout; identity at inference time."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    return x * dropout_mask(x.shape, p, rng, dtype=x.dtype)


# ---------------------------------------------------------------------------
# optimizers

@dataclass
class OptimizerState:
    """Adam / AdamW state over a fixed list of parameter arrays.

    Adam folds weight decay into the gradient; AdamW applies it decoupled
    from the moment estimates. With weight_decay 0 the two take the exact
    same code path.
    """

    kind: str  # "adam" | "adamw"
    lr: float
    beta1: float
    beta2: float
    eps: float
    weight_decay: float
    t: int
    m: list[np.ndarray]
    v: list[np.ndarray]


def make_optimizer(
    kind: str,
    params: list[np.ndarray],
    lr: float | None = None,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float | None = None,
) -> OptimizerState:
    if kind not in ("adam", "adamw"):
        raise ConfigError(f"unknown optimizer kind {kind!r}")
    if lr is None:
        lr = 1e-3 if kind == "adam" else 2e-5
    if weight_decay is None:
        weight_decay = 0.0 if kind == "adam" else 0.01
    if weight_decay < 0:
        raise ConfigError(f"weight_decay must be >= 0, got {weight_decay}")
    return OptimizerState(
        kind=kind,
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        weight_decay=weight_decay,
        t=0,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def optimizer_step(state: OptimizerState, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    """One bias-corrected moment update, mutating `params` in place."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ShapeError(
            f"optimizer_step: got {len(params)} params / {len(grads)} grads "
            f"for state over {len(state.m)} buffers"
        )
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"optimizer_step: shape mismatch {p.shape} vs {g.shape}")
        if state.kind == "adam" and state.weight_decay != 0.0:
            g = g + state.weight_decay * p
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.kind == "adamw" and state.weight_decay != 0.0:
            update = update + state.weight_decay * p
        p -= state.lr * update


# ---------------------------------------------------------------------------
# gradient oracle

def grad_check(loss_and_grads, params: list[np.ndarray], eps: float = 1e-3) -> float:
    """Max relative error between analytic gradients and central differences.

    `loss_and_grads()` evaluates the model at the current parameter values
    and returns (loss, [grad array per param]). Parameters are perturbed
    in place one element at a time, so the closure must read them afresh
    on every call. Run this at float64; float32 rounding alone is larger
    than the differences being measured.
    """
    if eps <= 0:
        raise ConfigError(f"grad_check eps must be positive, got {eps}")
    loss0, grads = loss_and_grads()
    if not math.isfinite(loss0):
        raise ValueError(f"grad_check: non-finite loss {loss0}")
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            loss_plus, _ = loss_and_grads()
            flat[i] = orig - eps
            loss_minus, _ = loss_and_grads()
            flat[i] = orig
            if not (math.isfinite(loss_plus) and math.isfinite(loss_minus)):
                raise ValueError("grad_check: non-finite loss under perturbation")
            numeric = (loss_plus - loss_minus) / (2.0 * eps)
            analytic = float(gflat[i])
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst

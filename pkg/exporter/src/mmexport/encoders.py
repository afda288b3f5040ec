"""Encoder registry.

Identifiers are strings of the form `scheme:...`:

  text   hashed:<dim>[:<salt>]     deterministic token-hashing features
         hf:<model>                transformers model, first-position vector
  image  patch-stats:<dim>[:<salt>]  deterministic per-patch statistics
         torchvision:<model>       pooled penultimate features per patch

The hashed / patch-stats encoders are wire-compatible stand-ins for the
pretrained stacks: fully deterministic, dependency-free, and fast, which
is what the conformance tests run on. The `hf:` and `torchvision:`
adapters import their frameworks lazily and need the model weights to be
available locally or downloadable.
"""

from __future__ import annotations

import re

import numpy as np

from .errors import EncoderError

_MASK64 = (1 << 64) - 1
_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


def _mix64(z: int) -> int:
    # splitmix64 finalizer; used to derive stable hashes and projections
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _hash_bytes(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def _projection_matrix(n_features: int, dim: int, salt: str) -> np.ndarray:
    """Fixed Gaussian (dim, n_features) projection derived from the salt."""
    total = n_features * dim
    pairs = (total + 1) // 2
    base = _mix64(_hash_bytes(f"projection:{salt}:{n_features}:{dim}".encode()))
    idx = np.arange(1, 2 * pairs + 1, dtype=np.uint64)
    z = np.uint64(base) + idx * np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    uniforms = (z >> np.uint64(11)).astype(np.float64) * 2.0**-53
    u1 = np.maximum(uniforms[:pairs], 2.0**-53)
    u2 = uniforms[pairs:]
    radius = np.sqrt(-2.0 * np.log(u1))
    gauss = np.concatenate([radius * np.cos(2.0 * np.pi * u2), radius * np.sin(2.0 * np.pi * u2)])
    return (gauss[:total] / np.sqrt(n_features)).reshape(dim, n_features).astype(np.float32)


class HashedTextEncoder:
    """Bag-of-tokens feature hashing with signed buckets, L2-normalized."""

    def __init__(self, dim: int, salt: str = ""):
        if dim < 1:
            raise EncoderError(f"text encoder dim must be positive, got {dim}")
        self.dim = dim
        self.salt = salt
        self.name = f"hashed:{dim}:{salt}" if salt else f"hashed:{dim}"

    def encode(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            for token in _TOKEN_RE.findall(text.lower()):
                h = _mix64(_hash_bytes(f"{self.salt}\x00{token}".encode()))
                bucket = h % self.dim
                sign = 1.0 if (h >> 32) & 1 else -1.0
                out[i, bucket] += sign
            norm = float(np.linalg.norm(out[i]))
            if norm > 0:
                out[i] /= norm
        return out


class PatchStatsImageEncoder:
    """Per-patch color and layout statistics under a fixed random projection.

    Features per patch: a 4x4 bilinear thumbnail per channel plus channel
    means and standard deviations, projected to `dim` and L2-normalized.
    """

    input_size = None  # consumes patches at their native size

    def __init__(self, dim: int, salt: str = ""):
        if dim < 1:
            raise EncoderError(f"image encoder dim must be positive, got {dim}")
        self.dim = dim
        self.salt = salt
        self.name = f"patch-stats:{dim}:{salt}" if salt else f"patch-stats:{dim}"
        self._projection = _projection_matrix(54, dim, salt)

    def encode(self, patches) -> np.ndarray:
        from PIL import Image

        features = np.zeros((len(patches), 54), dtype=np.float32)
        for i, patch in enumerate(patches):
            thumb = np.asarray(
                patch.resize((4, 4), Image.BILINEAR), dtype=np.float32
            ) / 255.0
            pixels = np.asarray(patch, dtype=np.float32) / 255.0
            features[i, :48] = thumb.reshape(-1)
            features[i, 48:51] = pixels.mean(axis=(0, 1))
            features[i, 51:54] = pixels.std(axis=(0, 1))
        out = features @ self._projection.T
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        return (out / np.maximum(norms, 1e-12)).astype(np.float32)


class TransformerTextEncoder:
    """First-position hidden state of a Hugging Face encoder."""

    def __init__(self, model_name: str):
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise EncoderError(f"hf:{model_name} needs torch and transformers installed: {exc}") from None
        try:
            self._tokenizer = AutoTokenizer.from_pretrained(model_name)
            self._model = AutoModel.from_pretrained(model_name)
        except Exception as exc:
            raise EncoderError(f"cannot load hf model {model_name!r}: {exc}") from None
        self._model.eval()
        self._torch = torch
        self.dim = int(self._model.config.hidden_size)
        self.name = f"hf:{model_name}"

    def encode(self, texts: list[str]) -> np.ndarray:
        with self._torch.no_grad():
            tokens = self._tokenizer(
                texts, padding=True, truncation=True, max_length=256, return_tensors="pt"
            )
            hidden = self._model(**tokens).last_hidden_state
            return hidden[:, 0, :].cpu().numpy().astype(np.float32)


class TorchvisionImageEncoder:
    """Pooled penultimate features of a torchvision classifier, with the
    classification layer removed; patches are upscaled to the model input."""

    input_size = 224

    def __init__(self, model_name: str):
        try:
            import torch
            import torchvision.models as models
        except ImportError as exc:
            raise EncoderError(f"torchvision:{model_name} needs torch and torchvision: {exc}") from None
        factory = getattr(models, model_name, None)
        if factory is None:
            raise EncoderError(f"unknown torchvision model {model_name!r}")
        try:
            model = factory(weights="DEFAULT")
        except Exception as exc:
            raise EncoderError(f"cannot load torchvision weights for {model_name!r}: {exc}") from None
        if hasattr(model, "fc"):
            self.dim = int(model.fc.in_features)
            model.fc = torch.nn.Identity()
        elif hasattr(model, "classifier"):
            head = model.classifier[-1] if isinstance(model.classifier, torch.nn.Sequential) else model.classifier
            self.dim = int(head.in_features)
            model.classifier = torch.nn.Identity()
        else:
            raise EncoderError(f"cannot locate the classifier head of {model_name!r}")
        model.eval()
        self._model = model
        self._torch = torch
        self.name = f"torchvision:{model_name}"

    def encode(self, patches) -> np.ndarray:
        arrays = [np.asarray(p, dtype=np.float32) / 255.0 for p in patches]
        batch = np.stack(arrays).transpose(0, 3, 1, 2)
        mean = np.array([0.485, 0.456, 0.406], dtype=np.float32).reshape(1, 3, 1, 1)
        std = np.array([0.229, 0.224, 0.225], dtype=np.float32).reshape(1, 3, 1, 1)
        batch = (batch - mean) / std
        with self._torch.no_grad():
            features = self._model(self._torch.from_numpy(batch))
        return features.cpu().numpy().astype(np.float32)


def _split_id(identifier: str):
    scheme, _, rest = identifier.partition(":")
    if not rest:
        raise EncoderError(f"encoder id {identifier!r} must look like 'scheme:spec'")
    return scheme.lower(), rest


def resolve_text_encoder(identifier: str):
    scheme, rest = _split_id(identifier)
    if scheme == "hashed":
        dim, _, salt = rest.partition(":")
        try:
            return HashedTextEncoder(int(dim), salt)
        except ValueError:
            raise EncoderError(f"bad hashed encoder dim in {identifier!r}") from None
    if scheme == "hf":
        return TransformerTextEncoder(rest)
    raise EncoderError(f"unknown text encoder scheme {scheme!r} in {identifier!r}")


def resolve_image_encoder(identifier: str):
    scheme, rest = _split_id(identifier)
    if scheme == "patch-stats":
        dim, _, salt = rest.partition(":")
        try:
            return PatchStatsImageEncoder(int(dim), salt)
        except ValueError:
            raise EncoderError(f"bad patch-stats encoder dim in {identifier!r}") from None
    if scheme == "torchvision":
        return TorchvisionImageEncoder(rest)
    raise EncoderError(f"unknown image encoder scheme {scheme!r} in {identifier!r}")

"""Toy feature extractors for the text, image-semantic and image-pattern branches.

Each encoder works on a batch: token ids ``[B, L_t]`` or image grids
``[B, H, W]``. The single-sample helpers ``encode_text``,
``encode_image_semantic`` and ``encode_image_pattern`` wrap a batch of one.
"""

import logging
from typing import Optional, Sequence

import numpy as np

from core.module import MLP, Linear, Module
from core.tensor import (
    Tensor,
    constrained_conv2d,
    embedding,
    reduce_mean,
    reduce_sum,
    reshape,
    silu,
)
from models.config_schemas import EncoderConfig
from utils.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

PAD_ID = 0
KERNEL_SUM_EPS = 1e-8
KERNEL_SUM_TOL = 1e-6
AUGMENTATIONS = ("identity", "hflip", "rot90", "scale")
SCALE_FACTORS = (0.9, 1.1)


class OutOfVocabularyError(DataError):
    """A token id is negative or not below the vocabulary size."""


class IndivisibleGridError(DataError):
    """The image grid cannot be cut into the configured patch tokens."""


class KernelTooLargeError(DataError):
    """The constrained kernel does not fit inside the image."""


class EmptySequenceError(DataError):
    """A token sequence with no tokens was given to token attention."""


class TaskIndexError(ConfigError):
    """A gate was asked for a task the expert network does not have."""


def pad_tokens(tokens: Sequence[int], length: int) -> np.ndarray:
    """Pad with ``PAD_ID`` or truncate to exactly ``length`` ids."""
    ids = np.full(length, PAD_ID, dtype=np.int64)
    clipped = list(tokens)[:length]
    ids[:len(clipped)] = clipped
    return ids


def constrain_kernel(kernel: np.ndarray) -> np.ndarray:
    """Project one kernel ``[k, k]`` or a stack ``[C, k, k]`` onto the constraint set.

    The center becomes -1 and the surround is rescaled to sum to 1, or reset to
    the uniform ``1 / (k*k - 1)`` when its sum is within 1e-8 of zero. A kernel
    that already satisfies the constraint is returned unchanged.
    """
    kernel = np.asarray(kernel)
    single = kernel.ndim == 2
    stack = kernel[None] if single else kernel
    if stack.ndim != 3 or stack.shape[1] != stack.shape[2] or stack.shape[1] % 2 == 0:
        raise ConfigError(f"constrain_kernel needs odd square kernels, got shape {kernel.shape}")

    k = stack.shape[1]
    c = k // 2
    out = np.empty_like(stack, dtype=np.float32)
    for index, channel in enumerate(stack):
        flat = channel.astype(np.float64).reshape(-1)
        surround = np.delete(flat, c * k + c)
        total = surround.sum()
        if flat[c * k + c] == -1.0 and abs(total - 1.0) <= KERNEL_SUM_TOL:
            out[index] = channel
            continue
        if abs(total) > KERNEL_SUM_EPS:
            surround = surround / total
        else:
            surround = np.full_like(surround, 1.0 / (k * k - 1))
        projected = np.insert(surround, c * k + c, -1.0)
        out[index] = projected.reshape(k, k)
    return out[0] if single else out


def project_kernels(kernels: Tensor) -> Tensor:
    """Differentiable form of ``constrain_kernel`` for a stack ``[C, k, k]``."""
    channels, k, _ = kernels.shape
    center = (k // 2) * k + k // 2
    mask = np.ones(k * k, dtype=np.float64)
    mask[center] = 0.0

    sums = (kernels.values.astype(np.float64).reshape(channels, -1) * mask).sum(axis=-1)
    degenerate = (np.abs(sums) <= KERNEL_SUM_EPS)[:, None]
    keep = np.where(degenerate, 0.0, mask)
    fill = np.where(degenerate, mask / (k * k - 1), 0.0)

    surround = reshape(kernels, (channels, k * k)) * Tensor(keep) + Tensor(fill)
    total = reduce_sum(surround, axis=-1, keepdims=True)
    center_row = np.zeros(k * k)
    center_row[center] = -1.0
    projected = surround / total + Tensor(center_row)
    return reshape(projected, (channels, k, k))


class TextEncoder(Module):
    """Embedding lookup followed by a per-token SiLU MLP."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, init: str = "xavier"):
        self.cfg = cfg
        if init == "zeros":
            table = np.zeros((cfg.vocab_size, cfg.d), dtype=np.float32)
        else:
            table = rng.normal(0.0, 1.0, size=(cfg.vocab_size, cfg.d)).astype(np.float32)
        self.embedding = Tensor(table)
        self.mlp = MLP(cfg.d, cfg.mlp_hidden, cfg.d, rng, init)

    def __call__(self, token_ids: np.ndarray) -> Tensor:
        """Encode padded ids ``[B, L_t]`` into ``f_t [B, L_t, d]``."""
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.cfg.vocab_size):
            bad = int(ids[(ids < 0) | (ids >= self.cfg.vocab_size)][0])
            raise OutOfVocabularyError(f"token id {bad} outside vocabulary of size {self.cfg.vocab_size}")
        return self.mlp(embedding(self.embedding, ids))


def patchify(images: np.ndarray, patch_grid: int) -> np.ndarray:
    """Cut ``[B, H, W]`` into row-major flattened patches ``[B, g*g, (H/g)*(W/g)]``."""
    batch, height, width = images.shape
    if height % patch_grid or width % patch_grid:
        raise IndivisibleGridError(
            f"image {height}x{width} is not divisible into a {patch_grid}x{patch_grid} patch grid"
        )
    ph, pw = height // patch_grid, width // patch_grid
    patches = images.reshape(batch, patch_grid, ph, patch_grid, pw).transpose(0, 1, 3, 2, 4)
    return patches.reshape(batch, patch_grid * patch_grid, ph * pw)


def augment_images(images: np.ndarray, rng: np.random.Generator, cfg: EncoderConfig) -> np.ndarray:
    """Apply one randomly chosen augmentation per image.

    Choices are drawn from identity plus the enabled flip, rotation (square
    grids only) and value-scale operations.
    """
    square = images.shape[1] == images.shape[2]
    enabled = [name for name, on in zip(
        AUGMENTATIONS,
        (True, cfg.augment_flip, cfg.augment_rotate and square, cfg.augment_scale),
    ) if on]
    out = images.copy()
    for index in range(images.shape[0]):
        choice = enabled[rng.integers(len(enabled))]
        if choice == "hflip":
            out[index] = images[index, :, ::-1]
        elif choice == "rot90":
            out[index] = np.rot90(images[index])
        elif choice == "scale":
            factor = SCALE_FACTORS[rng.integers(len(SCALE_FACTORS))]
            out[index] = np.clip(images[index] * factor, 0.0, 1.0)
    return out


class ImageSemanticEncoder(Module):
    """Patch embedding followed by a per-token SiLU MLP."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, init: str = "xavier"):
        self.cfg = cfg
        self.patch_embed = Linear(cfg.patch_size * cfg.patch_size, cfg.d, rng, init)
        self.mlp = MLP(cfg.d, cfg.mlp_hidden, cfg.d, rng, init)

    def embed_patches(self, images: np.ndarray) -> Tensor:
        """Linear patch embeddings ``[B, L_is, d]`` before the MLP."""
        patches = patchify(np.asarray(images, dtype=np.float32), self.cfg.patch_grid)
        if patches.shape[-1] != self.cfg.patch_size ** 2:
            raise IndivisibleGridError(
                f"patch size {patches.shape[-1]} does not match the configured grid {self.cfg.grid}"
            )
        return self.patch_embed(Tensor(patches))

    def __call__(self, images: np.ndarray, augment: bool = False,
                 rng: Optional[np.random.Generator] = None) -> Tensor:
        images = np.asarray(images, dtype=np.float32)
        if augment:
            if rng is None:
                raise ValueError("augmentation needs a random generator")
            images = augment_images(images, rng, self.cfg)
        return self.mlp(self.embed_patches(images))


class ImagePatternEncoder(Module):
    """Constrained convolution, SiLU, global mean pool and an MLP to ``d_ip``."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, init: str = "xavier"):
        self.cfg = cfg
        k = cfg.kernel_size
        if init == "zeros":
            raw = np.zeros((cfg.pattern_channels, k, k), dtype=np.float32)
        else:
            raw = rng.uniform(0.0, 1.0, size=(cfg.pattern_channels, k, k))
        self.kernels = Tensor(constrain_kernel(raw))
        self.mlp = MLP(cfg.pattern_channels, cfg.mlp_hidden, cfg.d_ip, rng, init)

    def constrain(self) -> None:
        """Re-project the stored kernels onto the constraint set in place."""
        self.kernels.values = constrain_kernel(self.kernels.values)

    def responses(self, images: np.ndarray) -> Tensor:
        """Constrained-convolution responses ``[B, C, H-k+1, W-k+1]``."""
        images = np.asarray(images, dtype=np.float32)
        k = self.cfg.kernel_size
        if images.shape[1] < k or images.shape[2] < k:
            raise KernelTooLargeError(f"kernel {k}x{k} does not fit image {images.shape[1]}x{images.shape[2]}")
        return constrained_conv2d(Tensor(images), project_kernels(self.kernels))

    def __call__(self, images: np.ndarray) -> Tensor:
        # residuals of natural content are ~1e-2; the gain brings pooled features to O(1)
        conv = silu(self.responses(images) * self.cfg.pattern_gain)
        batch, channels = conv.shape[0], conv.shape[1]
        pooled = reduce_mean(reshape(conv, (batch, channels, -1)), axis=-1)
        return self.mlp(pooled)


class IPProjection(Module):
    """Linear map from ``d_ip`` to ``d`` followed by SiLU.

    The bias starts at N(0, 1) so ``r_ip`` keeps a feature spread of order one
    even when ``f_ip`` is close to zero; AdaIN divides by that spread.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, init: str = "xavier"):
        self.linear = Linear(cfg.d_ip, cfg.d, rng, init)
        if init != "zeros":
            self.linear.bias.values = rng.normal(0.0, 1.0, size=cfg.d).astype(np.float32)

    def pre_activation(self, f_ip: Tensor) -> Tensor:
        return self.linear(f_ip)

    def __call__(self, f_ip: Tensor) -> Tensor:
        return silu(self.linear(f_ip))


def encode_text(tokens: Sequence[int], encoder: TextEncoder) -> Tensor:
    """Encode one id sequence into ``f_t [L_t, d]``."""
    ids = pad_tokens(tokens, encoder.cfg.text_len)
    out = encoder(ids[None])
    return reshape(out, out.shape[1:])


def encode_image_semantic(image: np.ndarray, encoder: ImageSemanticEncoder, augment: bool = False,
                          rng: Optional[np.random.Generator] = None) -> Tensor:
    """Encode one grid ``[H, W]`` into ``f_is [L_is, d]``."""
    out = encoder(np.asarray(image)[None], augment=augment, rng=rng)
    return reshape(out, out.shape[1:])


def encode_image_pattern(image: np.ndarray, encoder: ImagePatternEncoder) -> Tensor:
    """Encode one grid ``[H, W]`` into ``f_ip [d_ip]``."""
    out = encoder(np.asarray(image)[None])
    return reshape(out, out.shape[1:])


def project_ip(f_ip: Tensor, projection: IPProjection) -> Tensor:
    """Map ``f_ip`` to the IP module's refined representation ``r_ip [d]``."""
    return projection(f_ip)

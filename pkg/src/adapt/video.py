"""Shared video backbone.

A clip of T sampled frames (H x W x 3) is cut into 2 x 32 x 32 spatio-temporal
patches, embedded to width 8C and passed through a stack of transformer
blocks, giving a feature grid of shape (T/2, H/32, W/32, 8C).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import LayerNorm, Linear, Module, TransformerBlock, param
from .tensor import Tensor

PATCH_T = 2
PATCH_S = 32


class ConfigError(ValueError):
    pass


@dataclass
class VideoClip:
    frames: np.ndarray  # (N, H_raw, W_raw, 3) in [0, 1]
    source: str = ""

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 4 or f.shape[-1] != 3 or f.shape[0] < 1:
            raise ValueError(f"clip {self.source!r}: expected (N>=1, H, W, 3) frames, got {f.shape}")


def sample_indices(n_frames: int, num_samples: int) -> np.ndarray:
    """Uniform frame indices floor(i * N / T), i = 0..T-1."""
    if num_samples < 2 or num_samples % 2:
        raise ConfigError(f"T must be even and >= 2, got {num_samples}")
    if n_frames < 1:
        raise ConfigError("clip has no frames")
    return (np.arange(num_samples) * n_frames) // num_samples


def sample_frames(clip: VideoClip | np.ndarray, num_samples: int) -> np.ndarray:
    frames = clip.frames if isinstance(clip, VideoClip) else np.asarray(clip)
    return frames[sample_indices(frames.shape[0], num_samples)]


def resize_frames(frames: np.ndarray, height: int, width: int) -> np.ndarray:
    """Center-crop to the target aspect ratio, then nearest-neighbour resize."""
    n, h, w, c = frames.shape
    if h * width > w * height:  # too tall
        ch, cw = max(1, round(w * height / width)), w
    else:
        ch, cw = h, max(1, round(h * width / height))
    top, left = (h - ch) // 2, (w - cw) // 2
    frames = frames[:, top:top + ch, left:left + cw]
    rows = (np.arange(height) * ch) // height
    cols = (np.arange(width) * cw) // width
    return frames[:, rows][:, :, cols]


@dataclass
class EncoderConfig:
    frames: int = 32        # T
    height: int = 64        # H
    width: int = 64         # W
    channels: int = 8       # C; features are 8C wide
    depth: int = 2
    heads: int = 4

    def validate(self) -> None:
        if self.frames < 2 or self.frames % 2:
            raise ConfigError(f"T must be even and >= 2, got {self.frames}")
        if self.height % PATCH_S or self.width % PATCH_S:
            raise ConfigError(f"H and W must be divisible by {PATCH_S}, got {self.height}x{self.width}")
        if (8 * self.channels) % self.heads:
            raise ConfigError(f"8C={8 * self.channels} not divisible by {self.heads} heads")

    @property
    def grid(self) -> tuple[int, int, int]:
        return self.frames // PATCH_T, self.height // PATCH_S, self.width // PATCH_S

    @property
    def width_out(self) -> int:
        return 8 * self.channels

    @property
    def num_tokens(self) -> int:
        t, h, w = self.grid
        return t * h * w


def patchify(frames: np.ndarray) -> np.ndarray:
    """(B, T, H, W, 3) -> (B, T/2 * H/32 * W/32, 2*32*32*3), grid order (t, y, x)."""
    B, t, h, w, c = frames.shape
    x = frames.reshape(B, t // PATCH_T, PATCH_T, h // PATCH_S, PATCH_S, w // PATCH_S, PATCH_S, c)
    x = x.transpose(0, 1, 3, 5, 2, 4, 6, 7)
    return x.reshape(B, (t // PATCH_T) * (h // PATCH_S) * (w // PATCH_S), -1)


class VideoEncoder(Module):
    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        d = config.width_out
        self.patch = Linear(PATCH_T * PATCH_S * PATCH_S * 3, d, rng)
        self.pos = param(rng.normal(0.0, 0.02, size=(config.num_tokens, d)))
        self.blocks = [TransformerBlock(d, config.heads, rng) for _ in range(config.depth)]
        self.norm = LayerNorm(d)

    def __call__(self, frames: np.ndarray) -> Tensor:
        """``frames``: (B, T, H, W, 3) already sampled and resized. Returns (B, T/2, H/32, W/32, 8C)."""
        cfg = self.config
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim == 4:
            frames = frames[None]
        expected = (cfg.frames, cfg.height, cfg.width, 3)
        if frames.shape[1:] != expected:
            raise ConfigError(f"encoder expects frames of shape (B, {expected}), got {frames.shape}")
        if not np.isfinite(frames).all():
            raise ValueError("non-finite value in input frames")
        return self.from_patches(patchify(frames))

    def from_patches(self, patches: np.ndarray) -> Tensor:
        """Encode output of :func:`patchify`, shape (B, tokens, 2*32*32*3)."""
        cfg = self.config
        B = patches.shape[0]
        x = self.patch(Tensor(patches - 0.5)) + self.pos
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        t, h, w = cfg.grid
        return x.reshape(B, t, h, w, cfg.width_out)

    def output_shape(self) -> tuple[int, int, int, int]:
        return (*self.config.grid, self.config.width_out)


def flatten_grid(features: Tensor) -> Tensor:
    """Channel-wise tokenization: (B, t, h, w, D) -> (B, t*h*w, D)."""
    B, t, h, w, d = features.shape
    return features.reshape(B, t * h * w, d)


class VideoProjector(Module):
    """Learnable map from 8C-wide video tokens to the text width."""

    def __init__(self, d_in: int, d_text: int, rng: np.random.Generator):
        self.proj = Linear(d_in, d_text, rng, std=1.0 / np.sqrt(d_in))

    def __call__(self, features: Tensor) -> Tensor:
        return self.proj(flatten_grid(features))

    def set_identity(self) -> None:
        d_in, d_out = self.proj.weight.shape
        if d_in != d_out:
            raise ConfigError("identity projection needs 8C == D_text")
        self.proj.weight.data = np.eye(d_in)
        self.proj.bias.data = np.zeros(d_out)


def tokenize_and_project(features: Tensor, projector: VideoProjector) -> Tensor:
    return projector(features)

"""Control-signal prediction head (motion transformer) and its loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import LayerNorm, Linear, Module, TransformerBlock
from .tensor import ContractError, Tensor

CHANNELS = ("speed", "course")


@dataclass
class SignalNormalizer:
    """Per-channel affine map to zero mean / unit variance."""

    mean: np.ndarray = field(default_factory=lambda: np.zeros(len(CHANNELS)))
    std: np.ndarray = field(default_factory=lambda: np.ones(len(CHANNELS)))

    @classmethod
    def fit(cls, signals: np.ndarray) -> "SignalNormalizer":
        flat = np.asarray(signals, dtype=np.float64).reshape(-1, np.shape(signals)[-1])
        std = flat.std(axis=0)
        return cls(flat.mean(axis=0), np.where(std > 1e-8, std, 1.0))

    def normalize(self, s: np.ndarray) -> np.ndarray:
        return (np.asarray(s) - self.mean) / self.std

    def denormalize(self, s: np.ndarray) -> np.ndarray:
        return np.asarray(s) * self.std + self.mean

    def select(self, channels: list[int]) -> "SignalNormalizer":
        return SignalNormalizer(self.mean[channels], self.std[channels])

    def to_dict(self) -> dict:
        return {"mean": [float(x) for x in self.mean], "std": [float(x) for x in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "SignalNormalizer":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


class CSPHead(Module):
    """Predicts signals for frames 2..T from the video feature grid.

    Tokens are mixed by a small transformer, averaged within each temporal
    slice of the grid, and read out with 2n outputs per slice: slice k
    carries frames 2k and 2k+1.  The first frame's prediction is dropped.
    """

    def __init__(self, d_in: int, n_channels: int, rng: np.random.Generator, d: int = 64,
                 depth: int = 2, heads: int = 4):
        self.n_channels = n_channels
        self.inp = Linear(d_in, d, rng, std=1.0 / np.sqrt(d_in))
        self.blocks = [TransformerBlock(d, heads, rng) for _ in range(depth)]
        self.norm = LayerNorm(d)
        self.readout = Linear(d, 2 * n_channels, rng)

    def __call__(self, features: Tensor) -> Tensor:
        """``features``: (B, T/2, h, w, 8C) -> predictions (B, T-1, n)."""
        B, t, h, w, c = features.shape
        x = self.inp(features.reshape(B, t * h * w, c))
        for block in self.blocks:
            x = block(x)
        x = self.norm(x).reshape(B, t, h * w, -1).mean(axis=2)
        y = self.readout(x).reshape(B, 2 * t, self.n_channels)
        return y[:, 1:]


def csp_loss(signals, predictions) -> Tensor:
    """Mean over frames 2..T of the channel-summed squared error.

    ``signals``: (..., T, n) ground truth including the first frame;
    ``predictions``: (..., T-1, n).  Batched inputs are averaged over the batch.
    """
    s = np.asarray(signals.data if isinstance(signals, Tensor) else signals, dtype=np.float64)
    pred = T.as_tensor(predictions)
    if s.ndim == 1:
        s = s[:, None]
    p_shape = pred.shape if pred.ndim > 1 else pred.shape + (1,)
    if s.shape[-2] != p_shape[-2] + 1 or s.shape[-1] != p_shape[-1]:
        raise ContractError(f"csp_loss needs |S| = |S_hat| + 1: got S {s.shape}, S_hat {pred.shape}")
    if pred.ndim == 1:
        pred = pred.reshape(-1, 1)
    diff = pred - s[..., 1:, :]
    per_frame = (diff * diff).sum(axis=-1)
    return per_frame.mean()

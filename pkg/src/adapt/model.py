"""Full model: shared video encoder with caption and control-signal heads."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as T
from .caption import MASK_VARIANTS, CaptionHead
from .csp import CHANNELS, CSPHead
from .nn import Linear, Module, param
from .tensor import Tensor
from .video import ConfigError, EncoderConfig, VideoEncoder, VideoProjector

MODES = ("joint", "single", "single_plus", "narration_only", "reasoning_only")


@dataclass
class TrainConfig:
    mode: str = "joint"
    mask_variant: str = "default"
    channels: list[str] = field(default_factory=lambda: list(CHANNELS))
    frames: int = 32
    height: int = 64
    width: int = 64
    base_channels: int = 8
    d_text: int = 64
    heads: int = 4
    video_depth: int = 2
    text_depth: int = 2
    motion_depth: int = 2
    vocab_size: int = 256
    epochs: int = 10
    batch_size: int = 8
    lr: float = 1e-3
    warmup: float = 0.10
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    mask_prob: float = 0.5
    mask_sep: bool = True
    csp_weight: float = 1.0
    soft_video_mask: bool = False
    sparsity_weight: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.channels = list(self.channels)
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mask_variant not in MASK_VARIANTS:
            raise ConfigError(f"unknown mask variant {self.mask_variant!r}")
        if not 0.0 < self.warmup < 1.0:
            raise ConfigError(f"warmup fraction must lie in (0, 1), got {self.warmup}")
        if self.frames < 2 or self.frames % 2:
            raise ConfigError(f"T must be even and >= 2, got {self.frames}")
        if not self.channels or any(c not in CHANNELS for c in self.channels):
            raise ConfigError(f"channels must be a non-empty subset of {CHANNELS}, got {self.channels}")
        if len(set(self.channels)) != len(self.channels):
            raise ConfigError("duplicate signal channel")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        self.encoder_config().validate()

    @property
    def variant(self) -> str:
        if self.mode in ("narration_only", "reasoning_only"):
            return self.mode
        return self.mask_variant

    @property
    def has_csp(self) -> bool:
        return self.mode not in ("single", "single_plus")

    @property
    def channel_index(self) -> list[int]:
        return [CHANNELS.index(c) for c in self.channels]

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.frames, self.height, self.width, self.base_channels,
                             self.video_depth, self.heads)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(d)

    def replace(self, **changes) -> "TrainConfig":
        d = self.to_dict()
        d.update(changes)
        return TrainConfig.from_dict(d)


class AdaptModel(Module):
    def __init__(self, config: TrainConfig, vocab_size: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(config.seed)
        self.config = config
        enc = config.encoder_config()
        self.encoder = VideoEncoder(enc, rng)
        self.projector = VideoProjector(enc.width_out, config.d_text, rng)
        n_context = enc.num_tokens + (config.frames if config.mode == "single_plus" else 0)
        self.caption = CaptionHead(vocab_size, config.d_text, rng, config.text_depth, config.heads,
                                   n_video=n_context, soft_video_mask=config.soft_video_mask)
        n = len(config.channels)
        self.csp = (CSPHead(enc.width_out, n, rng, config.d_text, config.motion_depth, config.heads)
                    if config.has_csp else None)
        self.signal_embed = None
        if config.mode == "single_plus":
            self.signal_embed = Linear(n, config.d_text, rng)
            self.signal_type = param(rng.normal(0.0, 0.02, size=(config.d_text,)))

    def context_tokens(self, features: Tensor, signals: np.ndarray | None = None) -> Tensor:
        """Video tokens projected to text width, plus control-signal tokens in single_plus mode."""
        tokens = self.projector(features)
        if self.signal_embed is None:
            return tokens
        if signals is None:
            raise ConfigError("single_plus mode needs control signals as input")
        sig = self.signal_embed(Tensor(signals)) + self.signal_type
        return T.concat([tokens, sig], axis=1)

    def forward(self, patches: np.ndarray, ids: np.ndarray, segment_ids: np.ndarray, valid: np.ndarray,
                signals: np.ndarray | None = None) -> dict[str, Tensor]:
        """``patches``: patchified sampled frames (see :func:`adapt.video.patchify`)."""
        out: dict[str, Tensor] = {}
        out["video_features"] = feats = self.encoder.from_patches(patches)
        out["video_tokens"] = ctx = self.context_tokens(feats, signals)
        out["caption_logits"] = self.caption(ctx, ids, segment_ids, valid, self.config.variant)
        if self.csp is not None:
            out["csp_predictions"] = self.csp(feats)
        return out

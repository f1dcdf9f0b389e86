"""Joint training: MLM masking, learning-rate schedule, AdamW, checkpoints, evaluation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .caption import generate_ids, mlm_loss, split_sentences
from .csp import SignalNormalizer, csp_loss
from .data import Episode, read_clip
from .metrics import metrics_report
from .model import AdaptModel, TrainConfig
from .tensor import IGNORE_ID, Tensor
from .tensor_io import load_tensor, save_tensor
from .tokenizer import (CLS_ID, MASK_ID, NUM_RESERVED, PAD_ID, SEP_ID, TokenSequence, Vocab,
                        build_vocab, encode, pad_and_segment)
from .video import ConfigError, patchify, resize_frames, sample_indices

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = 1


# -- masking and schedule -----------------------------------------------------
def mask_tokens(ids: np.ndarray, rng: np.random.Generator, vocab_size: int, valid: np.ndarray | None = None,
                prob: float = 0.5, mask_sep: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Select real tokens with probability ``prob``; replace 80% by [MASK], 10% random, 10% kept.

    [CLS] and [PAD] are never selected.  [SEP] is selectable when ``mask_sep``
    so that the model learns where sentences end.  Returns the corrupted ids
    and targets holding the original id at selected positions, IGNORE_ID
    elsewhere.
    """
    ids = np.asarray(ids, dtype=np.int64)
    eligible = (ids != CLS_ID) & (ids != PAD_ID)
    if not mask_sep:
        eligible &= ids != SEP_ID
    if valid is not None:
        eligible &= np.asarray(valid, dtype=bool)
    selected = eligible & (rng.random(ids.shape) < prob)
    action = rng.random(ids.shape)
    random_ids = rng.integers(NUM_RESERVED, vocab_size, size=ids.shape)
    out = ids.copy()
    out[selected & (action < 0.8)] = MASK_ID
    swap = selected & (action >= 0.8) & (action < 0.9)
    out[swap] = random_ids[swap]
    targets = np.where(selected, ids, IGNORE_ID)
    return out, targets


def lr_at(step: float, total_steps: int, peak: float, warmup: float = 0.10) -> float:
    """Linear warm-up from 0 to ``peak`` over the first ``warmup`` fraction, then linear decay to 0."""
    if total_steps <= 0:
        return 0.0
    step = min(max(step, 0), total_steps)
    warm = warmup * total_steps
    if step < warm:
        return peak * step / warm
    return peak * (total_steps - step) / (total_steps - warm)


class AdamW:
    """Adam with decoupled weight decay (applied to matrices, not to biases or norms)."""

    def __init__(self, params: Sequence[Tensor], betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = list(params)
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            if self.weight_decay and p.ndim >= 2:
                p.data *= 1 - lr * self.weight_decay
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- prepared examples --------------------------------------------------------
@dataclass
class Example:
    frames: np.ndarray      # (T, H, W, 3)
    patches: np.ndarray     # patchify(frames), cached for training
    tokens: TokenSequence
    signals: np.ndarray     # (T, n) raw units, enabled channels
    narration: str
    reasoning: str


def prepare_tokens(narration: str, reasoning: str, vocab: Vocab, variant: str) -> TokenSequence:
    seq = pad_and_segment(encode(narration, vocab) if variant != "reasoning_only" else [],
                          encode(reasoning, vocab) if variant != "narration_only" else [])
    L = seq.max_len
    drop = {"narration_only": slice(L, 2 * L), "reasoning_only": slice(0, L)}.get(variant)
    if drop is not None:
        seq.ids[drop] = PAD_ID
        seq.valid[drop] = False
    return seq


def prepare_frames(frames: np.ndarray, config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    idx = sample_indices(frames.shape[0], config.frames)
    return resize_frames(frames[idx], config.height, config.width), idx


def prepare(episodes: Sequence[Episode], root, config: TrainConfig, vocab: Vocab) -> list[Example]:
    root = Path(root)
    out = []
    for ep in episodes:
        frames, idx = prepare_frames(read_clip(root / ep.clip), config)
        sig = ep.signal_array[idx][:, config.channel_index]
        if not np.isfinite(frames).all():
            raise ValueError(f"{ep.clip}: non-finite pixel values")
        out.append(Example(frames, patchify(frames[None])[0], prepare_tokens(ep.narration, ep.reasoning, vocab, config.variant),
                           sig, ep.narration, ep.reasoning))
    return out


@dataclass
class Batch:
    patches: np.ndarray
    ids: np.ndarray
    segment_ids: np.ndarray
    valid: np.ndarray
    signals: np.ndarray       # normalized, (B, T, n)
    targets: np.ndarray | None = None

    @classmethod
    def collate(cls, examples: Sequence[Example], normalizer: SignalNormalizer) -> "Batch":
        return cls(np.stack([e.patches for e in examples]),
                   np.stack([e.tokens.ids for e in examples]),
                   np.stack([e.tokens.segment_ids for e in examples]),
                   np.stack([e.tokens.valid for e in examples]),
                   np.stack([normalizer.normalize(e.signals) for e in examples]))


class NonFiniteLossError(FloatingPointError):
    pass


# -- trainer -------------------------------------------------------------------
class Trainer:
    def __init__(self, config: TrainConfig, vocab: Vocab, normalizer: SignalNormalizer,
                 model: AdaptModel | None = None):
        self.config = config
        self.vocab = vocab
        self.normalizer = normalizer
        self.model = model or AdaptModel(config, len(vocab))
        self.optimizer = AdamW(self.model.parameters(), config.betas, config.eps, config.weight_decay)
        self.step_count = 0
        self.history: list[dict] = []

    @classmethod
    def from_episodes(cls, config: TrainConfig, episodes: Sequence[Episode]) -> "Trainer":
        vocab = build_vocab([s for ep in episodes for s in (ep.narration, ep.reasoning)], config.vocab_size)
        sig = np.concatenate([ep.signal_array for ep in episodes])[:, config.channel_index]
        return cls(config, vocab, SignalNormalizer.fit(sig))

    # losses -----------------------------------------------------------------
    def losses(self, batch: Batch) -> tuple[dict[str, Tensor], dict[str, Tensor]]:
        cfg = self.config
        acts = self.model.forward(batch.patches, batch.ids, batch.segment_ids, batch.valid,
                                  batch.signals if cfg.mode == "single_plus" else None)
        targets = batch.targets if batch.targets is not None else np.full(batch.ids.shape, IGNORE_ID)
        out = {"L_DCG": mlm_loss(acts["caption_logits"], targets)}
        total = out["L_DCG"]
        if self.model.csp is not None:
            out["L_CSP"] = csp_loss(batch.signals, acts["csp_predictions"])
            total = total + out["L_CSP"] * cfg.csp_weight
        penalty = self.model.caption.sparsity_penalty()
        if penalty is not None and cfg.sparsity_weight:
            total = total + penalty * cfg.sparsity_weight
        out["L"] = total
        return out, acts

    def mask_batch(self, batch: Batch, rngs: Sequence[np.random.Generator]) -> Batch:
        masked, targets = zip(*(mask_tokens(batch.ids[i], rngs[i], len(self.vocab), batch.valid[i],
                                            self.config.mask_prob, self.config.mask_sep)
                                for i in range(len(rngs))))
        return Batch(batch.patches, np.stack(masked), batch.segment_ids, batch.valid, batch.signals,
                     np.stack(targets))

    def train_step(self, batch: Batch, lr: float) -> dict[str, float]:
        self.model.zero_grad()
        losses, acts = self.losses(batch)
        value = losses["L"].item()
        if not np.isfinite(value):
            raise NonFiniteLossError(f"non-finite loss; first non-finite tensor: {first_nonfinite(self.model, acts)}")
        T.backward(losses["L"])
        self.optimizer.step(lr)
        self.step_count += 1
        return {k: v.item() for k, v in losses.items()}

    def fit(self, examples: Sequence[Example], callback: Callable[[int, dict], None] | None = None) -> list[dict]:
        cfg = self.config
        n = len(examples)
        per_epoch = -(-n // cfg.batch_size)
        total = per_epoch * cfg.epochs
        order_rng = np.random.default_rng([cfg.seed, 1])
        for epoch in range(cfg.epochs):
            order = order_rng.permutation(n)
            sums: dict[str, float] = {}
            for b in range(per_epoch):
                chosen = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                batch = Batch.collate([examples[i] for i in chosen], self.normalizer)
                rngs = [np.random.default_rng([cfg.seed, epoch, int(i)]) for i in chosen]
                batch = self.mask_batch(batch, rngs)
                lr = lr_at(self.step_count + 1, total, cfg.lr, cfg.warmup)
                losses = self.train_step(batch, lr)
                for k, v in losses.items():
                    sums[k] = sums.get(k, 0.0) + v * len(chosen)
            record = {"epoch": epoch + 1, **{k: v / n for k, v in sums.items()}}
            self.history.append(record)
            log.info("epoch %d %s", epoch + 1, " ".join(f"{k}={v:.4f}" for k, v in record.items() if k != "epoch"))
            if callback:
                callback(epoch, record)
        return self.history

    # inference ----------------------------------------------------------------
    def predict(self, examples: Sequence[Example], batch_size: int = 16) -> tuple[list[tuple[str, str]], np.ndarray | None]:
        """Greedy captions and raw-unit signal predictions for frames 2..T."""
        captions: list[tuple[str, str]] = []
        preds = []
        with T.no_grad():
            for start in range(0, len(examples), batch_size):
                chunk = examples[start:start + batch_size]
                batch = Batch.collate(chunk, self.normalizer)
                feats = self.model.encoder.from_patches(batch.patches)
                ctx = self.model.context_tokens(
                    feats, batch.signals if self.config.mode == "single_plus" else None)
                ids = generate_ids(self.model.caption, ctx, self.config.variant)
                captions.extend(split_sentences(row, self.vocab) for row in ids)
                if self.model.csp is not None:
                    preds.append(self.normalizer.denormalize(self.model.csp(feats).data))
        return captions, (np.concatenate(preds) if preds else None)

    def infer(self, frames: np.ndarray, signals: np.ndarray | None = None) -> tuple[str, str]:
        """Caption one raw clip (N, H, W, 3); ``signals`` (N, 2) is required in single_plus mode."""
        cfg = self.config
        if not np.isfinite(frames).all():
            raise ValueError("non-finite value in input frames")
        sampled, idx = prepare_frames(frames, cfg)
        if signals is not None:
            sig = np.asarray(signals, dtype=np.float64)[idx][:, cfg.channel_index]
        elif cfg.mode == "single_plus":
            raise ConfigError("single_plus checkpoints need control signals for inference")
        else:
            sig = np.zeros((cfg.frames, len(cfg.channels)))
        ex = Example(sampled, patchify(sampled[None])[0], prepare_tokens("", "", self.vocab, cfg.variant),
                     sig, "", "")
        captions, _ = self.predict([ex])
        return captions[0]

    def evaluate(self, examples: Sequence[Example]) -> dict:
        captions, preds = self.predict(examples)
        variant = self.config.variant
        cap = {}
        if variant != "reasoning_only":
            cap["narration"] = ([c[0] for c in captions], [e.narration for e in examples])
        if variant != "narration_only":
            cap["reasoning"] = ([c[1] for c in captions], [e.reasoning for e in examples])
        sig = {}
        if preds is not None:
            truth = np.stack([e.signals[1:] for e in examples])
            for j, ch in enumerate(self.config.channels):
                sig[ch] = (truth[..., j].reshape(-1), preds[..., j].reshape(-1))
        return metrics_report(cap, sig)

    # checkpoints ---------------------------------------------------------------
    def quantize(self) -> None:
        """Round parameters to float32 so the checkpoint reproduces them exactly."""
        with np.errstate(over="ignore"):
            for p in self.model.parameters():
                p.data = p.data.astype(np.float32).astype(np.float64)

    def save(self, path) -> None:
        path = Path(path)
        (path / "params").mkdir(parents=True, exist_ok=True)
        self.quantize()
        for name, p in self.model.named_parameters():
            if not np.isfinite(p.data).all():
                raise NonFiniteLossError(f"parameter {name} is not finite in float32; refusing to save")
        self.vocab.save(path / "vocab.txt")
        params = []
        for name, p in self.model.named_parameters():
            fname = f"params/{name}.adpt"
            save_tensor(path / fname, p.data if p.ndim else p.data.reshape(1))
            params.append({"name": name, "file": fname, "shape": list(p.shape)})
        manifest = {
            "schema_version": CHECKPOINT_SCHEMA,
            "config": self.config.to_dict(),
            "vocab": "vocab.txt",
            "normalization": {"channels": self.config.channels, **self.normalizer.to_dict()},
            "step": self.step_count,
            "seed": self.config.seed,
            "optimizer": {"name": "AdamW", "betas": list(self.config.betas), "eps": self.config.eps,
                          "weight_decay": self.config.weight_decay},
            "parameters": params,
        }
        (path / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Trainer":
        path = Path(path)
        try:
            manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"{path}: not a checkpoint (no manifest.json)") from None
        if manifest.get("schema_version") != CHECKPOINT_SCHEMA:
            raise ConfigError(f"{path}: unsupported checkpoint schema {manifest.get('schema_version')}")
        config = TrainConfig.from_dict(manifest["config"])
        vocab = Vocab.load(path / manifest["vocab"])
        norm = manifest["normalization"]
        trainer = cls(config, vocab, SignalNormalizer.from_dict(norm))
        named = dict(trainer.model.named_parameters())
        listed = {p["name"] for p in manifest["parameters"]}
        if listed != set(named):
            raise ConfigError(f"{path}: parameter set mismatch: {sorted(listed ^ set(named))}")
        for entry in manifest["parameters"]:
            arr = load_tensor(path / entry["file"]).reshape(entry["shape"])
            named[entry["name"]].data = arr
        trainer.step_count = manifest["step"]
        return trainer


def first_nonfinite(model: AdaptModel, acts: dict[str, Tensor]) -> str:
    for name, p in model.named_parameters():
        if not np.isfinite(p.data).all():
            return f"parameter {name}"
    for name, t in acts.items():
        if not np.isfinite(t.data).all():
            return f"activation {name}"
    return "loss"

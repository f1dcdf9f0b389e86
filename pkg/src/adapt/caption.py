"""Vision-language transformer for two-segment driving captions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Embedding, LayerNorm, Linear, Module, TransformerBlock, param
from .tensor import IGNORE_ID, Tensor
from .tokenizer import (CLS_ID, MASK_ID, MAX_SENTENCE_LEN, NARRATION, PAD_ID, REASONING, SEP_ID,
                        Vocab, decode)
from .video import ConfigError

MASK_VARIANTS = ("default", "no_cross", "swapped_cross", "narration_only", "reasoning_only")


@dataclass
class AttentionMask:
    allowed: np.ndarray  # bool, (N, N) or (B, N, N); row attends to column when True
    variant: str
    n_video: int
    max_len: int

    def block(self, rows: str, cols: str) -> np.ndarray:
        sl = self.slices()
        return self.allowed[..., sl[rows], sl[cols]]

    def slices(self) -> dict[str, slice]:
        v, L = self.n_video, self.max_len
        return {"video": slice(0, v), "narration": slice(v, v + L), "reasoning": slice(v + L, v + 2 * L)}


def build_attention_mask(variant: str, n_video: int, max_len: int = MAX_SENTENCE_LEN,
                         valid: np.ndarray | None = None) -> AttentionMask:
    """Allowed-attention matrix over ``[video | narration | reasoning]``.

    Video tokens see only video tokens.  Text rows always see every video
    token and causally (j <= i) see their own sentence.  Cross-sentence
    access depends on ``variant``: in ``default`` the reasoning rows see the
    whole narration, ``swapped_cross`` mirrors that, ``no_cross`` and the
    single-sentence variants allow none.  Columns whose ``valid`` flag is
    False ([PAD]) are denied everywhere.
    """
    if variant not in MASK_VARIANTS:
        raise ConfigError(f"unknown mask variant {variant!r}; expected one of {MASK_VARIANTS}")
    v, L = n_video, max_len
    N = v + 2 * L
    m = np.zeros((N, N), dtype=bool)
    nar, rea = slice(v, v + L), slice(v + L, v + 2 * L)
    causal = np.tril(np.ones((L, L), dtype=bool))
    m[:v, :v] = True
    m[v:, :v] = True
    if variant != "reasoning_only":
        m[nar, nar] = causal
    if variant != "narration_only":
        m[rea, rea] = causal
    if variant == "default":
        m[rea, nar] = True
    elif variant == "swapped_cross":
        m[nar, rea] = True
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        col_ok = np.concatenate([np.ones(valid.shape[:-1] + (v,), dtype=bool), valid], axis=-1)
        m = m & col_ok[..., None, :]
    return AttentionMask(m, variant, v, L)


def decode_order(variant: str) -> tuple[int, ...]:
    """Segments in generation order: the conditioning sentence comes first."""
    return {"default": (NARRATION, REASONING), "no_cross": (NARRATION, REASONING),
            "swapped_cross": (REASONING, NARRATION), "narration_only": (NARRATION,),
            "reasoning_only": (REASONING,)}[variant]


class CaptionHead(Module):
    def __init__(self, vocab_size: int, d: int, rng: np.random.Generator, depth: int = 2, heads: int = 4,
                 max_len: int = MAX_SENTENCE_LEN, n_video: int | None = None, soft_video_mask: bool = False):
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.word = Embedding(vocab_size, d, rng)
        self.segment = Embedding(2, d, rng)
        self.position = Embedding(2 * max_len, d, rng)
        self.embed_norm = LayerNorm(d)
        self.blocks = [TransformerBlock(d, heads, rng) for _ in range(depth)]
        self.norm = LayerNorm(d)
        self.out = Linear(d, vocab_size, rng)
        self.video_mask_logits = None
        if soft_video_mask:
            if n_video is None:
                raise ConfigError("soft video mask needs the video token count")
            self.video_mask_logits = param(np.full((n_video, n_video), 3.0))

    def embed_text(self, ids: np.ndarray, segment_ids: np.ndarray) -> Tensor:
        pos = np.arange(ids.shape[-1])
        x = self.word(ids) + self.segment(segment_ids) + self.position(pos)
        return self.embed_norm(x)

    def _video_bias(self, n_total: int) -> Tensor | None:
        if self.video_mask_logits is None:
            return None
        nv = self.video_mask_logits.shape[0]
        soft = T.log(T.sigmoid(self.video_mask_logits))
        right = Tensor(np.zeros((nv, n_total - nv)))
        bottom = Tensor(np.zeros((n_total - nv, n_total)))
        return T.concat([T.concat([soft, right], axis=1), bottom], axis=0)

    def sparsity_penalty(self) -> Tensor | None:
        if self.video_mask_logits is None:
            return None
        return T.sigmoid(self.video_mask_logits).mean()

    def __call__(self, video_tokens: Tensor, ids: np.ndarray, segment_ids: np.ndarray,
                 valid: np.ndarray, variant: str = "default") -> Tensor:
        """Returns text logits (B, 2L, V)."""
        B, nv, _ = video_tokens.shape
        text = self.embed_text(ids, segment_ids)
        x = T.concat([video_tokens, text], axis=1)
        mask = build_attention_mask(variant, nv, self.max_len, valid).allowed[:, None]
        bias = self._video_bias(x.shape[1])
        for block in self.blocks:
            x = block(x, mask, bias)
        x = self.norm(x[:, nv:])
        return self.out(x)


def mlm_loss(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Cross-entropy over the masked positions (targets != IGNORE_ID)."""
    V = logits.shape[-1]
    return T.cross_entropy(logits.reshape(-1, V), np.asarray(targets).reshape(-1), IGNORE_ID)


def generate_ids(head: CaptionHead, video_tokens: Tensor, variant: str = "default") -> np.ndarray:
    """Greedy two-sentence decoding; returns the final (B, 2L) id layout.

    Each step writes [MASK] at the next slot, re-runs the full sequence and
    keeps the argmax there.  A sentence ends at [SEP] or when its block is
    full; remaining slots stay [PAD] and are invisible to later steps.
    """
    L = head.max_len
    B = video_tokens.shape[0]
    ids = np.full((B, 2 * L), PAD_ID, dtype=np.int64)
    seg = np.repeat(np.array([NARRATION, REASONING]), L)[None].repeat(B, axis=0)
    banned = [PAD_ID, CLS_ID, MASK_ID]
    with T.no_grad():
        for s in decode_order(variant):
            base = s * L
            ids[:, base] = CLS_ID
            done = np.zeros(B, dtype=bool)
            for k in range(1, L):
                pos = base + k
                ids[~done, pos] = MASK_ID
                logits = head(video_tokens, ids, seg, ids != PAD_ID, variant).data[:, pos].copy()
                logits[:, banned] = -np.inf
                tok = logits.argmax(axis=-1)
                ids[~done, pos] = tok[~done]
                done |= tok == SEP_ID
                if done.all():
                    break
    return ids


def split_sentences(ids: np.ndarray, vocab: Vocab, max_len: int = MAX_SENTENCE_LEN) -> tuple[str, str]:
    out = []
    for block in (ids[:max_len], ids[max_len:2 * max_len]):
        words = []
        for i in block[1:]:
            if i in (SEP_ID, PAD_ID):
                break
            words.append(int(i))
        out.append(decode(words, vocab))
    return out[0], out[1]


def generate(head: CaptionHead, video_tokens: Tensor, vocab: Vocab,
             variant: str = "default") -> list[tuple[str, str]]:
    ids = generate_ids(head, video_tokens, variant)
    return [split_sentences(row, vocab, head.max_len) for row in ids]

"""WordPiece-style subword tokenizer and the two-sentence token layout."""

from __future__ import annotations

import re
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, CLS, SEP, MASK, UNK = "[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"
SPECIAL_TOKENS = (PAD, CLS, SEP, MASK, UNK)
PAD_ID, CLS_ID, SEP_ID, MASK_ID, UNK_ID = range(5)
NUM_RESERVED = len(SPECIAL_TOKENS)

MAX_SENTENCE_LEN = 15
NARRATION, REASONING = 0, 1

_SPLIT = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class TruncationWarning(UserWarning):
    pass


def pre_tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and split punctuation into single characters."""
    return _SPLIT.findall(text.lower())


def normalize(text: str) -> str:
    return " ".join(pre_tokenize(text))


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:NUM_RESERVED]) != SPECIAL_TOKENS:
            raise ValueError(f"vocabulary must start with {SPECIAL_TOKENS}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        self._max_piece = max(len(t.removeprefix("##")) for t in self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        text = Path(path).read_text(encoding="utf-8")
        return cls(text.split("\n")[:-1] if text.endswith("\n") else text.split("\n"))


def _word_pieces(word: str) -> list[str]:
    return [word[0]] + ["##" + c for c in word[1:]]


def _merge(a: str, b: str) -> str:
    return a + b[2:]


def build_vocab(corpus: Iterable[str], max_size: int = 256, min_frequency: int = 2) -> Vocab:
    """Character inventory plus greedy most-frequent pair merges.

    Every corpus character gets both a word-initial and a ``##`` continuation
    token.  Adjacent pieces are then merged, most frequent pair first (ties
    broken lexicographically), while the pair occurs at least ``min_frequency``
    times and the vocabulary is below ``max_size``.
    """
    words = Counter(w for sentence in corpus for w in pre_tokenize(sentence))
    if not words:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    chars = sorted({c for w in words for c in w})
    base = [c for c in chars] + ["##" + c for c in chars]
    if max_size < NUM_RESERVED + len(base):
        raise ValueError(
            f"max_size {max_size} is below reserved ({NUM_RESERVED}) + character inventory ({len(base)})")
    vocab = list(SPECIAL_TOKENS) + base
    known = set(vocab)
    splits = {w: _word_pieces(w) for w in words}

    while len(vocab) < max_size:
        pairs: Counter = Counter()
        for w, pieces in splits.items():
            for a, b in zip(pieces, pieces[1:]):
                pairs[(a, b)] += words[w]
        if not pairs:
            break
        (a, b), freq = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))
        if freq < min_frequency:
            break
        merged = _merge(a, b)
        if merged not in known:
            vocab.append(merged)
            known.add(merged)
        for w, pieces in splits.items():
            out, i = [], 0
            while i < len(pieces):
                if i + 1 < len(pieces) and pieces[i] == a and pieces[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(pieces[i])
                    i += 1
            splits[w] = out
    return Vocab(vocab)


def wordpiece(word: str, vocab: Vocab) -> list[str]:
    """Greedy longest-match-first segmentation of one pre-tokenized word."""
    pieces, start = [], 0
    while start < len(word):
        end = min(len(word), start + vocab._max_piece)
        piece = None
        while end > start:
            cand = word[start:end] if start == 0 else "##" + word[start:end]
            if cand in vocab:
                piece = cand
                break
            end -= 1
        if piece is None:
            return [UNK]
        pieces.append(piece)
        start = end
    return pieces


def tokenize(sentence: str, vocab: Vocab) -> list[str]:
    return [p for w in pre_tokenize(sentence) for p in wordpiece(w, vocab)]


def encode(sentence: str, vocab: Vocab) -> list[int]:
    return [vocab.id(p) for p in tokenize(sentence, vocab)]


def decode(ids: Iterable[int], vocab: Vocab, skip_special: bool = True) -> str:
    words: list[str] = []
    for i in ids:
        i = int(i)
        if skip_special and i < NUM_RESERVED and i != UNK_ID:
            continue
        tok = vocab.tokens[i]
        if tok.startswith("##") and words:
            words[-1] += tok[2:]
        else:
            words.append(tok)
    return " ".join(words)


@dataclass
class TokenSequence:
    """Two fixed-length sentence blocks: ``[CLS] w.. [SEP] [PAD]..`` each."""

    ids: np.ndarray          # (2 * max_len,) int64
    segment_ids: np.ndarray  # (2 * max_len,) int64
    valid: np.ndarray        # (2 * max_len,) bool, False at [PAD]
    max_len: int = MAX_SENTENCE_LEN


def _block(ids: Sequence[int], max_len: int, what: str) -> list[int]:
    room = max_len - 2
    ids = list(ids)
    if len(ids) > room:
        warnings.warn(f"{what} has {len(ids)} tokens; truncated to {room}", TruncationWarning, stacklevel=3)
        ids = ids[:room]
    block = [CLS_ID] + ids + [SEP_ID]
    return block + [PAD_ID] * (max_len - len(block))


def pad_and_segment(narration_ids: Sequence[int], reasoning_ids: Sequence[int],
                    max_len: int = MAX_SENTENCE_LEN) -> TokenSequence:
    ids = np.array(_block(narration_ids, max_len, "narration") + _block(reasoning_ids, max_len, "reasoning"),
                   dtype=np.int64)
    seg = np.repeat(np.array([NARRATION, REASONING], dtype=np.int64), max_len)
    return TokenSequence(ids, seg, ids != PAD_ID, max_len)

"""Caption metrics (BLEU4, ROUGE-L, CIDEr, METEOR-lite) and control-signal metrics.

All caption metrics share one tokenization: lowercase, drop punctuation,
split on whitespace.  CIDEr is the plain tf-idf form without the length
penalty of CIDEr-D, scaled by 10.  METEOR-lite aligns unigrams by exact match
and then by suffix-stripped stems; it has no synonym matching and its values
are not comparable with full METEOR.
"""

from __future__ import annotations

import math
import re
import warnings
from collections import Counter
from typing import Iterable, Sequence

import numpy as np

from .tensor import ContractError

SIGMAS = (0.1, 0.5, 1.0, 5.0, 10.0)
BLEU_EPS = 1e-9

_PUNCT = re.compile(r"[^\w\s]")


def tokens(text: str) -> list[str]:
    return _PUNCT.sub(" ", text.lower()).split()


def _refs(references: str | Sequence[str]) -> list[list[str]]:
    refs = [references] if isinstance(references, str) else list(references)
    if not refs:
        raise ValueError("at least one reference is required")
    return [tokens(r) for r in refs]


def ngrams(toks: Sequence[str], n: int) -> Counter:
    return Counter(tuple(toks[i:i + n]) for i in range(len(toks) - n + 1))


# -- BLEU -----------------------------------------------------------------------
def _bleu_stats(cand: list[str], refs: list[list[str]]):
    matches, totals = [], []
    for n in range(1, 5):
        c = ngrams(cand, n)
        best: Counter = Counter()
        for r in refs:
            best |= ngrams(r, n)
        matches.append(sum(min(cnt, best[g]) for g, cnt in c.items()))
        totals.append(max(len(cand) - n + 1, 0))
    ref_len = min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
    return matches, totals, len(cand), ref_len


def _bleu_from_stats(matches, totals, cand_len, ref_len) -> float:
    if cand_len == 0:
        return 0.0
    log_p = sum(math.log(max(m, BLEU_EPS) / max(t, 1)) for m, t in zip(matches, totals)) / 4
    bp = 1.0 if cand_len > ref_len else math.exp(1 - ref_len / cand_len)
    return bp * math.exp(log_p)


def bleu4(candidate: str, references: str | Sequence[str]) -> float:
    """Sentence BLEU4; a zero n-gram match count is replaced by 1e-9."""
    refs = _refs(references)
    return _bleu_from_stats(*_bleu_stats(tokens(candidate), refs))


def corpus_bleu4(candidates: Sequence[str], references: Sequence[str | Sequence[str]]) -> float:
    """BLEU4 with n-gram counts and lengths pooled over the corpus."""
    m_sum, t_sum, c_len, r_len = [0] * 4, [0] * 4, 0, 0
    for cand, refs in zip(candidates, references):
        m, t, c, r = _bleu_stats(tokens(cand), _refs(refs))
        m_sum = [a + b for a, b in zip(m_sum, m)]
        t_sum = [a + b for a, b in zip(t_sum, t)]
        c_len += c
        r_len += r
    return _bleu_from_stats(m_sum, t_sum, c_len, r_len)


# -- ROUGE-L ------------------------------------------------------------------
def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, references: str | Sequence[str], beta: float = 1.2) -> float:
    cand = tokens(candidate)
    best = 0.0
    for ref in _refs(references):
        lcs = lcs_length(cand, ref)
        if lcs == 0:
            continue
        p, r = lcs / len(cand), lcs / len(ref)
        best = max(best, (1 + beta ** 2) * p * r / (r + beta ** 2 * p))
    return best


# -- CIDEr --------------------------------------------------------------------
def cider(candidates: Sequence[str], references: Sequence[str | Sequence[str]]) -> tuple[list[float], float]:
    """Per-item and mean CIDEr over a corpus (idf from the reference sets)."""
    if len(candidates) != len(references):
        raise ContractError("cider needs one reference set per candidate")
    n_items = len(candidates)
    if n_items < 2:
        warnings.warn("CIDEr idf is degenerate for a corpus of fewer than 2 items", RuntimeWarning, stacklevel=2)
    ref_toks = [_refs(r) for r in references]
    cand_toks = [tokens(c) for c in candidates]
    log_n = math.log(max(n_items, 1))
    df = [Counter() for _ in range(4)]
    for refs in ref_toks:
        for n in range(4):
            seen = set()
            for r in refs:
                seen.update(ngrams(r, n + 1))
            df[n].update(seen)

    def vec(toks, n):
        counts = ngrams(toks, n + 1)
        total = sum(counts.values())
        if total == 0:
            return {}
        return {g: (c / total) * (log_n - math.log(max(df[n][g], 1))) for g, c in counts.items()}

    def cos(u, v):
        nu = math.sqrt(sum(x * x for x in u.values()))
        nv = math.sqrt(sum(x * x for x in v.values()))
        if nu == 0 or nv == 0:
            return 0.0
        return sum(x * v.get(g, 0.0) for g, x in u.items()) / (nu * nv)

    scores = []
    for cand, refs in zip(cand_toks, ref_toks):
        total = 0.0
        for n in range(4):
            cv = vec(cand, n)
            total += sum(cos(cv, vec(r, n)) for r in refs) / len(refs)
        scores.append(10.0 * total / 4)
    return scores, (float(np.mean(scores)) if scores else 0.0)


# -- METEOR-lite --------------------------------------------------------------
_VOWELS = set("aeiou")


def stem(word: str) -> str:
    """Small suffix stripper: plural/verb endings, then a doubled final consonant."""
    w = word.lower()
    for suf in ("ing", "edly", "ed", "ies", "es", "s", "ly"):
        if w.endswith(suf) and len(w) - len(suf) >= 3:
            base = w[: -len(suf)]
            if suf in ("es",) and not base.endswith(("s", "x", "z", "ch", "sh")):
                base = w[:-1]
            if suf == "ies":
                base += "y"
            if suf == "s" and base.endswith("s"):
                continue
            if suf in ("ing", "ed", "edly") and not (_VOWELS & set(base)):
                continue
            w = base
            break
    if len(w) >= 4 and w[-1] == w[-2] and w[-1] not in _VOWELS | {"l", "s", "z"}:
        w = w[:-1]
    return w


def _align(cand: list[str], ref: list[str]) -> list[tuple[int, int]]:
    pairs: dict[int, int] = {}
    used: set[int] = set()
    for key in (lambda t: t, stem):
        for i, c in enumerate(cand):
            if i in pairs:
                continue
            kc = key(c)
            for j, r in enumerate(ref):
                if j not in used and key(r) == kc:
                    pairs[i] = j
                    used.add(j)
                    break
    return sorted(pairs.items())


def _chunks(alignment: list[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in alignment:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_lite(candidate: str, references: str | Sequence[str]) -> float:
    cand = tokens(candidate)
    best = 0.0
    for ref in _refs(references):
        al = _align(cand, ref)
        m = len(al)
        if m == 0:
            continue
        p, r = m / len(cand), m / len(ref)
        f_mean = 10 * p * r / (r + 9 * p)
        penalty = 0.5 * (_chunks(al) / m) ** 3
        best = max(best, f_mean * (1 - penalty))
    return best


# -- control signals ----------------------------------------------------------
def _pair(s, s_hat) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(s, dtype=np.float64), np.asarray(s_hat, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"signal shapes differ: {a.shape} vs {b.shape}")
    return a, b


def rmse(s, s_hat) -> float:
    a, b = _pair(s, s_hat)
    return float(np.sqrt(np.mean((b - a) ** 2)))


def tolerant_accuracy(s, s_hat, sigma: float) -> float:
    """Percentage of predictions with -sigma < s_hat - s < sigma (open interval)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    a, b = _pair(s, s_hat)
    d = b - a
    return float(100.0 * np.mean((d > -sigma) & (d < sigma)))


# -- report -------------------------------------------------------------------
REPORT_NOTE = "CIDEr without length penalty (not CIDEr-D); M_lite = METEOR-lite (exact + stem match, no synonyms)"


def caption_scores(candidates: Sequence[str], references: Sequence[str | Sequence[str]]) -> dict[str, float]:
    _, c = cider(candidates, references)
    return {
        "B4": corpus_bleu4(candidates, references),
        "M_lite": float(np.mean([meteor_lite(c_, r) for c_, r in zip(candidates, references)])),
        "R": float(np.mean([rouge_l(c_, r) for c_, r in zip(candidates, references)])),
        "C": c,
    }


def signal_scores(s, s_hat) -> dict[str, float]:
    out = {"RMSE": rmse(s, s_hat)}
    for sigma in SIGMAS:
        out[f"A_{sigma}"] = tolerant_accuracy(s, s_hat, sigma)
    return out


def metrics_report(captions: dict[str, tuple[Sequence[str], Sequence]] | None = None,
                   signals: dict[str, tuple[np.ndarray, np.ndarray]] | None = None) -> dict:
    """``captions``: segment -> (candidates, references); ``signals``: channel -> (truth, predicted)."""
    report: dict = {"note": REPORT_NOTE}
    for seg, (cands, refs) in (captions or {}).items():
        report[seg] = {k: round(v, 4) for k, v in caption_scores(cands, refs).items()}
    for ch, (truth, pred) in (signals or {}).items():
        report[ch] = {k: round(v, 4) for k, v in signal_scores(truth, pred).items()}
    return report

"""Corpus-level caption metrics: BLEU-4, ROUGE-L and CIDEr-D.

Candidates and references are token lists; :func:`make_pairs` builds them
from raw strings with the shared tokenizer.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import DataError, EmptyCorpus
from .text import tokenize

BLEU_SMOOTH = 1e-9
ROUGE_BETA = 1.2
CIDER_SIGMA = 6.0
MAX_N = 4

REPORT_SCHEMA = {
    "type": "object",
    "required": ["bleu4", "rouge_l", "cider", "per_item"],
    "properties": {
        "bleu4": {"type": "number", "minimum": 0, "maximum": 1},
        "rouge_l": {"type": "number", "minimum": 0, "maximum": 1},
        "cider": {"type": "number", "minimum": 0, "maximum": 10},
        "per_item": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["video_id", "rouge_l", "cider"],
                "properties": {
                    "video_id": {"type": "string"},
                    "rouge_l": {"type": "number", "minimum": 0, "maximum": 1},
                    "cider": {"type": "number", "minimum": 0, "maximum": 10},
                },
            },
        },
    },
}


@dataclass
class EvalPair:
    video_id: str
    candidate: list[str]
    references: list[list[str]]

    def __post_init__(self):
        if not self.candidate or not self.references or not all(self.references):
            raise DataError(f"{self.video_id}: candidate and references must be nonempty")


@dataclass
class MetricReport:
    bleu4: float
    rouge_l: float
    cider: float
    per_item: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"bleu4": self.bleu4, "rouge_l": self.rouge_l, "cider": self.cider, "per_item": self.per_item}


def make_pairs(candidates: Mapping[str, str], references: Mapping[str, Sequence[str]]) -> list[EvalPair]:
    """Pair candidate captions with reference sets by video id."""
    pairs = []
    for vid, cand in candidates.items():
        if vid not in references:
            raise DataError(f"no references for video {vid!r}")
        pairs.append(EvalPair(vid, tokenize(cand), [tokenize(r) for r in references[vid]]))
    return pairs


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# -- BLEU ---------------------------------------------------------------------


def clipped_counts(pairs: Sequence[EvalPair], n: int) -> tuple[int, int]:
    """Corpus totals of clipped n-gram matches and candidate n-grams."""
    num = den = 0
    for p in pairs:
        cand = ngrams(p.candidate, n)
        max_ref: Counter = Counter()
        for ref in p.references:
            for g, c in ngrams(ref, n).items():
                max_ref[g] = max(max_ref[g], c)
        num += sum(min(c, max_ref[g]) for g, c in cand.items())
        den += sum(cand.values())
    return num, den


def closest_ref_length(candidate_len: int, references: Sequence[Sequence[str]]) -> int:
    return min((abs(len(r) - candidate_len), len(r)) for r in references)[1]


def bleu4(pairs: Sequence[EvalPair]) -> float:
    """Corpus BLEU with n = 1..4, uniform weights and the brevity penalty.

    A zero match count is replaced by ``BLEU_SMOOTH``; an order with no
    candidate n-grams at all counts as precision ``BLEU_SMOOTH``.
    """
    if not pairs:
        raise EmptyCorpus("BLEU needs at least one pair")
    log_p = 0.0
    for n in range(1, MAX_N + 1):
        num, den = clipped_counts(pairs, n)
        prec = (num if num > 0 else BLEU_SMOOTH) / den if den > 0 else BLEU_SMOOTH
        log_p += math.log(prec) / MAX_N
    c = sum(len(p.candidate) for p in pairs)
    r = sum(closest_ref_length(len(p.candidate), p.references) for p in pairs)
    bp = math.exp(1.0 - r / c) if c < r else 1.0
    return min(1.0, bp * math.exp(log_p))


# -- ROUGE-L ------------------------------------------------------------------


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(pair: EvalPair, beta: float = ROUGE_BETA) -> float:
    """LCS F-measure, best over the references."""
    best = 0.0
    for ref in pair.references:
        lcs = lcs_length(pair.candidate, ref)
        if lcs == 0:
            continue
        p, r = lcs / len(pair.candidate), lcs / len(ref)
        best = max(best, (1 + beta**2) * p * r / (r + beta**2 * p))
    return best


def rouge_l_corpus(pairs: Sequence[EvalPair]) -> float:
    if not pairs:
        raise EmptyCorpus("ROUGE-L needs at least one pair")
    return math.fsum(rouge_l(p) for p in pairs) / len(pairs)


# -- CIDEr-D ------------------------------------------------------------------


def document_frequency(reference_sets: Iterable[Sequence[Sequence[str]]]) -> tuple[Counter, int]:
    """Per n-gram, the number of videos whose references contain it."""
    df: Counter = Counter()
    count = 0
    for refs in reference_sets:
        count += 1
        seen = set()
        for ref in refs:
            for n in range(1, MAX_N + 1):
                seen.update(ngrams(ref, n))
        df.update(seen)
    return df, count


def _tfidf(tokens: Sequence[str], df: Counter, log_n: float) -> list[dict]:
    vecs = []
    for n in range(1, MAX_N + 1):
        vecs.append({g: c * (log_n - math.log(max(1.0, df[g]))) for g, c in ngrams(tokens, n).items()})
    return vecs


def _norm(vec: dict) -> float:
    return math.sqrt(sum(v * v for v in vec.values()))


def cider_item(pair: EvalPair, df: Counter, n_docs: int, sigma: float = CIDER_SIGMA) -> float:
    log_n = math.log(float(n_docs))
    cand = _tfidf(pair.candidate, df, log_n)
    total = 0.0
    for ref_tokens in pair.references:
        ref = _tfidf(ref_tokens, df, log_n)
        delta = len(pair.candidate) - len(ref_tokens)
        penalty = math.exp(-(delta**2) / (2 * sigma**2))
        per_n = 0.0
        for vc, vr in zip(cand, ref):
            nc, nr = _norm(vc), _norm(vr)
            if nc == 0 or nr == 0:
                continue
            dot = sum(min(v, vr[g]) * vr[g] for g, v in vc.items() if g in vr)
            per_n += min(1.0, dot / (nc * nr)) * penalty
        total += per_n / MAX_N
    return 10.0 * total / len(pair.references)


def cider_scores(pairs: Sequence[EvalPair], df: Counter | None = None, n_docs: int | None = None) -> list[float]:
    """Per-item CIDEr-D.  The df table defaults to the pairs' own references."""
    if not pairs:
        raise EmptyCorpus("CIDEr needs at least one pair")
    if df is None:
        df, n_docs = document_frequency(p.references for p in pairs)
    return [cider_item(p, df, n_docs) for p in pairs]


def cider(pairs: Sequence[EvalPair], df: Counter | None = None, n_docs: int | None = None) -> float:
    scores = cider_scores(pairs, df, n_docs)
    return math.fsum(scores) / len(scores)


def evaluate(pairs: Sequence[EvalPair]) -> MetricReport:
    if not pairs:
        raise EmptyCorpus("nothing to evaluate")
    rouges = [rouge_l(p) for p in pairs]
    ciders = cider_scores(pairs)
    return MetricReport(
        bleu4=bleu4(pairs),
        rouge_l=math.fsum(rouges) / len(rouges),
        cider=math.fsum(ciders) / len(ciders),
        per_item=[
            {"video_id": p.video_id, "rouge_l": r, "cider": c} for p, r, c in zip(pairs, rouges, ciders)
        ],
    )

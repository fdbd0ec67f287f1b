"""Brute-force reference implementations used as test oracles.

Written without touching the package's metric helpers: n-grams are listed
by slicing, LCS by enumerating candidate subsequences, and tf-idf vectors
are rebuilt from plain dicts.
"""

from __future__ import annotations

import itertools
import math

SMOOTH = 1e-9


def grams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def count(items):
    out = {}
    for x in items:
        out[x] = out.get(x, 0) + 1
    return out


def bleu4(corpus):
    """corpus: list of (candidate tokens, [reference tokens, ...])."""
    logs = []
    for n in range(1, 5):
        matched = total = 0
        for cand, refs in corpus:
            cg = count(grams(cand, n))
            for g, c in cg.items():
                best = max(count(grams(r, n)).get(g, 0) for r in refs)
                matched += min(c, best)
                total += c
        if total == 0:
            p = SMOOTH
        else:
            p = (matched or SMOOTH) / total
        logs.append(math.log(p))
    c = sum(len(cand) for cand, _ in corpus)
    r = 0
    for cand, refs in corpus:
        lens = sorted(len(x) for x in refs)
        r += min(lens, key=lambda L: (abs(L - len(cand)), L))
    bp = 1.0 if c >= r else math.exp(1 - r / c)
    return min(1.0, bp * math.exp(sum(logs) / 4))


def is_subsequence(sub, seq):
    it = iter(seq)
    return all(any(x == y for y in it) for x in sub)


def lcs_brute(a, b):
    for k in range(len(a), 0, -1):
        for idx in itertools.combinations(range(len(a)), k):
            if is_subsequence([a[i] for i in idx], b):
                return k
    return 0


def rouge_l(cand, refs, beta=1.2):
    best = 0.0
    for ref in refs:
        lcs = lcs_brute(cand, ref)
        if lcs:
            p, r = lcs / len(cand), lcs / len(ref)
            best = max(best, ((1 + beta * beta) * p * r) / (r + beta * beta * p))
    return best


def cider_d(corpus, sigma=6.0):
    """Per-item CIDEr-D with the corpus' own references as the df table."""
    N = len(corpus)
    df = {}
    for _, refs in corpus:
        seen = set()
        for ref in refs:
            for n in range(1, 5):
                seen |= set(grams(ref, n))
        for g in seen:
            df[g] = df.get(g, 0) + 1

    def vec(tokens, n):
        return {g: c * (math.log(N) - math.log(max(1, df.get(g, 0)))) for g, c in count(grams(tokens, n)).items()}

    scores = []
    for cand, refs in corpus:
        acc = 0.0
        for ref in refs:
            for n in range(1, 5):
                vc, vr = vec(cand, n), vec(ref, n)
                nc = math.sqrt(sum(x * x for x in vc.values()))
                nr = math.sqrt(sum(x * x for x in vr.values()))
                if nc == 0 or nr == 0:
                    continue
                dot = sum(min(vc[g], vr[g]) * vr[g] for g in vc if g in vr)
                gauss = math.exp(-((len(cand) - len(ref)) ** 2) / (2 * sigma * sigma))
                acc += min(1.0, dot / (nc * nr)) * gauss / 4
        scores.append(10 * acc / len(refs))
    return scores


# Ten hand-built fixtures: (name, {video_id: candidate}, {video_id: [references]})
FIXTURES = [
    ("identical_single", {"v0": "a man is walking", "v1": "a dog runs"},
     {"v0": ["a man is walking"], "v1": ["a cat sleeps"]}),
    ("clipped_unigrams", {"v0": "the the the the the the the"}, {"v0": ["the cat is on the mat"]}),
    ("short_prefix", {"v0": "a man is"}, {"v0": ["a man is walking down the road"]}),
    ("disjoint", {"v0": "x y z"}, {"v0": ["a b c"]}),
    ("lcs_three", {"v0": "a b c d"}, {"v0": ["a c d e"]}),
    ("multi_ref", {"v0": "a woman is cooking food", "v1": "a tiger runs fast"},
     {"v0": ["a woman cooks", "a woman is cooking food", "someone is cooking"],
      "v1": ["a tiger is running", "the big cat runs fast"]}),
    ("punctuation_case", {"v0": "A Dog, jumping!"}, {"v0": ["a dog jumping", "the dog is jumping"]}),
    ("longer_candidate", {"v0": "a man is riding a horse on the beach at night"},
     {"v0": ["a man rides a horse", "a person is riding a horse"]}),
    ("repeated_bigrams", {"v0": "go go go go", "v1": "stop now"},
     {"v0": ["go go stop"], "v1": ["stop now please", "now stop"]}),
    ("four_videos", {"a": "a cat is swimming", "b": "a dog is swimming", "c": "a man is dancing", "d": "a horse jumps"},
     {"a": ["a cat is swimming in water"], "b": ["a dog swims"], "c": ["a man is dancing around"],
      "d": ["a horse is jumping", "a horse jumps over"]}),
]


def tokens(text):
    import re
    import string

    return re.sub(f"[{re.escape(string.punctuation)}]", " ", text.lower()).split()


def fixture_corpus(cands, refs):
    return [(tokens(cands[v]), [tokens(r) for r in refs[v]]) for v in cands]

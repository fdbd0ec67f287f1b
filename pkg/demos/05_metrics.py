"""BLEU-4, ROUGE-L and CIDEr-D on a handful of captions.

Run:  python3 demos/05_metrics.py
"""

# %%
import json

from videocap import metrics

candidates = {
    "v0": "a man is walking",
    "v1": "the the the the the the the",
    "v2": "a dog runs",
}
references = {
    "v0": ["a man is walking", "someone walks"],
    "v1": ["the cat is on the mat"],
    "v2": ["a dog is running in the park", "a dog runs fast"],
}
pairs = metrics.make_pairs(candidates, references)

# %% clipping: 'the' appears twice in the reference, so 2 of 7 unigrams count
print("clipped unigrams v1:", metrics.clipped_counts(pairs[1:2], 1))

# %% ROUGE-L from the longest common subsequence
print("LCS('a b c d', 'a c d e') =", metrics.lcs_length("a b c d".split(), "a c d e".split()))

# %% the full report, as printed by `videocap eval`
print(json.dumps(metrics.evaluate(pairs).to_dict(), indent=2))

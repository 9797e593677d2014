"""Exact ROUGE-1 / ROUGE-2 / ROUGE-L F1 scoring over token sequences.

Scoring tokens are lowercased alphanumeric runs; everything else is a
separator and dropped.  No stemming, no stopword removal.  ROUGE-L uses the
plain longest common subsequence over the flattened token sequences; see
``ROUGE_L_VARIANT``.
"""

import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ValidationError

# Plain LCS over flat sequences, as opposed to the summary-level union
# variant some toolkits report.
ROUGE_L_VARIANT = "flat-lcs"

# Underscore counts as a separator: \w alone would keep it.
_TOKEN_SPLIT = re.compile(r"[\W_]+")


def tokenize(text):
    """Lowercase and split on any non-alphanumeric run, dropping empties."""
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @staticmethod
    def from_pr(precision, recall):
        if precision + recall == 0.0:
            return RougeScore(precision, recall, 0.0)
        f1 = 2.0 * precision * recall / (precision + recall)
        return RougeScore(precision, recall, f1)

    @staticmethod
    def zero():
        return RougeScore(0.0, 0.0, 0.0)

    def as_dict(self, ndigits=None):
        d = {"precision": self.precision, "recall": self.recall, "f1": self.f1}
        if ndigits is not None:
            d = {k: round(v, ndigits) for k, v in d.items()}
        return d


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate, reference, n):
    """Clipped n-gram overlap F1.

    Each n-gram counts at most min(candidate multiplicity, reference
    multiplicity).  Either side lacking any n-gram yields the zero score.
    """
    if n < 1:
        raise ValidationError(f"rouge_n needs n >= 1, got {n}")
    cand = _ngrams(candidate, n)
    ref = _ngrams(reference, n)
    cand_total = sum(cand.values())
    ref_total = sum(ref.values())
    if cand_total == 0 or ref_total == 0:
        return RougeScore.zero()
    overlap = sum(min(c, ref[g]) for g, c in cand.items())
    return RougeScore.from_pr(overlap / cand_total, overlap / ref_total)


def lcs_length(a, b):
    """Longest common subsequence length between two token sequences.

    Tokens only need equality; they are interned to int ids and the DP runs
    in the active kernel backend.
    """
    if not a or not b:
        return 0
    ids = {}
    def encode(seq):
        out = np.empty(len(seq), dtype=np.int32)
        for i, tok in enumerate(seq):
            out[i] = ids.setdefault(tok, len(ids))
        return out
    return _kernels.lcs_length_ids(encode(a), encode(b))


def rouge_l(candidate, reference):
    """LCS-based F1: precision = LCS/|candidate|, recall = LCS/|reference|."""
    if not candidate or not reference:
        return RougeScore.zero()
    lcs = lcs_length(candidate, reference)
    return RougeScore.from_pr(lcs / len(candidate), lcs / len(reference))


def score_all(candidate_tokens, reference_tokens):
    """ROUGE-1, ROUGE-2 and ROUGE-L as a dict keyed rouge1/rouge2/rougeL."""
    return {
        "rouge1": rouge_n(candidate_tokens, reference_tokens, 1),
        "rouge2": rouge_n(candidate_tokens, reference_tokens, 2),
        "rougeL": rouge_l(candidate_tokens, reference_tokens),
    }

"""Supervision labels: pick sentence subsets maximizing the mean of ROUGE-1
and ROUGE-2 F1 against the abstract.

Selected sentences are always concatenated in document order before scoring,
regardless of pick order, and scored as one flat token sequence (bigrams may
straddle sentence junctions).
"""

from collections import Counter
from dataclasses import dataclass
from itertools import chain, combinations

from .errors import EnumerationGuardError, ValidationError
from .rouge import RougeScore, tokenize

BRUTE_FORCE_MAX_SENTENCES = 20


@dataclass
class OracleLabels:
    labels: list
    achieved_score: float
    selection_order: list


class _ReferenceScorer:
    """Counts the abstract's unigrams and bigrams once, scores many candidates."""

    def __init__(self, abstract_sentences):
        ref = list(chain.from_iterable(tokenize(s) for s in abstract_sentences))
        self.uni = Counter(ref)
        self.bi = Counter(zip(ref, ref[1:]))
        self.uni_total = sum(self.uni.values())
        self.bi_total = sum(self.bi.values())

    def _clipped_f1(self, cand_counts, cand_total, ref_counts, ref_total):
        if cand_total == 0 or ref_total == 0:
            return 0.0
        overlap = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
        return RougeScore.from_pr(overlap / cand_total, overlap / ref_total).f1

    def mean_r1_r2(self, cand_tokens):
        uni = Counter(cand_tokens)
        bi = Counter(zip(cand_tokens, cand_tokens[1:]))
        f1_1 = self._clipped_f1(uni, len(cand_tokens), self.uni, self.uni_total)
        f1_2 = self._clipped_f1(bi, max(len(cand_tokens) - 1, 0), self.bi, self.bi_total)
        return 0.5 * (f1_1 + f1_2)


def _check_doc(doc):
    if not doc.sentences:
        raise ValidationError(f"document {doc.id!r} has no sentences")
    if not doc.abstract:
        raise ValidationError(f"document {doc.id!r} has an empty abstract")


def _selection_tokens(sentence_tokens, indices):
    return list(chain.from_iterable(sentence_tokens[i] for i in sorted(indices)))


def greedy_oracle(doc, max_sentences=None):
    """Grow the selection one sentence at a time.

    Each round adds the sentence giving the largest strict increase in
    mean(R1, R2) F1 of the document-order concatenation vs the abstract;
    ties go to the lowest index.  Stops on no strict improvement or at
    ``max_sentences`` (None = unlimited).
    """
    _check_doc(doc)
    scorer = _ReferenceScorer(doc.abstract)
    sentence_tokens = [tokenize(s) for s in doc.sentences]
    n = len(doc.sentences)

    order = []
    chosen = set()
    score = 0.0
    while max_sentences is None or len(order) < max_sentences:
        best_idx = None
        best_score = score
        for i in range(n):
            if i in chosen:
                continue
            cand = scorer.mean_r1_r2(_selection_tokens(sentence_tokens, chosen | {i}))
            if cand > best_score:
                best_score = cand
                best_idx = i
        if best_idx is None:
            break
        order.append(best_idx)
        chosen.add(best_idx)
        score = best_score

    labels = [1 if i in chosen else 0 for i in range(n)]
    return OracleLabels(labels=labels, achieved_score=score, selection_order=order)


def brute_force_oracle(doc, max_sentences):
    """Exhaustive reference oracle over all subsets of size <= max_sentences.

    Ties break toward the smaller subset, then the lexicographically
    smallest index tuple; both fall out of the enumeration order combined
    with strict improvement.
    """
    _check_doc(doc)
    n = len(doc.sentences)
    if n > BRUTE_FORCE_MAX_SENTENCES:
        raise EnumerationGuardError(
            f"document {doc.id!r} has {n} sentences; exhaustive search is capped at "
            f"{BRUTE_FORCE_MAX_SENTENCES}, use greedy_oracle instead"
        )
    if max_sentences < 1:
        raise ValidationError(f"max_sentences must be >= 1, got {max_sentences}")
    scorer = _ReferenceScorer(doc.abstract)
    sentence_tokens = [tokenize(s) for s in doc.sentences]

    best_subset = ()
    best_score = 0.0
    for size in range(1, min(max_sentences, n) + 1):
        for subset in combinations(range(n), size):
            cand = scorer.mean_r1_r2(_selection_tokens(sentence_tokens, subset))
            if cand > best_score:
                best_score = cand
                best_subset = subset

    labels = [1 if i in best_subset else 0 for i in range(n)]
    return OracleLabels(labels=labels, achieved_score=best_score,
                        selection_order=list(best_subset))

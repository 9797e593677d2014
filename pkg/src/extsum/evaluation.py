"""Inference-time selection, corpus ROUGE evaluation, the LEAD baseline,
and the relative-position histogram."""

import csv
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .corpus import encode_document
from .errors import ValidationError
from .model import DEFAULT_BLOCK_SIZE, forward_document
from .oracle import greedy_oracle
from .rouge import score_all, tokenize

DEFAULT_BINS = 20


@dataclass
class SelectionResult:
    doc_id: str
    chosen_indices: list
    probabilities: list
    k: int


@dataclass
class PositionHistogram:
    bin_count: int
    bin_counts: list
    total_selections: int


@dataclass
class EvalReport:
    mean_scores: dict
    per_doc: list
    k: int
    skipped: int = 0
    histogram: Optional[PositionHistogram] = None


def select_top_k(probs, k):
    """Indices of the k largest probabilities, ties to the lower index,
    returned in ascending index order."""
    if len(probs) == 0:
        raise ValidationError("cannot select from an empty probability list")
    if k < 1:
        raise ValidationError(f"selection budget k must be >= 1, got {k}")
    ranked = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
    return sorted(ranked[: min(k, len(probs))])


def select_top_k_trigram_blocked(probs, sentences, k):
    """Top-k with a redundancy filter: a candidate sharing any token trigram
    with the already-accepted set is skipped."""
    if len(probs) == 0:
        raise ValidationError("cannot select from an empty probability list")
    if k < 1:
        raise ValidationError(f"selection budget k must be >= 1, got {k}")
    if len(sentences) != len(probs):
        raise ValidationError(
            f"{len(probs)} probabilities vs {len(sentences)} sentences"
        )
    trigrams = []
    for s in sentences:
        toks = tokenize(s)
        trigrams.append({tuple(toks[i:i + 3]) for i in range(len(toks) - 2)})
    accepted = []
    seen = set()
    for i in sorted(range(len(probs)), key=lambda i: (-probs[i], i)):
        if trigrams[i] & seen:
            continue
        accepted.append(i)
        seen |= trigrams[i]
        if len(accepted) == k:
            break
    return sorted(accepted)


def lead_k(doc, k):
    """First min(k, n) sentences with uniform pseudo-probabilities."""
    if k < 1:
        raise ValidationError(f"selection budget k must be >= 1, got {k}")
    n = len(doc.sentences)
    take = min(k, n)
    return SelectionResult(
        doc_id=doc.id,
        chosen_indices=list(range(take)),
        probabilities=[0.5] * n,
        k=k,
    )


def make_oracle_selector(max_sentences=None):
    """Selector wrapping greedy_oracle; ignores the budget argument since
    the oracle picks its own subset size."""
    def selector(doc, k):
        result = greedy_oracle(doc, max_sentences=max_sentences)
        chosen = [i for i, y in enumerate(result.labels) if y == 1]
        return SelectionResult(
            doc_id=doc.id,
            chosen_indices=chosen,
            probabilities=[float(y) for y in result.labels],
            k=len(chosen) if chosen else k,
        )
    return selector


def make_model_selector(params, model_cfg, vocab, max_len=None,
                        use_adapters=True, trigram_blocking=False,
                        attention_impl="tiled", block_size=DEFAULT_BLOCK_SIZE):
    """Selector scoring sentences with the model.

    Probabilities are reported over the original sentence indices; sentences
    dropped at encoding (empty or truncated) score 0.0 and are only chosen
    once real probabilities are exhausted.
    """
    limit = max_len if max_len is not None else model_cfg.runtime_context

    def selector(doc, k):
        tdoc = encode_document(doc, vocab, limit)
        probs, _ = forward_document(tdoc, params, model_cfg,
                                    use_adapters=use_adapters,
                                    attention_impl=attention_impl,
                                    block_size=block_size)
        full = [0.0] * len(doc.sentences)
        for j, orig in enumerate(tdoc.kept_indices):
            full[orig] = float(probs[j])
        if trigram_blocking:
            chosen = select_top_k_trigram_blocked(full, doc.sentences, k)
        else:
            chosen = select_top_k(full, k)
        return SelectionResult(doc_id=doc.id, chosen_indices=chosen,
                               probabilities=full, k=k)
    return selector


def evaluate_corpus(docs, selector, k):
    """Run the selector over every document and score selections vs abstracts.

    Selected sentences are concatenated in document order and scored as flat
    token sequences.  Documents with an empty abstract are skipped and
    counted.  Corpus means are arithmetic means of the per-document scores.
    """
    per_doc = []
    skipped = 0
    sums = {name: np.zeros(3) for name in ("rouge1", "rouge2", "rougeL")}
    for doc in docs:
        if not doc.abstract or not any(s.strip() for s in doc.abstract):
            skipped += 1
            continue
        sel = selector(doc, k)
        cand_text = " ".join(doc.sentences[i] for i in sel.chosen_indices)
        scores = score_all(tokenize(cand_text),
                           tokenize(" ".join(doc.abstract)))
        entry = {
            "doc_id": doc.id,
            "n_sentences": len(doc.sentences),
            "chosen_indices": list(sel.chosen_indices),
            "k": sel.k,
        }
        for name, sc in scores.items():
            entry[name] = sc
            sums[name] += (sc.precision, sc.recall, sc.f1)
        per_doc.append(entry)
    n = len(per_doc)
    mean_scores = {}
    for name, total in sums.items():
        if n:
            p, r, f1 = (total / n).tolist()
        else:
            p = r = f1 = 0.0
        mean_scores[name] = {"precision": p, "recall": r, "f1": f1}
    return EvalReport(mean_scores=mean_scores, per_doc=per_doc, k=k,
                      skipped=skipped)


def position_histogram(selections, doc_lengths, bin_count=DEFAULT_BINS):
    """Count selections by relative position i/n, floor-binned uniformly."""
    if bin_count < 1:
        raise ValidationError(f"bin_count must be >= 1, got {bin_count}")
    if len(selections) != len(doc_lengths):
        raise ValidationError(
            f"{len(selections)} selections vs {len(doc_lengths)} lengths"
        )
    counts = [0] * bin_count
    total = 0
    for sel, n in zip(selections, doc_lengths):
        for i in sel.chosen_indices:
            if i >= n:
                raise ValidationError(
                    f"document {sel.doc_id!r}: chosen index {i} >= length {n}"
                )
            b = min(int((i / n) * bin_count), bin_count - 1)
            counts[b] += 1
            total += 1
    return PositionHistogram(bin_count=bin_count, bin_counts=counts,
                             total_selections=total)


def report_to_dict(report, ndigits=6):
    """JSON-ready dict with fixed 6-decimal rounding."""
    out = {}
    for name in ("rouge1", "rouge2", "rougeL"):
        out[name] = {key: round(val, ndigits)
                     for key, val in report.mean_scores[name].items()}
    out["per_doc"] = []
    for entry in report.per_doc:
        row = {
            "doc_id": entry["doc_id"],
            "n_sentences": entry["n_sentences"],
            "chosen_indices": entry["chosen_indices"],
            "k": entry["k"],
        }
        for name in ("rouge1", "rouge2", "rougeL"):
            row[name] = entry[name].as_dict(ndigits)
        out["per_doc"].append(row)
    out["k"] = report.k
    out["skipped"] = report.skipped
    if report.histogram is not None:
        out["histogram"] = list(report.histogram.bin_counts)
        out["histogram_bins"] = report.histogram.bin_count
    return out


def histogram_to_csv(hist):
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["bin_index", "count"])
    for i, c in enumerate(hist.bin_counts):
        writer.writerow([i, c])
    return buf.getvalue()

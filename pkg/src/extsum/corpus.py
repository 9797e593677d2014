"""Dataset ingestion: JSONL documents, sentence segmentation, vocabulary,
and token encoding with per-sentence span bookkeeping.

The encoding tokenizer is word-level (lowercased, punctuation split off as
its own tokens).  It is intentionally separate from the scoring tokenizer in
:mod:`extsum.rouge`, which discards punctuation entirely.
"""

import json
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DegenerateDocumentError, ParseError, ValidationError

_WORD_OR_PUNCT = re.compile(r"\w+|[^\w\s]")
_TERMINATORS = ".!?"

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1


def tokenize(text):
    """Lowercased word-level tokens with punctuation as separate tokens."""
    return _WORD_OR_PUNCT.findall(text.lower())


@dataclass
class Document:
    id: str
    sentences: list
    abstract: list
    labels: Optional[list] = None

    def validate(self):
        if self.labels is not None:
            if not self.sentences:
                raise ValidationError("labels present on a document with no sentences")
            if len(self.labels) != len(self.sentences):
                raise ValidationError(
                    f"labels length {len(self.labels)} != sentences length {len(self.sentences)}"
                )
            bad = [v for v in self.labels if v not in (0, 1)]
            if bad:
                raise ValidationError(f"labels must be 0 or 1, got {bad[0]!r}")
        for i, s in enumerate(self.sentences):
            if not s.strip():
                raise ValidationError(f"sentence {i} is empty after trimming whitespace")
        return self


def split_sentences(text):
    """Split raw text into sentences.

    A boundary is a terminator (. ! ?) followed by whitespace and an
    uppercase letter; the final fragment always closes a sentence.  The
    concatenation of the results equals the input up to whitespace.
    """
    pieces = []
    start = 0
    i = 0
    n = len(text)
    while i < n:
        if text[i] in _TERMINATORS:
            j = i + 1
            while j < n and text[j].isspace():
                j += 1
            if j > i + 1 and j < n and text[j].isupper():
                pieces.append(text[start:i + 1])
                start = j
                i = j
                continue
        i += 1
    pieces.append(text[start:])
    return [p.strip() for p in pieces if p.strip()]


class Vocab:
    """Immutable token<->id bijection with PAD at 0 and UNK at 1."""

    def __init__(self, id_to_token):
        id_to_token = list(id_to_token)
        if len(id_to_token) < 2 or id_to_token[0] != PAD_TOKEN or id_to_token[1] != UNK_TOKEN:
            raise ValidationError(
                f"vocab ids 0 and 1 must be {PAD_TOKEN!r} and {UNK_TOKEN!r}"
            )
        token_to_id = {}
        for idx, tok in enumerate(id_to_token):
            if tok in token_to_id:
                raise ValidationError(f"duplicate vocab token {tok!r}")
            token_to_id[tok] = idx
        self._id_to_token = id_to_token
        self._token_to_id = token_to_id

    def __len__(self):
        return len(self._id_to_token)

    def __contains__(self, token):
        return token in self._token_to_id

    def id_for(self, token):
        return self._token_to_id.get(token, UNK_ID)

    def token_for(self, idx):
        if not 0 <= idx < len(self._id_to_token):
            raise ValidationError(f"token id {idx} out of range [0, {len(self._id_to_token)})")
        return self._id_to_token[idx]

    @property
    def tokens(self):
        return list(self._id_to_token)


def build_vocab(documents, max_size):
    """Most frequent (max_size - 2) sentence tokens, ties lexicographic."""
    if max_size < 3:
        raise ConfigError(f"vocab max_size must be >= 3, got {max_size}")
    counts = {}
    for doc in documents:
        for sent in doc.sentences:
            for tok in tokenize(sent):
                counts[tok] = counts.get(tok, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[: max_size - 2]]
    return Vocab([PAD_TOKEN, UNK_TOKEN] + kept)


@dataclass
class TokenizedDocument:
    doc_id: str
    token_ids: np.ndarray
    spans: list = field(default_factory=list)
    kept_indices: list = field(default_factory=list)
    dropped_empty: list = field(default_factory=list)

    @property
    def n_sentences(self):
        return len(self.spans)


def encode_document(doc, vocab, max_len):
    """Concatenate sentence tokens, truncating at a sentence boundary.

    A sentence that would push the total past ``max_len`` ends the document;
    it and everything after it are discarded.  Sentences tokenizing to zero
    tokens are dropped and listed in ``dropped_empty`` so callers can realign
    labels.  ``kept_indices[j]`` is the original index of the sentence behind
    ``spans[j]``.
    """
    if not doc.sentences:
        raise ValidationError(f"document {doc.id!r} has no sentences")
    if max_len < 1:
        raise ValidationError(f"max_len must be >= 1, got {max_len}")
    ids = []
    spans = []
    kept = []
    dropped = []
    for i, sent in enumerate(doc.sentences):
        toks = tokenize(sent)
        if not toks:
            dropped.append(i)
            continue
        if len(ids) + len(toks) > max_len:
            break
        start = len(ids)
        ids.extend(vocab.id_for(t) for t in toks)
        spans.append((start, len(ids)))
        kept.append(i)
    if not spans:
        raise DegenerateDocumentError(
            f"document {doc.id!r}: no sentence survived encoding (max_len={max_len})"
        )
    return TokenizedDocument(
        doc_id=doc.id,
        token_ids=np.asarray(ids, dtype=np.int32),
        spans=spans,
        kept_indices=kept,
        dropped_empty=dropped,
    )


def _document_from_record(record, line_no):
    if not isinstance(record, dict):
        raise ParseError(f"line {line_no}: expected a JSON object")
    for key in ("sentences", "abstract"):
        if key not in record:
            raise ParseError(f"line {line_no}: missing required field {key!r}")
        val = record[key]
        if not isinstance(val, list) or not all(isinstance(s, str) for s in val):
            raise ParseError(f"line {line_no}: field {key!r} must be an array of strings")
    doc_id = record.get("id", str(line_no))
    if not isinstance(doc_id, str):
        raise ParseError(f"line {line_no}: field 'id' must be a string")
    labels = record.get("labels")
    if labels is not None and not isinstance(labels, list):
        raise ParseError(f"line {line_no}: field 'labels' must be an array")
    doc = Document(id=doc_id, sentences=record["sentences"],
                   abstract=record["abstract"], labels=labels)
    try:
        doc.validate()
    except ValidationError as exc:
        raise ValidationError(f"line {line_no}: {exc}") from None
    return doc


def load_jsonl(path):
    """One Document per line; parse and validation errors carry line numbers."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {line_no}: invalid JSON ({exc.msg})") from None
            docs.append(_document_from_record(record, line_no))
    return docs


def save_jsonl(documents, path, extra_fields=None):
    """Write documents as JSONL; ``extra_fields[i]`` merges into record i."""
    if extra_fields is not None and len(extra_fields) != len(documents):
        raise ValidationError("extra_fields length must match documents length")
    with open(path, "w", encoding="utf-8") as fh:
        for i, doc in enumerate(documents):
            record = {"id": doc.id, "sentences": doc.sentences, "abstract": doc.abstract}
            if doc.labels is not None:
                record["labels"] = doc.labels
            if extra_fields is not None:
                record.update(extra_fields[i])
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def save_vocab(vocab, path):
    with open(path, "w", encoding="utf-8") as fh:
        for tok in vocab.tokens:
            fh.write(tok + "\n")


def load_vocab(path):
    with open(path, encoding="utf-8") as fh:
        tokens = [line.rstrip("\n") for line in fh]
    while tokens and tokens[-1] == "":
        tokens.pop()
    if len(tokens) < 2 or tokens[0] != PAD_TOKEN or tokens[1] != UNK_TOKEN:
        raise ParseError(
            f"vocab file {path}: lines 0 and 1 must be {PAD_TOKEN!r} and {UNK_TOKEN!r}"
        )
    return Vocab(tokens)

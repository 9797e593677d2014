"""Generate the bundled 50-document fixture corpus.

Each document hides three content-bearing sentences, one per third of the
document, among filler sentences.  The abstract restates the content
phrases, so oracle selection strongly beats the lead baseline, selected
positions spread over the whole document, and the content marker words give
a trained model a learnable signal.

Run from the repository root:

    python3 tools/make_fixture_corpus.py tests/data/corpus50.jsonl
"""

import json
import sys

import numpy as np

TOPICS = {
    "glacier": ["glacier", "ice", "meltwater", "moraine", "crevasse", "firn"],
    "orchard": ["orchard", "blossom", "graft", "rootstock", "harvest", "cider"],
    "harbor": ["harbor", "tide", "mooring", "ferry", "breakwater", "buoy"],
    "observatory": ["telescope", "nebula", "spectrum", "dome", "transit", "parallax"],
    "foundry": ["foundry", "casting", "alloy", "crucible", "ingot", "quench"],
    "wetland": ["wetland", "heron", "sedge", "peat", "marsh", "brood"],
    "railway": ["railway", "signal", "ballast", "junction", "timetable", "gauge"],
    "vineyard": ["vineyard", "trellis", "veraison", "barrel", "tannin", "press"],
    "reef": ["reef", "coral", "lagoon", "polyp", "spawning", "atoll"],
    "archive": ["archive", "manuscript", "ledger", "vellum", "catalog", "folio"],
}

# Content sentences open with these markers; fillers never use them, so
# label-1 sentences share a learnable lexical signature across documents.
MARKERS = ["measurements indicate", "the survey finds", "records confirm"]

FILLER_SUBJECTS = ["the committee", "a visitor", "the morning shift", "the old map",
                   "the corridor", "a delivery", "the notice board", "the canteen"]
FILLER_VERBS = ["waited near", "passed by", "was moved to", "stood beside",
                "was painted after", "leaned against"]
FILLER_OBJECTS = ["the side entrance", "the gravel path", "the storage room",
                  "a wooden bench", "the north gate", "the empty yard"]


def _phrase(rng, words):
    picks = rng.choice(len(words), size=3, replace=False)
    a, b, c = (words[i] for i in picks)
    return f"the {a} {b} shifted toward the {c} zone"


def _filler(rng):
    s = FILLER_SUBJECTS[rng.integers(len(FILLER_SUBJECTS))]
    v = FILLER_VERBS[rng.integers(len(FILLER_VERBS))]
    o = FILLER_OBJECTS[rng.integers(len(FILLER_OBJECTS))]
    return f"{s} {v} {o} on day {int(rng.integers(2, 30))}."


def make_document(rng, doc_id, topic_words):
    n = int(rng.integers(9, 15))
    thirds = [(0, n // 3), (n // 3, 2 * n // 3), (2 * n // 3, n)]
    key_positions = [int(rng.integers(lo, hi)) for lo, hi in thirds]
    phrases = [_phrase(rng, topic_words) for _ in range(3)]
    sentences = []
    key_iter = iter(zip(key_positions, phrases, MARKERS))
    nxt = next(key_iter)
    for i in range(n):
        if nxt is not None and i == nxt[0]:
            _, phrase, marker = nxt
            sentences.append(f"Here {marker} that {phrase}.")
            nxt = next(key_iter, None)
        else:
            sentences.append(_filler(rng).capitalize())
    abstract = [
        f"This report concludes that {phrases[0]} and that {phrases[1]}.",
        f"It further documents that {phrases[2]}.",
    ]
    return {"id": doc_id, "sentences": sentences, "abstract": abstract}


def main(out_path, n_docs=50, seed=20240915):
    rng = np.random.default_rng(seed)
    names = sorted(TOPICS)
    with open(out_path, "w", encoding="utf-8") as fh:
        for i in range(n_docs):
            topic = names[i % len(names)]
            doc = make_document(rng, f"{topic}-{i:03d}", TOPICS[topic])
            fh.write(json.dumps(doc) + "\n")
    print(f"wrote {n_docs} documents to {out_path}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data/corpus50.jsonl")

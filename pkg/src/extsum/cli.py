"""Command-line entry point.

Subcommands: label, train, eval, rouge, analyze-positions, gradcheck, sweep.
Exit codes: 0 success, 1 validation/usage error, 2 I/O error.

Configuration precedence is flags > --config JSON file > built-in defaults;
the fully resolved configuration is written as a run manifest next to every
output (manifest.json inside directory outputs, <name>.manifest.json beside
file outputs), so a run can be reproduced from its manifest alone.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import __version__
from .corpus import (
    build_vocab,
    encode_document,
    load_jsonl,
    load_vocab,
    save_jsonl,
    save_vocab,
)
from .errors import ConfigError, ExtSumError, ValidationError
from .evaluation import (
    SelectionResult,
    evaluate_corpus,
    histogram_to_csv,
    make_model_selector,
    position_histogram,
    report_to_dict,
)
from .model import ModelConfig, init_params
from .oracle import greedy_oracle
from .rouge import score_all, tokenize
from .train import (
    TrainConfig,
    finite_diff_check,
    load_checkpoint,
    params_from_checkpoint,
    prepare_dataset,
    save_checkpoint,
    train_loop,
)

COMMON_DEFAULTS = {"seed": 0, "workers": 1}
MODEL_DEFAULTS = {
    "vocab_size": 512,
    "d_model": 32,
    "n_layers": 2,
    "n_heads": 4,
    "d_ff": 64,
    "max_len": 256,
    "lora_rank": 8,
    "rope_scale": None,
    "rope_scale_inverse": None,
    "attention_mode": "causal",
    "block_size": 64,
}
TRAIN_DEFAULTS = {
    "lr": 3e-5,
    "accum_steps": 32,
    "epochs": 5,
    "val_interval": 0.2,
    "data_fraction": 1.0,
    "frozen": False,
}
SWEEP_FRACTIONS = "0.01,0.05,0.1,1.0"


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    inputs: dict
    outputs: dict
    seed: Optional[int]
    tool_version: str

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({
                "subcommand": self.subcommand,
                "config": self.config,
                "inputs": self.inputs,
                "outputs": self.outputs,
                "seed": self.seed,
                "tool_version": self.tool_version,
            }, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _load_config_file(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path}: expected a JSON object")
    return data


def _resolve(ns, defaults):
    """flags > config file > defaults; every key materialized."""
    file_cfg = _load_config_file(getattr(ns, "config", None))
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config file keys: {sorted(unknown)}")
    resolved = {}
    for key, default in defaults.items():
        flag = getattr(ns, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in file_cfg:
            resolved[key] = file_cfg[key]
        else:
            resolved[key] = default
    return resolved


def _manifest_path_for(out_path):
    if os.path.isdir(out_path):
        return os.path.join(out_path, "manifest.json")
    return out_path + ".manifest.json"


def _build_model_config(r, actual_vocab_size):
    if r["rope_scale"] is not None and r["rope_scale_inverse"] is not None:
        raise ConfigError("pass --rope-scale or --rope-scale-inverse, not both")
    if r["rope_scale_inverse"] is not None:
        if r["rope_scale_inverse"] <= 0:
            raise ConfigError("--rope-scale-inverse must be positive")
        alpha = 1.0 / r["rope_scale_inverse"]
    elif r["rope_scale"] is not None:
        alpha = r["rope_scale"]
        if alpha <= 0:
            raise ConfigError("--rope-scale must be positive")
    else:
        alpha = 1.0
    runtime = r["max_len"]
    pretrain = max(1, int(round(alpha * runtime)))
    return ModelConfig(
        vocab_size=actual_vocab_size,
        d_model=r["d_model"],
        n_layers=r["n_layers"],
        n_heads=r["n_heads"],
        d_ff=r["d_ff"],
        pretrain_context=pretrain,
        runtime_context=runtime,
        rope_base=10000.0,
        lora_rank=r["lora_rank"],
        attention_mode=r["attention_mode"],
    )


def _train_config(r, seed):
    return TrainConfig(
        learning_rate=r["lr"],
        accumulation_steps=r["accum_steps"],
        epochs=r["epochs"],
        validation_interval=r["val_interval"],
        seed=seed,
        data_fraction=r["data_fraction"],
    )


# ---------------------------------------------------------------------------
# Subcommands


def _label_one(payload):
    doc, cap = payload
    return greedy_oracle(doc, max_sentences=cap)


def cmd_label(ns):
    defaults = dict(COMMON_DEFAULTS, max_sentences=None)
    r = _resolve(ns, defaults)
    docs = load_jsonl(ns.in_path)
    jobs = [(doc, r["max_sentences"]) for doc in docs]
    if r["workers"] > 1:
        with ProcessPoolExecutor(max_workers=r["workers"]) as pool:
            results = list(pool.map(_label_one, jobs))
    else:
        results = [_label_one(j) for j in jobs]
    extras = []
    for doc, res in zip(docs, results):
        doc.labels = res.labels
        extras.append({"oracle_score": round(res.achieved_score, 6)})
    save_jsonl(docs, ns.out_path, extra_fields=extras)
    RunManifest(
        subcommand="label", config=r,
        inputs={"in": ns.in_path}, outputs={"out": ns.out_path},
        seed=r["seed"], tool_version=__version__,
    ).write(_manifest_path_for(ns.out_path))
    print(json.dumps({"documents": len(docs),
                      "mean_oracle_score": round(float(np.mean(
                          [res.achieved_score for res in results])), 6)
                      if results else 0.0}))
    return 0


def cmd_train(ns):
    defaults = dict(COMMON_DEFAULTS, **MODEL_DEFAULTS, **TRAIN_DEFAULTS, val_in=None)
    r = _resolve(ns, defaults)
    docs = load_jsonl(ns.in_path)
    unlabeled = [d.id for d in docs if d.labels is None]
    if unlabeled:
        raise ValidationError(
            f"training documents are unlabeled (run `label` first): {unlabeled[:5]}"
        )
    vocab = build_vocab(docs, r["vocab_size"])
    dataset = prepare_dataset(docs, vocab, r["max_len"])
    val_dataset = None
    if r["val_in"]:
        val_dataset = prepare_dataset(load_jsonl(r["val_in"]), vocab, r["max_len"])
    model_cfg = _build_model_config(r, len(vocab))
    train_cfg = _train_config(r, r["seed"])
    params = init_params(model_cfg, r["seed"])

    os.makedirs(ns.out_path, exist_ok=True)
    log_path = os.path.join(ns.out_path, "train_log.jsonl")
    ckpt = train_loop(dataset, params, train_cfg, model_cfg,
                      val_dataset=val_dataset,
                      use_adapters=not r["frozen"],
                      log_path=log_path,
                      block_size=r["block_size"])
    ckpt_path = os.path.join(ns.out_path, "checkpoint.bin")
    save_checkpoint(ckpt, ckpt_path)
    save_vocab(vocab, os.path.join(ns.out_path, "vocab.txt"))
    RunManifest(
        subcommand="train", config=r,
        inputs={"in": ns.in_path, "val_in": r["val_in"]},
        outputs={"checkpoint": ckpt_path,
                 "vocab": os.path.join(ns.out_path, "vocab.txt"),
                 "log": log_path},
        seed=r["seed"], tool_version=__version__,
    ).write(os.path.join(ns.out_path, "manifest.json"))
    print(json.dumps({"best_val_loss": ckpt.best_val_loss,
                      "optimizer_steps": ckpt.step,
                      "trainable_mode": "frozen" if r["frozen"] else "lora"}))
    return 0


def cmd_eval(ns):
    defaults = dict(COMMON_DEFAULTS, k=7, bins=20, trigram_blocking=False,
                    max_len=None, block_size=MODEL_DEFAULTS["block_size"],
                    vocab=None)
    r = _resolve(ns, defaults)
    ckpt = load_checkpoint(ns.checkpoint)
    vocab_path = r["vocab"] or os.path.join(os.path.dirname(ns.checkpoint), "vocab.txt")
    vocab = load_vocab(vocab_path)
    if len(vocab) != ckpt.model_config.vocab_size:
        raise ValidationError(
            f"vocab file has {len(vocab)} entries but checkpoint expects "
            f"{ckpt.model_config.vocab_size}"
        )
    params = params_from_checkpoint(ckpt)
    selector = make_model_selector(
        params, ckpt.model_config, vocab, max_len=r["max_len"],
        use_adapters=ckpt.use_adapters,
        trigram_blocking=bool(r["trigram_blocking"]),
        block_size=r["block_size"])
    docs = load_jsonl(ns.in_path)
    report = evaluate_corpus(docs, selector, r["k"])
    selections = [SelectionResult(doc_id=e["doc_id"],
                                  chosen_indices=e["chosen_indices"],
                                  probabilities=[], k=e["k"])
                  for e in report.per_doc]
    lengths = [e["n_sentences"] for e in report.per_doc]
    report.histogram = position_histogram(selections, lengths, r["bins"])

    os.makedirs(ns.out_path, exist_ok=True)
    report_path = os.path.join(ns.out_path, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    csv_path = os.path.join(ns.out_path, "histogram.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(histogram_to_csv(report.histogram))
    RunManifest(
        subcommand="eval", config=r,
        inputs={"in": ns.in_path, "checkpoint": ns.checkpoint, "vocab": vocab_path},
        outputs={"report": report_path, "histogram": csv_path},
        seed=r["seed"], tool_version=__version__,
    ).write(os.path.join(ns.out_path, "manifest.json"))
    summary = {name: report_to_dict(report)[name]["f1"]
               for name in ("rouge1", "rouge2", "rougeL")}
    summary["documents"] = len(report.per_doc)
    summary["skipped"] = report.skipped
    print(json.dumps(summary))
    return 0


def cmd_rouge(ns):
    with open(ns.candidate, encoding="utf-8") as fh:
        cand = tokenize(fh.read())
    with open(ns.reference, encoding="utf-8") as fh:
        ref = tokenize(fh.read())
    scores = score_all(cand, ref)
    print(json.dumps({name: sc.as_dict(6) for name, sc in scores.items()},
                     sort_keys=True))
    return 0


def cmd_analyze_positions(ns):
    defaults = dict(COMMON_DEFAULTS, bins=20)
    r = _resolve(ns, defaults)
    with open(ns.in_path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{ns.in_path}: invalid JSON ({exc.msg})") from None
    per_doc = data.get("per_doc")
    if not isinstance(per_doc, list):
        raise ValidationError(f"{ns.in_path}: missing 'per_doc' selection list")
    selections = []
    lengths = []
    for entry in per_doc:
        try:
            selections.append(SelectionResult(
                doc_id=entry["doc_id"],
                chosen_indices=entry["chosen_indices"],
                probabilities=[], k=entry.get("k", len(entry["chosen_indices"]))))
            lengths.append(entry["n_sentences"])
        except (KeyError, TypeError):
            raise ValidationError(
                f"{ns.in_path}: malformed per_doc entry {entry!r}") from None
    hist = position_histogram(selections, lengths, r["bins"])
    with open(ns.out_path, "w", encoding="utf-8") as fh:
        fh.write(histogram_to_csv(hist))
    RunManifest(
        subcommand="analyze-positions", config=r,
        inputs={"in": ns.in_path}, outputs={"out": ns.out_path},
        seed=r["seed"], tool_version=__version__,
    ).write(_manifest_path_for(ns.out_path))
    print(json.dumps({"total_selections": hist.total_selections,
                      "bins": hist.bin_count}))
    return 0


def cmd_gradcheck(ns):
    defaults = dict(COMMON_DEFAULTS, step_size=1e-5, tolerance=1e-4, frozen=False)
    r = _resolve(ns, defaults)
    from .corpus import TokenizedDocument

    cfg = ModelConfig(vocab_size=32, d_model=16, n_layers=2, n_heads=2, d_ff=24,
                      pretrain_context=64, runtime_context=64, lora_rank=2)
    params = init_params(cfg, seed=r["seed"])
    rng = np.random.default_rng(r["seed"] + 1)
    # Zero-init B makes every adapter-A gradient identically zero, which
    # would leave the finite-difference comparison vacuous; randomize the
    # trainables so all paths carry signal.
    for layer in params.layers:
        for _, adapter in layer.adapters():
            adapter.B[:] = rng.normal(0.0, 0.05, adapter.B.shape)
    params.classifier_w[:] = rng.normal(0.0, 0.5, params.classifier_w.shape)
    params.classifier_b[:] = rng.normal(0.0, 0.5, params.classifier_b.shape)
    ids = rng.integers(0, cfg.vocab_size, size=14)
    tdoc = TokenizedDocument(doc_id="gradcheck", token_ids=np.asarray(ids, np.int32),
                             spans=[(0, 5), (5, 9), (9, 14)],
                             kept_indices=[0, 1, 2], dropped_empty=[])
    labels = np.array([1.0, 0.0, 1.0])
    report = finite_diff_check(tdoc, labels, params, cfg,
                               step_size=r["step_size"],
                               tolerance=r["tolerance"],
                               use_adapters=not r["frozen"])
    print(json.dumps({
        "passed": report.passed,
        "max_rel_error": report.max_rel_error,
        "tolerance": report.tolerance,
        "step_size": report.step_size,
        "per_tensor": {k: float(f"{v:.6g}") for k, v in report.per_tensor.items()},
    }, sort_keys=True))
    return 0 if report.passed else 1


def cmd_sweep(ns):
    defaults = dict(COMMON_DEFAULTS, **MODEL_DEFAULTS, **TRAIN_DEFAULTS,
                    fractions=SWEEP_FRACTIONS, k=7)
    r = _resolve(ns, defaults)
    try:
        fractions = [float(f) for f in str(r["fractions"]).split(",") if f.strip()]
    except ValueError:
        raise ConfigError(f"--fractions must be comma-separated floats, got {r['fractions']!r}")
    if not fractions or any(not 0 < f <= 1 for f in fractions):
        raise ConfigError(f"sweep fractions must lie in (0,1]: {fractions}")

    docs = load_jsonl(ns.in_path)
    if any(d.labels is None for d in docs):
        raise ValidationError("sweep needs labeled documents (run `label` first)")
    vocab = build_vocab(docs, r["vocab_size"])
    dataset = prepare_dataset(docs, vocab, r["max_len"])
    model_cfg = _build_model_config(r, len(vocab))

    rows = []
    for frac in fractions:
        tc = _train_config(dict(r, data_fraction=frac), r["seed"])
        params = init_params(model_cfg, r["seed"])
        ckpt = train_loop(dataset, params, tc, model_cfg,
                          use_adapters=not r["frozen"],
                          block_size=r["block_size"])
        trained = params_from_checkpoint(ckpt)
        selector = make_model_selector(trained, model_cfg, vocab,
                                       use_adapters=ckpt.use_adapters,
                                       block_size=r["block_size"])
        report = evaluate_corpus(docs, selector, r["k"])
        rows.append({"fraction": frac,
                     "rouge2_f1": round(report.mean_scores["rouge2"]["f1"], 6),
                     "best_val_loss": ckpt.best_val_loss})

    os.makedirs(ns.out_path, exist_ok=True)
    json_path = os.path.join(ns.out_path, "sweep.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump({"k": r["k"], "rows": rows}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    csv_path = os.path.join(ns.out_path, "sweep.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("fraction,rouge2_f1\n")
        for row in rows:
            fh.write(f"{row['fraction']},{row['rouge2_f1']}\n")
    RunManifest(
        subcommand="sweep", config=r,
        inputs={"in": ns.in_path},
        outputs={"json": json_path, "csv": csv_path},
        seed=r["seed"], tool_version=__version__,
    ).write(os.path.join(ns.out_path, "manifest.json"))
    for row in rows:
        print(json.dumps(row))
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_common(p):
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--seed", type=int, help="RNG seed (default 0)")
    p.add_argument("--workers", type=int, help="parallel workers (default 1)")


def _add_model_flags(p):
    p.add_argument("--vocab-size", type=int, dest="vocab_size",
                   help="vocabulary cap including pad/unk (default 512)")
    p.add_argument("--d-model", type=int, dest="d_model",
                   help="model width (default 32)")
    p.add_argument("--n-layers", type=int, dest="n_layers",
                   help="decoder layers (default 2)")
    p.add_argument("--n-heads", type=int, dest="n_heads",
                   help="attention heads (default 4)")
    p.add_argument("--d-ff", type=int, dest="d_ff",
                   help="MLP hidden width (default 64)")
    p.add_argument("--max-len", type=int, dest="max_len",
                   help="runtime context length in tokens (default 256)")
    p.add_argument("--lora-rank", type=int, dest="lora_rank",
                   help="adapter rank (default 8)")
    p.add_argument("--rope-scale", type=float, dest="rope_scale",
                   help="position scaling ratio pretrain/runtime, <=1 "
                        "extends context (default 1.0)")
    p.add_argument("--rope-scale-inverse", type=float, dest="rope_scale_inverse",
                   help="reciprocal convention for --rope-scale: 8 means "
                        "ratio 1/8 (default unset)")
    p.add_argument("--attention-mode", choices=["causal", "bidirectional"],
                   dest="attention_mode",
                   help="attention masking (default causal)")
    p.add_argument("--block-size", type=int, dest="block_size",
                   help="tiled-attention block size (default 64)")


def _add_train_flags(p):
    p.add_argument("--lr", type=float, help="learning rate (default 3e-5)")
    p.add_argument("--accum-steps", type=int, dest="accum_steps",
                   help="documents per optimizer step (default 32)")
    p.add_argument("--epochs", type=int, help="training epochs (default 5)")
    p.add_argument("--val-interval", type=float, dest="val_interval",
                   help="validation cadence as epoch fraction (default 0.2)")
    p.add_argument("--data-fraction", type=float, dest="data_fraction",
                   help="train on a seeded fraction of documents (default 1.0)")
    p.add_argument("--frozen", action="store_true", default=None,
                   help="classifier-only baseline: disable adapters (default off)")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="extsum",
        description="Extractive summarization: oracle labeling, adapter "
                    "training, and ROUGE evaluation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand")

    p = sub.add_parser("label", help="add greedy oracle labels to a JSONL corpus")
    p.add_argument("--in", dest="in_path", required=True, help="input JSONL")
    p.add_argument("--out", dest="out_path", required=True, help="labeled output JSONL")
    p.add_argument("--max-sentences", type=int, dest="max_sentences",
                   help="cap on selected sentences per document (default unlimited)")
    _add_common(p)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train adapters + classifier on labeled JSONL")
    p.add_argument("--in", dest="in_path", required=True, help="labeled JSONL")
    p.add_argument("--out", dest="out_path", required=True, help="output directory")
    p.add_argument("--val-in", dest="val_in", help="validation JSONL "
                   "(default: validate on the training set)")
    _add_common(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="select top-k sentences with a checkpoint and score")
    p.add_argument("--in", dest="in_path", required=True, help="JSONL with abstracts")
    p.add_argument("--checkpoint", required=True, help="checkpoint file from `train`")
    p.add_argument("--vocab", help="vocab file (default: vocab.txt beside checkpoint)")
    p.add_argument("--out", dest="out_path", required=True, help="output directory")
    p.add_argument("--k", type=int, help="sentences to select (default 7)")
    p.add_argument("--bins", type=int, help="histogram bins (default 20)")
    p.add_argument("--max-len", type=int, dest="max_len",
                   help="encoding length cap (default: checkpoint context)")
    p.add_argument("--block-size", type=int, dest="block_size",
                   help="tiled-attention block size (default 64)")
    p.add_argument("--trigram-blocking", action="store_true", default=None,
                   dest="trigram_blocking",
                   help="skip candidates sharing a trigram with picks (default off)")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rouge", help="score two text files")
    p.add_argument("candidate", help="candidate text file")
    p.add_argument("reference", help="reference text file")
    p.set_defaults(func=cmd_rouge)

    p = sub.add_parser("analyze-positions",
                       help="relative-position histogram from an eval report")
    p.add_argument("--in", dest="in_path", required=True,
                   help="report.json from `eval`")
    p.add_argument("--out", dest="out_path", required=True, help="output CSV")
    p.add_argument("--bins", type=int, help="histogram bins (default 20)")
    _add_common(p)
    p.set_defaults(func=cmd_analyze_positions)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of the toy-model gradients")
    p.add_argument("--step-size", type=float, dest="step_size",
                   help="central-difference step (default 1e-5)")
    p.add_argument("--tolerance", type=float,
                   help="max relative error to pass (default 1e-4)")
    p.add_argument("--frozen", action="store_true", default=None,
                   help="check the classifier-only configuration (default off)")
    _add_common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="train at several data fractions, table R2")
    p.add_argument("--in", dest="in_path", required=True, help="labeled JSONL")
    p.add_argument("--out", dest="out_path", required=True, help="output directory")
    p.add_argument("--fractions",
                   help=f"comma-separated fractions (default {SWEEP_FRACTIONS})")
    p.add_argument("--k", type=int, help="sentences to select at eval (default 7)")
    _add_common(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def run(argv=None):
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 1
        return 0 if code == 0 else 1
    if getattr(ns, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return int(ns.func(ns) or 0)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExtSumError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()

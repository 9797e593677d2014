"""Extractive summarization as per-sentence binary classification: greedy
ROUGE oracle labeling, a small adapter-trained transformer scorer, and
evaluation tooling."""

__version__ = "0.1.0"

from ._kernels import BACKEND as KERNEL_BACKEND
from .corpus import (
    Document,
    TokenizedDocument,
    Vocab,
    build_vocab,
    encode_document,
    load_jsonl,
    save_jsonl,
    split_sentences,
)
from .errors import ExtSumError
from .evaluation import (
    EvalReport,
    PositionHistogram,
    SelectionResult,
    evaluate_corpus,
    lead_k,
    position_histogram,
    select_top_k,
    select_top_k_trigram_blocked,
)
from .model import (
    ModelConfig,
    ModelParams,
    backward_document,
    forward_document,
    init_params,
)
from .oracle import OracleLabels, brute_force_oracle, greedy_oracle
from .rouge import RougeScore, lcs_length, rouge_l, rouge_n
from .train import (
    Checkpoint,
    TrainConfig,
    bce_loss,
    finite_diff_check,
    load_checkpoint,
    save_checkpoint,
    train_loop,
)

__all__ = [
    "KERNEL_BACKEND",
    "__version__",
    "Document", "TokenizedDocument", "Vocab", "build_vocab",
    "encode_document", "load_jsonl", "save_jsonl", "split_sentences",
    "ExtSumError",
    "EvalReport", "PositionHistogram", "SelectionResult", "evaluate_corpus",
    "lead_k", "position_histogram", "select_top_k",
    "select_top_k_trigram_blocked",
    "ModelConfig", "ModelParams", "backward_document", "forward_document",
    "init_params",
    "OracleLabels", "brute_force_oracle", "greedy_oracle",
    "RougeScore", "lcs_length", "rouge_l", "rouge_n",
    "Checkpoint", "TrainConfig", "bce_loss", "finite_diff_check",
    "load_checkpoint", "save_checkpoint", "train_loop",
]

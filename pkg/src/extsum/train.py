"""Training: BCE loss, Adam over the trainable tensors only, gradient
accumulation with mean reduction, best-validation checkpointing, and a
finite-difference gradient verifier.

Training is a pure function of (dataset, seed, configs): the document order,
subset selection, and every update are driven by one seeded generator, so
two runs with identical inputs produce bitwise-identical checkpoints.
"""

import json
import struct
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .corpus import encode_document
from .errors import (
    CheckpointFormatError,
    CheckpointShapeError,
    CheckpointVersionError,
    ConfigError,
    ExtSumError,
    ShapeError,
    ValidationError,
)
from .model import (
    DEFAULT_BLOCK_SIZE,
    DecoderLayerParams,
    LoraAdapter,
    ModelConfig,
    ModelParams,
    backward_document,
    forward_document,
)

CHECKPOINT_MAGIC = b"EXTSUMCK"
CHECKPOINT_VERSION = 1
PROB_CLAMP = 1e-12


@dataclass
class TrainConfig:
    learning_rate: float = 3e-5
    accumulation_steps: int = 32
    epochs: int = 5
    validation_interval: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    data_fraction: float = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not isinstance(self.accumulation_steps, int) or self.accumulation_steps < 1:
            raise ConfigError(f"accumulation_steps must be a positive integer, got {self.accumulation_steps!r}")
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ConfigError(f"epochs must be a positive integer, got {self.epochs!r}")
        if not 0 < self.validation_interval <= 1:
            raise ConfigError(f"validation_interval must be in (0,1], got {self.validation_interval}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigError(f"{name} must be in (0,1), got {v}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if not 0 < self.data_fraction <= 1:
            raise ConfigError(f"data_fraction must be in (0,1], got {self.data_fraction}")

    def as_dict(self):
        return {
            "learning_rate": self.learning_rate,
            "accumulation_steps": self.accumulation_steps,
            "epochs": self.epochs,
            "validation_interval": self.validation_interval,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "seed": self.seed,
            "data_fraction": self.data_fraction,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0


def init_optimizer(trainable_items):
    return OptimizerState(
        m={name: np.zeros_like(arr) for name, arr in trainable_items},
        v={name: np.zeros_like(arr) for name, arr in trainable_items},
        step=0,
    )


def bce_loss(probs, labels):
    """Mean over sentences of -[y ln p + (1-y) ln(1-p)], p clamped to
    [1e-12, 1-1e-12] so the loss stays finite in 64-bit arithmetic."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise ValidationError(
            f"bce_loss length mismatch: {probs.shape} probs vs {labels.shape} labels"
        )
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(np.mean(-(labels * np.log(p) + (1.0 - labels) * np.log1p(-p))))


def adam_step(trainable_items, grads, state, cfg):
    """One bias-corrected Adam update, in place on the trainable arrays."""
    names = [name for name, _ in trainable_items]
    if set(grads) != set(names):
        missing = set(names) ^ set(grads)
        raise ValidationError(f"gradient set misaligned with trainables: {sorted(missing)}")
    state.step += 1
    t = state.step
    corr1 = 1.0 - cfg.beta1 ** t
    corr2 = 1.0 - cfg.beta2 ** t
    for name, arr in trainable_items:
        g = grads[name]
        if g.shape != arr.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {arr.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        arr -= cfg.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + cfg.eps)


def prepare_dataset(docs, vocab, max_len, require_labels=True):
    """Encode documents and realign labels onto the surviving sentences.

    Labels of dropped or truncated sentences are discarded with them;
    kept_indices drives the realignment.  Returns (TokenizedDocument,
    labels-or-None) pairs.
    """
    out = []
    for doc in docs:
        tdoc = encode_document(doc, vocab, max_len)
        labels = None
        if doc.labels is not None:
            labels = np.asarray([doc.labels[i] for i in tdoc.kept_indices],
                                dtype=np.float64)
        elif require_labels:
            raise ValidationError(f"document {doc.id!r} is unlabeled")
        out.append((tdoc, labels))
    return out


def _zero_grads_like(trainable_items):
    return {name: np.zeros_like(arr) for name, arr in trainable_items}


def _mean_validation_loss(dataset, params, model_cfg, use_adapters,
                          attention_impl, block_size):
    losses = []
    for tdoc, labels in dataset:
        probs, _ = forward_document(tdoc, params, model_cfg,
                                    use_adapters=use_adapters,
                                    attention_impl=attention_impl,
                                    block_size=block_size)
        losses.append(bce_loss(probs, labels))
    return float(np.mean(losses))


def train_loop(dataset, params, cfg, model_cfg, val_dataset=None,
               use_adapters=True, log_path=None,
               attention_impl="tiled", block_size=DEFAULT_BLOCK_SIZE):
    """Seeded epochs of document-level accumulation and Adam updates.

    Gradients are averaged (not summed) over each accumulation window, so
    the learning rate does not depend on accumulation_steps.  Validation
    runs every validation_interval of an epoch and once more at the end;
    the returned Checkpoint holds the parameters and optimizer state at the
    smallest validation loss.  Without val_dataset the training subset
    doubles as the validation set.
    """
    if not dataset:
        raise ValidationError("cannot train on an empty dataset")
    for tdoc, labels in dataset:
        if labels is None:
            raise ValidationError(f"document {tdoc.doc_id!r} is unlabeled")

    rng = np.random.default_rng(cfg.seed)
    n_total = len(dataset)
    n_train = max(1, int(round(n_total * cfg.data_fraction)))
    if n_train < n_total:
        keep = rng.permutation(n_total)[:n_train]
        train_set = [dataset[int(i)] for i in keep]
    else:
        train_set = list(dataset)
    val_set = val_dataset if val_dataset is not None else train_set
    if any(labels is None for _, labels in val_set):
        raise ValidationError("validation documents must be labeled")

    trainable = params.trainable_items(include_adapters=use_adapters)
    state = init_optimizer(trainable)
    val_every = max(1, int(round(len(train_set) * cfg.validation_interval)))

    best_loss = np.inf
    best_tensors = None
    best_state = None
    acc = _zero_grads_like(trainable)
    acc_count = 0
    window_losses = []
    seen = 0
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None

    def log_line(record):
        if log_fh is not None:
            record["timestamp"] = time.time()
            log_fh.write(json.dumps(record) + "\n")

    def flush_window():
        nonlocal acc_count, window_losses
        if acc_count == 0:
            return
        grads = {name: g / acc_count for name, g in acc.items()}
        adam_step(trainable, grads, state, cfg)
        log_line({"step": state.step,
                  "train_loss": float(np.mean(window_losses))})
        for g in acc.values():
            g.fill(0.0)
        acc_count = 0
        window_losses = []

    last_validated_step = -1

    def run_validation():
        nonlocal best_loss, best_tensors, best_state, last_validated_step
        val_loss = _mean_validation_loss(val_set, params, model_cfg,
                                         use_adapters, attention_impl, block_size)
        log_line({"step": state.step, "val_loss": val_loss})
        last_validated_step = state.step
        if val_loss < best_loss:
            best_loss = val_loss
            best_tensors = {name: arr.copy() for name, arr in params.all_items()}
            best_state = OptimizerState(
                m={n: a.copy() for n, a in state.m.items()},
                v={n: a.copy() for n, a in state.v.items()},
                step=state.step,
            )
        return val_loss

    try:
        for _epoch in range(cfg.epochs):
            order = rng.permutation(len(train_set))
            for idx in order:
                tdoc, labels = train_set[int(idx)]
                probs, cache = forward_document(tdoc, params, model_cfg,
                                                use_adapters=use_adapters,
                                                attention_impl=attention_impl,
                                                block_size=block_size)
                loss = bce_loss(probs, labels)
                if not np.isfinite(loss):
                    raise ExtSumError(
                        f"non-finite training loss on document {tdoc.doc_id!r}"
                    )
                grads = backward_document(cache, labels)
                for name, g in grads.items():
                    acc[name] += g
                acc_count += 1
                window_losses.append(loss)
                seen += 1
                if acc_count == cfg.accumulation_steps:
                    flush_window()
                if seen % val_every == 0:
                    run_validation()
            # partial window at an epoch boundary still contributes a step
            flush_window()
        # the final state must be eligible for best-checkpoint selection
        if last_validated_step != state.step or best_tensors is None:
            run_validation()
    finally:
        if log_fh is not None:
            log_fh.close()

    return Checkpoint(
        model_config=model_cfg,
        train_config=cfg,
        tensors=_package_tensors(best_tensors, best_state),
        step=best_state.step,
        best_val_loss=best_loss,
        use_adapters=use_adapters,
    )


# ---------------------------------------------------------------------------
# Finite-difference verification


@dataclass
class FiniteDiffReport:
    per_tensor: dict
    max_rel_error: float
    passed: bool
    step_size: float
    tolerance: float


def finite_diff_check(tdoc, labels, params, model_cfg, step_size=1e-5,
                      tolerance=1e-4, use_adapters=True):
    """Central differences vs backward_document over every trainable scalar.

    Relative error per scalar is |analytic - numeric| / max(|analytic|,
    |numeric|, 1e-8); non-finite differences count as failures.  Frozen
    tensors never appear in the report.
    """
    labels = np.asarray(labels, dtype=np.float64)

    def loss_at():
        probs, _ = forward_document(tdoc, params, model_cfg,
                                    use_adapters=use_adapters)
        return bce_loss(probs, labels)

    _, cache = forward_document(tdoc, params, model_cfg, use_adapters=use_adapters)
    analytic = backward_document(cache, labels)

    per_tensor = {}
    overall = 0.0
    for name, arr in params.trainable_items(include_adapters=use_adapters):
        a_grad = analytic[name]
        worst = 0.0
        flat = arr.reshape(-1)
        g_flat = a_grad.reshape(-1)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + step_size
            up = loss_at()
            flat[i] = orig - step_size
            down = loss_at()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step_size)
            if not np.isfinite(numeric):
                worst = np.inf
                continue
            denom = max(abs(g_flat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(g_flat[i] - numeric) / denom)
        per_tensor[name] = worst
        overall = max(overall, worst)
    return FiniteDiffReport(
        per_tensor=per_tensor,
        max_rel_error=overall,
        passed=bool(overall <= tolerance),
        step_size=step_size,
        tolerance=tolerance,
    )


# ---------------------------------------------------------------------------
# Checkpoint container


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    tensors: dict
    step: int
    best_val_loss: float
    use_adapters: bool = True
    version: int = CHECKPOINT_VERSION


def _package_tensors(param_tensors, state):
    tensors = {f"param.{name}": arr for name, arr in param_tensors.items()}
    for name, arr in state.m.items():
        tensors[f"optim.m.{name}"] = arr
    for name, arr in state.v.items():
        tensors[f"optim.v.{name}"] = arr
    return tensors


def make_checkpoint(params, state, model_cfg, train_cfg, best_val_loss,
                    use_adapters=True):
    """Snapshot live params + optimizer state into a Checkpoint."""
    tensors = {name: arr.copy() for name, arr in params.all_items()}
    state_copy = OptimizerState(
        m={n: a.copy() for n, a in state.m.items()},
        v={n: a.copy() for n, a in state.v.items()},
        step=state.step,
    )
    return Checkpoint(
        model_config=model_cfg,
        train_config=train_cfg,
        tensors=_package_tensors(tensors, state_copy),
        step=state.step,
        best_val_loss=best_val_loss,
        use_adapters=use_adapters,
    )


def expected_param_shapes(cfg):
    """Tensor-name -> shape map implied by a ModelConfig."""
    d, f, r, vsize = cfg.d_model, cfg.d_ff, cfg.lora_rank, cfg.vocab_size
    shapes = {"embedding": (vsize, d)}
    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        for w in ("w_q", "w_k", "w_v", "w_o"):
            shapes[pre + w] = (d, d)
        shapes[pre + "w_in"] = (2 * f, d)
        shapes[pre + "w_out"] = (d, f)
        shapes[pre + "norm1_gain"] = (d,)
        shapes[pre + "norm2_gain"] = (d,)
        for tag in ("lora_q", "lora_k", "lora_v", "lora_o"):
            shapes[pre + tag + ".A"] = (r, d)
            shapes[pre + tag + ".B"] = (d, r)
    shapes["final_norm_gain"] = (d,)
    shapes["classifier.w_c"] = (1, d)
    shapes["classifier.b"] = (1,)
    return shapes


def params_from_checkpoint(ckpt):
    """Rebuild ModelParams from a checkpoint's tensor map."""
    cfg = ckpt.model_config
    get = lambda name: np.array(ckpt.tensors[f"param.{name}"], dtype=np.float64)
    layers = []
    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        layers.append(DecoderLayerParams(
            w_q=get(pre + "w_q"), w_k=get(pre + "w_k"),
            w_v=get(pre + "w_v"), w_o=get(pre + "w_o"),
            lora_q=LoraAdapter(get(pre + "lora_q.A"), get(pre + "lora_q.B")),
            lora_k=LoraAdapter(get(pre + "lora_k.A"), get(pre + "lora_k.B")),
            lora_v=LoraAdapter(get(pre + "lora_v.A"), get(pre + "lora_v.B")),
            lora_o=LoraAdapter(get(pre + "lora_o.A"), get(pre + "lora_o.B")),
            w_in=get(pre + "w_in"), w_out=get(pre + "w_out"),
            norm1_gain=get(pre + "norm1_gain"),
            norm2_gain=get(pre + "norm2_gain"),
        ))
    return ModelParams(
        embedding=get("embedding"),
        layers=layers,
        final_norm_gain=get("final_norm_gain"),
        classifier_w=get("classifier.w_c"),
        classifier_b=get("classifier.b"),
    )


def optimizer_from_checkpoint(ckpt):
    m = {}
    v = {}
    for key, arr in ckpt.tensors.items():
        if key.startswith("optim.m."):
            m[key[len("optim.m."):]] = np.array(arr)
        elif key.startswith("optim.v."):
            v[key[len("optim.v."):]] = np.array(arr)
    return OptimizerState(m=m, v=v, step=ckpt.step)


def _validate_tensor_shapes(ckpt):
    expected = expected_param_shapes(ckpt.model_config)
    seen_params = {k[len("param."):]: v.shape for k, v in ckpt.tensors.items()
                   if k.startswith("param.")}
    if seen_params != expected:
        extra = sorted(set(seen_params) - set(expected))
        missing = sorted(set(expected) - set(seen_params))
        bad = sorted(n for n in set(seen_params) & set(expected)
                     if seen_params[n] != expected[n])
        raise CheckpointShapeError(
            f"tensor manifest disagrees with config: missing={missing} "
            f"extra={extra} mismatched={bad}"
        )
    for key, arr in ckpt.tensors.items():
        if key.startswith(("optim.m.", "optim.v.")):
            base = key.split(".", 2)[2]
            if base not in expected:
                raise CheckpointShapeError(f"optimizer tensor {key} has no parameter")
            if arr.shape != expected[base]:
                raise CheckpointShapeError(
                    f"optimizer tensor {key} shape {arr.shape} != {expected[base]}"
                )


def save_checkpoint(ckpt, path):
    """Little-endian container: magic, u32 version, length-prefixed JSON
    config, length-prefixed JSON manifest of (name, dtype, shape), then raw
    tensor payloads in manifest order."""
    _validate_tensor_shapes(ckpt)
    config_block = json.dumps({
        "model_config": ckpt.model_config.as_dict(),
        "train_config": ckpt.train_config.as_dict(),
        "step": ckpt.step,
        "best_val_loss": ckpt.best_val_loss,
        "use_adapters": ckpt.use_adapters,
    }, sort_keys=True, separators=(",", ":")).encode("utf-8")
    names = sorted(ckpt.tensors)
    arrays = [np.ascontiguousarray(ckpt.tensors[n]) for n in names]
    manifest = json.dumps(
        [[n, a.dtype.str, list(a.shape)] for n, a in zip(names, arrays)],
        separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", ckpt.version))
        fh.write(struct.pack("<I", len(config_block)))
        fh.write(config_block)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for a in arrays:
            fh.write(a.tobytes(order="C"))


def _read_exact(fh, count, what):
    data = fh.read(count)
    if len(data) != count:
        raise CheckpointFormatError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path, expect_config=None):
    """Read and validate a checkpoint container.

    expect_config, when given, must imply the same tensor shapes as the
    stored config (e.g. loading an r=8 checkpoint into an r=4 run fails
    with a shape error).
    """
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(CHECKPOINT_MAGIC), "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"bad magic bytes {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(
                f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )
        (config_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        try:
            config = json.loads(_read_exact(fh, config_len, "config block"))
        except json.JSONDecodeError as exc:
            raise CheckpointFormatError(f"corrupt config block: {exc.msg}") from None
        (manifest_len,) = struct.unpack("<I", _read_exact(fh, 4, "manifest length"))
        try:
            manifest = json.loads(_read_exact(fh, manifest_len, "manifest"))
        except json.JSONDecodeError as exc:
            raise CheckpointFormatError(f"corrupt manifest: {exc.msg}") from None
        tensors = {}
        for entry in manifest:
            if not (isinstance(entry, list) and len(entry) == 3):
                raise CheckpointFormatError(f"malformed manifest entry {entry!r}")
            name, dtype_str, shape = entry
            dtype = np.dtype(dtype_str)
            shape = tuple(int(s) for s in shape)
            count = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fh, count * dtype.itemsize, f"tensor {name}")
            tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise CheckpointFormatError("trailing bytes after last tensor")

    ckpt = Checkpoint(
        model_config=ModelConfig.from_dict(config["model_config"]),
        train_config=TrainConfig.from_dict(config["train_config"]),
        tensors=tensors,
        step=int(config["step"]),
        best_val_loss=float(config["best_val_loss"]),
        use_adapters=bool(config.get("use_adapters", True)),
        version=version,
    )
    _validate_tensor_shapes(ckpt)
    if expect_config is not None:
        expected = expected_param_shapes(expect_config)
        stored = expected_param_shapes(ckpt.model_config)
        if expected != stored:
            diff = sorted(n for n in set(expected) | set(stored)
                          if expected.get(n) != stored.get(n))
            raise CheckpointShapeError(
                f"checkpoint shapes incompatible with requested config: {diff[:8]}"
            )
    return ckpt

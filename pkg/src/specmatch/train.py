"""Model assembly, the deterministic training loop, early stopping on dev
MRR, the two-phase transfer protocol, and checkpoint serialization.

Checkpoint file layout: magic b"SPM1", a little-endian uint32 header length,
a canonical JSON header (format_version, config, vocab digest, history,
tensor directory), then the raw float32 little-endian tensor payloads in
directory order. Canonical JSON plus the insertion-ordered parameter store
make checkpoint bytes a pure function of (data, config, seed).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import QAPair
from .encoder import CELL_VARIANTS, BiLSTMEncoder, encode_text, init_encoder
from .errors import (
    CheckpointCorruptionError,
    CheckpointVersionError,
    ConfigError,
    DataFormatError,
    EmptyInputError,
    NumericError,
    TransferError,
)
from .evaluate import evaluate_pairs
from .scorer import BilinearScorer, ScoredPair, bce_loss, init_scorer, relevance_prob
from .tensor import ParamStore, Tensor2D, backward, make_optimizer
from .text import EmbeddingTable, Vocabulary, tokenize, vocab_digest

FORMAT_VERSION = 1
MAGIC = b"SPM1"


@dataclass
class TrainConfig:
    hidden: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    epochs_max: int = 30
    batch_size: int = 32
    seed: int = 0
    patience: int = 3
    cell_variant: str = "paper"
    freeze_embeddings: bool = True
    negatives_per_question: int = 1
    training_fraction: float = 1.0

    def __post_init__(self):
        if self.hidden < 1:
            raise ConfigError(f"hidden must be >= 1, got {self.hidden}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.epochs_max < 0:
            raise ConfigError(f"epochs_max must be >= 0, got {self.epochs_max}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 0:
            raise ConfigError(f"patience must be >= 0, got {self.patience}")
        if self.cell_variant not in CELL_VARIANTS:
            raise ConfigError(
                f"cell_variant must be one of {CELL_VARIANTS}, got {self.cell_variant!r}"
            )
        if self.negatives_per_question < 0:
            raise ConfigError(
                f"negatives_per_question must be >= 0, got {self.negatives_per_question}"
            )
        if not (0.0 < self.training_fraction <= 1.0):
            raise ConfigError(f"training_fraction must be in (0, 1], got {self.training_fraction}")

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_json(cls, obj: dict, source: str = "config") -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"{source}: unknown fields {sorted(unknown)}")
        return cls(**obj)


@dataclass
class Model:
    config: TrainConfig
    store: ParamStore
    encoder: BiLSTMEncoder
    scorer: BilinearScorer
    vocab: Vocabulary
    table: EmbeddingTable
    vocab_digest: str
    _token_cache: dict = field(default_factory=dict, repr=False)

    def tokens(self, text: str) -> list[str]:
        cached = self._token_cache.get(text)
        if cached is None:
            cached = tokenize(text)
            self._token_cache[text] = cached
        return cached

    def encode(self, text) -> Tensor2D:
        toks = self.tokens(text) if isinstance(text, str) else list(text)
        return encode_text(toks, self.vocab, self.table, self.encoder)


def build_model(config: TrainConfig, vocab: Vocabulary, table: EmbeddingTable) -> Model:
    """Fresh parameters for the given config, seeded by config.seed.

    The supplied table is never mutated: a frozen model shares its matrix
    read-only, a trainable one works on a private copy registered in the
    ParamStore (first entry, so checkpoints order it ahead of the encoder).
    """
    rng = np.random.default_rng(config.seed)
    store = ParamStore()
    digest = vocab_digest(vocab, table)
    if config.freeze_embeddings:
        model_table = EmbeddingTable(
            dim=table.dim, matrix=table.matrix, trainable=False, oov_seed=table.oov_seed
        )
    else:
        matrix = Tensor2D(table.matrix.data)
        store.add("emb.matrix", matrix)
        model_table = EmbeddingTable(
            dim=table.dim, matrix=matrix, trainable=True, oov_seed=table.oov_seed
        )
    encoder = init_encoder(store, table.dim, config.hidden, rng, config.cell_variant)
    scorer = init_scorer(store, config.hidden, rng)
    return Model(
        config=config,
        store=store,
        encoder=encoder,
        scorer=scorer,
        vocab=vocab,
        table=model_table,
        vocab_digest=digest,
    )


@dataclass
class Checkpoint:
    config: TrainConfig
    vocab_digest: str
    params: dict[str, np.ndarray]  # insertion order = serialization order
    history: list[dict]
    format_version: int = FORMAT_VERSION

    def best_epoch(self) -> int | None:
        if not self.history:
            return None
        best = max(self.history, key=lambda h: h["dev_mrr"])
        for h in self.history:
            if h["dev_mrr"] == best["dev_mrr"]:
                return h["epoch"]
        return None

    def best_dev_mrr(self) -> float | None:
        epoch = self.best_epoch()
        if epoch is None:
            return None
        return next(h["dev_mrr"] for h in self.history if h["epoch"] == epoch)


def _encode_training(model: Model, text: str, cache: dict) -> Tensor2D:
    vec = cache.get(text)
    if vec is None:
        vec = model.encode(text)
        cache[text] = vec
    return vec


def train_epoch(
    model: Model,
    pairs: Sequence[QAPair],
    config: TrainConfig,
    epoch_index: int,
    optimizer=None,
) -> float:
    """One pass: shuffle by (seed, epoch_index), minibatch, mean-BCE step per
    batch. Returns the pair-weighted mean loss across the epoch.

    Texts repeating within a batch are encoded once and share their subgraph;
    gradients still accumulate correctly through the shared nodes.
    """
    if not pairs:
        raise EmptyInputError("train_epoch: no pairs")
    opt = optimizer or make_optimizer(config.optimizer, config.learning_rate)
    rng = np.random.default_rng([config.seed, epoch_index])
    perm = rng.permutation(len(pairs))
    total = 0.0
    for batch_index, start in enumerate(range(0, len(pairs), config.batch_size)):
        batch = [pairs[int(i)] for i in perm[start : start + config.batch_size]]
        cache: dict = {}
        scored = []
        for pair in batch:
            q = _encode_training(model, pair.question, cache)
            c = _encode_training(model, pair.candidate, cache)
            scored.append(ScoredPair(probability=relevance_prob(q, c, model.scorer), label=pair.label))
        loss = bce_loss(scored)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(
                f"non-finite loss ({value}) in batch {batch_index} of epoch {epoch_index}"
            )
        backward(loss)
        opt.step(model.store)
        total += value * len(batch)
    return total / len(pairs)


def fit(
    model: Model,
    train_pairs: Sequence[QAPair],
    dev_pairs: Sequence[QAPair],
    config: TrainConfig,
) -> Checkpoint:
    """Train up to epochs_max with early stopping on dev MRR.

    After each epoch the dev split is ranked; the best-scoring parameters are
    kept (ties keep the earlier epoch) and restored into the model before
    returning. Training stops once `patience` epochs pass without a new
    best. epochs_max=0 returns the initial parameters untouched.
    """
    if config.epochs_max > 0:
        if not train_pairs:
            raise EmptyInputError("fit: no training pairs")
        if not dev_pairs:
            raise EmptyInputError("fit: no dev pairs for model selection")
    optimizer = make_optimizer(config.optimizer, config.learning_rate)
    best_params = model.store.snapshot()
    best_mrr = -math.inf
    best_epoch = 0
    history: list[dict] = []
    for epoch in range(1, config.epochs_max + 1):
        train_loss = train_epoch(model, train_pairs, config, epoch, optimizer)
        report = evaluate_pairs(model, dev_pairs)
        history.append({"epoch": epoch, "train_loss": train_loss, "dev_mrr": report.mrr})
        if report.mrr > best_mrr:
            best_mrr = report.mrr
            best_epoch = epoch
            best_params = model.store.snapshot()
        if epoch - best_epoch >= config.patience:
            break
    model.store.restore(best_params)
    return Checkpoint(
        config=config,
        vocab_digest=model.vocab_digest,
        params=best_params,
        history=history,
    )


def apply_checkpoint(model: Model, source) -> None:
    """Copy checkpoint parameters (a Checkpoint or a name->array dict) into
    the model, validating names and shapes."""
    params = source.params if isinstance(source, Checkpoint) else source
    expected = model.store.names()
    if set(params.keys()) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise TransferError(
            f"parameter names do not line up: missing {missing}, unexpected {extra}"
        )
    for p in model.store:
        src = np.asarray(params[p.name], dtype=np.float64)
        if src.shape != p.value.shape:
            raise TransferError(
                f"parameter {p.name!r}: model expects {p.value.shape}, checkpoint has {src.shape}"
            )
    for p in model.store:
        p.value.data[...] = np.asarray(params[p.name], dtype=np.float64)


def pretrain_then_finetune(
    vocab: Vocabulary,
    table: EmbeddingTable,
    source_train: Sequence[QAPair],
    source_dev: Sequence[QAPair],
    target_train: Sequence[QAPair],
    target_dev: Sequence[QAPair],
    cfg_pre: TrainConfig,
    cfg_fine: TrainConfig,
) -> tuple[Checkpoint, Checkpoint]:
    """Fit on the source corpus, then fine-tune the same parameters on the
    target. Phase 2 starts from the phase-1 parameters bit-for-bit, with a
    fresh optimizer; everything stays trainable."""
    model = build_model(cfg_pre, vocab, table)
    ckpt_pre = fit(model, source_train, source_dev, cfg_pre)
    fine = build_model(cfg_fine, vocab, table)
    apply_checkpoint(fine, ckpt_pre)
    ckpt_fine = fit(fine, target_train, target_dev, cfg_fine)
    return ckpt_pre, ckpt_fine


# ---------------------------------------------------------------------------
# serialization


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    directory = []
    payloads = []
    offset = 0
    for name, arr in ckpt.params.items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(blob)
        offset += len(blob)
    header = {
        "format_version": ckpt.format_version,
        "config": ckpt.config.to_json(),
        "vocab_digest": ckpt.vocab_digest,
        "history": ckpt.history,
        "tensors": directory,
    }
    encoded = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(encoded)))
        fh.write(encoded)
        for blob in payloads:
            fh.write(blob)


def _expected_shapes(config: TrainConfig, input_dim: int) -> dict[str, tuple[int, int]]:
    h = config.hidden
    shapes: dict[str, tuple[int, int]] = {}
    for prefix in ("fwd.", "bwd."):
        for g in ("i", "f", "o", "c"):
            shapes[f"{prefix}W_{g}"] = (h, input_dim)
            shapes[f"{prefix}U_{g}"] = (h, h)
            shapes[f"{prefix}b_{g}"] = (h, 1)
    shapes["scorer.M"] = (2 * h, 2 * h)
    shapes["scorer.b"] = (1, 1)
    return shapes


def _validate_checkpoint_shapes(config: TrainConfig, params: dict[str, np.ndarray]) -> None:
    names = list(params.keys())
    has_emb = "emb.matrix" in params
    if has_emb == config.freeze_embeddings:
        state = "contains" if has_emb else "lacks"
        raise CheckpointCorruptionError(
            f"checkpoint {state} 'emb.matrix' but config says "
            f"freeze_embeddings={config.freeze_embeddings}"
        )
    probe = params.get("fwd.W_i")
    if probe is None:
        raise CheckpointCorruptionError("checkpoint is missing tensor 'fwd.W_i'")
    input_dim = probe.shape[1]
    expected = _expected_shapes(config, input_dim)
    for name, shape in expected.items():
        if name not in params:
            raise CheckpointCorruptionError(f"checkpoint is missing tensor {name!r}")
        found = params[name].shape
        if tuple(found) != shape:
            raise CheckpointCorruptionError(
                f"tensor {name!r}: expected shape {shape}, found {tuple(found)}"
            )
    if has_emb and params["emb.matrix"].shape[1] != input_dim:
        raise CheckpointCorruptionError(
            f"tensor 'emb.matrix': expected {input_dim} columns, "
            f"found {params['emb.matrix'].shape[1]}"
        )
    known = set(expected) | {"emb.matrix"}
    stray = [n for n in names if n not in known]
    if stray:
        raise CheckpointCorruptionError(f"checkpoint contains unknown tensors {stray}")


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise CheckpointCorruptionError(f"{path}: not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + header_len:
        raise CheckpointCorruptionError(f"{path}: truncated header")
    try:
        header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointCorruptionError(f"{path}: unreadable header: {e}") from None
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: unsupported format_version {version!r}, expected {FORMAT_VERSION}"
        )
    try:
        config = TrainConfig.from_json(header["config"], source=f"{path}: config")
        directory = header["tensors"]
        digest = header["vocab_digest"]
        history = header["history"]
    except KeyError as e:
        raise CheckpointCorruptionError(f"{path}: header is missing {e.args[0]!r}") from None
    payload = blob[8 + header_len :]
    params: dict[str, np.ndarray] = {}
    for entry in directory:
        name = entry["name"]
        rows, cols = entry["shape"]
        off = entry["offset"]
        nbytes = 4 * rows * cols
        if off + nbytes > len(payload):
            raise CheckpointCorruptionError(f"{path}: truncated payload for tensor {name!r}")
        arr = np.frombuffer(payload[off : off + nbytes], dtype="<f4").reshape(rows, cols)
        params[name] = arr.astype(np.float64)
    _validate_checkpoint_shapes(config, params)
    return Checkpoint(
        config=config,
        vocab_digest=digest,
        params=params,
        history=history,
        format_version=version,
    )


def model_from_checkpoint(ckpt: Checkpoint, vocab: Vocabulary, table: EmbeddingTable) -> Model:
    """Rebuild a ready-to-serve model: fresh structure from the checkpoint's
    config, parameters overwritten from the checkpoint. The supplied
    embeddings must be the ones the model was trained with (digest check)."""
    digest = vocab_digest(vocab, table)
    if digest != ckpt.vocab_digest:
        raise DataFormatError(
            "embeddings do not match this checkpoint: vocabulary digest is "
            f"{digest[:12]}…, checkpoint expects {ckpt.vocab_digest[:12]}…"
        )
    model = build_model(ckpt.config, vocab, table)
    apply_checkpoint(model, ckpt)
    return model

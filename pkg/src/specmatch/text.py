"""Tokenization, vocabulary, and GloVe-format embedding ingestion."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, EmptyInputError
from .tensor import Tensor2D, take_rows

# Punctuation marks promoted to standalone tokens.
_PUNCT_RE = re.compile(r"([.,?!'\"()/])")

DEFAULT_OOV_SEED = 13


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and isolate punctuation marks.

    The token stream is the only text representation used downstream; it is
    deliberately rule-based and deterministic (no stemming, no stopwords).
    """
    return _PUNCT_RE.sub(r" \1 ", text.lower()).split()


@dataclass
class Vocabulary:
    """token -> index map in embedding-file order, with a reserved OOV index."""

    tokens: list[str]
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def oov_index(self) -> int:
        return len(self.tokens)

    def index_of(self, token: str) -> int:
        return self.index.get(token, self.oov_index)

    def token_of(self, idx: int) -> str:
        return self.tokens[idx] if idx < len(self.tokens) else "<oov>"


@dataclass
class EmbeddingTable:
    """(V+1) x dim matrix; the extra final row is the OOV vector."""

    dim: int
    matrix: Tensor2D
    trainable: bool = False
    oov_seed: int = DEFAULT_OOV_SEED

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.dim).encode())
        h.update(self.matrix.data.tobytes())
        return h.hexdigest()


def vocab_digest(vocab: Vocabulary, table: EmbeddingTable) -> str:
    h = hashlib.sha256()
    h.update("\n".join(vocab.tokens).encode("utf-8"))
    h.update(b"\x00")
    h.update(table.digest().encode())
    return h.hexdigest()


def load_embeddings(
    path, vocab_limit: int | None = None, oov_seed: int = DEFAULT_OOV_SEED
) -> tuple[Vocabulary, EmbeddingTable]:
    """Read a GloVe-format text file: one token plus d floats per line.

    The vocabulary keeps file order. An OOV row sampled uniform(-0.05, 0.05)
    from ``oov_seed`` is appended so unknown tokens embed deterministically.
    """
    tokens: list[str] = []
    rows: list[list[float]] = []
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line:
                continue
            parts = line.split()
            if len(parts) < 2:
                raise DataFormatError(f"{path}: line {lineno}: expected token and floats")
            token = parts[0]
            try:
                vec = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: non-numeric value") from exc
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise DataFormatError(
                    f"{path}: line {lineno}: dimension {len(vec)} differs from {dim}"
                )
            tokens.append(token)
            rows.append(vec)
            if vocab_limit is not None and len(tokens) >= vocab_limit:
                break
    if dim is None:
        raise DataFormatError(f"{path}: empty embedding file")
    seen: set[str] = set()
    for i, tok in enumerate(tokens):
        if tok in seen:
            raise DataFormatError(f"{path}: duplicate token {tok!r} at entry {i + 1}")
        seen.add(tok)
    rng = np.random.default_rng(oov_seed)
    oov = rng.uniform(-0.05, 0.05, size=dim)
    matrix = np.vstack([np.array(rows, dtype=np.float64), oov[None, :]])
    vocab = Vocabulary(tokens)
    table = EmbeddingTable(dim=dim, matrix=Tensor2D(matrix), oov_seed=oov_seed)
    return vocab, table


def embed_sequence(seq: list[str], vocab: Vocabulary, table: EmbeddingTable) -> Tensor2D:
    """Stack the embedding rows of a token sequence into an m x d tensor.

    Differentiable into the table (gather with scatter-add backward) when the
    table is trainable; a detached constant otherwise.
    """
    if not seq:
        raise EmptyInputError("embed_sequence: empty token sequence")
    ids = [vocab.index_of(tok) for tok in seq]
    if table.trainable:
        return take_rows(table.matrix, ids)
    return Tensor2D(table.matrix.data[ids, :])

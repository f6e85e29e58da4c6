"""Bilinear relevance scoring and the binary cross-entropy training loss.

A question vector q and a candidate vector s (both 2H x 1, from the shared
encoder) are scored as

    p(relevant | q, s) = sigmoid(q^T M s + b)

where M (2H x 2H) and the scalar b are trained jointly with the encoder.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DimensionError, EmptyInputError
from .tensor import (
    ParamStore,
    Parameter,
    Tensor2D,
    add,
    affine,
    clamp,
    log,
    matmul,
    mean_all,
    sigmoid,
    stack_rows,
    transpose,
)

# probabilities are pushed away from {0, 1} by this much inside the loss only;
# reported scores stay unclamped
PROB_FLOOR = 1e-7


@dataclass
class BilinearScorer:
    M: Parameter
    b: Parameter


@dataclass
class ScoredPair:
    """A scored candidate with its gold label.

    probability may be a plain float (reporting, evaluation) or a 1x1 tensor
    still attached to the graph (training); bce_loss handles both.
    """

    probability: Union[Tensor2D, float]
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


def init_scorer(store: ParamStore, hidden: int, rng: np.random.Generator, noise: float = 0.01) -> BilinearScorer:
    """Register M = I + uniform(-noise, noise) and b = 0 under "scorer." names.

    The identity start makes initial logits behave like a raw dot product of
    the two encodings, which gives training a sane ordering from step one.
    """
    side = 2 * hidden
    m_data = np.eye(side) + rng.uniform(-noise, noise, (side, side))
    m = store.add("scorer.M", Tensor2D(m_data))
    b = store.add("scorer.b", Tensor2D([[0.0]]))
    return BilinearScorer(M=m, b=b)


def _check_vectors(q: Tensor2D, s: Tensor2D, scorer: BilinearScorer) -> None:
    side = scorer.M.value.rows
    if q.shape != (side, 1) or s.shape != (side, 1):
        raise DimensionError(
            f"scorer expects ({side}, 1) column vectors, got q={q.shape}, s={s.shape}"
        )


def relevance_logit(q: Tensor2D, s: Tensor2D, scorer: BilinearScorer) -> Tensor2D:
    """q^T M s + b as a 1x1 tensor. Ranking by this equals ranking by the
    probability (sigmoid is strictly increasing), so evaluation can skip the
    squash."""
    _check_vectors(q, s, scorer)
    return add(matmul(transpose(q), matmul(scorer.M.value, s)), scorer.b.value)


def relevance_prob(q: Tensor2D, s: Tensor2D, scorer: BilinearScorer) -> Tensor2D:
    """sigmoid(q^T M s + b) as a 1x1 tensor; call .item() for the float.

    Differentiable with respect to q, s, M and b.
    """
    return sigmoid(relevance_logit(q, s, scorer))


def bce_loss(pairs: Sequence[ScoredPair]) -> Tensor2D:
    """Mean of -[y ln p + (1-y) ln(1-p)] over the batch, as a 1x1 tensor.

    Probabilities are clamped to [PROB_FLOOR, 1 - PROB_FLOOR] so the loss is
    always finite.
    """
    if not pairs:
        raise EmptyInputError("bce_loss: empty batch")
    terms = []
    for sp in pairs:
        p = sp.probability
        if not isinstance(p, Tensor2D):
            p = Tensor2D([[float(p)]])
        if p.shape != (1, 1):
            raise DimensionError(f"bce_loss: probability must be 1x1, got {p.shape}")
        p = clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
        terms.append(log(p) if sp.label == 1 else log(affine(p, -1.0, 1.0)))
    return affine(mean_all(stack_rows(terms)), -1.0, 0.0)

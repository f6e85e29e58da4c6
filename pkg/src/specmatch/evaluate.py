"""Ranking inference, MRR/accuracy, and the transfer experiment grid.

A "group" is one question with all its candidate specifications; metrics are
means over groups of functions of the correct candidate's 1-based rank.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import QAPair, restrict_positive_fraction
from .errors import DataFormatError, EmptyInputError
from .scorer import relevance_prob
from .tensor import no_grad


@dataclass
class RankedCandidate:
    text: str
    probability: float
    original_index: int


@dataclass
class QueryRanking:
    group_id: str
    candidates: list[RankedCandidate]  # descending probability, ties in input order
    correct_rank: int | None  # 1-based; None when no labels were supplied
    positive_count: int = 0


@dataclass
class EvalReport:
    mrr: float
    accuracy: float
    group_count: int
    multi_positive_groups: int = 0

    def to_json(self) -> dict:
        return {
            "mrr": self.mrr,
            "accuracy": self.accuracy,
            "group_count": self.group_count,
            "multi_positive_groups": self.multi_positive_groups,
        }


def _encode_cached(model, text: str, cache: dict | None):
    if cache is not None and text in cache:
        return cache[text]
    vec = model.encode(text)
    if cache is not None:
        cache[text] = vec
    return vec


def rank_candidates(
    model,
    question: str,
    candidates: Sequence[str],
    labels: Sequence[int] | None = None,
    group_id: str = "",
    cache: dict | None = None,
) -> QueryRanking:
    """Score every candidate against the question and sort descending.

    The question is encoded once; ties keep the original candidate order
    (stable sort). With labels, correct_rank is the rank of the positive
    candidate; if several are positive, the best-ranked one counts and
    positive_count records how many there were.
    """
    if not candidates:
        raise EmptyInputError(f"rank_candidates: no candidates for group {group_id!r}")
    with no_grad():
        q = _encode_cached(model, question, cache)
        probs = [
            relevance_prob(q, _encode_cached(model, cand, cache), model.scorer).item()
            for cand in candidates
        ]
    order = sorted(range(len(candidates)), key=lambda i: (-probs[i], i))
    ranked = [RankedCandidate(text=candidates[i], probability=probs[i], original_index=i) for i in order]

    correct_rank = None
    positive_count = 0
    if labels is not None:
        if len(labels) != len(candidates):
            raise DataFormatError(
                f"rank_candidates: {len(labels)} labels for {len(candidates)} candidates"
            )
        positive_count = sum(1 for y in labels if y == 1)
        if positive_count == 0:
            raise DataFormatError(f"group {group_id!r} has no positive candidate")
        correct_rank = min(r + 1 for r, i in enumerate(order) if labels[i] == 1)
    return QueryRanking(
        group_id=group_id,
        candidates=ranked,
        correct_rank=correct_rank,
        positive_count=positive_count,
    )


def _require_ranked(rankings: Sequence[QueryRanking], what: str) -> None:
    if not rankings:
        raise EmptyInputError(f"{what}: no rankings")
    for r in rankings:
        if r.correct_rank is None:
            raise DataFormatError(f"{what}: group {r.group_id!r} was ranked without labels")


def mrr(rankings: Sequence[QueryRanking]) -> float:
    """Mean over groups of 1 / rank of the correct candidate."""
    _require_ranked(rankings, "mrr")
    return float(sum(1.0 / r.correct_rank for r in rankings) / len(rankings))


def accuracy(rankings: Sequence[QueryRanking]) -> float:
    """Fraction of groups whose correct candidate sits at rank 1."""
    _require_ranked(rankings, "accuracy")
    return float(sum(1 for r in rankings if r.correct_rank == 1) / len(rankings))


def group_pairs(pairs: Sequence[QAPair]) -> list[tuple[str, str, list[str], list[int]]]:
    """(group_id, question, candidates, labels) per group, in first-seen order."""
    order: list[str] = []
    by_group: dict[str, list[QAPair]] = {}
    for p in pairs:
        if p.group_id not in by_group:
            order.append(p.group_id)
            by_group[p.group_id] = []
        by_group[p.group_id].append(p)
    out = []
    for gid in order:
        members = by_group[gid]
        questions = {m.question for m in members}
        if len(questions) != 1:
            raise DataFormatError(f"group {gid!r} mixes {len(questions)} different questions")
        out.append((gid, members[0].question, [m.candidate for m in members], [m.label for m in members]))
    return out


def evaluate_pairs(model, pairs: Sequence[QAPair]) -> EvalReport:
    """Group, rank, and reduce to MRR/accuracy. Encodings are cached per call
    (texts repeat heavily across a product's groups)."""
    if not pairs:
        raise EmptyInputError("evaluate_pairs: no pairs")
    cache: dict = {}
    rankings = []
    multi = 0
    for gid, question, candidates, labels in group_pairs(pairs):
        ranking = rank_candidates(model, question, candidates, labels, group_id=gid, cache=cache)
        if ranking.positive_count > 1:
            multi += 1
        rankings.append(ranking)
    return EvalReport(
        mrr=mrr(rankings),
        accuracy=accuracy(rankings),
        group_count=len(rankings),
        multi_positive_groups=multi,
    )


# ---------------------------------------------------------------------------
# experiment grid


@dataclass
class GridCell:
    pretrained: bool
    fraction: float
    mrr_mean: float
    mrr_std: float
    accuracy_mean: float
    accuracy_std: float
    per_seed: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "pretrained": self.pretrained,
            "fraction": self.fraction,
            "mrr_mean": self.mrr_mean,
            "mrr_std": self.mrr_std,
            "accuracy_mean": self.accuracy_mean,
            "accuracy_std": self.accuracy_std,
            "per_seed": self.per_seed,
        }


@dataclass
class GridResult:
    cells: list[GridCell]

    def to_json(self) -> dict:
        return {"cells": [c.to_json() for c in self.cells]}

    def cell(self, pretrained: bool, fraction: float) -> GridCell:
        for c in self.cells:
            if c.pretrained == pretrained and abs(c.fraction - fraction) < 1e-9:
                return c
        raise KeyError(f"no grid cell pretrained={pretrained} fraction={fraction}")

    def format_table(self) -> str:
        lines = [f"{'Pre-trained':<12} {'Fraction':<9} {'MRR':<17} {'Accuracy':<17}"]
        for c in self.cells:
            mrr_col = f"{c.mrr_mean:.4f} ± {c.mrr_std:.4f}"
            acc_col = f"{c.accuracy_mean:.4f} ± {c.accuracy_std:.4f}"
            lines.append(
                f"{'Yes' if c.pretrained else 'No':<12} {c.fraction:<9.2f} {mrr_col:<17} {acc_col:<17}"
            )
        return "\n".join(lines)


def run_experiment_grid(
    vocab,
    table,
    source: tuple[Sequence[QAPair], Sequence[QAPair]],
    target: tuple[Sequence[QAPair], Sequence[QAPair], Sequence[QAPair]],
    fractions: Sequence[float] = (0.10, 0.50, 1.00),
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    config=None,
    config_pre=None,
) -> GridResult:
    """The transfer table: {from scratch, pretrained} x fraction, over seeds.

    Each cell restricts the target training positives to `fraction`, trains
    either from scratch or from a source-pretrained checkpoint, and scores
    the held-out target test split. Rows come out grouped by arm (all
    from-scratch rows first), fractions ascending. Pretraining runs once per
    seed and is reused across fractions. Mean/stddev are over seeds
    (population stddev).
    """
    # the grid drives training, but train.fit also evaluates dev MRR here;
    # importing lazily keeps the module dependency one-directional
    from .train import TrainConfig, apply_checkpoint, build_model, fit

    config = config or TrainConfig()
    config_pre = config_pre or config
    source_train, source_dev = source
    target_train, target_dev, target_test = target

    pretrained_params: dict[int, dict] = {}

    def pretrain(seed: int) -> dict:
        if seed not in pretrained_params:
            cfg = replace(config_pre, seed=seed)
            model = build_model(cfg, vocab, table)
            ckpt = fit(model, list(source_train), list(source_dev), cfg)
            pretrained_params[seed] = ckpt.params
        return pretrained_params[seed]

    cells = []
    for pretrained in (False, True):
        for fraction in fractions:
            rows = []
            for seed in seeds:
                cfg = replace(config, seed=seed)
                restricted = restrict_positive_fraction(list(target_train), fraction, seed=seed)
                model = build_model(cfg, vocab, table)
                if pretrained:
                    apply_checkpoint(model, pretrain(seed))
                fit(model, restricted, list(target_dev), cfg)
                report = evaluate_pairs(model, list(target_test))
                rows.append({"seed": seed, "mrr": report.mrr, "accuracy": report.accuracy})
            mrrs = np.array([r["mrr"] for r in rows])
            accs = np.array([r["accuracy"] for r in rows])
            cells.append(
                GridCell(
                    pretrained=pretrained,
                    fraction=float(fraction),
                    mrr_mean=float(mrrs.mean()),
                    mrr_std=float(mrrs.std()),
                    accuracy_mean=float(accs.mean()),
                    accuracy_std=float(accs.std()),
                    per_seed=rows,
                )
            )
    return GridResult(cells=cells)

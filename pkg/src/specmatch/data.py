"""Corpus engineering: CQA filtering, negative sampling, spec-pair generation,
product-disjoint splitting, and JSONL interchange.

The filter applies five rules in a fixed order, each record charged to the
first rule it violates:

    1. question or answer contains a URL
    2. question shorter than min_question_tokens
    3. answer shorter than min_answer_tokens
    4. question or answer longer than the configured maxima
    5. answer contains a blacklisted non-answer phrase

Token counts come from the shared tokenizer; rule 5 matches phrases
case-insensitively against the raw answer string.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DataFormatError,
    InsufficientDataError,
    ReferentialIntegrityError,
    SchemaError,
)
from .text import tokenize

_URL_MARKERS = ("http://", "https://", "www.")


@dataclass
class CQARecord:
    question: str
    answer: str
    product_id: str | None = None
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, obj: dict, source: str) -> "CQARecord":
        rest = dict(obj)
        try:
            question = rest.pop("question")
            answer = rest.pop("answer")
        except KeyError as e:
            raise SchemaError(f"{source}: missing required field {e.args[0]!r}") from None
        if not isinstance(question, str) or not isinstance(answer, str):
            raise SchemaError(f"{source}: 'question' and 'answer' must be strings")
        product_id = rest.pop("product_id", None)
        if product_id is not None and not isinstance(product_id, str):
            raise SchemaError(f"{source}: 'product_id' must be a string")
        return cls(question=question, answer=answer, product_id=product_id, extras=rest)

    def to_json(self) -> dict:
        obj = {"question": self.question, "answer": self.answer}
        if self.product_id is not None:
            obj["product_id"] = self.product_id
        obj.update(self.extras)
        return obj


@dataclass
class SpecProduct:
    product_id: str
    category: str
    specs: list[tuple[str, str]]

    def spec_names(self) -> list[str]:
        return [name for name, _ in self.specs]

    @classmethod
    def from_json(cls, obj: dict, source: str) -> "SpecProduct":
        for key in ("product_id", "category", "specs"):
            if key not in obj:
                raise SchemaError(f"{source}: missing required field {key!r}")
        raw_specs = obj["specs"]
        if not isinstance(raw_specs, list):
            raise SchemaError(f"{source}: 'specs' must be a list")
        specs = []
        seen = set()
        for entry in raw_specs:
            if not isinstance(entry, dict) or "name" not in entry or "value" not in entry:
                raise SchemaError(f"{source}: each spec needs 'name' and 'value'")
            name = str(entry["name"])
            if name in seen:
                raise DataFormatError(f"{source}: duplicate spec name {name!r}")
            seen.add(name)
            specs.append((name, str(entry["value"])))
        return cls(product_id=str(obj["product_id"]), category=str(obj["category"]), specs=specs)

    def to_json(self) -> dict:
        return {
            "product_id": self.product_id,
            "category": self.category,
            "specs": [{"name": n, "value": v} for n, v in self.specs],
        }


@dataclass
class QAPair:
    question: str
    candidate: str
    label: int
    group_id: str
    product_id: str | None = None
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, obj: dict, source: str) -> "QAPair":
        rest = dict(obj)
        try:
            question = rest.pop("question")
            candidate = rest.pop("candidate")
            label = rest.pop("label")
            group_id = rest.pop("group_id")
        except KeyError as e:
            raise SchemaError(f"{source}: missing required field {e.args[0]!r}") from None
        if label not in (0, 1):
            raise SchemaError(f"{source}: 'label' must be 0 or 1, got {label!r}")
        product_id = rest.pop("product_id", None)
        return cls(
            question=str(question),
            candidate=str(candidate),
            label=int(label),
            group_id=str(group_id),
            product_id=None if product_id is None else str(product_id),
            extras=rest,
        )

    def to_json(self) -> dict:
        obj = {
            "question": self.question,
            "candidate": self.candidate,
            "label": self.label,
            "group_id": self.group_id,
        }
        if self.product_id is not None:
            obj["product_id"] = self.product_id
        obj.update(self.extras)
        return obj


@dataclass
class FilterConfig:
    min_question_tokens: int = 4
    min_answer_tokens: int = 10
    max_question_tokens: int = 30
    max_answer_tokens: int = 50
    blacklist: tuple[str, ...] = ("i have no idea", "i am not sure")

    def to_json(self) -> dict:
        return {
            "min_question_tokens": self.min_question_tokens,
            "min_answer_tokens": self.min_answer_tokens,
            "max_question_tokens": self.max_question_tokens,
            "max_answer_tokens": self.max_answer_tokens,
            "blacklist": list(self.blacklist),
        }


@dataclass
class FilterReport:
    input_count: int
    removed_by_rule: dict[int, int]
    sampled_negatives: int
    output_positive: int
    output_negative: int
    config: FilterConfig

    def to_json(self) -> dict:
        return {
            "input_count": self.input_count,
            "removed_by_rule": {str(r): self.removed_by_rule[r] for r in sorted(self.removed_by_rule)},
            "sampled_negatives": self.sampled_negatives,
            "output_positive": self.output_positive,
            "output_negative": self.output_negative,
            "config": self.config.to_json(),
        }


def _contains_url(text: str) -> bool:
    low = text.lower()
    return any(marker in low for marker in _URL_MARKERS)


def _first_violated_rule(rec: CQARecord, config: FilterConfig) -> int | None:
    if _contains_url(rec.question) or _contains_url(rec.answer):
        return 1
    q_tokens = tokenize(rec.question)
    if len(q_tokens) < config.min_question_tokens:
        return 2
    a_tokens = tokenize(rec.answer)
    if len(a_tokens) < config.min_answer_tokens:
        return 3
    if len(q_tokens) > config.max_question_tokens or len(a_tokens) > config.max_answer_tokens:
        return 4
    low = rec.answer.lower()
    if any(phrase in low for phrase in config.blacklist):
        return 5
    return None


def filter_cqa(
    records: Sequence[CQARecord], config: FilterConfig | None = None
) -> tuple[list[CQARecord], FilterReport]:
    """Drop records violating the five filter rules, charging each removal to
    the first rule that fires. Counters always reconcile:
    input_count - sum(removed) == output_positive."""
    config = config or FilterConfig()
    removed = {r: 0 for r in range(1, 6)}
    survivors = []
    for rec in records:
        rule = _first_violated_rule(rec, config)
        if rule is None:
            survivors.append(rec)
        else:
            removed[rule] += 1
    report = FilterReport(
        input_count=len(records),
        removed_by_rule=removed,
        sampled_negatives=0,
        output_positive=len(survivors),
        output_negative=0,
        config=config,
    )
    return survivors, report


def sample_negatives(
    records: Sequence[CQARecord], negatives_per_question: int = 1, seed: int = 0
) -> list[QAPair]:
    """Emit one positive pair per record plus k seeded uniform negatives drawn
    from other questions' answers.

    A negative is never the question's own answer and never repeats within
    the group. Each record's draws come from an rng keyed by (seed, record
    index), so the output is deterministic and independent of any batching.
    """
    if negatives_per_question < 0:
        raise ConfigError(f"negatives_per_question must be >= 0, got {negatives_per_question}")
    records = list(records)
    if negatives_per_question > 0 and len({r.question for r in records}) < 2:
        raise InsufficientDataError(
            "negative sampling needs at least 2 distinct questions, "
            f"got {len({r.question for r in records})}"
        )
    pairs: list[QAPair] = []
    n = len(records)
    for i, rec in enumerate(records):
        group = f"q{i}"
        pairs.append(
            QAPair(
                question=rec.question,
                candidate=rec.answer,
                label=1,
                group_id=group,
                product_id=rec.product_id,
            )
        )
        if negatives_per_question == 0:
            continue
        rng = np.random.default_rng([seed, i])
        taken = {rec.answer}
        found = 0
        attempts = 0
        budget = 200 * negatives_per_question + 200
        while found < negatives_per_question:
            attempts += 1
            if attempts > budget:
                raise InsufficientDataError(
                    f"could not draw {negatives_per_question} distinct negatives "
                    f"for question {rec.question!r}"
                )
            j = int(rng.integers(0, n))
            other = records[j]
            if other.question == rec.question or other.answer in taken:
                continue
            taken.add(other.answer)
            found += 1
            pairs.append(
                QAPair(
                    question=rec.question,
                    candidate=other.answer,
                    label=0,
                    group_id=group,
                    product_id=rec.product_id,
                )
            )
    return pairs


def generate_spec_pairs(
    product: SpecProduct, questions: Sequence[tuple[str, str]]
) -> list[QAPair]:
    """Cross every question with every spec name of the product.

    With h specs and k questions this yields h*k pairs of which exactly k
    are positive (one per question). group_id = product_id + question index.
    """
    names = product.spec_names()
    name_set = set(names)
    pairs = []
    for qi, (question, correct) in enumerate(questions):
        if correct not in name_set:
            raise ReferentialIntegrityError(
                f"question {question!r}: correct spec {correct!r} is not among "
                f"the specs of product {product.product_id}"
            )
        group = f"{product.product_id}#{qi}"
        for name in names:
            pairs.append(
                QAPair(
                    question=question,
                    candidate=name,
                    label=int(name == correct),
                    group_id=group,
                    product_id=product.product_id,
                )
            )
    return pairs


def split_by_product(
    pairs: Sequence[QAPair],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[list[QAPair], list[QAPair], list[QAPair]]:
    """Partition whole products into train/dev/test, disjoint by construction.

    Products are shuffled by the seed, then cut where the cumulative positive
    count comes closest to the requested ratios. Pairs keep their input order
    within each split.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    product_order: list[str] = []
    seen = set()
    positives: dict[str, int] = {}
    for p in pairs:
        if p.product_id is None:
            raise SchemaError(f"split_by_product: pair in group {p.group_id!r} has no product_id")
        if p.product_id not in seen:
            seen.add(p.product_id)
            product_order.append(p.product_id)
            positives[p.product_id] = 0
        if p.label == 1:
            positives[p.product_id] += 1
    if len(product_order) < 3:
        raise InsufficientDataError(
            f"need at least 3 products to split, got {len(product_order)}"
        )
    rng = np.random.default_rng(seed)
    shuffled = [product_order[i] for i in rng.permutation(len(product_order))]
    counts = np.array([positives[pid] for pid in shuffled], dtype=np.float64)
    cum = np.cumsum(counts)
    total = cum[-1]
    n = len(shuffled)
    first = int(np.argmin(np.abs(cum - ratios[0] * total)))
    first = min(max(first, 0), n - 3)
    second = int(np.argmin(np.abs(cum - (ratios[0] + ratios[1]) * total)))
    second = min(max(second, first + 1), n - 2)
    train_ids = set(shuffled[: first + 1])
    dev_ids = set(shuffled[first + 1 : second + 1])
    train = [p for p in pairs if p.product_id in train_ids]
    dev = [p for p in pairs if p.product_id in dev_ids]
    test = [p for p in pairs if p.product_id not in train_ids and p.product_id not in dev_ids]
    return train, dev, test


def restrict_positive_fraction(
    train_pairs: Sequence[QAPair], fraction: float, seed: int = 0
) -> list[QAPair]:
    """Keep a seeded sample of ceil(fraction * #positives) positive pairs and
    the complete candidate groups they belong to; drop every other group."""
    if not (0.0 < fraction <= 1.0):
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return list(train_pairs)
    positive_groups = [p.group_id for p in train_pairs if p.label == 1]
    keep_n = math.ceil(fraction * len(positive_groups))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(positive_groups), size=keep_n, replace=False)
    kept = {positive_groups[int(c)] for c in chosen}
    return [p for p in train_pairs if p.group_id in kept]


def preprocess_cqa(
    records: Sequence[CQARecord],
    config: FilterConfig | None = None,
    negatives_per_question: int = 1,
    seed: int = 0,
) -> tuple[list[QAPair], FilterReport]:
    """filter_cqa followed by sample_negatives, with the report's sampling
    counters filled in."""
    survivors, report = filter_cqa(records, config)
    pairs = sample_negatives(survivors, negatives_per_question, seed)
    negatives = sum(1 for p in pairs if p.label == 0)
    report.sampled_negatives = negatives
    report.output_negative = negatives
    return pairs, report


def load_jsonl(path, schema) -> list:
    """Read one `schema` object per line (schema is one of the dataclasses
    above, dispatched via its from_json). Whitespace-only lines are skipped;
    anything else malformed raises with its line number."""
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            source = f"{path}: line {lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataFormatError(f"{source}: invalid JSON: {e.msg}") from None
            if not isinstance(obj, dict):
                raise DataFormatError(f"{source}: expected a JSON object")
            items.append(schema.from_json(obj, source=source))
    return items


def save_jsonl(path, items: Iterable) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item.to_json(), ensure_ascii=False) + "\n")


def index_catalog(products: Sequence[SpecProduct]) -> dict[str, SpecProduct]:
    """product_id -> product, rejecting duplicate ids."""
    index: dict[str, SpecProduct] = {}
    for prod in products:
        if prod.product_id in index:
            raise ReferentialIntegrityError(f"duplicate product_id {prod.product_id!r} in catalog")
        index[prod.product_id] = prod
    return index

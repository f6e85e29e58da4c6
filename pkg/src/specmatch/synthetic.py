"""Deterministic synthetic corpora with a learnable lexical structure.

Every generated question names exactly one keyword; the matching answer or
specification contains that keyword, everything else is filler. A scorer
that learns "shared keyword means relevant" can solve these datasets, which
makes them suitable for end-to-end training tests and the transfer
experiments: the source Q/A corpus and the target catalog draw from the
same keyword inventory, so what pretraining learns carries over.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    CQARecord,
    QAPair,
    SpecProduct,
    generate_spec_pairs,
    preprocess_cqa,
    split_by_product,
)
from .text import EmbeddingTable, Vocabulary, load_embeddings, tokenize

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
_FILLERS = [
    "unit", "item", "model", "box", "frame", "panel", "piece", "shell",
    "edge", "base", "core", "grip", "lid", "knob", "vent", "coil",
]


def keyword_inventory(count: int) -> list[str]:
    """Distinct pronounceable keywords ("bada", "bede", ...), deterministic."""
    syllables = [c + v for c in _CONSONANTS for v in _VOWELS]
    words = []
    i = 0
    while len(words) < count:
        word = syllables[i % len(syllables)] + syllables[(i * 7 + 3) % len(syllables)]
        if word not in words:
            words.append(word)
        i += 1
    return words


def source_corpus(keywords: list[str], n_records: int, seed: int = 0) -> list[CQARecord]:
    """CQA-style records: the question asks about one keyword, the answer
    repeats that keyword inside filler long enough to clear the length
    filters."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_records):
        kw = keywords[int(rng.integers(0, len(keywords)))]
        noun = _FILLERS[int(rng.integers(0, len(_FILLERS)))]
        extra = _FILLERS[int(rng.integers(0, len(_FILLERS)))]
        value = int(rng.integers(1, 500))
        question = f"what {kw} does the {noun} have"
        answer = (
            f"the {noun} has a {kw} value of {value} which suits the {extra} quite well"
        )
        records.append(CQARecord(question=question, answer=answer, product_id=None))
    return records


def target_catalog(
    keywords: list[str], n_products: int, specs_per_product: int, seed: int = 0
) -> list[SpecProduct]:
    """Products whose spec names are "<keyword> rating"; each product draws a
    distinct keyword subset."""
    rng = np.random.default_rng(seed)
    categories = ("Appliances", "Electronics", "Hardware", "Fixtures")
    products = []
    for i in range(n_products):
        picks = rng.choice(len(keywords), size=specs_per_product, replace=False)
        specs = [(f"{keywords[int(k)]} rating", str(int(rng.integers(1, 100)))) for k in picks]
        products.append(
            SpecProduct(
                product_id=f"syn{i:05d}",
                category=categories[i % len(categories)],
                specs=specs,
            )
        )
    return products


def question_for_spec(spec_name: str) -> str:
    """The natural question for a spec name: its head words, lowercased,
    parentheticals dropped ("Wattage (watts)" -> "What is the wattage?")."""
    core = spec_name.split("(")[0].strip().lower()
    return f"What is the {core}?"


def catalog_pairs(products: list[SpecProduct]) -> list[QAPair]:
    """One question per spec of every product, crossed with all its specs."""
    pairs = []
    for product in products:
        questions = [(question_for_spec(name), name) for name, _ in product.specs]
        pairs.extend(generate_spec_pairs(product, questions))
    return pairs


def write_embedding_file(path, tokens: list[str], dim: int, seed: int = 0) -> None:
    """GloVe-style text embeddings for the given vocabulary, seeded."""
    rng = np.random.default_rng(seed)
    with open(path, "w", encoding="utf-8") as fh:
        for tok in tokens:
            vec = rng.normal(scale=0.4, size=dim)
            fh.write(tok + " " + " ".join(f"{v:.6f}" for v in vec) + "\n")


def collect_tokens(*text_groups) -> list[str]:
    """Sorted union of the tokens in every string of every group."""
    seen = set()
    for group in text_groups:
        for text in group:
            seen.update(tokenize(text))
    return sorted(seen)


@dataclass
class World:
    vocab: Vocabulary
    table: EmbeddingTable
    embeddings_path: str
    source_train: list[QAPair]
    source_dev: list[QAPair]
    target_train: list[QAPair]
    target_dev: list[QAPair]
    target_test: list[QAPair]
    catalog: list[SpecProduct]


def build_world(
    out_dir,
    seed: int = 0,
    n_keywords: int = 60,
    n_source_records: int = 5000,
    n_products: int = 48,
    specs_per_product: int = 5,
    dim: int = 16,
) -> World:
    """Generate source corpus, target catalog, splits, and an embedding file
    under out_dir. Fully determined by the arguments."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    keywords = keyword_inventory(n_keywords)
    records = source_corpus(keywords, n_source_records, seed=seed)
    source_pairs, _ = preprocess_cqa(records, negatives_per_question=1, seed=seed)
    # source corpus has no product ids; hold out a question-disjoint tail as dev
    groups = []
    for p in source_pairs:
        if not groups or groups[-1][0] != p.group_id:
            groups.append((p.group_id, []))
        groups[-1][1].append(p)
    cut = max(1, int(len(groups) * 0.9))
    source_train = [p for _, members in groups[:cut] for p in members]
    source_dev = [p for _, members in groups[cut:] for p in members]

    catalog = target_catalog(keywords, n_products, specs_per_product, seed=seed)
    pairs = catalog_pairs(catalog)
    target_train, target_dev, target_test = split_by_product(pairs, (0.8, 0.1, 0.1), seed=seed)

    texts = (
        [p.question for p in source_pairs]
        + [p.candidate for p in source_pairs]
        + [p.question for p in pairs]
        + [p.candidate for p in pairs]
    )
    tokens = collect_tokens(texts)
    emb_path = out_dir / "embeddings.txt"
    write_embedding_file(emb_path, tokens, dim, seed=seed)
    vocab, table = load_embeddings(emb_path)
    return World(
        vocab=vocab,
        table=table,
        embeddings_path=str(emb_path),
        source_train=source_train,
        source_dev=source_dev,
        target_train=target_train,
        target_dev=target_dev,
        target_test=target_test,
        catalog=catalog,
    )


def demo_catalog() -> list[SpecProduct]:
    """A small home-improvement catalog for the demo service and UI."""
    return [
        SpecProduct(
            product_id="207025690",
            category="Microwaves",
            specs=[
                ("Wattage (watts)", "950"),
                ("Capacity (cu. ft.)", "1.6"),
                ("Turntable", "Yes"),
                ("Product Width (in.)", "21.8"),
                ("Color/Finish", "Stainless Steel"),
            ],
        ),
        SpecProduct(
            product_id="205209621",
            category="Refrigerators",
            specs=[
                ("Total Capacity (cu. ft.)", "25.0"),
                ("Ice Maker", "Yes"),
                ("Depth (in.)", "35.5"),
                ("Noise Level (dBA)", "42"),
                ("Energy Star Certified", "Yes"),
            ],
        ),
        SpecProduct(
            product_id="301688014",
            category="Smart TVs",
            specs=[
                ("Screen Size (In.)", "55"),
                ("Resolution", "4K UHD"),
                ("Refresh Rate (Hz)", "120"),
                ("HDMI Ports", "4"),
                ("Weight (lb.)", "38.1"),
            ],
        ),
        SpecProduct(
            product_id="205867752",
            category="Electric Ranges",
            specs=[
                ("Oven Capacity (cu. ft.)", "5.3"),
                ("Number of Burners", "4"),
                ("Self Cleaning", "Yes"),
                ("Product Height (in.)", "47"),
                ("Amperage (amps)", "40"),
            ],
        ),
    ]

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specmatch.data import (
    CQARecord,
    FilterConfig,
    QAPair,
    SpecProduct,
    filter_cqa,
    generate_spec_pairs,
    index_catalog,
    load_jsonl,
    preprocess_cqa,
    restrict_positive_fraction,
    sample_negatives,
    save_jsonl,
    split_by_product,
)
from specmatch.errors import (
    ConfigError,
    DataFormatError,
    InsufficientDataError,
    ReferentialIntegrityError,
    SchemaError,
)


def rec(question, answer, product_id=None):
    return CQARecord(question=question, answer=answer, product_id=product_id)


def words(n, stem="word"):
    return " ".join(f"{stem}{i}" for i in range(n))


GOOD_Q = "how many watts does this use"  # 6 tokens
GOOD_A = words(12)


# ---------------------------------------------------------------------------
# filtering


def test_rule1_urls_case_insensitive_in_either_field():
    records = [
        rec("see HTTP://example.com for details please", GOOD_A),
        rec(GOOD_Q, "check WWW.Example.com " + GOOD_A),
        rec(GOOD_Q, "go to https://shop.test then " + GOOD_A),
    ]
    out, report = filter_cqa(records)
    assert out == []
    assert report.removed_by_rule[1] == 3


def test_rule2_short_question():
    out, report = filter_cqa([rec("Waterproof?", GOOD_A)])
    assert out == []
    assert report.removed_by_rule == {1: 0, 2: 1, 3: 0, 4: 0, 5: 0}


def test_rule2_boundary_four_tokens_passes():
    out, _ = filter_cqa([rec("is it waterproof enough", GOOD_A)])
    assert len(out) == 1


def test_rule3_short_answer():
    out, report = filter_cqa([rec(GOOD_Q, "Yes")])
    assert out == []
    assert report.removed_by_rule[3] == 1
    # exactly ten tokens is enough
    out, _ = filter_cqa([rec(GOOD_Q, words(10))])
    assert len(out) == 1


def test_rule4_overlong_sides():
    out, report = filter_cqa([rec(words(31), GOOD_A), rec(GOOD_Q, words(51))])
    assert out == []
    assert report.removed_by_rule[4] == 2
    out, _ = filter_cqa([rec(words(30), words(50))])
    assert len(out) == 1


def test_rule5_blacklist_on_raw_string():
    kept_tail = "but it looks sturdy to me anyway and should be fine."
    out, report = filter_cqa([rec(GOOD_Q, "I have no idea " + kept_tail)])
    assert out == []
    assert report.removed_by_rule[5] == 1
    out, report = filter_cqa([rec(GOOD_Q, "I AM NOT SURE " + kept_tail)])
    assert report.removed_by_rule[5] == 1


def test_rules_apply_in_order_first_match_charges():
    # violates rule 1 (URL) and rule 2 (short); must be charged to rule 1
    out, report = filter_cqa([rec("www.x.com?", GOOD_A)])
    assert report.removed_by_rule[1] == 1
    assert report.removed_by_rule[2] == 0
    # violates rules 3 and 5; charged to 3
    out, report = filter_cqa([rec(GOOD_Q, "i have no idea")])
    assert report.removed_by_rule[3] == 1
    assert report.removed_by_rule[5] == 0


def test_filter_thresholds_configurable():
    config = FilterConfig(min_question_tokens=2, min_answer_tokens=3, blacklist=("maybe",))
    out, report = filter_cqa([rec("Waterproof ?", "it is maybe fine")], config)
    assert report.removed_by_rule == {1: 0, 2: 0, 3: 0, 4: 0, 5: 1}
    out, _ = filter_cqa([rec("Waterproof ?", "yes very fine")], config)
    assert len(out) == 1


@given(
    st.lists(
        st.tuples(
            st.text(alphabet="abc ?.w", max_size=40),
            st.text(alphabet="xyz .", max_size=60),
        ),
        max_size=30,
    )
)
@settings(max_examples=60, deadline=None)
def test_filter_counters_always_reconcile(pairs):
    records = [rec(q if q else "q", a if a else "a") for q, a in pairs]
    out, report = filter_cqa(records)
    assert report.input_count == len(records)
    assert report.input_count - sum(report.removed_by_rule.values()) == report.output_positive
    assert report.output_positive == len(out)


# ---------------------------------------------------------------------------
# negative sampling


def two_records():
    return [rec("how big is the oven inside", words(11, "a")), rec("does the door swing left", words(11, "b"))]


def test_two_records_forced_negatives():
    pairs = sample_negatives(two_records(), negatives_per_question=1, seed=5)
    assert len(pairs) == 4
    by_group = {}
    for p in pairs:
        by_group.setdefault(p.group_id, []).append(p)
    assert sorted(len(v) for v in by_group.values()) == [2, 2]
    g0 = by_group["q0"]
    assert g0[0].label == 1 and g0[0].candidate == words(11, "a")
    assert g0[1].label == 0 and g0[1].candidate == words(11, "b")


def test_zero_negatives_gives_positives_only():
    pairs = sample_negatives(two_records(), negatives_per_question=0, seed=0)
    assert [p.label for p in pairs] == [1, 1]


def test_negative_sampling_needs_two_distinct_questions():
    same = [rec("what color is it really", words(10, "a")), rec("what color is it really", words(10, "b"))]
    with pytest.raises(InsufficientDataError):
        sample_negatives(same, negatives_per_question=1, seed=0)
    # harmless when no negatives requested
    assert len(sample_negatives(same, negatives_per_question=0, seed=0)) == 2


def test_never_own_answer_and_no_duplicates_in_group():
    records = [rec(f"question number {i} asks something", f"answer text {i} " + words(9)) for i in range(30)]
    for seed in range(25):
        pairs = sample_negatives(records, negatives_per_question=3, seed=seed)
        groups = {}
        for p in pairs:
            groups.setdefault(p.group_id, []).append(p)
        for gid, members in groups.items():
            own = next(p.candidate for p in members if p.label == 1)
            negs = [p.candidate for p in members if p.label == 0]
            assert len(negs) == 3
            assert own not in negs
            assert len(set(negs)) == len(negs)


def test_sampling_deterministic_in_seed():
    records = [rec(f"question {i} about the part", words(10, f"s{i}")) for i in range(12)]
    a = sample_negatives(records, 2, seed=7)
    b = sample_negatives(records, 2, seed=7)
    c = sample_negatives(records, 2, seed=8)
    assert [(p.candidate, p.label) for p in a] == [(p.candidate, p.label) for p in b]
    assert [(p.candidate, p.label) for p in a] != [(p.candidate, p.label) for p in c]


def test_one_to_one_ratio_on_clean_corpus():
    records = [rec(f"question {i} about wattage draw", words(10, f"t{i}")) for i in range(300)]
    pairs = sample_negatives(records, 1, seed=3)
    pos = sum(p.label for p in pairs)
    neg = len(pairs) - pos
    assert pos == 300
    assert neg == 300


def test_preprocess_pipeline_report():
    records = two_records() + [rec("Waterproof?", GOOD_A), rec(GOOD_Q, "Yes")]
    pairs, report = preprocess_cqa(records, negatives_per_question=1, seed=1)
    assert report.input_count == 4
    assert report.output_positive == 2
    assert report.sampled_negatives == 2
    assert report.output_negative == 2
    assert report.input_count - sum(report.removed_by_rule.values()) == report.output_positive
    obj = report.to_json()
    assert obj["removed_by_rule"]["2"] == 1
    assert obj["removed_by_rule"]["3"] == 1
    assert obj["config"]["max_question_tokens"] == 30


# ---------------------------------------------------------------------------
# spec pair generation


def microwave():
    return SpecProduct(
        product_id="207025690",
        category="Microwaves",
        specs=[
            ("Wattage (watts)", "950"),
            ("Capacity (cu. ft.)", "1.6"),
            ("Color/Finish", "Stainless Steel"),
            ("Turntable", "Yes"),
        ],
    )


def test_cross_product_counts():
    pairs = generate_spec_pairs(
        microwave(),
        [("What is the wattage?", "Wattage (watts)"), ("Does it have a turntable?", "Turntable")],
    )
    assert len(pairs) == 8
    assert sum(p.label for p in pairs) == 2


def test_wattage_question_labels_wattage_spec():
    pairs = generate_spec_pairs(microwave(), [("What is the wattage?", "Wattage (watts)")])
    labeled = {p.candidate: p.label for p in pairs}
    assert labeled["Wattage (watts)"] == 1
    assert sum(labeled.values()) == 1
    assert all(p.group_id == "207025690#0" for p in pairs)
    assert all(p.product_id == "207025690" for p in pairs)


def test_single_spec_degenerate_case():
    prod = SpecProduct(product_id="p1", category="c", specs=[("Depth", "10")])
    pairs = generate_spec_pairs(prod, [("how deep is it", "Depth"), ("what depth", "Depth")])
    assert len(pairs) == 2
    assert all(p.label == 1 for p in pairs)


def test_unknown_spec_name_is_an_error_naming_the_question():
    with pytest.raises(ReferentialIntegrityError) as ei:
        generate_spec_pairs(microwave(), [("how loud is it", "Noise (dB)")])
    assert "how loud is it" in str(ei.value)


@given(st.integers(min_value=1, max_value=20), st.integers(min_value=1, max_value=20))
@settings(max_examples=60, deadline=None)
def test_h_times_k_law(h, k):
    prod = SpecProduct(product_id="p", category="c", specs=[(f"spec {i}", str(i)) for i in range(h)])
    rng = np.random.default_rng(h * 31 + k)
    questions = [(f"question {j}", f"spec {int(rng.integers(0, h))}") for j in range(k)]
    pairs = generate_spec_pairs(prod, questions)
    assert len(pairs) == h * k
    assert sum(p.label for p in pairs) == k
    groups = {}
    for p in pairs:
        groups.setdefault(p.group_id, []).append(p)
    assert len(groups) == k
    for members in groups.values():
        assert len(members) == h
        assert sum(p.label for p in members) == 1


# ---------------------------------------------------------------------------
# splitting


def catalog_pairs(n_products, groups_per_product=2, specs=4, seed=0):
    pairs = []
    rng = np.random.default_rng(seed)
    for i in range(n_products):
        prod = SpecProduct(
            product_id=f"prod{i:04d}",
            category="c",
            specs=[(f"spec {i}.{j}", "v") for j in range(specs)],
        )
        questions = [
            (f"question {i}.{g}", f"spec {i}.{int(rng.integers(0, specs))}")
            for g in range(groups_per_product)
        ]
        pairs.extend(generate_spec_pairs(prod, questions))
    return pairs


def split_product_sets(train, dev, test):
    return (
        {p.product_id for p in train},
        {p.product_id for p in dev},
        {p.product_id for p in test},
    )


def test_ten_equal_products_split_exactly():
    pairs = catalog_pairs(10)
    train, dev, test = split_by_product(pairs, (0.8, 0.1, 0.1), seed=4)
    a, b, c = split_product_sets(train, dev, test)
    assert (len(a), len(b), len(c)) == (8, 1, 1)


def test_disjointness_over_seeds():
    pairs = catalog_pairs(17, groups_per_product=3)
    for seed in range(30):
        train, dev, test = split_by_product(pairs, seed=seed)
        a, b, c = split_product_sets(train, dev, test)
        assert a & b == set() and a & c == set() and b & c == set()
        assert len(train) + len(dev) + len(test) == len(pairs)


def test_153_products_counting_oracle():
    pairs = catalog_pairs(153)
    for seed in (0, 11, 97):
        train, dev, test = split_by_product(pairs, (0.8, 0.1, 0.1), seed=seed)
        a, b, c = split_product_sets(train, dev, test)
        assert abs(len(a) - 122) <= 1
        assert abs(len(b) - 15) <= 1
        assert abs(len(c) - 16) <= 1


def test_split_is_seed_deterministic():
    pairs = catalog_pairs(12)
    first = split_by_product(pairs, seed=9)
    second = split_by_product(pairs, seed=9)
    for x, y in zip(first, second):
        assert [(p.group_id, p.candidate) for p in x] == [(p.group_id, p.candidate) for p in y]


def test_split_errors():
    with pytest.raises(InsufficientDataError):
        split_by_product(catalog_pairs(2), seed=0)
    with pytest.raises(ConfigError):
        split_by_product(catalog_pairs(5), ratios=(0.5, 0.2, 0.2), seed=0)
    no_pid = [QAPair(question="q", candidate="c", label=1, group_id="g")]
    with pytest.raises(SchemaError):
        split_by_product(no_pid * 5, seed=0)


# ---------------------------------------------------------------------------
# training-fraction restriction


def test_fraction_one_is_identity():
    pairs = catalog_pairs(6)
    assert restrict_positive_fraction(pairs, 1.0, seed=1) == pairs


def test_fraction_tenth_keeps_ten_complete_groups():
    prod_pairs = catalog_pairs(50, groups_per_product=2, specs=5)  # 100 groups
    kept = restrict_positive_fraction(prod_pairs, 0.10, seed=2)
    groups = {}
    for p in kept:
        groups.setdefault(p.group_id, []).append(p)
    assert len(groups) == 10
    for members in groups.values():
        assert len(members) == 5
        assert sum(p.label for p in members) == 1


def test_fraction_ceil_rounding_and_determinism():
    pairs = catalog_pairs(5, groups_per_product=3)  # 15 groups
    kept = restrict_positive_fraction(pairs, 0.5, seed=3)
    groups = {p.group_id for p in kept}
    assert len(groups) == 8  # ceil(0.5 * 15)
    again = restrict_positive_fraction(pairs, 0.5, seed=3)
    assert kept == again


def test_fraction_bounds_checked():
    pairs = catalog_pairs(4)
    with pytest.raises(ConfigError):
        restrict_positive_fraction(pairs, 0.0, seed=0)
    with pytest.raises(ConfigError):
        restrict_positive_fraction(pairs, 1.2, seed=0)


# ---------------------------------------------------------------------------
# JSONL interchange


def test_qa_pair_round_trip_preserves_extras(tmp_path):
    path = tmp_path / "pairs.jsonl"
    pairs = [
        QAPair(question="q1", candidate="c1", label=1, group_id="g1", product_id="p1"),
        QAPair(question="q2", candidate="c2", label=0, group_id="g1", extras={"note": "kept", "n": 3}),
    ]
    save_jsonl(path, pairs)
    back = load_jsonl(path, QAPair)
    assert back == pairs
    save_jsonl(path, back)
    assert load_jsonl(path, QAPair) == pairs


def test_catalog_round_trip(tmp_path):
    path = tmp_path / "catalog.jsonl"
    save_jsonl(path, [microwave()])
    back = load_jsonl(path, SpecProduct)
    assert back == [microwave()]


def test_cqa_round_trip_without_product_id(tmp_path):
    path = tmp_path / "cqa.jsonl"
    records = [rec("a question", "an answer"), rec("another", "thing", product_id="p9")]
    save_jsonl(path, records)
    assert load_jsonl(path, CQARecord) == records
    raw = path.read_text().splitlines()
    assert "product_id" not in json.loads(raw[0])


def test_malformed_line_reports_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"question": "q", "answer": "a"}\nnot json\n')
    with pytest.raises(DataFormatError) as ei:
        load_jsonl(path, CQARecord)
    assert "line 2" in str(ei.value)
    path.write_text("not json\n")
    with pytest.raises(DataFormatError) as ei:
        load_jsonl(path, CQARecord)
    assert "line 1" in str(ei.value)


def test_missing_field_names_the_field(tmp_path):
    path = tmp_path / "missing.jsonl"
    path.write_text('{"question": "only this"}\n')
    with pytest.raises(SchemaError) as ei:
        load_jsonl(path, CQARecord)
    assert "answer" in str(ei.value)
    path.write_text('{"question": "q", "candidate": "c", "label": 2, "group_id": "g"}\n')
    with pytest.raises(SchemaError) as ei:
        load_jsonl(path, QAPair)
    assert "label" in str(ei.value)


def test_non_object_line_rejected(tmp_path):
    path = tmp_path / "arr.jsonl"
    path.write_text("[1, 2]\n")
    with pytest.raises(DataFormatError):
        load_jsonl(path, CQARecord)


def test_blank_lines_skipped(tmp_path):
    path = tmp_path / "gaps.jsonl"
    path.write_text('{"question": "q", "answer": "a"}\n\n{"question": "r", "answer": "b"}\n')
    assert len(load_jsonl(path, CQARecord)) == 2


def test_duplicate_spec_name_rejected(tmp_path):
    path = tmp_path / "dup.jsonl"
    path.write_text(
        '{"product_id": "p", "category": "c", "specs": '
        '[{"name": "Depth", "value": "1"}, {"name": "Depth", "value": "2"}]}\n'
    )
    with pytest.raises(DataFormatError) as ei:
        load_jsonl(path, SpecProduct)
    assert "Depth" in str(ei.value)


def test_index_catalog_rejects_duplicate_products():
    with pytest.raises(ReferentialIntegrityError):
        index_catalog([microwave(), microwave()])
    idx = index_catalog([microwave()])
    assert idx["207025690"].category == "Microwaves"

"""Prints a one-line PASS/FAIL verdict per gate guarantee after the run.

The gate tests live in test_acceptance.py. Several test functions can back a
single guarantee; the guarantee fails if any of its tests failed or errored,
and is reported as SKIPPED when none of them ran (for example under -k).
"""

GATE_FILE = "test_acceptance.py"

GATE_GUARANTEES = [
    ("gradients match finite differences",
     ["test_full_model_gradients_match_finite_differences"]),
    ("ranking metrics match the brute-force oracle",
     ["test_ranking_metrics_match_brute_force_oracle", "test_hand_checked_metric_values"]),
    ("pretraining beats scratch on the synthetic transfer grid",
     ["test_pretraining_beats_scratch_on_synthetic_transfer"]),
    ("training reaches perfect accuracy on a small catalog",
     ["test_training_reaches_perfect_accuracy_on_small_catalog"]),
    ("filter rules match the hand-checked fixture and reconcile",
     ["test_filter_report_matches_hand_checked_fixture",
      "test_filter_counters_reconcile_on_fuzzed_corpora"]),
    ("spec pair generation yields h*k pairs with k positives",
     ["test_spec_pair_generation_counts"]),
    ("end-to-end runs reproduce byte-identically",
     ["test_end_to_end_runs_reproduce_byte_identically"]),
    ("product splits stay disjoint with counts near the ratios",
     ["test_product_splits_stay_disjoint", "test_split_counts_for_153_products"]),
]


def _base_name(nodeid):
    name = nodeid.split("::", 1)[1] if "::" in nodeid else nodeid
    return name.split("[", 1)[0]


def pytest_terminal_summary(terminalreporter):
    outcomes = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if GATE_FILE not in nodeid:
                continue
            name = _base_name(nodeid)
            worst = outcomes.get(name, "passed")
            if status in ("failed", "error") or worst in ("failed", "error"):
                outcomes[name] = "failed"
            else:
                outcomes[name] = "passed"
    if not outcomes:
        return
    terminalreporter.section("gate verdicts")
    for label, names in GATE_GUARANTEES:
        ran = [n for n in names if n in outcomes]
        if not ran:
            verdict = "SKIPPED"
        elif all(outcomes[n] == "passed" for n in ran) and len(ran) == len(names):
            verdict = "PASS"
        elif all(outcomes[n] == "passed" for n in ran):
            verdict = "PASS (partial run)"
        else:
            verdict = "FAIL"
        terminalreporter.write_line(f"{verdict:>18}  {label}")

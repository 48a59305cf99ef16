import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clap_uad.evaluation import (MISSING, EvalReport, EvaluationError, ScoredSet, auroc_bruteforce,
                                 compute_auroc, parse_json, render_report)


@pytest.mark.parametrize("scores,labels,expected", [
    ([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0], 1.0),
    ([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0], 0.0),
    ([0.5, 0.5], [1, 0], 0.5),
])
def test_auroc_examples(scores, labels, expected):
    assert compute_auroc(ScoredSet(scores, labels)) == expected


def test_auroc_single_class():
    with pytest.raises(EvaluationError):
        compute_auroc([0.1, 0.2], [1, 1])


def test_auroc_random_vs_bruteforce(rng):
    scores = np.round(rng.random(200), 2)  # rounding forces ties
    labels = rng.integers(0, 2, 200)
    assert compute_auroc(scores, labels) == auroc_bruteforce(scores, labels)


def test_auroc_matches_sklearn(rng):
    sklearn = pytest.importorskip("sklearn.metrics")
    scores = rng.integers(0, 10, 150).astype(float)
    labels = rng.integers(0, 2, 150)
    assert compute_auroc(scores, labels) == pytest.approx(sklearn.roc_auc_score(labels, scores), abs=1e-12)


labelled = st.integers(2, 60).flatmap(lambda n: st.tuples(
    st.lists(st.integers(-5, 5), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n),
)).filter(lambda t: 0 < sum(t[1]) < len(t[1]))


@settings(max_examples=200)
@given(labelled)
def test_auroc_properties(data):
    scores, labels = np.array(data[0], float), np.array(data[1])
    a = compute_auroc(scores, labels)
    assert abs(a - auroc_bruteforce(scores, labels)) <= 1e-12
    assert compute_auroc(np.exp(scores) * 3 + 1, labels) == a
    assert compute_auroc(-scores, 1 - labels) == a


def test_render_single():
    r = EvalReport("clap", {"synthetic": 0.9375})
    text = render_report(r)
    assert "CLAP" in text and text.count("93.75") == 2
    rows = render_report(r, "csv").strip().splitlines()
    assert rows == ["Strategy,synthetic,Average", "CLAP,93.75,93.75"]


def test_render_missing_cell():
    a = EvalReport("plp", {"brats": 0.7, "rsna": 0.6})
    b = EvalReport("clap", {"brats": 0.8})
    rows = render_report([a, b], "csv").strip().splitlines()
    assert rows[0] == "Strategy,brats,rsna,Average"
    assert rows[2] == f"CLAP,80.00,{MISSING},80.00"
    assert rows[1] == "PLP,70.00,60.00,65.00"


def test_json_roundtrip():
    reports = [EvalReport("clap", {"a": 0.75, "b": 0.5}, "abc", {"a": 1}),
               EvalReport("plp", {"a": 0.25})]
    text = render_report(reports, "json")
    assert parse_json(text) == reports
    assert json.loads(text)["reports"][0]["average"] == 0.625

import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from srocboot.data import (Correction, Dataset, Study2x2, expit, format_dataset, logit, outcomes_from_counts,
                           parse_dataset, to_outcomes)
from srocboot.errors import DataError

# logit(1/21) = ln(1/20), ln(25) at 30 digits (mpmath)
LOGIT_1_21 = -2.99573227355399099343522357614
LN_25 = 3.21887582486820074920151866645


def test_parse_single_row():
    d = parse_dataset("study,TP,FP,FN,TN\ns1,10,2,5,40")
    assert len(d) == 1
    s = d.studies[0]
    assert (s.label, s.tp, s.fp, s.fn, s.tn) == ("s1", 10, 2, 5, 40)
    assert s.n_a == 15 and s.n_b == 42
    assert s.test_group is None


def test_parse_negative_count_reports_line():
    with pytest.raises(DataError, match="negative count at line 2"):
        parse_dataset("study,TP,FP,FN,TN\ns1,-1,2,5,40\n")


@pytest.mark.parametrize("text, match", [
    ("", "empty file"),
    ("# only a comment\n\n", "empty file"),
    ("study,TP,FP,FN,TN\n", "empty file"),
    ("study,TP,FP,FN\ns1,1,2,3\n", "missing column"),
    ("study,TP,FP,FN,TN\ns1,1,2,3\n", "malformed row.*line 2"),
    ("study,TP,FP,FN,TN\ns1,1,2,3,4\ns1,1,2,3,4\n", "duplicate label.*line 3"),
    ("study,TP,FP,FN,TN\ns1,1.5,2,3,4\n", "non-integer.*line 2"),
    ("study,TP,FP,FN,TN\ns1,x,2,3,4\n", "non-integer.*line 2"),
    ("study,TP,FP,FN,TN\ns1,0,2,0,4\n", "no diseased.*line 2"),
])
def test_parse_errors(text, match):
    with pytest.raises(DataError, match=match):
        parse_dataset(text)


def test_parse_comments_groups_and_order():
    text = "# header comment\nstudy,TP,FP,FN,TN,test\nb,1,2,3,4,CT\n\n# mid\na,5,6,7,8,MRI\nc,9,1,2,3,CT\n"
    d = parse_dataset(io.StringIO(text))
    assert d.labels == ["b", "a", "c"]
    assert d.groups() == ["CT", "MRI"]
    assert d.select("CT").labels == ["b", "c"]
    with pytest.raises(DataError):
        d.select("LAG")


def test_format_round_trip(synthetic):
    assert parse_dataset(format_dataset(synthetic)).studies == synthetic.studies


def test_duplicate_labels_rejected():
    with pytest.raises(DataError, match="duplicate"):
        Dataset((Study2x2("a", 1, 1, 1, 1), Study2x2("a", 2, 2, 2, 2)))


def test_balanced_study_gives_zero_logit():
    out = outcomes_from_counts([[5, 3, 5, 7]])
    assert out.y_a[0] == 0.0
    assert out.s2_a[0] == pytest.approx(0.4, abs=1e-15)


def test_hand_arithmetic_example():
    out = outcomes_from_counts([[10, 2, 10, 40]])
    assert out.s2_a[0] == pytest.approx(0.2, abs=1e-15)
    assert out.y_b[0] == pytest.approx(LOGIT_1_21, abs=1e-12)
    assert out.s2_b[0] == pytest.approx(1 / 2 + 1 / 40, abs=1e-15)


def test_affected_studies_correction():
    out = outcomes_from_counts([[12, 3, 0, 30], [4, 5, 6, 7]], Correction.AFFECTED)
    # only the first study gets +0.5 in every cell
    assert out.y_a[0] == pytest.approx(LN_25, abs=1e-12)
    assert out.y_a[0] == pytest.approx(float(logit(12.5 / 13)), abs=1e-12)
    assert out.s2_a[0] == pytest.approx(1 / 12.5 + 1 / 0.5, abs=1e-14)
    assert out.s2_b[0] == pytest.approx(1 / 3.5 + 1 / 30.5, abs=1e-14)
    assert out.y_a[1] == pytest.approx(math.log(4 / 6), abs=1e-14)


def test_all_studies_correction():
    out = outcomes_from_counts([[4, 5, 6, 7]], Correction.ALL)
    assert out.y_a[0] == pytest.approx(math.log(4.5 / 6.5), abs=1e-14)


def test_policy_none_rejects_zero_cells():
    d = Dataset((Study2x2("a", 12, 3, 0, 30), Study2x2("b", 1, 1, 1, 1)))
    with pytest.raises(DataError, match="zero cell"):
        to_outcomes(d, "none")


def test_correction_aliases():
    assert Correction.parse("affected") is Correction.AFFECTED
    assert Correction.parse("all-studies") is Correction.ALL
    with pytest.raises(ValueError):
        Correction.parse("bogus")


counts = st.integers(min_value=0, max_value=500)


@given(counts, counts, counts, counts, st.sampled_from(list(Correction)))
def test_round_trip_expit_recovers_corrected_counts(tp, fp, fn, tn, policy):
    if tp + fn == 0 or fp + tn == 0:
        return
    if policy is Correction.NONE and min(tp, fp, fn, tn) == 0:
        return
    out = outcomes_from_counts([[tp, fp, fn, tn]], policy)
    add = 0.5 if policy is Correction.ALL or (policy is Correction.AFFECTED and min(tp, fp, fn, tn) == 0) else 0.0
    n_a, n_b = tp + fn + 2 * add, fp + tn + 2 * add
    assert float(expit(out.y_a[0])) * n_a == pytest.approx(tp + add, rel=1e-12, abs=1e-12)
    assert float(expit(out.y_b[0])) * n_b == pytest.approx(fp + add, rel=1e-12, abs=1e-12)


@given(st.integers(1, 300), st.integers(1, 300), st.integers(1, 50))
def test_logit_increases_with_tp(tp, fn, step):
    lo = outcomes_from_counts([[tp, 3, fn, 9]])
    hi = outcomes_from_counts([[tp + step, 3, fn, 9]])
    assert hi.y_a[0] > lo.y_a[0]


def test_none_and_affected_agree_without_zero_cells(synthetic):
    assert min(min(s.tp, s.fp, s.fn, s.tn) for s in synthetic) > 0
    a = to_outcomes(synthetic, "affected")
    b = to_outcomes(synthetic, "none")
    for k in ("y_a", "y_b", "s2_a", "s2_b"):
        np.testing.assert_array_equal(getattr(a, k), getattr(b, k))


def test_outcome_set_preserves_order_and_length(synthetic):
    out = to_outcomes(synthetic)
    assert len(out) == len(synthetic)
    assert list(out.labels) == synthetic.labels
    assert len(out.outcomes) == len(synthetic)
    assert out.drop(0).labels == tuple(synthetic.labels[1:])

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fitprint.verification import (ber, binarize, decide, false_alarm_prob, log_tail, solve_threshold,
                                   tail_exact, timestamp_status)


def brute_tail(k: int, d_max: int) -> Fraction:
    hits = sum(1 for bits in itertools.product((0, 1), repeat=k) if sum(bits) <= d_max)
    return Fraction(hits, 2 ** k)


def test_threshold_for_256_bits():
    tau = solve_threshold(256, 1e-9)
    assert tau == 80 / 256
    assert abs(tau - 0.316) <= 1 / 256


def test_threshold_alternative_values():
    assert solve_threshold(64, 1e-9) == 8 / 64
    assert solve_threshold(4, 0.35) == 0.25


def test_threshold_is_largest_admissible():
    k, kappa = 256, 1e-9
    d = round(solve_threshold(k, kappa) * k)
    assert tail_exact(k, d) <= Fraction(kappa)
    assert tail_exact(k, d + 1) > Fraction(kappa)


def test_unachievable_kappa():
    with pytest.raises(ValueError, match="unachievable"):
        solve_threshold(4, 1e-3)


@pytest.mark.parametrize("k", range(1, 17))
def test_tail_matches_enumeration(k):
    for d in range(k + 1):
        assert tail_exact(k, d) == brute_tail(k, d)


def test_log_tail_agrees_with_exact():
    for k, d in [(256, 80), (256, 128), (64, 3), (10, 10)]:
        assert log_tail(k, d) == pytest.approx(math.log(tail_exact(k, d)), rel=1e-12)


def test_false_alarm_prob_examples():
    assert false_alarm_prob(256, 0.3125) <= 1e-9
    assert false_alarm_prob(2, 0.5) == 0.75


def test_binarize_zero_is_positive():
    assert binarize([0.0, -1e-300, 3.0]).tolist() == [1, -1, 1]


def test_binarize_rejects_nan():
    with pytest.raises(ValueError):
        binarize([np.nan])


def test_ber_examples():
    assert ber([1, 1, -1, -1], [1, -1, -1, 1]) == 0.5
    with pytest.raises(ValueError):
        ber([1, 1], [1])


def test_decide_and_timestamp():
    target = np.ones(256, dtype=np.int8)
    bits = target.copy()
    bits[:80] = -1
    assert decide(bits, target, 1e-9).decision == "reused"
    bits[80] = -1
    assert decide(bits, target, 1e-9).decision == "independent"
    assert decide(target, target, 1e-9, "fail").decision == "independent"
    assert timestamp_status(5, 3) == "pass"
    assert timestamp_status(3, 5) == "fail"
    assert timestamp_status(None, 5) == "n/a"


def test_report_text_lists_fields():
    rep = decide(np.ones(4, dtype=np.int8), np.ones(4, dtype=np.int8), 0.35)
    text = rep.to_text()
    for key in ("decision: reused", "ber: 0.000000", "tau: 0.250000", "timestamp_check: n/a"):
        assert key in text
    assert '"decision": "reused"' in rep.to_json()


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 300), st.floats(1e-12, 0.5))
def test_threshold_bound_holds(k, kappa):
    try:
        tau = solve_threshold(k, kappa)
    except ValueError:
        assert Fraction(1, 2 ** k) > Fraction(kappa)
        return
    d = round(tau * k)
    assert tail_exact(k, d) <= Fraction(kappa) < tail_exact(k, d + 1)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from([-1, 1]), min_size=1, max_size=64), st.data())
def test_ber_symmetric_and_bounded(a, data):
    b = data.draw(st.lists(st.sampled_from([-1, 1]), min_size=len(a), max_size=len(a)))
    assert ber(a, b) == ber(b, a)
    assert 0 <= ber(a, b) <= 1

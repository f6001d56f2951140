import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mei.efficiency import (efficiency, efficiency_report, expressiveness, optimal_partition_size,
                            param_count)
from mei.model import ConfigError

FB_E, FB_R = 14541, 237
WN_E, WN_R = 40943, 18


def millions(n):
    return f"{n / 1e6:.2f}M"


def test_shared_core_parameter_counts():
    assert param_count(FB_E, FB_R, 120, 3, 40, shared_core=True) == 1_837_360
    assert param_count(FB_E, FB_R, 132, 12, 11, shared_core=True) == 1_952_027
    assert millions(1_837_360) == "1.84M" and millions(1_952_027) == "1.95M"
    assert 40 ** 3 == 64_000 and 11 ** 3 == 1331 and 21 ** 3 == 9261 and 82 ** 3 == 551_368


def test_shared_and_per_partition_counts():
    for K, C in ((1, 200), (3, 40), (12, 11)):
        diff = (param_count(FB_E, FB_R, K * C, K, C, shared_core=False)
                - param_count(FB_E, FB_R, K * C, K, C, shared_core=True))
        assert diff == (K - 1) * C ** 3


def test_dimension_mismatch():
    with pytest.raises(ConfigError):
        param_count(10, 2, 10, 5, 3)
    with pytest.raises(ConfigError):
        efficiency(10, 2, 10, 5, 3)


def test_expressiveness():
    assert expressiveness(1, 6, 3) == 18  # two partitions of size 3: 9 + 9
    assert expressiveness(7, 30, 1) == 7 * 30


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 500), st.integers(1, 20), st.integers(1, 50))
def test_expressiveness_alternate_formula(R, K, C):
    assert expressiveness(R, K * C, C) == R * K * C * C


def test_efficiency_small_example():
    assert efficiency(3, 1, 2, 1, 2) == 0.25


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 10 ** 5), st.integers(1, 500), st.integers(1, 30), st.integers(1, 100))
def test_efficiency_independent_of_d(E, R, K, C):
    assert efficiency(E, R, K * C, K, C) == pytest.approx(efficiency(E, R, 2 * K * C, 2 * K, C), rel=1e-14)
    assert efficiency(E, R, K * C, K, C) == pytest.approx(R * C / (E + R + C * C), rel=1e-14)


def test_optimal_partition_size_examples():
    assert optimal_partition_size(WN_E, WN_R) == 202
    assert optimal_partition_size(FB_E, FB_R) == 122
    assert optimal_partition_size(10 ** 9, 10, D=10) == 10
    assert optimal_partition_size(WN_E, WN_R, D=200) == 200


def test_rounding_picks_larger_efficiency():
    # WN18: P(202) > P(203); FB15k-237: P(122) > P(121)
    P = lambda E, R, C: R * C / (E + R + C * C)  # noqa: E731
    assert P(WN_E, WN_R, 202) > P(WN_E, WN_R, 203)
    assert P(FB_E, FB_R, 122) > P(FB_E, FB_R, 121)


def test_perfect_square_and_grid_optimum():
    assert optimal_partition_size(90, 10) == 10
    E, R = 5000, 40
    grid = max(range(1, 400), key=lambda C: (efficiency(E, R, C, 1, C), -C))
    assert grid == optimal_partition_size(E, R)
    assert abs(grid - math.sqrt(E + R)) < 1


pairs = st.tuples(st.integers(1, 10 ** 6), st.integers(1, 2000))


@settings(max_examples=100, deadline=None)
@given(pairs)
def test_global_optimality(pair):
    E, R = pair
    best = optimal_partition_size(E, R)
    pb = efficiency(E, R, best, 1, best)
    upper = min(int(3 * math.sqrt(E + R)), 10 ** 4)
    assert all(efficiency(E, R, C, 1, C) <= pb for C in range(1, upper + 1))


@settings(max_examples=100, deadline=None)
@given(pairs)
def test_unimodal(pair):
    # P(C+1) > P(C) iff C (C+1) < |E| + |R|, compared exactly in integers
    E, R = pair
    n = E + R
    for C in range(1, min(int(3 * math.sqrt(n)), 10 ** 4)):
        up = (C + 1) * (n + C * C) > C * (n + (C + 1) ** 2)
        assert up == (C * (C + 1) < n)


def test_report():
    rep = efficiency_report(FB_E, FB_R, 120, 3, 40, shared_core=True)
    assert rep.total == rep.T_shared == 1_837_360
    assert rep.T == 1_965_360
    assert rep.E_expr == FB_R * 120 * 40
    assert rep.P == pytest.approx(rep.E_expr / rep.T)
    assert (rep.C_opt, rep.C_star) == (122, 120)
    assert rep.to_tsv().split("\t")[6] == "1837360"
    assert "1,837,360" in rep.to_text()

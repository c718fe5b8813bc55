import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from torusnls import (BudgetExceededError, PairingClass, ParameterError,
                      SecondGenTuple, SixTuple, classify, counting_audit,
                      counting_audit_family, enumerate_second_gen,
                      enumerate_six_tuples, lambda_factor, modes_within, omega,
                      psi2s, psi_bound_audit, resonance_weight)
from torusnls.resonance import (counting_scan, has_inner_pairing,
                                multiset_pair_rows, active_slots)


def col(vals):
    return np.array(vals, dtype=np.int64)[:, None]


# ---------------------------------------------------------------------------
# six-tuple arithmetic

def test_omega_example():
    assert omega(col([3, 1, 1, 2, 1, 2])) == 2


def test_omega_zero_tuple():
    assert omega(np.zeros((6, 1), dtype=int)) == 0


def test_omega_fully_paired():
    assert omega(col([5, 5, 2, 2, 7, 7])) == 0


def test_omega_rejects_zero_sum_violation():
    with pytest.raises(ParameterError):
        omega(col([1, 0, 0, 0, 0, 0]))


def test_psi2s_examples():
    t = col([3, 1, 1, 2, 1, 2])
    assert psi2s(t, 1) == pytest.approx(omega(t))
    assert psi2s(t, 2) == pytest.approx(50.0)
    assert psi2s(col([5, 5, 2, 2, 7, 7]), 7.5) == 0


def test_lambda_example():
    assert lambda_factor(col([3, 1, 1, 2, 1, 2])) == pytest.approx(math.sqrt(20))


def test_resonance_weight_branches():
    t = col([3, 1, 1, 2, 1, 2])  # Omega = 2, lambda^2 = 20
    near = resonance_weight(t, 10, 0.6, "near")
    far = resonance_weight(t, 10, 0.6, "far")
    # |Omega|/lambda^d0 = 2/20^0.3 = 0.81...: inside the transition
    lam_d0 = 20 ** 0.3
    assert 0 < 2 / lam_d0 < 1
    psi = psi2s(t, 10)
    assert near + far * 2 == pytest.approx(psi, rel=1e-12)
    paired = col([5, 5, 2, 2, 7, 7])
    assert resonance_weight(paired, 10, 0.6, "far") == 0
    allzero = np.zeros((6, 1), dtype=int)
    assert resonance_weight(allzero, 10, 0.6, "near") == 0
    assert resonance_weight(allzero, 10, 0.6, "far") == 0


def test_far_weight_zero_when_omega_in_support():
    # |Omega| >= lambda^d0 puts the argument past the bump support: near = 0
    t = col([4, 1, 1, 1, 1, 4])  # zero-sum: 4-1+1-1+1-4=0; Omega = 16-1+1-1+1-16=0
    assert omega(t) == 0
    t2 = col([3, 1, 3, 1, 2, 6])  # 3-1+3-1+2-6=0; Omega = 9-1+9-1+4-36=-16
    lam_d0 = float(np.sum(np.asarray([9, 1, 9, 1, 4, 36]))) ** 0.3
    assert abs(omega(t2)) > lam_d0
    assert resonance_weight(t2, 10, 0.6, "near") == 0


def test_inner_pairing_detection():
    assert has_inner_pairing(col([5, 5, 2, 2, 7, 7]))
    assert has_inner_pairing(col([3, 1, 1, 2, 1, 2]))  # k2 = k3 = 1
    assert not has_inner_pairing(col([5, 3, 1, 4, 1, 0]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-6, 6), min_size=5, max_size=5))
def test_swap_invariance_property(free):
    # swapping the odd and even triples flips psi and Omega together,
    # so psi/Omega is invariant where defined
    k6 = free[0] - free[1] + free[2] - free[3] + free[4]
    t = col(free + [k6])
    swapped = t[[1, 0, 3, 2, 5, 4]]
    assert omega(swapped) == -omega(t)
    assert psi2s(swapped, 7) == pytest.approx(-psi2s(t, 7), rel=1e-12, abs=1e-9)


# ---------------------------------------------------------------------------
# enumeration

def test_enumerate_six_tuples_singleton():
    out = list(enumerate_six_tuples(np.array([[0]])))
    assert len(out) == 1


def brute_six_count(modes):
    modes = [tuple(m) for m in modes]
    mset = set(modes)
    count = 0
    for t in itertools.product(modes, repeat=6):
        z = tuple(t[0][j] - t[1][j] + t[2][j] - t[3][j] + t[4][j] - t[5][j]
                  for j in range(len(t[0])))
        if all(v == 0 for v in z):
            count += 1
    return count


def test_enumerate_six_tuples_matches_brute():
    modes = modes_within(1, 1)
    got = sum(1 for _ in enumerate_six_tuples(modes))
    assert got == brute_six_count(modes) == 141


def test_enumerate_six_tuples_matches_brute_2d():
    modes = modes_within(1, 2)
    got = sum(1 for _ in enumerate_six_tuples(modes))
    assert got == brute_six_count(modes)


@pytest.mark.parametrize("N", [2, 3, 4])
def test_enumerate_six_tuples_matches_brute_1d(N):
    modes = modes_within(N, 1)
    got = sum(1 for _ in enumerate_six_tuples(modes))
    assert got == brute_six_count(modes)


def test_enumerate_six_tuples_matches_brute_3d():
    modes = modes_within(1, 3)
    got = sum(1 for _ in enumerate_six_tuples(modes))
    assert got == brute_six_count(modes)


def test_enumerate_budget():
    with pytest.raises(BudgetExceededError):
        list(enumerate_six_tuples(modes_within(3, 1), budget=10))


def test_multiset_pair_rows_cover_all_tuples():
    # sum of 2*mult over rows equals the ordered-tuple count minus the
    # diagonal (equal multisets), which carries zero psi and Omega
    modes = modes_within(2, 1)
    triples, tmult, ro, re_ = multiset_pair_rows(modes)
    covered = 2 * np.sum(tmult[ro] * tmult[re_])
    total = brute_six_count(modes)
    sums = modes[triples[:, 0]] + modes[triples[:, 1]] + modes[triples[:, 2]]
    _, counts = np.unique(sums, return_counts=True, axis=0)
    diag = sum(
        (tmult[i] ** 2)
        for i in range(len(triples))
    )
    assert covered + diag == total


def brute_second_gen_count(modes, family):
    modes_t = [tuple(m) for m in modes]
    mset = set(modes_t)
    d = len(modes_t[0])
    count = 0
    for leaves in itertools.product(modes_t, repeat=9):
        inner = leaves[:5]
        o4 = leaves[5:]
        root = tuple(inner[0][j] - inner[1][j] + inner[2][j] - inner[3][j] + inner[4][j]
                     for j in range(d))
        if root not in mset:
            continue
        if family == "R1":
            k6 = tuple(root[j] - o4[0][j] + o4[1][j] - o4[2][j] + o4[3][j]
                       for j in range(d))
        else:
            k6 = tuple(o4[0][j] - root[j] + o4[1][j] - o4[2][j] + o4[3][j]
                       for j in range(d))
        if k6 in mset:
            count += 1
    return count


def test_enumerate_second_gen_matches_brute():
    modes = modes_within(1, 1)
    got_r1 = sum(1 for _ in enumerate_second_gen(modes, "R1"))
    got_r2 = sum(1 for _ in enumerate_second_gen(modes, "R2"))
    expect_r1 = brute_second_gen_count(modes, "R1")
    assert got_r1 == expect_r1
    assert got_r2 == brute_second_gen_count(modes, "R2")
    # sign-symmetric modeset: the two families are conjugate-bijective
    assert got_r1 == got_r2


def test_second_gen_zero_sum_and_leaves():
    modes = modes_within(1, 1)
    for t in itertools.islice(enumerate_second_gen(modes, "R1"), 50):
        t.check_zero_sum()
        assert t.leaves.shape == (10, 1)
        order = t.rearranged_leaf_order()
        assert sorted(order.tolist()) == list(range(10))


# ---------------------------------------------------------------------------
# classification

def sg(family, outer, inner):
    return SecondGenTuple(family, col(outer) if np.ndim(outer[0]) == 0 else outer,
                          col(inner) if np.ndim(inner[0]) == 0 else inner)


def test_classify_all_zero_is_type_b():
    t = sg("R1", [0, 0, 0, 0, 0], [0, 0, 0, 0, 0])
    assert classify(t, 0.3) is PairingClass.TYPE_B


def test_classify_principal_pairing():
    # p1 = k2 = 50 dominant, all other leaves in {0, +-1}
    inner = [50, 1, 0, 0, 0]           # root = 49
    outer = [50, 1, 0, 0, 0]           # 49 - 50 + 1 - 0 + 0 - 0 = 0
    t = sg("R1", outer, inner)
    t.check_zero_sum()
    assert classify(t, 0.3) is PairingClass.S11
    p, s = active_slots(t, 0.3)
    assert len(p) >= 1 and p[0] == (0, 0)


def test_classify_type_b_two_largest_inner():
    inner = [50, 50, 1, 0, 0]          # root = 1
    outer = [1, 0, 0, 0, 0]            # 1 - 1 + 0 ... = 0
    t = sg("R1", outer, inner)
    t.check_zero_sum()
    assert classify(t, 0.3) is PairingClass.TYPE_B


def test_classify_type_c():
    inner = [50, 0, 0, 1, 0]           # root = 49
    outer = [49, 0, 0, 0, 0]
    t = sg("R1", outer, inner)
    t.check_zero_sum()
    assert classify(t, 0.3) is PairingClass.TYPE_C


def test_classify_type_a():
    inner = [5, 4, 3, 2, 1]            # root = 3
    outer = [3, 4, 5, 2, 1]            # 3 - 3 + 4 - 5 + 2 - 1 = 0
    t = sg("R1", outer, inner)
    t.check_zero_sum()
    assert classify(t, 0.3) is PairingClass.TYPE_A


def test_classify_r2_family():
    inner = [50, 1, 0, 0, 0]           # root k2 = 49
    outer = [50, 0, 1, 0, 0]           # 50 - 49 + 0 - 1 + 0 - 0 = 0
    t = sg("R2", outer, inner)
    t.check_zero_sum()
    assert classify(t, 0.3) is PairingClass.S21


def test_classify_deterministic_under_tie():
    # equal-magnitude leaves: documented tie-break keeps the tag stable
    t1 = sg("R1", [2, 1, 0, 0, -1], [2, 1, 0, 0, -1])
    tag1 = classify(t1, 0.3)
    tag2 = classify(sg("R1", [2, 1, 0, 0, -1], [2, 1, 0, 0, -1]), 0.3)
    assert tag1 is tag2


# ---------------------------------------------------------------------------
# counting audit

def test_counting_hand_case():
    out = counting_audit(2, [4, 4], (1, -1), np.array([1, 0, 0]), 1, d=3)
    assert out["count"] == 32
    assert out["bound"] == 16
    assert out["ratio"] == pytest.approx(2.0)


def test_counting_k_zero_unreachable():
    out = counting_audit(2, [4, 4], (1, -1), np.array([0, 0, 0]), 0, d=3)
    assert out["count"] == 0


def brute_counting(n, shells, iota, K, d):
    from torusnls.resonance import shell_modes
    lists = [list(map(tuple, shell_modes(s, d))) for s in shells]
    counts = {}
    for t in itertools.product(*lists):
        s = tuple(sum(iota[j] * t[j][c] for j in range(n)) for c in range(d))
        if s != tuple(K):
            continue
        ok = True
        for i in range(n):
            for j in range(i + 1, n):
                v = tuple(iota[i] * t[i][c] + iota[j] * t[j][c] for c in range(d))
                if all(x == 0 for x in v):
                    ok = False
        if not ok:
            continue
        kappa = sum(iota[j] * sum(x * x for x in t[j]) for j in range(n))
        counts[kappa] = counts.get(kappa, 0) + 1
    return counts


def test_counting_scan_matches_brute_n3_1d():
    shells = [2, 2, 2]
    iota = (1, -1, 1)
    K = np.array([1])
    got = counting_scan(3, shells, iota, K, d=1)
    expect = brute_counting(3, shells, iota, (1,), 1)
    assert got == expect


def test_counting_scan_matches_brute_n2_3d():
    got = counting_scan(2, [2, 2], (1, -1), np.array([1, 1, 0]), d=3)
    expect = brute_counting(2, [2, 2], (1, -1), (1, 1, 0), 3)
    assert got == expect


def test_counting_family_budget():
    with pytest.raises(BudgetExceededError):
        counting_audit_family(3, [16, 16, 16], (1, -1, 1), np.array([0, 0, 0]),
                              d=3, budget=100)


# ---------------------------------------------------------------------------
# psi bound audit

def test_psi_bound_s1_is_bounded_by_one():
    out = psi_bound_audit(1, 6, 1.0)
    assert out["max_ratio"] <= 1.0 + 1e-12


def test_psi_bound_small_exhaustive():
    out = psi_bound_audit(1, 8, 10.0)
    assert np.isfinite(out["max_ratio"])
    assert out["max_ratio"] > 0
    assert out["witness"] is not None


def test_classify_six_tuple_tag():
    from torusnls import classify_six_tuple
    assert classify_six_tuple(col([5, 5, 2, 2, 7, 7])) is PairingClass.INNER_PAIR_REDUCTION
    assert classify_six_tuple(col([5, 3, 1, 4, 1, 0])) is None

"""Resonance arithmetic, constrained tuple enumeration and combinatorial audits.

Six-tuples carry the alternating signature (+,-,+,-,+,-); the resonance
value Omega, the energy-transfer density psi_{2s} and the symmetric factor
lambda are all functions of the squared magnitudes. Large constrained sums
are organized by pairing the multiset of odd-position modes with the
multiset of even-position modes (equal vector sums), which divides the raw
ordered enumeration by the 3!*3! permutation symmetry and the odd/even
conjugation swap.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numba import njit

from .errors import BudgetExceededError, ParameterError
from .params import CutoffProfile, SCALAR_PROFILE

DEFAULT_BUDGET = 10**9

_SIGNS6 = np.array([1, -1, 1, -1, 1, -1], dtype=np.int64)
_SIGNS5 = np.array([1, -1, 1, -1, 1], dtype=np.int64)


# ---------------------------------------------------------------------------
# six-tuple arithmetic

@dataclass
class SixTuple:
    """Ordered frequency 6-tuple with alternating signature; zero-sum required."""

    k: np.ndarray  # (6, d) integer modes

    def __post_init__(self):
        self.k = np.atleast_2d(np.asarray(self.k, dtype=np.int64))
        if self.k.shape[0] != 6:
            self.k = self.k.T
        if self.k.shape[0] != 6:
            raise ParameterError(f"expected 6 modes, got shape {self.k.shape}")

    @property
    def ksq(self) -> np.ndarray:
        return np.sum(self.k * self.k, axis=1)

    def check_zero_sum(self):
        if np.any(_SIGNS6 @ self.k != 0):
            raise ParameterError(f"six-tuple violates the zero-sum constraint: {self.k.tolist()}")


def _as_sixtuple(t) -> SixTuple:
    return t if isinstance(t, SixTuple) else SixTuple(np.asarray(t))


def omega(t) -> int:
    """Resonance value: alternating sum of squared magnitudes (an integer)."""
    t = _as_sixtuple(t)
    t.check_zero_sum()
    return int(_SIGNS6 @ t.ksq)


def psi2s(t, s: float) -> float:
    """Alternating sum of |k_j|^{2s}."""
    t = _as_sixtuple(t)
    t.check_zero_sum()
    return float(_SIGNS6 @ t.ksq.astype(float) ** s)


def lambda_factor(t) -> float:
    """Symmetric factor (sum of all |k_j|^2)^{1/2}."""
    t = _as_sixtuple(t)
    return float(np.sqrt(np.sum(t.ksq)))


def resonance_weight(t, s: float, delta0: float, branch: str,
                     profile: CutoffProfile = SCALAR_PROFILE) -> float:
    """Near weight chi(Omega/lambda^d0)*psi, or far weight (1-chi)*psi/Omega.

    The far branch is 0 at Omega = 0 (the 1-chi factor vanishes on the
    plateau); the all-zero tuple gets weight 0 on both branches.
    """
    t = _as_sixtuple(t)
    om = omega(t)
    lam2 = float(np.sum(t.ksq))
    psi = psi2s(t, s)
    if lam2 == 0.0:
        return 0.0
    chi = profile(abs(om) / lam2 ** (delta0 / 2))
    if branch == "near":
        return chi * psi
    if branch == "far":
        if om == 0:
            return 0.0
        return (1.0 - chi) * psi / om
    raise ParameterError(f"branch must be 'near' or 'far', got {branch!r}")


def sixtuple_weights(o_ksq, e_ksq, s: float, delta0: float,
                     profile: CutoffProfile = SCALAR_PROFILE):
    """Vectorized near/far weights for rows of odd/even ksq triples.

    o_ksq, e_ksq: (R, 3) integer arrays of squared magnitudes.
    Returns (omega, lam2, psi, near, far) with the far Omega=0 convention.
    """
    o_ksq = np.asarray(o_ksq, dtype=np.int64)
    e_ksq = np.asarray(e_ksq, dtype=np.int64)
    om = o_ksq.sum(axis=1) - e_ksq.sum(axis=1)
    lam2 = (o_ksq.sum(axis=1) + e_ksq.sum(axis=1)).astype(float)
    psi = (o_ksq.astype(float) ** s).sum(axis=1) - (e_ksq.astype(float) ** s).sum(axis=1)
    chi = np.ones_like(psi)
    pos = lam2 > 0
    chi[pos] = profile(np.abs(om[pos]) / lam2[pos] ** (delta0 / 2))
    near = chi * psi
    far = np.zeros_like(psi)
    nz = om != 0
    far[nz] = (1.0 - chi[nz]) * psi[nz] / om[nz]
    return om, lam2, psi, near, far


def classify_six_tuple(t):
    """First-generation tag: INNER_PAIR_REDUCTION when two frequencies of
    opposite signature coincide (summed separately by the first-generation
    estimates), None otherwise."""
    return PairingClass.INNER_PAIR_REDUCTION if has_inner_pairing(t) else None


def has_inner_pairing(t) -> bool:
    """True when some odd-position mode equals some even-position mode.

    Such tuples are the first-generation pairing reductions; the
    first-generation estimates sum them separately.
    """
    t = _as_sixtuple(t)
    odd, even = t.k[0::2], t.k[1::2]
    return bool(np.any(np.all(odd[:, None, :] == even[None, :, :], axis=2)))


# ---------------------------------------------------------------------------
# enumeration

def enumerate_six_tuples(modes: np.ndarray, budget: float = DEFAULT_BUDGET):
    """Yield every zero-sum 6-tuple over the modeset exactly once.

    Fixes (k1..k5) and solves for k6, emitting only when the solved mode
    lies in the modeset.
    """
    modes = np.asarray(modes, dtype=np.int64)
    if modes.ndim == 1:
        modes = modes[:, None]
    n = modes.shape[0]
    if float(n) ** 5 > budget:
        raise BudgetExceededError(float(n) ** 5, budget)
    mode_index = {tuple(m): i for i, m in enumerate(modes)}
    for i1, i2, i3, i4, i5 in itertools.product(range(n), repeat=5):
        k6 = modes[i1] - modes[i2] + modes[i3] - modes[i4] + modes[i5]
        if tuple(k6) in mode_index:
            yield np.stack([modes[i1], modes[i2], modes[i3], modes[i4], modes[i5], k6])


# ---------------------------------------------------------------------------
# second-generation tuples and pairing classification

class PairingClass(Enum):
    S11 = "S11"
    S12 = "S12"
    S21 = "S21"
    S22 = "S22"
    TYPE_A = "TypeA"
    TYPE_B = "TypeB"
    TYPE_C = "TypeC"
    INNER_PAIR_REDUCTION = "InnerPairReduction"


# pairing slots per family: (inner position, outer position, principal?)
# principal slots pair a plus-signature inner leaf with a minus-signature
# outer leaf (3x3 = 9 of them); secondary slots are the 2x2 = 4 opposite case.
_SLOTS = {
    "R1": ([(a, b) for a in (0, 2, 4) for b in (0, 2, 4)],
           [(a, b) for a in (1, 3) for b in (1, 3)]),
    "R2": ([(a, b) for a in (0, 2, 4) for b in (0, 1, 3)],
           [(a, b) for a in (1, 3) for b in (2, 4)]),
}


@dataclass
class SecondGenTuple:
    """Two-generation interaction tuple.

    family R1: outer = [k2..k6], inner = [p1..p5], root k1 = p1-p2+p3-p4+p5.
    family R2: outer = [k1,k3,k4,k5,k6], inner = [q1..q5],
               root k2 = q1-q2+q3-q4+q5.
    The ten visible leaves are inner followed by outer.
    """

    family: str
    outer: np.ndarray  # (5, d)
    inner: np.ndarray  # (5, d)

    def __post_init__(self):
        if self.family not in ("R1", "R2"):
            raise ParameterError(f"family must be 'R1' or 'R2', got {self.family!r}")
        self.outer = np.atleast_2d(np.asarray(self.outer, dtype=np.int64))
        self.inner = np.atleast_2d(np.asarray(self.inner, dtype=np.int64))
        if self.outer.shape[0] != 5 or self.inner.shape[0] != 5:
            raise ParameterError("outer and inner must each hold 5 modes")

    @property
    def root(self) -> np.ndarray:
        return _SIGNS5 @ self.inner

    @property
    def outer_six(self) -> np.ndarray:
        """The ordered outer 6-tuple (k1..k6) with the derived root inserted."""
        r = self.root[None, :]
        if self.family == "R1":
            return np.concatenate([r, self.outer])
        return np.concatenate([self.outer[:1], r, self.outer[1:]])

    @property
    def leaves(self) -> np.ndarray:
        return np.concatenate([self.inner, self.outer])

    def check_zero_sum(self):
        if np.any(_SIGNS6 @ self.outer_six != 0):
            raise ParameterError("second-generation tuple violates the zero-sum constraint")

    def rearranged_leaf_order(self) -> np.ndarray:
        """Leaf indices sorted by descending magnitude; ties by lexicographic
        mode then inner-before-outer."""
        return _leaf_order(self)


def _leaf_order(t: SecondGenTuple) -> np.ndarray:
    lv = t.leaves
    mag = np.sum(lv * lv, axis=1)
    gen = np.array([0] * 5 + [1] * 5)  # inner before outer on ties
    keys = [gen]
    for c in range(lv.shape[1] - 1, -1, -1):
        keys.append(lv[:, c])
    keys.append(-mag)
    return np.lexsort(tuple(keys))


def active_slots(t: SecondGenTuple, theta: float):
    """Pairing slots whose equality and smallness conditions hold.

    Returns (principal, secondary): lists of (inner_pos, outer_pos).
    Threshold per slot: |root|^theta + |paired outer leaf|^theta, bounding
    the magnitude sums of the 4 remaining outer and 4 remaining inner leaves.
    """
    principal, secondary = _SLOTS[t.family]
    root_mag = float(np.sqrt(np.sum(t.root**2)))
    omag = np.sqrt(np.sum(t.outer * t.outer, axis=1).astype(float))
    imag_ = np.sqrt(np.sum(t.inner * t.inner, axis=1).astype(float))
    out_p, out_s = [], []
    for slots, sink in ((principal, out_p), (secondary, out_s)):
        for a, b in slots:
            if not np.array_equal(t.inner[a], t.outer[b]):
                continue
            thr = root_mag**theta + omag[b] ** theta
            if imag_.sum() - imag_[a] <= thr and omag.sum() - omag[b] <= thr:
                sink.append((a, b))
    return out_p, out_s


def classify(t: SecondGenTuple, theta: float) -> PairingClass:
    """Total single-tag classification.

    Rule order: pairing tags first (a slot is tagged only when its paired
    leaves are the two top-magnitude leaves under the documented tie-break),
    then Type A (small leaves collectively large), Type B (two dominant
    leaves in one generation), else Type C.
    """
    t.check_zero_sum()
    order = _leaf_order(t)
    top2 = {int(order[0]), int(order[1])}
    principal, secondary = active_slots(t, theta)
    p_tag = PairingClass.S11 if t.family == "R1" else PairingClass.S21
    s_tag = PairingClass.S12 if t.family == "R1" else PairingClass.S22
    for a, b in principal:
        if {a, 5 + b} == top2:
            return p_tag
    for a, b in secondary:
        if {a, 5 + b} == top2:
            return s_tag
    lv = t.leaves
    mags = np.sqrt(np.sum(lv * lv, axis=1).astype(float))[order]
    tail_sum = float(np.sum(mags[2:]))
    thr = mags[0] ** theta + mags[1] ** theta
    if tail_sum > thr:
        return PairingClass.TYPE_A
    both_inner = order[0] < 5 and order[1] < 5
    both_outer = order[0] >= 5 and order[1] >= 5
    if both_inner or both_outer:
        return PairingClass.TYPE_B
    return PairingClass.TYPE_C


def enumerate_second_gen(modes: np.ndarray, family: str, budget: float = DEFAULT_BUDGET):
    """Yield every two-generation tuple over the modeset exactly once.

    Nine free leaf indices; the tenth is solved from the combined zero-sum
    and the derived root must itself lie in the modeset.
    """
    modes = np.asarray(modes, dtype=np.int64)
    if modes.ndim == 1:
        modes = modes[:, None]
    n = modes.shape[0]
    if float(n) ** 9 > budget:
        raise BudgetExceededError(float(n) ** 9, budget)
    mode_index = {tuple(m): i for i, m in enumerate(modes)}
    # inner (5 free) and the first 4 outer leaves free; last outer solved
    for inner_idx in itertools.product(range(n), repeat=5):
        inner = modes[list(inner_idx)]
        root = _SIGNS5 @ inner
        if tuple(root) not in mode_index:
            continue
        for o_idx in itertools.product(range(n), repeat=4):
            o4 = modes[list(o_idx)]
            if family == "R1":
                # zero-sum: root - k2 + k3 - k4 + k5 - k6 = 0
                k6 = root - o4[0] + o4[1] - o4[2] + o4[3]
                if tuple(k6) in mode_index:
                    yield SecondGenTuple("R1", np.concatenate([o4, k6[None, :]]), inner)
            else:
                # zero-sum: k1 - root + k3 - k4 + k5 - k6 = 0
                k6 = o4[0] - root + o4[1] - o4[2] + o4[3]
                if tuple(k6) in mode_index:
                    yield SecondGenTuple("R2", np.concatenate([o4, k6[None, :]]), inner)


# ---------------------------------------------------------------------------
# multiset-pair organization of the zero-sum six-tuple sum

def sorted_triples(n: int):
    """All sorted index triples 0 <= a <= b <= c < n and their permutation counts."""
    tri = np.array(list(itertools.combinations_with_replacement(range(n), 3)), dtype=np.int64)
    a, b, c = tri.T
    mult = np.where((a == b) & (b == c), 1, np.where((a == b) | (b == c), 3, 6)).astype(np.float64)
    return tri, mult


def sorted_pairs(n: int):
    pr = np.array(list(itertools.combinations_with_replacement(range(n), 2)), dtype=np.int64)
    mult = np.where(pr[:, 0] == pr[:, 1], 1, 2).astype(np.float64)
    return pr, mult


def _group_by_rows(arr: np.ndarray):
    """Group row vectors; returns (order, group_starts) with rows sorted."""
    arr = np.ascontiguousarray(arr)
    view = arr.view([("", arr.dtype)] * arr.shape[1]).ravel()
    order = np.argsort(view, kind="stable")
    sorted_view = view[order]
    starts = np.flatnonzero(np.concatenate(([True], sorted_view[1:] != sorted_view[:-1])))
    return order, np.append(starts, len(view))


def multiset_pair_rows(modes: np.ndarray, budget: float = DEFAULT_BUDGET):
    """Unordered pairs (odd multiset, even multiset) with equal vector sums.

    Returns (triples, tmult, rows_o, rows_e): index triples into the
    modeset, their permutation counts, and row pairs with rows_o < rows_e
    (the diagonal o == e is omitted: psi and Omega both vanish there).
    Every ordered zero-sum six-tuple corresponds to exactly one row or its
    odd/even swap, with combined multiplicity 2*tmult[o]*tmult[e].
    """
    modes = np.asarray(modes, dtype=np.int64)
    if modes.ndim == 1:
        modes = modes[:, None]
    n = modes.shape[0]
    triples, tmult = sorted_triples(n)
    sums = modes[triples[:, 0]] + modes[triples[:, 1]] + modes[triples[:, 2]]
    order, bounds = _group_by_rows(sums)
    sizes = np.diff(bounds)
    npairs = float(np.sum(sizes.astype(float) * (sizes - 1) / 2))
    if npairs > budget:
        raise BudgetExceededError(npairs, budget)
    rows_o = np.empty(int(npairs), dtype=np.int64)
    rows_e = np.empty(int(npairs), dtype=np.int64)
    pos = 0
    for g in range(len(sizes)):
        grp = order[bounds[g]:bounds[g + 1]]
        m = len(grp)
        if m < 2:
            continue
        iu, ju = np.triu_indices(m, k=1)
        cnt = len(iu)
        rows_o[pos:pos + cnt] = grp[iu]
        rows_e[pos:pos + cnt] = grp[ju]
        pos += cnt
    return triples, tmult, rows_o[:pos], rows_e[:pos]


def root_pair_triple_rows(modes: np.ndarray, budget: float = DEFAULT_BUDGET):
    """Rows (root, {odd pair}, {even triple}) with root + pairsum = triplesum.

    Organizes the outer sum of a second-generation expression around its
    root: returns (pairs, pmult, triples, tmult, row_root, row_pair,
    row_triple). Covers every ordered outer 6-tuple exactly once with
    multiplicity pmult*tmult.
    """
    modes = np.asarray(modes, dtype=np.int64)
    if modes.ndim == 1:
        modes = modes[:, None]
    n = modes.shape[0]
    pairs, pmult = sorted_pairs(n)
    triples, tmult = sorted_triples(n)
    psums = modes[pairs[:, 0]] + modes[pairs[:, 1]]
    tsums = modes[triples[:, 0]] + modes[triples[:, 1]] + modes[triples[:, 2]]
    # index triple-sum groups by vector
    t_order, t_bounds = _group_by_rows(tsums)
    t_sorted = tsums[t_order]
    starts = t_bounds[:-1]
    group_keys = t_sorted[starts]
    key_lookup = {tuple(v): g for g, v in enumerate(group_keys)}
    sizes = np.diff(t_bounds)
    total = 0.0
    matches = []
    for r in range(n):
        target = psums + modes[r]  # (P, d)
        gids = np.array([key_lookup.get(tuple(v), -1) for v in target], dtype=np.int64)
        ok = gids >= 0
        total += float(np.sum(sizes[gids[ok]]))
        if total > budget:
            raise BudgetExceededError(total, budget)
        matches.append((r, np.flatnonzero(ok), gids[ok]))
    R = int(total)
    row_root = np.empty(R, dtype=np.int64)
    row_pair = np.empty(R, dtype=np.int64)
    row_triple = np.empty(R, dtype=np.int64)
    pos = 0
    for r, pids, gids in matches:
        for p, g in zip(pids, gids):
            grp = t_order[t_bounds[g]:t_bounds[g + 1]]
            m = len(grp)
            row_root[pos:pos + m] = r
            row_pair[pos:pos + m] = p
            row_triple[pos:pos + m] = grp
            pos += m
    return pairs, pmult, triples, tmult, row_root, row_pair, row_triple


# ---------------------------------------------------------------------------
# counting audit (constrained lattice point counts vs the product bound)

def shell_modes(level: int, d: int) -> np.ndarray:
    """Lattice points with level/2 < |k| <= level (a dyadic shell)."""
    from .lattice import get_modeset
    ms = get_modeset(d, int(level))
    keep = (ms.ksq > (level / 2) ** 2) & (ms.ksq <= level**2)
    return ms.modes[keep].copy()


def counting_bound(shells) -> float:
    """N_(2)^2 * prod_{j>=3} N_(j)^3 for the non-increasing rearrangement."""
    ns = sorted(shells, reverse=True)
    b = float(ns[1]) ** 2
    for nj in ns[2:]:
        b *= float(nj) ** 3
    return b


@njit(cache=True)
def _scan_pairs_kernel(outer_stack, acc, kap0, inner, inner_sq, iota, iota_l,
                       lo2, hi2, hist, kmin):
    """Innermost two axes of the constrained count: for each outer row a and
    inner mode b, solve the last frequency, apply the shell and no-pairing
    constraints, and histogram the quadratic value."""
    c = acc.shape[0]
    m = inner.shape[0]
    d = acc.shape[1]
    n_outer = outer_stack.shape[0]
    n = n_outer + 2
    sm = iota[n - 2]
    sn = iota[n - 1]
    for a in range(c):
        for b in range(m):
            knsq = 0
            for ci in range(d):
                v = sn * (acc[a, ci] - sm * inner[b, ci])
                knsq += v * v
            if knsq <= lo2 or knsq > hi2:
                continue
            ok = True
            # pairing exclusions among all frequency pairs
            for i in range(n):
                if not ok:
                    break
                for j in range(i + 1, n):
                    same = True
                    for ci in range(d):
                        if i < n_outer:
                            vi = iota[i] * outer_stack[i, a, ci]
                        elif i == n - 2:
                            vi = sm * inner[b, ci]
                        else:
                            # iota_n * k_n solves to acc - sm * inner
                            vi = acc[a, ci] - sm * inner[b, ci]
                        if j < n_outer:
                            vj = iota[j] * outer_stack[j, a, ci]
                        elif j == n - 2:
                            vj = sm * inner[b, ci]
                        else:
                            vj = acc[a, ci] - sm * inner[b, ci]
                        if vi + vj != 0:
                            same = False
                            break
                    if same:
                        ok = False
                        break
            if not ok:
                continue
            kappa = kap0[a] + iota_l[n - 2] * inner_sq[b] + iota_l[n - 1] * knsq
            hist[kappa - kmin] += 1


def counting_scan(n: int, shells, iota, K, d: int = 3, iota_l=None,
                  budget: float = DEFAULT_BUDGET):
    """Single pass over the constrained family, histogramming the quadratic value.

    Counts tuples (k_1..k_n) with sum iota_j k_j = K, |k_j| in the dyadic
    shell (N_j/2, N_j], no opposite-sign pairing (iota_i k_i + iota_j k_j != 0),
    per value kappa of sum iota_l_j |k_j|^2. Returns {kappa: count}.
    """
    if n < 2:
        raise ParameterError("counting audit needs n >= 2")
    if len(shells) != n:
        raise ParameterError("need one dyadic shell per frequency")
    iota = np.asarray(iota, dtype=np.int64)
    iota_l = iota if iota_l is None else np.asarray(iota_l, dtype=np.int64)
    K = np.asarray(K, dtype=np.int64).reshape(d)
    mode_lists = [shell_modes(s, d) for s in shells]
    visits = float(np.prod([len(m) for m in mode_lists[:-1]]))
    if visits > budget:
        raise BudgetExceededError(visits, budget)

    counts: dict[int, int] = {}
    free = mode_lists[:-1]
    last = shells[-1]
    inner = np.ascontiguousarray(free[-1], dtype=np.int64)
    outer_lists = [np.ascontiguousarray(m, dtype=np.int64) for m in free[:-1]]
    outer_sizes = [len(m) for m in outer_lists]
    outer_total = int(np.prod(outer_sizes)) if outer_sizes else 1
    inner_sq = np.sum(inner * inner, axis=1)
    idx = np.arange(outer_total)
    if outer_sizes:
        multi = np.unravel_index(idx, outer_sizes)
        outer_ks = [outer_lists[j][multi[j]] for j in range(len(outer_lists))]
        outer_stack = np.ascontiguousarray(np.stack(outer_ks))
    else:
        outer_ks = []
        outer_stack = np.zeros((0, outer_total, d), dtype=np.int64)
    acc = np.broadcast_to(K, (outer_total, d)).astype(np.int64).copy()
    kap0 = np.zeros(outer_total, dtype=np.int64)
    for j, kj in enumerate(outer_ks):
        acc -= iota[j] * kj
        kap0 += iota_l[j] * np.sum(kj * kj, axis=1)
    kmax_abs = int(n * max(shells) ** 2)
    hist = np.zeros(2 * kmax_abs + 1, dtype=np.int64)
    _scan_pairs_kernel(outer_stack, acc, kap0, inner, inner_sq,
                       np.asarray(iota, dtype=np.int64),
                       np.asarray(iota_l, dtype=np.int64),
                       float((last / 2) ** 2), float(last**2), hist, -kmax_abs)
    nz = np.flatnonzero(hist)
    for pos in nz:
        counts[int(pos - kmax_abs)] = int(hist[pos])
    return counts


def counting_audit(n: int, shells, iota, K, kappa: int, d: int = 3,
                   iota_l=None, budget: float = DEFAULT_BUDGET):
    """Count/bound/ratio for a single (K, kappa)."""
    counts = counting_scan(n, shells, iota, K, d=d, iota_l=iota_l, budget=budget)
    count = counts.get(int(kappa), 0)
    bound = counting_bound(shells)
    return {"count": count, "bound": bound, "ratio": count / bound}


def counting_audit_family(n: int, shells, iota, K, d: int = 3, iota_l=None,
                          budget: float = DEFAULT_BUDGET):
    """Max ratio over all kappa for one family (single enumeration pass)."""
    counts = counting_scan(n, shells, iota, K, d=d, iota_l=iota_l, budget=budget)
    bound = counting_bound(shells)
    if not counts:
        return {"max_count": 0, "bound": bound, "max_ratio": 0.0, "argmax_kappa": None,
                "n_kappa": 0}
    kmax = max(counts, key=counts.get)
    return {"max_count": counts[kmax], "bound": bound,
            "max_ratio": counts[kmax] / bound, "argmax_kappa": kmax,
            "n_kappa": len(counts)}


# ---------------------------------------------------------------------------
# psi bound audit (the lack-of-conservation estimate)

def psi_bound_audit(d: int, kmax: int, s: float, budget: float = DEFAULT_BUDGET):
    """Exhaustive max of |psi_2s| / (|k_(1)|^{2s-2} (|Omega| + |k_(3)|^2))
    over zero-sum 6-tuples with |k_j| <= kmax.

    Fully degenerate rows (denominator zero: the all-zero tuple) are
    skipped; fully paired tuples contribute ratio 0.
    """
    from .lattice import modes_within
    modes = modes_within(kmax, d)
    ksq = np.sum(modes * modes, axis=1)
    triples, tmult, rows_o, rows_e = multiset_pair_rows(modes, budget=budget)
    tk = ksq[triples]  # (T, 3)
    best = 0.0
    best_row = None
    chunk = 4_000_000
    for start in range(0, len(rows_o), chunk):
        o = rows_o[start:start + chunk]
        e = rows_e[start:start + chunk]
        ok, ek = tk[o], tk[e]
        om = ok.sum(axis=1) - ek.sum(axis=1)
        psi = (ok.astype(float) ** s).sum(axis=1) - (ek.astype(float) ** s).sum(axis=1)
        six = np.concatenate([ok, ek], axis=1)
        six.sort(axis=1)
        k1sq = six[:, -1].astype(float)
        k3sq = six[:, -3].astype(float)
        denom = k1sq ** (s - 1) * (np.abs(om) + k3sq)
        ok_rows = denom > 0
        ratio = np.zeros(len(o))
        ratio[ok_rows] = np.abs(psi[ok_rows]) / denom[ok_rows]
        i = int(np.argmax(ratio))
        if ratio[i] > best:
            best = float(ratio[i])
            best_row = (triples[o[i]].tolist(), triples[e[i]].tolist())
    witness = None
    if best_row is not None:
        o_modes = modes[best_row[0]].tolist()
        e_modes = modes[best_row[1]].tolist()
        witness = {"odd": o_modes, "even": e_modes}
    return {"max_ratio": best, "witness": witness, "rows": int(len(rows_o)),
            "kmax": kmax, "s": s}

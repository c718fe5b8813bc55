"""Modified energy, decomposition of its time derivative, and cancellations.

The modified energy is E(u) = (1/2) ||| u |||^2 + R(u), where the sextic
correction R sums the far-resonant interactions with weight
(1 - chi(Omega/lambda^d0)) psi_{2s} / Omega over zero-sum 6-tuples of the
chi_N-weighted coefficients w_k = chi_N(k) u_k. Its time derivative along
the truncated flow splits into a near-resonant first-generation piece and
two second-generation pieces whose dominant cross-generation pairings
cancel in pairs up to the corrector functionals audited here.

Evaluation paths: single fields go through multiset-reduced tables with
compensated summation; ensembles go through numba kernels; a raw
9-free-index enumeration provides the independent oracle at tiny N.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import BudgetExceededError, ParameterError
from .lattice import (SpectralField, dealias_size, from_grid, get_modeset,
                      to_grid, triple_norm_sq, weighted_field)
from .params import ModelParams
from .resonance import (DEFAULT_BUDGET, multiset_pair_rows,
                        root_pair_triple_rows, sixtuple_weights)


def _fsum_c(values: np.ndarray) -> complex:
    """Compensated sum of a complex array (exact rounding per component)."""
    return complex(math.fsum(values.real), math.fsum(values.imag))


# ---------------------------------------------------------------------------
# cached interaction tables

@dataclass
class PairTable:
    """Zero-sum six-tuple sum organized as multiset pairs (see resonance)."""

    triples: np.ndarray   # (T, 3) mode indices
    rows_o: np.ndarray    # (R,)
    rows_e: np.ndarray    # (R,)
    mult: np.ndarray      # (R,) = 2 * perm(o) * perm(e)
    near: np.ndarray      # (R,) chi * psi
    far: np.ndarray       # (R,) (1 - chi) * psi / Omega

    def triple_products(self, coeffs: np.ndarray) -> np.ndarray:
        t = self.triples
        return coeffs[..., t[:, 0]] * coeffs[..., t[:, 1]] * coeffs[..., t[:, 2]]


@dataclass
class OuterTable:
    """Second-generation outer sum organized as (root, 2-multiset, 3-multiset).

    Row constraint: modes[root] + pair_sum = triple_sum. The same rows and
    far weights serve both families; the family with the root on the
    conjugate side evaluates to the complex conjugate of the other.
    """

    pairs: np.ndarray     # (P, 2)
    triples: np.ndarray   # (T, 3)
    row_root: np.ndarray  # (R,)
    row_pair: np.ndarray
    row_triple: np.ndarray
    mult: np.ndarray      # (R,) perm(pair) * perm(triple)
    far: np.ndarray       # (R,)

    def pair_products(self, coeffs):
        return coeffs[..., self.pairs[:, 0]] * coeffs[..., self.pairs[:, 1]]

    def triple_products(self, coeffs):
        t = self.triples
        return coeffs[..., t[:, 0]] * coeffs[..., t[:, 1]] * coeffs[..., t[:, 2]]


_PAIR_CACHE: dict = {}
_OUTER_CACHE: dict = {}


def _table_key(params: ModelParams, cutoff: int):
    sp = params.scalar_profile
    return (params.d, cutoff, params.s, params.delta0, sp.plateau, sp.support)


def pair_table(params: ModelParams, cutoff: int, budget: float = DEFAULT_BUDGET) -> PairTable:
    key = _table_key(params, cutoff)
    if key not in _PAIR_CACHE:
        ms = get_modeset(params.d, cutoff)
        triples, tmult, rows_o, rows_e = multiset_pair_rows(ms.modes, budget=budget)
        tk = ms.ksq[triples]
        _, _, _, near, far = sixtuple_weights(tk[rows_o], tk[rows_e], params.s,
                                              params.delta0, params.scalar_profile)
        mult = 2.0 * tmult[rows_o] * tmult[rows_e]
        _PAIR_CACHE[key] = PairTable(triples, rows_o, rows_e, mult, near, far)
    return _PAIR_CACHE[key]


def outer_table(params: ModelParams, cutoff: int, budget: float = DEFAULT_BUDGET) -> OuterTable:
    key = _table_key(params, cutoff)
    if key not in _OUTER_CACHE:
        ms = get_modeset(params.d, cutoff)
        pairs, pmult, triples, tmult, r_root, r_pair, r_tri = \
            root_pair_triple_rows(ms.modes, budget=budget)
        # far weight of the ordered outer six-tuple (root,+pair | -triple):
        # Omega = ksq[root] + pair - triple, invariant under the family swap.
        pk = ms.ksq[pairs]
        tk = ms.ksq[triples]
        o_ksq = np.column_stack([ms.ksq[r_root], pk[r_pair, 0], pk[r_pair, 1]])
        e_ksq = tk[r_tri]
        _, _, _, _, far = sixtuple_weights(o_ksq, e_ksq, params.s,
                                           params.delta0, params.scalar_profile)
        mult = pmult[r_pair] * tmult[r_tri]
        _OUTER_CACHE[key] = OuterTable(pairs, triples, r_root, r_pair, r_tri, mult, far)
    return _OUTER_CACHE[key]


# ---------------------------------------------------------------------------
# first generation: R0, far-branch R, and the modified energy

def part_R0(w: SpectralField, params: ModelParams, budget: float = DEFAULT_BUDGET) -> complex:
    """Near-resonant first-generation sum (purely imaginary by symmetry)."""
    tab = pair_table(params, w.cutoff, budget)
    tp = tab.triple_products(w.coeffs)
    vals = tab.mult * tab.near * (tp[tab.rows_o] * np.conj(tp[tab.rows_e])).imag
    return complex(0.0, math.fsum(vals))


def part_R_far(w: SpectralField, params: ModelParams, budget: float = DEFAULT_BUDGET) -> float:
    """Far-branch first-generation sum (real by the odd/even swap symmetry)."""
    tab = pair_table(params, w.cutoff, budget)
    tp = tab.triple_products(w.coeffs)
    vals = tab.mult * tab.far * (tp[tab.rows_o] * np.conj(tp[tab.rows_e])).real
    return math.fsum(vals)


def correction_R_sN(u: SpectralField, params: ModelParams, n_infinity: bool = False,
                    budget: float = DEFAULT_BUDGET) -> float:
    """Sextic correction of the modified energy, (1/6) of the far sum of w."""
    w = u.copy() if n_infinity else weighted_field(u, params)
    return part_R_far(w, params, budget) / 6.0


def modified_energy(u: SpectralField, params: ModelParams, n_infinity: bool = False,
                    budget: float = DEFAULT_BUDGET) -> float:
    return 0.5 * triple_norm_sq(u, params.s) + correction_R_sN(u, params, n_infinity, budget)


# ---------------------------------------------------------------------------
# second generation, accelerated (grid) path

def quintic_coefficients(w: SpectralField) -> np.ndarray:
    """Fourier coefficients of |W|^4 W on the stored ball (alias-free)."""
    M = dealias_size(w.cutoff)
    g = to_grid(w, M)
    return from_grid(np.abs(g) ** 4 * g).restricted(w.cutoff).coeffs


def part_R1(w: SpectralField, params: ModelParams, method: str = "grid",
            budget: float = DEFAULT_BUDGET) -> complex:
    if method == "direct":
        return second_gen_breakdown(w, params, "R1", slots=False, budget=budget)["total"]
    tab = outer_table(params, w.cutoff, budget)
    ms = w.modeset
    chin2 = params.chi_n(ms.knorm) ** 2
    proot = chin2 * quintic_coefficients(w)
    pp = tab.pair_products(w.coeffs)
    tp = tab.triple_products(w.coeffs)
    vals = (tab.mult * tab.far) * (proot[tab.row_root] * pp[tab.row_pair]
                                   * np.conj(tp[tab.row_triple]))
    return _fsum_c(vals)


def part_R2(w: SpectralField, params: ModelParams, method: str = "grid",
            budget: float = DEFAULT_BUDGET) -> complex:
    if method == "direct":
        return second_gen_breakdown(w, params, "R2", slots=False, budget=budget)["total"]
    tab = outer_table(params, w.cutoff, budget)
    ms = w.modeset
    chin2 = params.chi_n(ms.knorm) ** 2
    proot = chin2 * np.conj(quintic_coefficients(w))
    pp = tab.pair_products(w.coeffs)
    tp = tab.triple_products(w.coeffs)
    vals = (tab.mult * tab.far) * (proot[tab.row_root] * np.conj(pp[tab.row_pair])
                                   * tp[tab.row_triple])
    return _fsum_c(vals)


def remainder_R13(w: SpectralField, params: ModelParams,
                  budget: float = DEFAULT_BUDGET) -> complex:
    """Second-generation remainder, operational form R1 - 9 S11 - 4 S12.

    The direct classified evaluation (types A/B/C plus the multi-pairing
    overlap) is available through second_gen_breakdown at tiny N.
    """
    return (part_R1(w, params, "grid", budget) - 9.0 * part_S(w, params, "S11")
            - 4.0 * part_S(w, params, "S12"))


def remainder_R23(w: SpectralField, params: ModelParams,
                  budget: float = DEFAULT_BUDGET) -> complex:
    """Operational remainder of the conjugate family: R2 - 9 S21 - 4 S22."""
    return (part_R2(w, params, "grid", budget) - 9.0 * part_S(w, params, "S21")
            - 4.0 * part_S(w, params, "S22"))


# ---------------------------------------------------------------------------
# small-leaf machinery shared by the pairing sums and corrector audits

class SmallTupleGroups:
    """4-tuples of small modes grouped by their signed sum.

    pattern: 4 signs epsilon defining the linear form sum(eps_j m_j).
    Tuples are drawn from modes with |m| <= max_magsum and kept when the
    magnitude sum is <= max_magsum.
    """

    def __init__(self, modes: np.ndarray, pattern, max_magsum: float):
        modes = np.asarray(modes, dtype=np.int64)
        mags = np.sqrt(np.sum(modes * modes, axis=1).astype(float))
        cand = np.flatnonzero(mags <= max_magsum)
        self._groups: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}
        if len(cand) == 0:
            return
        idx = np.array(np.meshgrid(*([cand] * 4), indexing="ij")).reshape(4, -1).T
        magsum = mags[idx].sum(axis=1)
        keep = magsum <= max_magsum
        idx, magsum = idx[keep], magsum[keep]
        sums = np.zeros((len(idx), modes.shape[1]), dtype=np.int64)
        for j, eps in enumerate(pattern):
            sums += eps * modes[idx[:, j]]
        order = np.lexsort(tuple(sums[:, c] for c in range(sums.shape[1] - 1, -1, -1)))
        idx, magsum, sums = idx[order], magsum[order], sums[order]
        keys = np.ascontiguousarray(sums).view([("", sums.dtype)] * sums.shape[1]).ravel()
        starts = np.flatnonzero(np.concatenate(([True], keys[1:] != keys[:-1])))
        bounds = np.append(starts, len(keys))
        for g in range(len(starts)):
            lo, hi = bounds[g], bounds[g + 1]
            self._groups[sums[lo].tobytes()] = (idx[lo:hi], magsum[lo:hi])

    def get(self, delta: np.ndarray):
        key = np.asarray(delta, dtype=np.int64).tobytes()
        return self._groups.get(key)


def _masked_product(coeffs: np.ndarray, idx: np.ndarray, conj_mask) -> np.ndarray:
    out = np.ones(len(idx), dtype=np.complex128)
    for j, cj in enumerate(conj_mask):
        col = coeffs[idx[:, j]]
        out *= np.conj(col) if cj else col
    return out


def _far_weight_cols(ksq_a, ksq_b, tuple_ksq, signs, params: ModelParams):
    """Far weight of the outer six-tuple (A, B, t1..t4) with the given
    Omega signs (sA, sB, s1..s4); psi and lambda follow the same layout."""
    sA, sB, s1, s2, s3, s4 = signs
    tk = tuple_ksq.astype(float)
    om = (sA * ksq_a + sB * ksq_b
          + s1 * tuple_ksq[:, 0] + s2 * tuple_ksq[:, 1]
          + s3 * tuple_ksq[:, 2] + s4 * tuple_ksq[:, 3])
    lam2 = float(ksq_a + ksq_b) + tuple_ksq.sum(axis=1).astype(float)
    sgn = np.array([s1, s2, s3, s4], dtype=float)
    psi = (sA * float(ksq_a) ** params.s + sB * float(ksq_b) ** params.s
           + (sgn * tk**params.s).sum(axis=1))
    chi = np.ones(len(tuple_ksq))
    pos = lam2 > 0
    chi[pos] = params.scalar_profile(np.abs(om[pos]) / lam2[pos] ** (params.delta0 / 2))
    far = np.zeros(len(tuple_ksq))
    nz = om != 0
    far[nz] = (1.0 - chi[nz]) * psi[nz] / om[nz]
    return far, om


def diff_quotient_minus(ksq_a: float, ksq_b: float, s: float) -> float:
    """(a^s - b^s)/(a - b) on squared magnitudes, derivative value on the diagonal."""
    if ksq_a == ksq_b:
        return s * float(ksq_a) ** (s - 1) if ksq_a > 0 else 0.0
    return (float(ksq_a) ** s - float(ksq_b) ** s) / (ksq_a - ksq_b)


def diff_quotient_plus(ksq_a: float, ksq_b: float, s: float) -> float:
    """(a^s + b^s)/(a + b) on squared magnitudes, 0 at the origin."""
    if ksq_a + ksq_b == 0:
        return 0.0
    return (float(ksq_a) ** s + float(ksq_b) ** s) / (ksq_a + ksq_b)


def corrector_psi(six_ksq, s: float, delta0: float, profile) -> float:
    """Corrector for the principal pairing: far weight minus the
    (k1,k2)-difference-quotient branch with its own cutoff."""
    q = np.asarray(six_ksq, dtype=np.int64)
    om = int(q[0] - q[1] + q[2] - q[3] + q[4] - q[5])
    lam2 = float(q.sum())
    psi = float(np.dot([1.0, -1.0, 1.0, -1.0, 1.0, -1.0], q.astype(float) ** s))
    farw = 0.0
    if lam2 > 0 and om != 0:
        chi = profile(abs(om) / lam2 ** (delta0 / 2))
        farw = (1.0 - chi) * psi / om
    denom = float(q[0] + q[1])
    chi2 = 1.0 if denom == 0 else profile(abs(float(q[0] - q[1])) / denom ** (delta0 / 2))
    return farw - (1.0 - chi2) * diff_quotient_minus(q[0], q[1], s)


def corrector_psi_tilde(six_ksq, s: float) -> float:
    """psi/Omega minus the (k1,k3) sum-quotient; requires Omega != 0."""
    q = np.asarray(six_ksq, dtype=np.int64)
    om = int(q[0] - q[1] + q[2] - q[3] + q[4] - q[5])
    if om == 0:
        raise ParameterError("corrector_psi_tilde undefined at Omega = 0")
    psi = float(np.dot([1.0, -1.0, 1.0, -1.0, 1.0, -1.0], q.astype(float) ** s))
    return psi / om - diff_quotient_plus(q[0], q[2], s)


# Per-part geometry of the pairing sums. The large ordered pair (A, B) and a
# small outer 4-tuple fill the ordered outer six-tuple; omega_signs gives the
# resonance signs in the layout (A, B, t1..t4). delta_out/delta_in select the
# linear-constraint target (sum eps_j m_j over the pattern) as A+B or B-A
# ("sum") / ("diff"), with delta_in possibly negated ("ndiff"). Masks flag
# conjugated factors in the leaf products.
_S_SPECS = {
    "S11": dict(omega_signs=(1, -1, 1, -1, 1, -1),
                out_pattern=(1, -1, 1, -1), out_mask=(0, 1, 0, 1), d_out="diff",
                in_pattern=(1, -1, 1, -1), in_mask=(1, 0, 1, 0), d_in="diff",
                rootw="chiA_cB"),
    "S21": dict(omega_signs=(1, -1, 1, -1, 1, -1),
                out_pattern=(1, -1, 1, -1), out_mask=(0, 1, 0, 1), d_out="diff",
                in_pattern=(1, -1, 1, -1), in_mask=(0, 1, 0, 1), d_in="ndiff",
                rootw="chiB_cA"),
    "S12": dict(omega_signs=(1, 1, -1, -1, 1, -1),
                out_pattern=(1, 1, -1, 1), out_mask=(1, 1, 0, 1), d_out="sum",
                in_pattern=(1, 1, -1, 1), in_mask=(0, 0, 1, 0), d_in="sum",
                rootw="chiA_cB"),
    "S22": dict(omega_signs=(-1, -1, 1, 1, 1, -1),
                out_pattern=(1, 1, 1, -1), out_mask=(0, 0, 0, 1), d_out="sum",
                in_pattern=(1, 1, -1, 1), in_mask=(1, 1, 0, 1), d_in="sum",
                rootw="chiA_cB"),
}


def _pairing_core(w: SpectralField, params: ModelParams, spec: dict,
                  tuple_weight=None, root_weight=None, with_mass: bool = False):
    """Shared evaluator for the four pairing sums and their variants.

    tuple_weight(ksqA, ksqB, tk, far, om) -> per-tuple weights (defaults
    to the far resonance weight); root_weight(iA, iB) -> scalar prefactor
    (defaults to the part's chi_N^2 |w|^2 combination). With with_mass the
    absolute-value mass of the aggregated terms is returned alongside.
    """
    ms = w.modeset
    modes, ksq, c = ms.modes, ms.ksq, w.coeffs
    mags = ms.knorm
    chin2 = params.chi_n(mags) ** 2
    tmax = 2.0 * float(mags.max()) ** params.theta if ms.n > 1 else 0.0
    out_groups = SmallTupleGroups(modes, spec["out_pattern"], tmax)
    same_in = (spec["in_pattern"] == spec["out_pattern"])
    in_groups = out_groups if same_in else SmallTupleGroups(modes, spec["in_pattern"], tmax)

    def delta(kind, a, b):
        if kind == "sum":
            return modes[a] + modes[b]
        if kind == "diff":
            return modes[b] - modes[a]
        return modes[a] - modes[b]

    total = []
    for ia in range(ms.n):
        for ib in range(ms.n):
            go = out_groups.get(delta(spec["d_out"], ia, ib))
            if go is None:
                continue
            gi = in_groups.get(delta(spec["d_in"], ia, ib))
            if gi is None:
                continue
            thr = mags[ia] ** params.theta + mags[ib] ** params.theta
            o_idx, o_mag = go
            keep_o = o_mag <= thr
            if not keep_o.any():
                continue
            i_idx, i_mag = gi
            keep_i = i_mag <= thr
            if not keep_i.any():
                continue
            o_idx = o_idx[keep_o]
            tk = ksq[o_idx]
            far, om = _far_weight_cols(ksq[ia], ksq[ib], tk, spec["omega_signs"], params)
            wgt = far if tuple_weight is None else tuple_weight(ksq[ia], ksq[ib], tk, far, om)
            out_sum = np.sum(wgt * _masked_product(c, o_idx, spec["out_mask"]))
            in_sum = np.sum(_masked_product(c, i_idx[keep_i], spec["in_mask"]))
            if root_weight is not None:
                rw = root_weight(ia, ib)
            elif spec["rootw"] == "chiA_cB":
                rw = chin2[ia] * abs(c[ib]) ** 2
            else:
                rw = chin2[ib] * abs(c[ia]) ** 2
            total.append(rw * out_sum * in_sum)
    if not total:
        return (0.0 + 0.0j, 0.0) if with_mass else 0.0 + 0.0j
    arr = np.asarray(total, dtype=np.complex128)
    value = _fsum_c(arr)
    if with_mass:
        return value, math.fsum(np.abs(arr))
    return value


def part_S(w: SpectralField, params: ModelParams, which: str) -> complex:
    """Pairing contribution over one of the four cross-generation pairing sets."""
    if which not in _S_SPECS:
        raise ParameterError(f"which must be one of {sorted(_S_SPECS)}, got {which!r}")
    return _pairing_core(w, params, _S_SPECS[which])


def part_S21_relabelled(w: SpectralField, params: ModelParams) -> complex:
    """The principal second-family pairing sum in its relabelled form: the
    S11 index set with the chi_N^2 |w|^2 weight moved to the other large leg."""
    spec = dict(_S_SPECS["S11"])
    spec["rootw"] = "chiB_cA"
    return _pairing_core(w, params, spec)


def j_functional(w: SpectralField, params: ModelParams) -> complex:
    """Corrector-weighted principal pairing sum; Im J = Im(S11 - S21)."""
    ms = w.modeset
    chin2 = params.chi_n(ms.knorm) ** 2
    c = w.coeffs
    prof = params.scalar_profile
    s, d0 = params.s, params.delta0

    def tuple_weight(ka, kb, tk, far, om):
        denom = float(ka + kb)
        chi2 = 1.0 if denom == 0 else prof(abs(float(ka - kb)) / denom ** (d0 / 2))
        return far - (1.0 - chi2) * diff_quotient_minus(ka, kb, s)

    def root_weight(ia, ib):
        return chin2[ia] * abs(c[ib]) ** 2 - chin2[ib] * abs(c[ia]) ** 2

    return _pairing_core(w, params, _S_SPECS["S11"], tuple_weight, root_weight)


def i_functional(w: SpectralField, params: ModelParams) -> complex:
    """Corrector-weighted secondary pairing sum; Im I = Im S12.

    The corrector subtracts the (k1,k3) sum-quotient from the actual far
    weight, so the identity is exact at any truncation level; on tuples
    where the resonance cutoff is saturated it coincides with the plain
    psi/Omega - (|k1|^{2s}+|k3|^{2s})/(|k1|^2+|k3|^2) corrector.
    """
    s = params.s

    def tuple_weight(ka, kb, tk, far, om):
        return far - diff_quotient_plus(ka, kb, s)

    return _pairing_core(w, params, _S_SPECS["S12"], tuple_weight)


def main_part_11(w: SpectralField, params: ModelParams):
    """The subtracted principal main part and its absolute-value mass.

    A weighted sum of squared moduli: real up to rounding (and exactly
    antisymmetric in the two large legs, so the total itself vanishes);
    the imaginary part is compared against the mass."""
    ms = w.modeset
    chin2 = params.chi_n(ms.knorm) ** 2
    c = w.coeffs
    prof = params.scalar_profile
    s, d0 = params.s, params.delta0

    def tuple_weight(ka, kb, tk, far, om):
        denom = float(ka + kb)
        chi2 = 1.0 if denom == 0 else prof(abs(float(ka - kb)) / denom ** (d0 / 2))
        return np.full(len(tk), (1.0 - chi2) * diff_quotient_minus(ka, kb, s))

    def root_weight(ia, ib):
        return chin2[ia] * abs(c[ib]) ** 2 - chin2[ib] * abs(c[ia]) ** 2

    return _pairing_core(w, params, _S_SPECS["S11"], tuple_weight, root_weight,
                         with_mass=True)


def main_part_12(w: SpectralField, params: ModelParams):
    """The subtracted secondary main part and its absolute-value mass
    (real up to rounding)."""
    s = params.s

    def tuple_weight(ka, kb, tk, far, om):
        return np.full(len(tk), diff_quotient_plus(ka, kb, s))

    return _pairing_core(w, params, _S_SPECS["S12"], tuple_weight, with_mass=True)


# ---------------------------------------------------------------------------
# raw second-generation enumeration (oracle path, tiny N)

def _all_five_tuples(n: int) -> np.ndarray:
    return np.array(np.meshgrid(*([np.arange(n)] * 5), indexing="ij"),
                    dtype=np.int64).reshape(5, -1).T


def _group_rows_by(values: np.ndarray):
    order = np.argsort(values, kind="stable")
    sv = values[order]
    starts = np.flatnonzero(np.concatenate(([True], sv[1:] != sv[:-1])))
    return order, np.append(starts, len(sv)), sv


def second_gen_breakdown(w: SpectralField, params: ModelParams, family: str = "R1",
                         slots: bool = True, budget: float = DEFAULT_BUDGET,
                         chunk: int = 256) -> dict:
    """Raw 9-free-index evaluation of a second-generation sum.

    Every tuple's value is materialized (no factorization of the summation),
    so this is the independent oracle for the grid-accelerated path. With
    slots=True it additionally returns per-slot pairing sums, the slot
    multiplicity counts, and the remainder split by type (A/B/C) plus the
    multi-pairing overlap correction, so that
    total = sum(principal slots) + sum(secondary slots) + remainder_total.
    """
    from .resonance import _SLOTS
    if family not in ("R1", "R2"):
        raise ParameterError(f"family must be 'R1' or 'R2', got {family!r}")
    ms = w.modeset
    n = ms.n
    if float(n) ** 9 > budget:
        raise BudgetExceededError(float(n) ** 9, budget)
    modes, ksq, c = ms.modes, ms.ksq, w.coeffs
    mags = ms.knorm
    chin2 = params.chi_n(mags) ** 2
    theta = params.theta

    idx5 = _all_five_tuples(n)
    m5 = modes[idx5]  # (Q, 5, d)

    # inner side: root = p1 - p2 + p3 - p4 + p5 (q's likewise)
    in_root = ms.lookup(m5[:, 0] - m5[:, 1] + m5[:, 2] - m5[:, 3] + m5[:, 4])
    keep_in = in_root >= 0
    in_idx, in_root = idx5[keep_in], in_root[keep_in]
    cin = c[in_idx]
    in_prod = cin[:, 0] * np.conj(cin[:, 1]) * cin[:, 2] * np.conj(cin[:, 3]) * cin[:, 4]
    if family == "R2":
        in_prod = np.conj(in_prod)

    # outer side: R1 rows are (k2..k6) with root k1 = k2-k3+k4-k5+k6;
    # R2 rows are (k1,k3,k4,k5,k6) with root k2 = k1+k3-k4+k5-k6.
    if family == "R1":
        out_root = ms.lookup(m5[:, 0] - m5[:, 1] + m5[:, 2] - m5[:, 3] + m5[:, 4])
    else:
        out_root = ms.lookup(m5[:, 0] + m5[:, 1] - m5[:, 2] + m5[:, 3] - m5[:, 4])
    keep_out = out_root >= 0
    out_idx, out_root = idx5[keep_out], out_root[keep_out]
    cout = c[out_idx]
    if family == "R1":
        out_prod = (np.conj(cout[:, 0]) * cout[:, 1] * np.conj(cout[:, 2])
                    * cout[:, 3] * np.conj(cout[:, 4]))
        o_ksq = np.column_stack([ksq[out_root], *[ksq[out_idx[:, j]] for j in range(5)]])
    else:
        out_prod = (cout[:, 0] * cout[:, 1] * np.conj(cout[:, 2])
                    * cout[:, 3] * np.conj(cout[:, 4]))
        o_ksq = np.column_stack([ksq[out_idx[:, 0]], ksq[out_root],
                                 *[ksq[out_idx[:, j]] for j in range(1, 5)]])
    sgn = np.array([1, -1, 1, -1, 1, -1], dtype=np.int64)
    om = (o_ksq * sgn).sum(axis=1)
    lam2 = o_ksq.sum(axis=1).astype(float)
    psi = ((o_ksq.astype(float) ** params.s) * sgn).sum(axis=1)
    chi = np.ones(len(om))
    pos = lam2 > 0
    chi[pos] = params.scalar_profile(np.abs(om[pos]) / lam2[pos] ** (params.delta0 / 2))
    far = np.zeros(len(om))
    nz = om != 0
    far[nz] = (1.0 - chi[nz]) * psi[nz] / om[nz]
    out_weighted = far * chin2[out_root] * out_prod

    principal, secondary = _SLOTS[family]
    in_mag = mags[in_idx]
    out_mag = mags[out_idx]
    in_msum = in_mag.sum(axis=1)
    out_msum = out_mag.sum(axis=1)
    in_top2 = -np.sort(-in_mag, axis=1)[:, :2]
    out_top2 = -np.sort(-out_mag, axis=1)[:, :2]

    total = 0.0 + 0.0j
    slot_p = np.zeros(len(principal), dtype=np.complex128)
    slot_s = np.zeros(len(secondary), dtype=np.complex128)
    count_p = np.zeros(len(principal), dtype=np.int64)
    count_s = np.zeros(len(secondary), dtype=np.int64)
    type_sums = {"A": 0.0 + 0.0j, "B": 0.0 + 0.0j, "C": 0.0 + 0.0j, "overlap": 0.0 + 0.0j}
    type_counts = {"A": 0, "B": 0, "C": 0, "overlap": 0}

    in_order, in_bounds, in_roots_sorted = _group_rows_by(in_root)
    out_order, out_bounds, out_roots_sorted = _group_rows_by(out_root)
    in_keys = in_roots_sorted[in_bounds[:-1]]
    out_keys = out_roots_sorted[out_bounds[:-1]]
    out_key_pos = {int(k): g for g, k in enumerate(out_keys)}

    for gi, root in enumerate(map(int, in_keys)):
        go = out_key_pos.get(root)
        if go is None:
            continue
        rows_i = in_order[in_bounds[gi]:in_bounds[gi + 1]]
        rows_o = out_order[out_bounds[go]:out_bounds[go + 1]]
        wk = out_weighted[rows_o]                      # (mo,)
        root_mag_t = mags[root] ** theta
        if slots:
            thr = root_mag_t + out_mag[rows_o] ** theta          # (mo, 5)
            osmall = (out_msum[rows_o, None] - out_mag[rows_o]) <= thr  # per leaf b
            i_mag_g = in_mag[rows_i]
            i_msum_g = in_msum[rows_i]
        for lo in range(0, len(rows_i), chunk):
            ri = rows_i[lo:lo + chunk]
            f_block = in_prod[ri, None] * wk[None, :]  # raw tuple values
            total += complex(f_block.sum())
            if not slots:
                continue
            mi = len(ri)
            m_cnt = np.zeros((mi, len(rows_o)), dtype=np.int16)
            for si, (a, b) in enumerate(principal):
                eq = in_idx[ri, a, None] == out_idx[rows_o, b][None, :]
                small = ((i_msum_g[lo:lo + mi, None] - i_mag_g[lo:lo + mi, a][:, None])
                         <= thr[None, :, b]) & osmall[None, :, b] & eq
                if small.any():
                    slot_p[si] += complex(f_block[small].sum())
                    count_p[si] += int(small.sum())
                m_cnt += small
            for si, (a, b) in enumerate(secondary):
                eq = in_idx[ri, a, None] == out_idx[rows_o, b][None, :]
                small = ((i_msum_g[lo:lo + mi, None] - i_mag_g[lo:lo + mi, a][:, None])
                         <= thr[None, :, b]) & osmall[None, :, b] & eq
                if small.any():
                    slot_s[si] += complex(f_block[small].sum())
                    count_s[si] += int(small.sum())
                m_cnt += small
            # remainder: weight 1 - m over tuples with m != 1
            free = m_cnt == 0
            over = m_cnt >= 2
            if over.any():
                type_sums["overlap"] += complex(
                    ((1.0 - m_cnt[over]) * f_block[over]).sum())
                type_counts["overlap"] += int(over.sum())
            if free.any():
                i1 = in_top2[ri, 0][:, None]
                i2 = in_top2[ri, 1][:, None]
                o1 = out_top2[rows_o, 0][None, :]
                o2 = out_top2[rows_o, 1][None, :]
                k1m = np.maximum(i1, o1)
                k2m = np.where(i1 >= o1, np.maximum(i2, o1), np.maximum(o2, i1))
                tail = (i_msum_g[lo:lo + mi, None] + out_msum[rows_o][None, :]) - k1m - k2m
                thr2 = k1m**theta + k2m**theta
                is_a = (tail > thr2) & free
                is_b = ~(tail > thr2) & (((i1 >= o1) & (i2 >= o1))
                                         | ((o1 > i1) & (o2 > i1))) & free
                is_c = free & ~is_a & ~is_b
                for name, mask in (("A", is_a), ("B", is_b), ("C", is_c)):
                    if mask.any():
                        type_sums[name] += complex(f_block[mask].sum())
                        type_counts[name] += int(mask.sum())

    out = {"family": family, "total": total}
    if slots:
        remainder_total = sum(type_sums.values())
        out.update({
            "slot_principal": slot_p.tolist(),
            "slot_secondary": slot_s.tolist(),
            "slot_principal_counts": count_p.tolist(),
            "slot_secondary_counts": count_s.tolist(),
            "type_sums": {k: v for k, v in type_sums.items()},
            "type_counts": dict(type_counts),
            "remainder_total": remainder_total,
            "identity_residual": abs(total - (slot_p.sum() + slot_s.sum() + remainder_total))
            / (1.0 + abs(total)),
        })
    return out


# ---------------------------------------------------------------------------
# first-generation pairing split

def part_R0_split(w: SpectralField, params: ModelParams,
                  budget: float = DEFAULT_BUDGET):
    """Near sum split into tuples with/without an opposite-signature pairing.

    The 'paired' bucket is the first-generation pairing reduction that the
    direct estimates remove up front; paired + unpaired = part_R0.
    """
    tab = pair_table(params, w.cutoff, budget)
    to, te = tab.triples[tab.rows_o], tab.triples[tab.rows_e]
    paired = np.zeros(len(to), dtype=bool)
    for i in range(3):
        for j in range(3):
            paired |= to[:, i] == te[:, j]
    tp = tab.triple_products(w.coeffs)
    vals = tab.mult * tab.near * (tp[tab.rows_o] * np.conj(tp[tab.rows_e])).imag
    return (complex(0.0, math.fsum(vals[paired])),
            complex(0.0, math.fsum(vals[~paired])))


# ---------------------------------------------------------------------------
# corrector audits (exhaustive scans over the pairing shadows)

def corrector_audit(params: ModelParams, kmax: int, which: str,
                    lemma_floor: float = 1.0) -> dict:
    """Exhaustive corrector-ratio audit over the outer shadow of a pairing set.

    which='psi': principal pairing geometry, ratio |Psi|*|Omega| /
    (|k_(1)|^{2s-2} |k_(3)|^2) over rows with |Omega| >= lemma_floor *
    |k_(1)|^{delta0}. which='psi_tilde': secondary geometry with the
    sum-quotient corrector (rows with Omega = 0 cannot carry it and are
    skipped). Magnitude rearrangements are over the six outer frequencies.
    """
    from .lattice import modes_within
    if which not in ("psi", "psi_tilde"):
        raise ParameterError("which must be 'psi' or 'psi_tilde'")
    d, s, d0, theta = params.d, params.s, params.delta0, params.theta
    prof = params.scalar_profile
    modes = modes_within(kmax, d)
    ksq = np.sum(modes * modes, axis=1)
    mags = np.sqrt(ksq.astype(float))
    n = len(modes)
    if which == "psi":
        pattern, signs = (1, -1, 1, -1), (1, -1, 1, -1, 1, -1)
    else:
        pattern, signs = (1, 1, -1, 1), (1, 1, -1, -1, 1, -1)
    tmax = 2.0 * float(mags.max()) ** theta
    groups = SmallTupleGroups(modes, pattern, tmax)
    best = {"max_ratio": 0.0, "witness": None, "rows": 0,
            "max_corrector_below_floor": 0.0, "skipped_omega_zero": 0}
    for ia in range(n):
        for ib in range(n):
            delta = modes[ib] - modes[ia] if which == "psi" else modes[ia] + modes[ib]
            g = groups.get(delta)
            if g is None:
                continue
            idx, msum = g
            thr = mags[ia] ** theta + mags[ib] ** theta
            keep = msum <= thr
            if not keep.any():
                continue
            idx = idx[keep]
            tk = ksq[idx]
            far, om = _far_weight_cols(ksq[ia], ksq[ib], tk, signs, params)
            if which == "psi":
                denom2 = float(ksq[ia] + ksq[ib])
                chi2 = 1.0 if denom2 == 0 else prof(abs(float(ksq[ia] - ksq[ib])) / denom2 ** (d0 / 2))
                corr = far - (1.0 - chi2) * diff_quotient_minus(ksq[ia], ksq[ib], s)
            else:
                # psi in the secondary layout (A, B on the plus side)
                psi_cols = (float(ksq[ia]) ** s + float(ksq[ib]) ** s
                            + (np.array([-1.0, -1.0, 1.0, -1.0])
                               * tk.astype(float) ** s).sum(axis=1))
                nzm = om != 0
                best["skipped_omega_zero"] += int((~nzm).sum())
                corr = np.zeros(len(om))
                corr[nzm] = psi_cols[nzm] / om[nzm] - diff_quotient_plus(ksq[ia], ksq[ib], s)
            six = np.column_stack([np.full(len(idx), ksq[ia]), np.full(len(idx), ksq[ib]), tk])
            six.sort(axis=1)
            k1sq = six[:, -1].astype(float)
            k3sq = six[:, -3].astype(float)
            denom = k1sq ** (s - 1) * k3sq
            ratio = np.zeros(len(idx))
            ok = (denom > 0) & (om != 0)
            ratio[ok] = np.abs(corr[ok]) * np.abs(om[ok]) / denom[ok]
            in_region = np.abs(om) >= lemma_floor * k1sq ** (d0 / 2)
            best["rows"] += int(len(idx))
            r = np.where(ok & in_region, ratio, 0.0)
            i = int(np.argmax(r)) if len(r) else 0
            if len(r) and r[i] > best["max_ratio"]:
                best["max_ratio"] = float(r[i])
                best["witness"] = {"A": modes[ia].tolist(), "B": modes[ib].tolist(),
                                   "tuple": modes[idx[i]].tolist(), "omega": int(om[i])}
            below = (denom > 0) & ~in_region
            if below.any():
                m = float(np.abs(corr[below]).max())
                best["max_corrector_below_floor"] = max(best["max_corrector_below_floor"], m)
    best.update({"which": which, "kmax": kmax, "s": s, "delta0": d0, "theta": theta})
    return best


# ---------------------------------------------------------------------------
# assembled report

@dataclass
class EnergyReport:
    params: ModelParams
    e_sN: float
    r_sN: float
    q_sN: float
    parts: dict = field(default_factory=dict)
    identities: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    wall_time: float = 0.0
    remainder_split: dict | None = None

    def to_json_dict(self) -> dict:
        def cx(z):
            z = complex(z)
            return {"re": z.real, "im": z.imag}
        out = {
            "params": self.params.as_dict(),
            "e_sN": self.e_sN, "r_sN": self.r_sN, "q_sN": self.q_sN,
            "parts": {k: cx(v) for k, v in self.parts.items()},
            "identities": dict(self.identities),
            "counts": dict(self.counts),
            "wall_time": self.wall_time,
        }
        if self.remainder_split is not None:
            rs = dict(self.remainder_split)
            for key in ("slot_principal", "slot_secondary"):
                if key in rs:
                    rs[key] = [cx(v) for v in rs[key]]
            if "type_sums" in rs:
                rs["type_sums"] = {k: cx(v) for k, v in rs["type_sums"].items()}
            for key in ("total", "remainder_total"):
                if key in rs:
                    rs[key] = cx(rs[key])
            out["remainder_split"] = rs
        return out


def _rel(x: float, scale: float) -> float:
    return abs(x) / max(scale, 1e-300)


def q_total(u: SpectralField, params: ModelParams, with_pairings: bool = True,
            with_direct: bool = False, budget: float = DEFAULT_BUDGET) -> EnergyReport:
    """All decomposition parts, the assembled derivative value and identity
    residuals for one field."""
    t0 = time.perf_counter()
    w = weighted_field(u, params)
    r0 = part_R0(w, params, budget)
    r1 = part_R1(w, params, "grid", budget)
    r2 = part_R2(w, params, "grid", budget)
    q = (-r0 / 6.0 + r1 / 2.0 - r2 / 2.0).imag
    parts = {"R0": r0, "R1": r1, "R2": r2}
    scale_r1 = max(abs(r1), 1e-300)
    identities = {
        "r2_is_conj_r1": abs(r2 - np.conj(r1)) / (1.0 + abs(r1)),
        "r0_purely_imaginary": _rel(r0.real, 1.0 + abs(r0)),
    }
    counts = {"modes": w.modeset.n,
              "pair_rows": len(pair_table(params, w.cutoff, budget).rows_o),
              "outer_rows": len(outer_table(params, w.cutoff, budget).row_root)}
    report = EnergyReport(
        params=params,
        e_sN=modified_energy(u, params, budget=budget),
        r_sN=correction_R_sN(u, params, budget=budget),
        q_sN=q, parts=parts, identities=identities, counts=counts,
    )
    if with_pairings:
        s11 = part_S(w, params, "S11")
        s12 = part_S(w, params, "S12")
        s21 = part_S(w, params, "S21")
        s22 = part_S(w, params, "S22")
        s21r = part_S21_relabelled(w, params)
        jv = j_functional(w, params)
        iv = i_functional(w, params)
        m11, m11_mass = main_part_11(w, params)
        m12, m12_mass = main_part_12(w, params)
        r13 = r1 - 9.0 * s11 - 4.0 * s12
        r23 = r2 - 9.0 * s21 - 4.0 * s22
        parts.update({"S11": s11, "S12": s12, "S21": s21, "S22": s22,
                      "R13": r13, "R23": r23, "J": jv, "I": iv,
                      "main11": m11, "main12": m12})
        scale_s = max(abs(s11), abs(s12), abs(s21), abs(s22), 1e-300)
        identities.update({
            "s22_is_conj_s12": abs(s22 - np.conj(s12)) / (1.0 + abs(s12)),
            "s21_relabelling": abs(s21 - s21r) / (1.0 + abs(s21)),
            "im_s11_minus_s21_is_im_j": abs((s11 - s21).imag - jv.imag) / (1.0 + abs(jv.imag)),
            "im_s12_is_im_i": abs(s12.imag - iv.imag) / (1.0 + abs(iv.imag)),
            "main11_imag_vs_mass": _rel(complex(m11).imag, m11_mass),
            "main12_imag_vs_mass": _rel(complex(m12).imag, m12_mass),
        })
    if with_direct:
        bd1 = second_gen_breakdown(w, params, "R1", slots=True, budget=budget)
        bd2 = second_gen_breakdown(w, params, "R2", slots=True, budget=budget)
        report.remainder_split = {"R1": bd1, "R2": bd2}
        identities.update({
            "dual_path_r1": abs(bd1["total"] - r1) / (1.0 + abs(r1)),
            "dual_path_r2": abs(bd2["total"] - r2) / (1.0 + abs(r2)),
        })
        if with_pairings:
            sp1 = np.asarray(bd1["slot_principal"])
            ss1 = np.asarray(bd1["slot_secondary"])
            identities.update({
                "slot_uniformity_r1": float(np.max(np.abs(sp1 - s11)) / (1.0 + abs(s11))),
                "slot_secondary_uniformity_r1": float(np.max(np.abs(ss1 - s12)) / (1.0 + abs(s12))),
                "r13_direct": abs(bd1["remainder_total"] - (r1 - 9 * s11 - 4 * s12))
                / (1.0 + abs(r1)),
                "r23_direct": abs(bd2["remainder_total"] - (r2 - 9 * s21 - 4 * s22))
                / (1.0 + abs(r2)),
            })
    report.wall_time = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# batched evaluation (ensembles)

@njit(cache=True)
def _ker_pair_batch(rows_o, rows_e, wgt, tp_re, tp_im, want_imag, out):
    """Kahan-compensated sum over table rows of wgt * Re-or-Im(tp_o * conj(tp_e))
    for each batch column."""
    nb = tp_re.shape[1]
    acc = np.zeros(nb)
    comp = np.zeros(nb)
    for r in range(rows_o.shape[0]):
        o = rows_o[r]
        e = rows_e[r]
        wr = wgt[r]
        for b in range(nb):
            if want_imag:
                v = wr * (tp_im[o, b] * tp_re[e, b] - tp_re[o, b] * tp_im[e, b])
            else:
                v = wr * (tp_re[o, b] * tp_re[e, b] + tp_im[o, b] * tp_im[e, b])
            y = v - comp[b]
            t = acc[b] + y
            comp[b] = (t - acc[b]) - y
            acc[b] = t
    for b in range(nb):
        out[b] += acc[b]


@njit(cache=True)
def _ker_outer_imag_batch(row_root, row_pair, row_tri, wgt,
                          pr_re, pr_im, pp_re, pp_im, tp_re, tp_im, out):
    """Kahan sum of wgt * Im(proot * pairprod * conj(triprod)) per batch column."""
    nb = pr_re.shape[1]
    acc = np.zeros(nb)
    comp = np.zeros(nb)
    for r in range(row_root.shape[0]):
        i = row_root[r]
        p = row_pair[r]
        t = row_tri[r]
        wr = wgt[r]
        for b in range(nb):
            ar = pr_re[i, b] * pp_re[p, b] - pr_im[i, b] * pp_im[p, b]
            ai = pr_re[i, b] * pp_im[p, b] + pr_im[i, b] * pp_re[p, b]
            v = wr * (ai * tp_re[t, b] - ar * tp_im[t, b])
            y = v - comp[b]
            tt = acc[b] + y
            comp[b] = (tt - acc[b]) - y
            acc[b] = tt
    for b in range(nb):
        out[b] += acc[b]


def _weighted_matrix(coeffs: np.ndarray, src_cutoff: int, params: ModelParams) -> np.ndarray:
    """Restrict a (B, n_src) coefficient matrix to the truncation ball and
    apply chi_N columnwise."""
    src = get_modeset(params.d, src_cutoff)
    tgt = get_modeset(params.d, params.N)
    idx = src.lookup(tgt.modes)
    if np.any(idx < 0):
        raise ParameterError("source ensemble does not cover the truncation ball")
    return coeffs[:, idx] * params.chi_n(tgt.knorm)[None, :]


def correction_batch(coeffs: np.ndarray, src_cutoff: int, params: ModelParams,
                     budget: float = DEFAULT_BUDGET, batch: int = 64) -> np.ndarray:
    """R_{s,N} for each row of a (B, n_src) coefficient ensemble."""
    wmat = _weighted_matrix(coeffs, src_cutoff, params)
    tab = pair_table(params, params.N, budget)
    out = np.zeros(wmat.shape[0])
    for lo in range(0, wmat.shape[0], batch):
        blk = wmat[lo:lo + batch]
        tp = tab.triple_products(blk).T.copy()  # (T, b)
        acc = np.zeros(blk.shape[0])
        _ker_pair_batch(tab.rows_o, tab.rows_e, tab.mult * tab.far,
                        np.ascontiguousarray(tp.real), np.ascontiguousarray(tp.imag),
                        False, acc)
        out[lo:lo + batch] = acc / 6.0
    return out


def q_batch(coeffs: np.ndarray, src_cutoff: int, params: ModelParams,
            budget: float = DEFAULT_BUDGET, batch: int = 64) -> np.ndarray:
    """Q_{s,N} for each ensemble row.

    Uses Q = -Im R0 / 6 + Im R1: the second-generation family with the root
    on the conjugate side is the complex conjugate of the first (index
    relabelling), so only one family is evaluated.
    """
    wmat = _weighted_matrix(coeffs, src_cutoff, params)
    ptab = pair_table(params, params.N, budget)
    otab = outer_table(params, params.N, budget)
    ms = get_modeset(params.d, params.N)
    chin2 = params.chi_n(ms.knorm) ** 2
    M = dealias_size(params.N)
    scatter = ms.grid_scatter_index(M)
    out = np.zeros(wmat.shape[0])
    for lo in range(0, wmat.shape[0], batch):
        blk = wmat[lo:lo + batch]
        nb = blk.shape[0]
        # R0 (imaginary part)
        tp = ptab.triple_products(blk).T.copy()
        im_r0 = np.zeros(nb)
        _ker_pair_batch(ptab.rows_o, ptab.rows_e, ptab.mult * ptab.near,
                        np.ascontiguousarray(tp.real), np.ascontiguousarray(tp.imag),
                        True, im_r0)
        # quintic coefficients per sample
        cube = np.zeros((nb,) + (M,) * params.d, dtype=np.complex128)
        cube[(slice(None),) + scatter] = blk
        grid = np.fft.ifftn(cube, axes=tuple(range(1, params.d + 1))) * M**params.d
        nl = np.abs(grid) ** 4 * grid
        back = np.fft.fftn(nl, axes=tuple(range(1, params.d + 1))) / M**params.d
        proot = back[(slice(None),) + scatter] * chin2[None, :]
        pr = proot.T.copy()
        pp = otab.pair_products(blk).T.copy()
        tp3 = otab.triple_products(blk).T.copy()
        im_r1 = np.zeros(nb)
        _ker_outer_imag_batch(otab.row_root, otab.row_pair, otab.row_triple,
                              otab.mult * otab.far,
                              np.ascontiguousarray(pr.real), np.ascontiguousarray(pr.imag),
                              np.ascontiguousarray(pp.real), np.ascontiguousarray(pp.imag),
                              np.ascontiguousarray(tp3.real), np.ascontiguousarray(tp3.imag),
                              im_r1)
        out[lo:lo + batch] = -im_r0 / 6.0 + im_r1
    return out

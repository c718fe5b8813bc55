"""Monte Carlo experiments: moment growth, chaos audits, weight
integrability, measure transport, and pointwise laws.

Estimation conventions: L^p norms are plug-in empirical moments with a
Kish effective-sample-size guard (norms with ESS below the threshold are
flagged unreliable and excluded from fits). Growth exponents in p are
additionally estimated through the tail-quantile ladder: for a random
variable with stretched-exponential tail exp(-c t^kappa) the p-norm grows
like p^{1/kappa}, and 1/kappa equals the slope of log-quantile against
log(-log(tail probability)), which is estimable from moderate quantiles
where plug-in high-p moments saturate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox, SeedSequence
from scipy import stats

from .energetics import correction_batch, q_batch
from .errors import ParameterError
from .dynamics import evolve_coeffs
from .lattice import get_modeset
from .params import ModelParams
from .randomfield import SamplerSpec, sample_ensemble_matrix

KISH_MIN = 50.0


@dataclass
class MCConfig:
    ensemble_size: int = 10_000
    p_grid: tuple = (2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64)
    t_grid: tuple = (0.5,)
    R: float = 10.0
    n_low: int = 4
    n_tail: int = 16
    master_seed: int = 20_240_817
    stream_id: int = 0
    bootstrap: int = 200
    dt: float = 1e-3

    def __post_init__(self):
        if self.ensemble_size < 2:
            raise ParameterError("ensemble_size must be >= 2")
        if list(self.p_grid) != sorted(self.p_grid) or min(self.p_grid) < 2:
            raise ParameterError("p_grid must be sorted with entries >= 2")


def _rng(mc: MCConfig, tag: int) -> Generator:
    return Generator(Philox(SeedSequence([mc.master_seed, mc.stream_id, tag])))


def kish_ess(weights: np.ndarray) -> float:
    s1 = float(np.sum(weights))
    s2 = float(np.sum(weights**2))
    return s1 * s1 / s2 if s2 > 0 else 0.0


def wilson_ci(k: int, n: int, z: float = 1.96):
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    den = 1 + z**2 / n
    mid = (p + z**2 / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z**2 / (4 * n**2)) / den
    return (max(0.0, mid - half), min(1.0, mid + half))


def _fit_slope(x: np.ndarray, y: np.ndarray) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    xm, ym = x.mean(), y.mean()
    return float(np.dot(x - xm, y - ym) / np.dot(x - xm, x - xm))


def empirical_lp(values: np.ndarray, p: float) -> float:
    a = np.abs(np.asarray(values)).astype(float)
    m = a.max()
    if m == 0:
        return 0.0
    return float(m * np.mean((a / m) ** p) ** (1.0 / p))


def lp_table(values: np.ndarray, p_grid) -> list[dict]:
    """Plug-in p-norms with Kish reliability flags."""
    rows = []
    a = np.abs(np.asarray(values)).astype(float)
    m = a.max() if len(a) else 0.0
    for p in p_grid:
        w = (a / m) ** p if m > 0 else a
        ess = kish_ess(w)
        rows.append({"p": float(p), "norm": empirical_lp(values, p),
                     "kish_ess": ess, "reliable": bool(ess >= KISH_MIN)})
    return rows


def fit_p_exponent(rows: list[dict], upper_half: bool = True,
                   allow_unreliable: bool = False):
    """LS slope of log norm against log p over the reliable rows.

    With allow_unreliable, a fit over all positive rows is returned when
    fewer than two rows pass the Kish guard (the rows stay flagged)."""
    ok = [r for r in rows if r["reliable"] and r["norm"] > 0]
    if len(ok) < 2 and allow_unreliable:
        ok = [r for r in rows if r["norm"] > 0]
    if len(ok) < 2:
        return None, []
    if upper_half:
        ok = ok[max(0, len(ok) // 2 - 1):]
    x = np.log([r["p"] for r in ok])
    y = np.log([r["norm"] for r in ok])
    return _fit_slope(x, y), [r["p"] for r in ok]


def tail_ladder_exponent(values: np.ndarray, n_levels: int = 8,
                         alpha_max: float = 0.05, min_tail: int = 50):
    """Slope of log-quantile vs log(-log alpha) over a geometric tail ladder.

    For exp(-c t^kappa) tails this estimates 1/kappa, the p-norm growth
    exponent, from quantiles that are individually well resolved.
    """
    a = np.abs(np.asarray(values)).astype(float)
    n = len(a)
    alpha_min = max(min_tail / n, 1.0 / n)
    if alpha_min >= alpha_max:
        return None, []
    levels = np.exp(np.linspace(np.log(-np.log(alpha_max)),
                                np.log(-np.log(alpha_min)), n_levels))
    alphas = np.exp(-levels)
    qs = np.quantile(a, 1.0 - alphas)
    keep = qs > 0
    if keep.sum() < 2:
        return None, []
    slope = _fit_slope(np.log(levels[keep]), np.log(qs[keep]))
    return slope, list(zip(alphas[keep].tolist(), qs[keep].tolist()))


def bootstrap_ci(sample_fn, rng: Generator, n: int, reps: int = 200,
                 lo: float = 2.5, hi: float = 97.5):
    vals = []
    for _ in range(reps):
        idx = rng.integers(0, n, size=n)
        v = sample_fn(idx)
        if v is not None and np.isfinite(v):
            vals.append(v)
    if not vals:
        return (float("nan"), float("nan"))
    return (float(np.percentile(vals, lo)), float(np.percentile(vals, hi)))


# ---------------------------------------------------------------------------
# moment growth of the energy derivative (weighted energy estimate echo)

def moment_growth(params: ModelParams, mc: MCConfig, observable=None) -> dict:
    """p-norm growth of the ball-masked energy derivative under the Gaussian
    ensemble, with the fitted exponent and a bootstrap CI."""
    spec = SamplerSpec(params, mc.n_low, mc.n_tail, mc.master_seed, mc.stream_id)
    coeffs = sample_ensemble_matrix(spec, mc.ensemble_size)
    ms = get_modeset(params.d, mc.n_tail)
    wsig = (1.0 + ms.ksq.astype(float)) ** params.sigma
    norms = np.sqrt(np.abs(coeffs) ** 2 @ wsig)
    mask = norms <= mc.R
    if not mask.any():
        return {"status": "empty_ball", "R": mc.R, "ensemble": mc.ensemble_size}
    if observable is None:
        q = q_batch(coeffs, mc.n_tail, params)
    else:
        q = observable(coeffs)
    masked = np.where(mask, q, 0.0)
    rows = lp_table(masked, mc.p_grid)
    beta, fit_ps = fit_p_exponent(rows, allow_unreliable=True)
    fit_reliable = bool(fit_ps) and all(
        r["reliable"] for r in rows if r["p"] in fit_ps)
    rng = _rng(mc, 101)

    def beta_of(idx):
        b, _ = fit_p_exponent(lp_table(masked[idx], mc.p_grid),
                              allow_unreliable=True)
        return b

    ci = bootstrap_ci(beta_of, rng, len(masked), mc.bootstrap)
    beta_tail, ladder = tail_ladder_exponent(masked[mask])
    return {
        "status": "ok", "table": rows, "beta_hat": beta, "beta_ci": ci,
        "fit_ps": fit_ps, "fit_reliable": fit_reliable,
        "beta_tail": beta_tail, "ladder": ladder,
        "ball_fraction": float(mask.mean()), "ensemble": mc.ensemble_size,
        "R": mc.R, "N": params.N,
    }


# ---------------------------------------------------------------------------
# Wiener chaos audit

def chaos_samples(degree: int, form: str, size: int, rng: Generator,
                  coefficients=None) -> np.ndarray:
    """Samples of a degree-n polynomial of i.i.d. standard complex Gaussians."""
    if form == "linear":
        c = np.asarray(coefficients if coefficients is not None else [1.0, 0.5, 0.25])
        g = (rng.standard_normal((size, len(c))) + 1j * rng.standard_normal((size, len(c)))) / np.sqrt(2)
        out = g @ c
        if degree != 1:
            raise ParameterError("linear form has degree 1")
        return out
    if form == "monomial":
        g = (rng.standard_normal((size, degree)) + 1j * rng.standard_normal((size, degree))) / np.sqrt(2)
        return np.prod(g, axis=1)
    if form == "power":
        g = (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2)
        return g**degree
    if form == "constant":
        return np.ones(size, dtype=complex)
    raise ParameterError(f"unknown chaos form {form!r}")


def chaos_audit(degree: int, mc: MCConfig, form: str = "power",
                coefficients=None) -> dict:
    """Growth-exponent audit of ||F||_p / ||F||_2 for a degree-n Gaussian form.

    Reports the tail-ladder exponent (the headline estimate), the plug-in
    fit over Kish-reliable p (a lower-biased check), and the p=4 / p=2
    norm ratio.
    """
    rng = _rng(mc, 202)
    vals = chaos_samples(degree, form, mc.ensemble_size, rng, coefficients)
    rows = lp_table(vals, mc.p_grid)
    beta_plugin, fit_ps = fit_p_exponent(rows)
    beta_tail, ladder = tail_ladder_exponent(vals)
    if form == "constant":
        beta_tail = 0.0 if beta_tail is None else 0.0
    n2 = empirical_lp(vals, 2)
    n4 = empirical_lp(vals, 4)
    return {
        "degree": degree, "form": form, "table": rows,
        "beta_plugin": beta_plugin, "fit_ps": fit_ps,
        "beta_tail": beta_tail, "ladder": ladder,
        "ratio_p4_p2": n4 / n2 if n2 > 0 else float("nan"),
        "ensemble": mc.ensemble_size,
    }


# ---------------------------------------------------------------------------
# integrability and stability of the weighted-measure density

def weight_integrability(params: ModelParams, n_list, p_list, mc: MCConfig,
                         n_ref: int | None = None) -> dict:
    """Estimates of E[chi_R(||u||_sigma) exp(|R_{s,N}|)] across truncation
    levels, and L^p distances of the density to the reference level."""
    n_list = sorted(int(n) for n in n_list)
    n_ref = int(n_ref or max(n_list))
    levels = sorted(set(n_list + [n_ref]))
    if mc.n_tail < n_ref:
        raise ParameterError("n_tail must cover the reference truncation level")
    spec = SamplerSpec(params, mc.n_low, mc.n_tail, mc.master_seed, mc.stream_id)
    coeffs = sample_ensemble_matrix(spec, mc.ensemble_size)
    ms = get_modeset(params.d, mc.n_tail)
    wsig = (1.0 + ms.ksq.astype(float)) ** params.sigma
    norms = np.sqrt(np.abs(coeffs) ** 2 @ wsig)
    chi_r = params.scalar_profile(norms / mc.R)
    B = mc.ensemble_size
    sel = np.flatnonzero(chi_r > 0)  # the cutoff kills everything else exactly
    corr = {}
    for n in levels:
        c = np.zeros(B)
        if len(sel):
            c[sel] = correction_batch(coeffs[sel], mc.n_tail, params.replace(N=n))
        corr[n] = c
    rng = _rng(mc, 303)
    estimates = []
    for n in levels:
        # exponents reach thousands at s=10, so the mean is formed in the
        # log domain; 'estimate' is its exponential (may overflow to inf).
        expo = np.full(B, -np.inf)
        expo[sel] = np.abs(corr[n][sel]) + np.log(chi_r[sel])
        log_est = logsumexp_mean(expo)
        ci = bootstrap_ci(lambda idx, e=expo: logsumexp_mean(e[idx]), rng,
                          B, mc.bootstrap)
        with np.errstate(over="ignore"):
            estimates.append({"N": n, "log_estimate": log_est,
                              "estimate": float(np.exp(log_est)),
                              "log_ci_lo": ci[0], "log_ci_hi": ci[1]})
    distances = []
    dlog_full = {n: np.zeros(B) for n in n_list}
    for n in n_list:
        dlog_full[n][sel] = corr[n][sel] - corr[n_ref][sel]
    for n in n_list:
        if n == n_ref:
            continue
        with np.errstate(over="ignore", invalid="ignore"):
            lit = np.zeros(B)
            lit[sel] = np.abs(chi_r[sel] * (np.exp(-corr[n][sel]) - np.exp(-corr[n_ref][sel])))
        for p in p_list:
            # log-density distance ||(R_N - R_ref) 1_supp||_p is the
            # numerically meaningful convergence measure at this scale
            distances.append({
                "N": n, "p": float(p),
                "log_density_distance": empirical_lp(dlog_full[n], p),
                "distance": empirical_lp(lit, p) if np.all(np.isfinite(lit)) else float("inf"),
            })
    return {"estimates": estimates, "distances": distances, "n_ref": n_ref,
            "ensemble": B, "support_fraction": len(sel) / B, "R": mc.R}


def logsumexp_mean(exponents: np.ndarray) -> float:
    """log of the mean of exp(e_i), stable for huge exponents; -inf entries
    contribute zero mass."""
    n = len(exponents)
    finite = exponents[np.isfinite(exponents)]
    if len(finite) == 0:
        return -np.inf
    m = float(np.max(finite))
    return m + math.log(float(np.sum(np.exp(finite - m)))) - math.log(n)


# ---------------------------------------------------------------------------
# measure transport

@dataclass
class CylinderSet:
    """Membership-testable set: cylinder conditions |u_k| <= r on finitely
    many coefficients, intersected with an H^sigma ball cap."""

    conditions: list = field(default_factory=list)  # [(mode tuple, radius), ...]
    cap_radius: float = 10.0

    def indicator(self, coeffs: np.ndarray, ms, sigma: float) -> np.ndarray:
        wsig = (1.0 + ms.ksq.astype(float)) ** sigma
        ok = np.sqrt(np.abs(coeffs) ** 2 @ wsig) <= self.cap_radius
        for mode, r in self.conditions:
            ok &= np.abs(coeffs[:, ms.index_of(mode)]) <= r
        return ok

    def shrunk(self, factor: float) -> "CylinderSet":
        return CylinderSet([(m, r * factor) for m, r in self.conditions], self.cap_radius)


def _evolve_tolerant(state: np.ndarray, dim: int, cutoff: int, params: ModelParams,
                     t_end: float, dt: float):
    """Batched integration that drops rows going non-finite instead of
    raising; returns (state, alive mask). Dead rows are frozen at zero."""
    from .dynamics import _NonlinearStencil, _ifrk4_step
    st = _NonlinearStencil(dim, cutoff, params)
    ksq = st.state_ms.ksq
    n_steps = max(int(round(abs(t_end) / dt)), 1) if t_end != 0 else 0
    h = t_end / n_steps if n_steps else 0.0
    c = np.array(state, copy=True)
    alive = np.ones(c.shape[0], dtype=bool)
    for _ in range(n_steps):
        c = _ifrk4_step(c, h, ksq, st.rhs)
        bad = ~np.all(np.isfinite(c.view(float)).reshape(c.shape[0], -1), axis=1)
        if bad.any():
            alive &= ~bad
            c[bad] = 0.0
    return c, alive


def measure_transport(params: ModelParams, base_set: CylinderSet, t_grid, mc: MCConfig,
                      shrink_factors=(1.0, 0.5, 0.25)) -> dict:
    """Estimates of mu(A) and mu(Phi_N(t)(A)) for a shrinking family of sets.

    The image measure is estimated by flowing samples backward and testing
    membership (the flow is a bijection). Samples whose backward integration
    leaves the stable step range are counted as non-members (they are far
    outside every studied ball) and reported. Estimates carry Wilson
    intervals; the slope of log mu(image) against log mu(A) is descriptive.
    """
    spec = SamplerSpec(params, mc.n_low, mc.n_tail, mc.master_seed, mc.stream_id)
    coeffs = sample_ensemble_matrix(spec, mc.ensemble_size)
    ms = get_modeset(params.d, mc.n_tail)
    n = mc.ensemble_size
    sets = [base_set.shrunk(f) for f in shrink_factors]
    base_counts = [int(s.indicator(coeffs, ms, params.sigma).sum()) for s in sets]
    rows = []
    for f, s, k in zip(shrink_factors, sets, base_counts):
        lo, hi = wilson_ci(k, n)
        rows.append({"t": 0.0, "shrink": f, "kind": "base", "estimate": k / n,
                     "count": k, "ci_lo": lo, "ci_hi": hi})
    state = coeffs
    alive = np.ones(n, dtype=bool)
    prev_t = 0.0
    for t in sorted(t_grid):
        if t < 0:
            raise ParameterError("transport times must be nonnegative")
        if t > prev_t:
            state, ok = _evolve_tolerant(state, params.d, mc.n_tail, params,
                                         -(t - prev_t), dt=mc.dt)
            alive &= ok
            prev_t = t
        for f, s in zip(shrink_factors, sets):
            k = int((s.indicator(state, ms, params.sigma) & alive).sum())
            lo, hi = wilson_ci(k, n)
            rows.append({"t": t, "shrink": f, "kind": "image", "estimate": k / n,
                         "count": k, "ci_lo": lo, "ci_hi": hi,
                         "dropped": int((~alive).sum())})
    # descriptive slope of log image measure vs log base measure per t
    slopes = []
    for t in sorted(t_grid):
        xs, ys = [], []
        for f, k0 in zip(shrink_factors, base_counts):
            img = next(r for r in rows if r["t"] == t and r["shrink"] == f
                       and r["kind"] == "image")
            if k0 > 0 and img["count"] > 0:
                xs.append(math.log(k0 / n))
                ys.append(math.log(img["count"] / n))
        slopes.append({"t": t, "slope": _fit_slope(xs, ys) if len(xs) >= 2 else None,
                       "points": len(xs)})
    return {"rows": rows, "slopes": slopes, "ensemble": n}


# ---------------------------------------------------------------------------
# pointwise law

def pointwise_law(params: ModelParams, t0: float, x0, mc: MCConfig,
                  n_tail_pair=None, bins: int = 40) -> dict:
    """Empirical law of u(t0, x0): 2d histogram, KS against the closed-form
    Gaussian at t0 = 0, and a two-sample KS across tail resolutions."""
    if mc.ensemble_size < 2:
        raise ParameterError("pointwise law needs an ensemble of at least 2")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    tails = tuple(n_tail_pair) if n_tail_pair else (mc.n_tail, 2 * mc.n_tail)
    values = {}
    for j, nt in enumerate(tails):
        # disjoint stream blocks so the two resolutions are independent
        spec = SamplerSpec(params, mc.n_low, nt, mc.master_seed,
                           mc.stream_id + j * mc.ensemble_size)
        coeffs = sample_ensemble_matrix(spec, mc.ensemble_size)
        if t0 != 0.0:
            coeffs = evolve_coeffs(coeffs, params.d, nt, params, t0, dt=mc.dt)
        ms = get_modeset(params.d, nt)
        phases = np.exp(1j * (ms.modes.astype(float) @ x0))
        values[nt] = coeffs @ phases
    v1, v2 = values[tails[0]], values[tails[1]]
    out = {"t0": t0, "x0": x0.tolist(), "tails": list(tails),
           "ensemble": mc.ensemble_size}
    if t0 == 0.0:
        var = {nt: float(np.sum(1.0 / (1.0 + get_modeset(params.d, nt).ksq.astype(float) ** params.s)))
               for nt in tails}
        ks = {}
        for nt, v in values.items():
            scale = math.sqrt(var[nt] / 2.0)
            ks[nt] = {
                "re": tuple(stats.kstest(v.real, "norm", args=(0, scale))),
                "im": tuple(stats.kstest(v.imag, "norm", args=(0, scale))),
            }
        out["ks_closed_form"] = ks
        out["sigma_sq"] = var
    ks2 = {"re": tuple(stats.ks_2samp(v1.real, v2.real)),
           "im": tuple(stats.ks_2samp(v1.imag, v2.imag))}
    out["ks_two_sample"] = ks2
    _, c1 = np.unique(v1, return_counts=True)
    out["max_atom"] = float(c1.max() / len(v1))
    h, xe, ye = np.histogram2d(v1.real, v1.imag, bins=bins)
    out["histogram"] = {"counts": h.tolist(), "x_edges": xe.tolist(), "y_edges": ye.tolist()}
    return out

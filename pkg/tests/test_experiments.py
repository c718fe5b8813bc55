import math

import numpy as np
import pytest

from torusnls import (CylinderSet, MCConfig, ModelParams, ParameterError,
                      chaos_audit, measure_transport, moment_growth,
                      pointwise_law, weight_integrability)
from torusnls.experiments import (empirical_lp, fit_p_exponent, kish_ess,
                                  lp_table, tail_ladder_exponent, wilson_ci)


def test_kish_ess():
    assert kish_ess(np.ones(100)) == pytest.approx(100.0)
    w = np.zeros(100)
    w[0] = 1.0
    assert kish_ess(w) == pytest.approx(1.0)


def test_wilson_ci_basic():
    lo, hi = wilson_ci(50, 100)
    assert lo < 0.5 < hi
    lo0, hi0 = wilson_ci(0, 100)
    assert lo0 == 0.0 and hi0 < 0.06


def test_lp_monotone_in_p():
    rng = np.random.default_rng(0)
    v = rng.standard_normal(10_000)
    norms = [empirical_lp(v, p) for p in (2, 4, 8, 16)]
    assert all(b >= a for a, b in zip(norms, norms[1:]))


def test_constant_has_zero_exponent():
    mc = MCConfig(ensemble_size=10_000)
    rep = chaos_audit(1, mc, form="constant")
    rows = lp_table(np.ones(1000), (2, 4, 8))
    beta, _ = fit_p_exponent(rows)
    assert beta == pytest.approx(0.0, abs=1e-12)
    assert rep["beta_tail"] == 0.0


def test_tail_ladder_gaussian_exact():
    # |g|^2 is exponential: the ladder slope is exactly 1 in expectation
    rng = np.random.default_rng(1)
    g = (rng.standard_normal(100_000) + 1j * rng.standard_normal(100_000)) / np.sqrt(2)
    slope, ladder = tail_ladder_exponent(np.abs(g) ** 2)
    assert slope == pytest.approx(1.0, abs=0.1)
    assert len(ladder) >= 4


def test_chaos_linear_ratio():
    mc = MCConfig(ensemble_size=100_000)
    rep = chaos_audit(1, mc, form="linear")
    assert rep["ratio_p4_p2"] == pytest.approx(2 ** 0.25, rel=0.015)
    assert 0.3 <= rep["beta_tail"] <= 0.7


def test_chaos_plugin_one_sided():
    mc = MCConfig(ensemble_size=50_000)
    for n, form in ((1, "linear"), (2, "monomial"), (5, "monomial")):
        rep = chaos_audit(n, mc, form=form)
        if rep["beta_plugin"] is not None:
            assert rep["beta_plugin"] <= n / 2 + 0.2


def test_moment_growth_constant_observable():
    params = ModelParams(d=1, N=2)
    # full-mass ball so the masked norms are exactly p-independent
    mc = MCConfig(ensemble_size=2000, p_grid=(2, 3, 4, 6, 8), n_low=2, n_tail=4,
                  master_seed=3, bootstrap=20, R=1e9)
    rep = moment_growth(params, mc, observable=lambda c: np.ones(len(c)))
    assert rep["status"] == "ok"
    assert rep["beta_hat"] == pytest.approx(0.0, abs=1e-12)


def test_moment_growth_gaussian_observable():
    # single standard complex Gaussian coordinate: ||.||_4 / ||.||_2 = 2^(1/4)
    params = ModelParams(d=1, N=2)
    mc = MCConfig(ensemble_size=100_000, p_grid=(2, 4), n_low=2, n_tail=2,
                  master_seed=5, bootstrap=10, R=1e9)

    def obs(coeffs):
        # u_0 has unit variance under the measure
        import torusnls
        ms = torusnls.get_modeset(1, 2)
        return coeffs[:, ms.index_of((0,))]

    rep = moment_growth(params, mc, observable=obs)
    norms = {r["p"]: r["norm"] for r in rep["table"]}
    assert norms[4] / norms[2] == pytest.approx(2 ** 0.25, rel=0.015)


def test_moment_growth_empty_ball():
    params = ModelParams(d=1, N=2, R=1e-9)
    mc = MCConfig(ensemble_size=100, n_low=2, n_tail=4, R=1e-9, master_seed=1,
                  bootstrap=5)
    rep = moment_growth(params, mc, observable=lambda c: np.ones(len(c)))
    assert rep["status"] == "empty_ball"


def test_transport_t0_exact_and_full_space():
    params = ModelParams(d=1, N=2)
    mc = MCConfig(ensemble_size=500, n_low=2, n_tail=4, master_seed=2, dt=1e-2)
    base = CylinderSet(conditions=[((1,), 0.3)], cap_radius=1e9)
    rep = measure_transport(params, base, t_grid=[0.0], mc=mc, shrink_factors=(1.0,))
    b = [r for r in rep["rows"] if r["kind"] == "base"][0]
    i0 = [r for r in rep["rows"] if r["kind"] == "image"][0]
    assert b["count"] == i0["count"]
    full = CylinderSet(conditions=[], cap_radius=1e9)
    rep2 = measure_transport(params, full, t_grid=[0.0], mc=mc, shrink_factors=(1.0,))
    assert all(r["estimate"] == 1.0 for r in rep2["rows"])


def test_transport_rejects_negative_time():
    params = ModelParams(d=1, N=2)
    mc = MCConfig(ensemble_size=10, n_low=2, n_tail=4, master_seed=2)
    with pytest.raises(ParameterError):
        measure_transport(params, CylinderSet(), t_grid=[-0.5], mc=mc)


def test_pointwise_law_t0_gaussian():
    params = ModelParams(d=1, N=2)
    mc = MCConfig(ensemble_size=5000, n_low=4, n_tail=4, master_seed=8)
    rep = pointwise_law(params, 0.0, [0.0], mc, n_tail_pair=(4, 8))
    for nt, ks in rep["ks_closed_form"].items():
        assert ks["re"][1] > 0.05
        assert ks["im"][1] > 0.05
    assert rep["ks_two_sample"]["re"][1] > 0.05
    assert rep["max_atom"] <= 2.0 / math.sqrt(mc.ensemble_size)


def test_pointwise_law_rejects_degenerate():
    # a one-sample ensemble is rejected at configuration time
    with pytest.raises(ParameterError):
        MCConfig(ensemble_size=1, n_low=2, n_tail=4, master_seed=1)


def test_weight_integrability_smoke():
    params = ModelParams(d=1, N=4)
    mc = MCConfig(ensemble_size=400, n_low=4, n_tail=8, master_seed=11, bootstrap=10)
    rep = weight_integrability(params, [2, 4], [2.0], mc, n_ref=8)
    assert rep["n_ref"] == 8
    assert len(rep["estimates"]) == 3
    for e in rep["estimates"]:
        assert np.isfinite(e["log_estimate"])
    dist = [d["log_density_distance"] for d in rep["distances"]]
    assert all(np.isfinite(d) for d in dist)


def test_mcconfig_validation():
    with pytest.raises(ParameterError):
        MCConfig(ensemble_size=1)
    with pytest.raises(ParameterError):
        MCConfig(p_grid=(4, 2))
    with pytest.raises(ParameterError):
        MCConfig(p_grid=(1, 2))


def test_p2_norm_is_rms():
    # estimator consistency: the p=2 plug-in norm is the plain RMS
    rng = np.random.default_rng(3)
    v = rng.standard_normal(5000)
    assert empirical_lp(v, 2) == pytest.approx(float(np.sqrt(np.mean(v**2))),
                                               rel=1e-12)


def test_bootstrap_ci_width_scaling():
    # doubling the ensemble shrinks the CI width by ~sqrt(2) (within 20%)
    from numpy.random import Generator, Philox
    from torusnls.experiments import bootstrap_ci
    rng_data = np.random.default_rng(0)
    widths = {}
    for size in (2000, 8000):
        v = rng_data.standard_normal(size)
        rng = Generator(Philox(9))
        lo, hi = bootstrap_ci(lambda idx, vv=v: float(vv[idx].mean()), rng,
                              size, reps=400)
        widths[size] = hi - lo
    ratio = widths[2000] / widths[8000]  # two doublings: expect ~2
    assert 1.6 <= ratio <= 2.4

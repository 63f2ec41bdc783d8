import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from rsmimo import powalloc
from rsmimo.harness import ExperimentConfig, build_setup
from rsmimo.se_eval import PowerAllocation, SECoefficients, evaluate, sinrs


def _random_coeffs(seed, K, prelog=0.95):
    rng = np.random.default_rng(seed)
    a_p = 10 ** rng.uniform(0, 2, K)
    B_c = 10 ** rng.uniform(-1, 1, (K, K))
    B_p = B_c.copy()
    B_p[np.diag_indices(K)] = 10 ** rng.uniform(-1, 0.5, K)
    a_c = 10 ** rng.uniform(0, 2, K)
    I_c = 10 ** rng.uniform(-1, 1, K)
    return SECoefficients(a_c, a_p, B_c, B_p, I_c, 1.0, prelog)


def _setup(seed, K=3, M=32, **kw):
    cfg = ExperimentConfig(M=M, K=K, master_seed=seed, **kw)
    return build_setup(cfg, 0).coefficients, cfg.system.rho_dl


@settings(max_examples=60, deadline=None)
@given(se_p=st.lists(st.floats(0, 5), min_size=1, max_size=8), se_c=st.floats(0, 10))
def test_waterfill_is_optimal_split(se_p, se_c):
    se_p = np.array(se_p)
    C = powalloc.waterfill_shares(se_p, se_c)
    assert np.all(C >= 0)
    assert C.sum() == pytest.approx(se_c, abs=1e-9)
    # no split can beat the water level: it equals the largest L with sum max(0, L - se_p) <= se_c
    level = (se_p + C).min()
    assert np.maximum(0, level + 1e-7 - se_p).sum() > se_c - 1e-9 or se_c == 0


def test_grid_fractions():
    z = powalloc.grid_fractions(0.05)
    assert z.size == 21 and z[0] == 0 and z[-1] == 1
    assert_allclose(np.diff(z), 0.05)
    with pytest.raises(ValueError):
        powalloc.grid_fractions(0)


def test_maxsum_grid_is_grid_argmax():
    c, rho = _setup(1)
    alloc = powalloc.maxsum_grid(c, rho)
    vals = []
    for z in powalloc.grid_fractions(0.05):
        vals.append(evaluate(c, PowerAllocation((1 - z) * rho, np.full(c.K, z * rho / c.K), rho)).sum_se)
    assert evaluate(c, alloc).sum_se == pytest.approx(max(vals), rel=1e-12)
    assert alloc.info["zeta"] == pytest.approx(powalloc.grid_fractions(0.05)[int(np.argmax(vals))])


def test_maxsum_grid_ties_take_smallest_zeta():
    # with no private gain every zeta < 1 only changes the common SINR; a_c = 0 makes all ties
    K = 2
    c = SECoefficients(np.zeros(K), np.zeros(K), np.ones((K, K)), np.ones((K, K)), np.zeros(K), 1.0, 1.0)
    assert powalloc.maxsum_grid(c, 1.0).info["zeta"] == 0.0


def _perron_gamma(c, budget):
    """Max-min private SINR under sum power from the Perron root of the extended matrix."""
    cn = c.without_common().normalized(budget)
    K = cn.K
    D = np.diag(1.0 / cn.a_p)
    top = np.hstack([D @ cn.B_p, D @ np.ones((K, 1))])
    bottom = np.hstack([np.ones((1, K)) @ D @ cn.B_p, np.ones((1, K)) @ D @ np.ones((K, 1))])
    lam = np.max(np.abs(np.linalg.eigvals(np.vstack([top, bottom]))))
    return 1.0 / lam


@pytest.mark.parametrize("seed", range(6))
def test_bisection_matches_perron_root(seed):
    c = _random_coeffs(seed, 2 + seed % 4)
    alloc = powalloc.nors_maxmin_bisection(c, 3.0)
    _, gp = sinrs(c, alloc.rho_c, alloc.rho)
    ref = _perron_gamma(c, 3.0)
    assert gp.min() == pytest.approx(ref, rel=1e-6)
    assert alloc.info["gamma"] == pytest.approx(ref, rel=1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_bisection_dominates_nors_sca(seed):
    c, rho = _setup(seed, K=4)
    b = evaluate(c, powalloc.nors_maxmin_bisection(c, rho)).min_se
    s = evaluate(c, powalloc.nors_sca(c, rho)).min_se
    assert b >= s * (1 - 1e-7)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10 ** 6), K=st.integers(1, 4),
       scheme=st.sampled_from(sorted(powalloc.SCHEMES)), budget=st.floats(0.1, 100.0))
def test_every_scheme_respects_budget(seed, K, scheme, budget):
    c = _random_coeffs(seed, K)
    alloc = powalloc.run_scheme(scheme, c, budget)
    assert alloc.rho_c >= 0 and np.all(alloc.rho >= 0)
    assert alloc.rho_c + alloc.rho.sum() <= budget * (1 + 1e-8)
    if scheme.startswith("nors"):
        assert alloc.rho_c == 0
    res = evaluate(c, alloc)
    assert np.all(res.c_shares >= 0)
    assert res.c_shares.sum() <= res.se_c * (1 + 1e-8) + 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_maxmin_rs_not_worse_than_nors(seed):
    c, rho = _setup(seed, K=3)
    rs = powalloc.maxmin_sca(c, rho)
    nors = powalloc.nors_sca(c, rho)
    assert evaluate(c, rs).min_se >= evaluate(c, nors).min_se - 1e-9
    assert rs.info["min_se"] == pytest.approx(evaluate(c, rs).min_se, rel=1e-12)
    for run in rs.info["starts"]:
        h = np.asarray(run["raw_history"])
        assert np.all(np.diff(h) >= -1e-9)


def test_orthogonal_pilots_put_little_on_common():
    c, rho = _setup(2, K=4, M=64, pilot_mode="orthogonal")
    rs = powalloc.maxmin_sca(c, rho)
    nors = powalloc.nors_sca(c, rho)
    assert rs.common_fraction < 0.05
    assert evaluate(c, rs).min_se == pytest.approx(evaluate(c, nors).min_se, rel=0.02)


def _sinr_objective(c, alloc, common=True):
    gc, gp = sinrs(c, alloc.rho_c, alloc.rho)
    return np.sum(np.log(gp)) + (np.log(gc.min()) if common else 0.0)


@pytest.mark.parametrize("seed", range(3))
def test_gp_beats_sca_on_its_own_objective(seed):
    c, rho = _setup(seed, K=3)
    gp = powalloc.maxsinr_gp(c, rho)
    sca = powalloc.maxsinr_sca(c, rho)
    assert _sinr_objective(c, gp) >= _sinr_objective(c, sca) - 1e-6
    assert powalloc.nors_gp(c, rho).rho_c == 0


def test_gp_against_grid_single_ue():
    c = _random_coeffs(5, 1)
    alloc = powalloc.maxsinr_gp(c, 1.0)
    fr = np.linspace(1e-4, 1 - 1e-4, 20001)
    vals = [_sinr_objective(c, PowerAllocation(f, [1 - f], 1.0)) for f in fr]
    assert _sinr_objective(c, alloc) == pytest.approx(max(vals), abs=1e-6)


def test_sumse_sca_monotone_and_beats_start():
    c, rho = _setup(4, K=3)
    alloc = powalloc.maxsumse_sca(c, rho)
    h = np.asarray(alloc.info["raw_history"])
    assert np.all(np.diff(h) >= -1e-9)
    start = PowerAllocation(0.1 * rho, np.full(3, 0.9 * rho / 3), rho)
    assert evaluate(c, alloc).sum_se >= evaluate(c, start).sum_se - 1e-6


def test_sca_requires_common_gain():
    c = _random_coeffs(0, 2)
    c = SECoefficients(np.zeros(2), c.a_p, c.B_c, c.B_p, c.I_c, 1.0, 0.95)
    with pytest.raises(ValueError):
        powalloc.maxsumse_sca(c, 1.0)
    # max-min falls back to the private-only formulation
    assert powalloc.maxmin_sca(c, 1.0).rho_c == 0


def test_unknown_scheme():
    with pytest.raises(ValueError, match="unknown scheme"):
        powalloc.run_scheme("rs_magic", _random_coeffs(0, 2), 1.0)


def test_baselines_are_nors():
    for rs, base in powalloc.BASELINE.items():
        assert rs in powalloc.SCHEMES and base in powalloc.SCHEMES
        assert base.startswith("nors")

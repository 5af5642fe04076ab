import math

import numpy as np
import pytest

from sicopula import copulas as cp
from sicopula.copulas import CopulaModel

FAMILY_DIMS = [(f, d) for f in cp.FAMILIES for d in (2, 3)]


def theta_grid(model, k=50):
    lo, hi = model.theta_lo, model.theta_hi
    if model.family == "gaussian":
        return np.linspace(lo + 0.01, hi - 0.01, k)
    return np.geomspace(lo * 1.05 if lo > 0 else lo + 0.05, hi * 0.9, k)


def random_theta(model, rng):
    if model.family == "gaussian":
        return rng.uniform(model.theta_lo + 0.02, model.theta_hi - 0.02)
    return math.exp(rng.uniform(math.log(max(model.theta_lo, 0.02) * 1.2),
                                math.log(8.0)))


# ---------------------------------------------------------------------------
# log densities
# ---------------------------------------------------------------------------

def test_gaussian_independence_density():
    m = CopulaModel("gaussian", 2)
    u = np.array([[0.2, 0.9], [0.5, 0.5], [0.11, 0.3]])
    np.testing.assert_allclose(cp.log_density(m, 0.0, u), 0.0, atol=1e-14)


def test_clayton_closed_form_value():
    # c(u,v) = (1+t)(uv)^(-t-1)(u^-t + v^-t - 1)^(-1/t-2) at t=2, u=v=0.5
    m = CopulaModel("clayton", 2)
    expected = math.log(192.0) - 2.5 * math.log(7.0)
    assert cp.log_density(m, 2.0, [0.5, 0.5]) == pytest.approx(expected,
                                                               abs=1e-12)


def test_gumbel_near_independence():
    m = CopulaModel("gumbel", 2, theta_lo=1.0 + 1e-12)
    assert abs(cp.log_density(m, 1.0 + 1e-9, [0.3, 0.7])) < 1e-6


def test_theta_domain_enforced():
    m = CopulaModel("clayton", 2)
    with pytest.raises(ValueError):
        cp.log_density(m, -0.5, [0.5, 0.5])
    with pytest.raises(ValueError):
        cp.log_density(m, 1e9, [0.5, 0.5])


@pytest.mark.parametrize("family,dim", FAMILY_DIMS)
def test_density_integrates_to_one_d2(family, dim):
    if dim != 2:
        pytest.skip("quasi-MC integration checked for d = 2")
    m = CopulaModel(family, 2)
    theta = {"gaussian": 0.5, "clayton": 2.0, "gumbel": 2.0}[family]
    # scrambled-free Halton-ish grid: tensor midpoint rule is accurate
    # enough at 1e-3 for these smooth-in-the-bulk densities
    k = 400
    g = (np.arange(k) + 0.5) / k
    uu, vv = np.meshgrid(g, g)
    pts = np.column_stack([uu.ravel(), vv.ravel()])
    val = np.exp(cp.log_density(m, theta, pts)).mean()
    assert val == pytest.approx(1.0, abs=1e-3)


# ---------------------------------------------------------------------------
# gradients vs central finite differences (independent oracle)
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("family,dim", FAMILY_DIMS)
def test_grad_theta_matches_fd(family, dim):
    rng = np.random.default_rng(31)
    m = CopulaModel(family, dim)
    eps = 1e-6
    for _ in range(100):
        theta = random_theta(m, rng)
        u = rng.uniform(0.02, 0.98, size=dim)
        fd = (cp.log_density(m, theta + eps, u)
              - cp.log_density(m, theta - eps, u)) / (2 * eps)
        an = cp.grad_theta_log_density(m, theta, u)
        assert abs(fd - an) / (1.0 + abs(an)) < 1e-5


@pytest.mark.parametrize("family,dim", FAMILY_DIMS)
def test_grad_u_matches_fd(family, dim):
    rng = np.random.default_rng(77)
    m = CopulaModel(family, dim)
    eps = 1e-6
    for _ in range(100):
        theta = random_theta(m, rng)
        u = rng.uniform(0.05, 0.95, size=dim)
        an = cp.grad_u_log_density(m, theta, u)
        k = int(rng.integers(0, dim))
        up, um = u.copy(), u.copy()
        up[k] += eps
        um[k] -= eps
        fd = (cp.log_density(m, theta, up)
              - cp.log_density(m, theta, um)) / (2 * eps)
        assert abs(fd - an[k]) / (1.0 + abs(an[k])) < 1e-5


def test_grad_theta_gaussian_zero_at_center():
    m = CopulaModel("gaussian", 2)
    assert cp.grad_theta_log_density(m, 0.0, [0.5, 0.5]) == pytest.approx(0.0)


def test_grad_u_gaussian_independence_zero():
    m = CopulaModel("gaussian", 2)
    g = cp.grad_u_log_density(m, 0.0, [0.3, 0.8])
    np.testing.assert_allclose(g, 0.0, atol=1e-12)


def test_grad_u_exchangeable_swap():
    for family in cp.FAMILIES:
        m = CopulaModel(family, 2)
        theta = 0.5 if family == "gaussian" else 2.0
        g_ab = cp.grad_u_log_density(m, theta, [0.3, 0.7])
        g_ba = cp.grad_u_log_density(m, theta, [0.7, 0.3])
        np.testing.assert_allclose(g_ab, g_ba[::-1], rtol=1e-12)


# ---------------------------------------------------------------------------
# tau maps
# ---------------------------------------------------------------------------

def test_clayton_tau_values():
    assert cp.theta_to_tau(CopulaModel("clayton", 2), 2.0) == pytest.approx(0.5)
    assert cp.theta_to_tau(CopulaModel("clayton", 3), 2.0) == pytest.approx(
        1.5 / 7.0)


def test_gaussian_tau_example():
    m = CopulaModel("gaussian", 2)
    assert cp.theta_to_tau(m, math.sin(math.pi / 4)) == pytest.approx(0.5)
    assert cp.tau_to_theta(m, 0.0) == pytest.approx(0.0, abs=1e-12)


def test_gumbel_tau_closed_form():
    m = CopulaModel("gumbel", 2)
    assert cp.theta_to_tau(m, 2.0) == pytest.approx(0.5)
    assert cp.tau_to_theta(m, 0.5) == pytest.approx(2.0, abs=1e-6)


def test_clayton_inverse_cross_check():
    m = CopulaModel("clayton", 2)
    # bisection on the product formula agrees with the closed form
    assert cp.tau_to_theta(m, 0.5) == pytest.approx(2.0, abs=1e-8)


@pytest.mark.parametrize("family,dim", FAMILY_DIMS)
def test_round_trip(family, dim):
    m = CopulaModel(family, dim)
    grid = theta_grid(m)
    tau = cp.theta_to_tau(m, grid)
    back = cp.tau_to_theta(m, tau)
    assert np.max(np.abs(back - grid)) < 1e-8


@pytest.mark.parametrize("family,dim", FAMILY_DIMS)
def test_tau_monotone_in_theta(family, dim):
    m = CopulaModel(family, dim)
    tau = cp.theta_to_tau(m, theta_grid(m))
    assert np.all(np.diff(tau) > 0)


def test_tau_clamped_outside_range():
    m = CopulaModel("clayton", 2)
    th = cp.tau_to_theta(m, -0.3)
    assert m.in_domain(th)
    lo, _ = m.tau_bounds()
    assert cp.theta_to_tau(m, th) == pytest.approx(lo + cp.TAU_CLAMP_MARGIN,
                                                   abs=1e-9)


# ---------------------------------------------------------------------------
# samplers and the Monte Carlo tau oracle
# ---------------------------------------------------------------------------

def _pair_tau_ustat(u, rng, n_pairs=400_000):
    """Concordance U-statistic over random disjoint pairs."""
    n = u.shape[0]
    i = rng.integers(0, n, n_pairs)
    j = rng.integers(0, n, n_pairs)
    keep = i != j
    i, j = i[keep], j[keep]
    conc = ((u[i, 0] < u[j, 0]) & (u[i, 1] < u[j, 1])) | \
           ((u[i, 0] > u[j, 0]) & (u[i, 1] > u[j, 1]))
    return 2.0 * conc.mean() - 1.0


def test_clayton_sampler_tau():
    m = CopulaModel("clayton", 2)
    u = cp.sample(m, 2.0, 100_000, 11)
    assert _pair_tau_ustat(u, np.random.default_rng(0)) == pytest.approx(
        0.5, abs=0.01)


def test_gaussian_independence_sampler():
    m = CopulaModel("gaussian", 2)
    u = cp.sample(m, 0.0, 100_000, 12)
    assert _pair_tau_ustat(u, np.random.default_rng(0)) == pytest.approx(
        0.0, abs=0.01)


def test_samples_strictly_inside():
    for family in cp.FAMILIES:
        m = CopulaModel(family, 3)
        theta = 0.5 if family == "gaussian" else 3.0
        u = cp.sample(m, theta, 20_000, 13)
        assert u.shape == (20_000, 3)
        assert u.min() > 0.0 and u.max() < 1.0


def test_sample_rowwise_theta():
    m = CopulaModel("clayton", 2)
    thetas = np.concatenate([np.full(50_000, 0.5), np.full(50_000, 8.0)])
    u = cp.sample(m, thetas, 100_000, 14)
    rng = np.random.default_rng(1)
    weak = _pair_tau_ustat(u[:50_000], rng)
    strong = _pair_tau_ustat(u[50_000:], rng)
    assert weak == pytest.approx(0.2, abs=0.02)
    assert strong == pytest.approx(0.8, abs=0.02)


@pytest.mark.parametrize("family", cp.FAMILIES)
def test_joe_tau_mc_consistency_d2(family):
    """4 E[C(U)] - 1 over 1e6 samples matches theta_to_tau within 2e-3."""
    m = CopulaModel(family, 2)
    theta = 0.5 if family == "gaussian" else 2.0
    u = cp.sample(m, theta, 1_000_000, 1234)
    tau_mc = 4.0 * cp.cdf(m, theta, u).mean() - 1.0
    assert tau_mc == pytest.approx(float(cp.theta_to_tau(m, theta)),
                                   abs=2e-3)


def test_gumbel_d3_interpolant_vs_direct_mc():
    m = CopulaModel("gumbel", 3)
    tau_interp = float(cp.theta_to_tau(m, 2.0))
    u = cp.sample(m, 2.0, 400_000, 99)
    tau_mc = (8.0 * cp.cdf(m, 2.0, u).mean() - 1.0) / 7.0
    assert tau_interp == pytest.approx(tau_mc, abs=5e-3)


def test_gaussian_pair_cdf_against_quadrature():
    # independence product rule and a scipy cross-check value
    assert cp.gaussian_pair_cdf(0.3, 0.7, 0.0) == pytest.approx(0.21)
    from scipy.stats import multivariate_normal
    from scipy.special import ndtri
    mv = multivariate_normal(mean=[0.0, 0.0], cov=[[1.0, 0.5], [0.5, 1.0]])
    ref = float(mv.cdf([ndtri(0.3), ndtri(0.7)]))
    assert cp.gaussian_pair_cdf(0.3, 0.7, 0.5) == pytest.approx(ref,
                                                                abs=1e-9)


def test_degenerate_domain_stub():
    m = CopulaModel("gaussian", 2, theta_lo=0.0, theta_hi=0.0)
    assert m.in_domain(0.0)
    assert not m.in_domain(0.3)

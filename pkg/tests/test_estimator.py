import numpy as np
import pytest

from sicopula import simulate as sim
from sicopula.cond_ecdf import Dataset, TrimBox
from sicopula.copulas import CopulaModel
from sicopula.errors import InsufficientDataError
from sicopula.estimator import (
    EstimationConfig,
    IndexParam,
    criterion,
    estimate_asymptotics,
    fit,
    make_plan,
    nelder_mead,
    resolve_config,
)
from sicopula.kernels import KernelSpec
from sicopula.pseudo import MarginModel, build_pseudo_sample

KQ = KernelSpec("quartic")


def small_problem(n=400, seed=0, **dgp):
    spec = sim.DGPSpec("gaussian", 2, 2, [1.0, 1.0],
                       dgp.pop("link", "tanh-tau"),
                       dgp.pop("c0", 0.3), dgp.pop("c1", 0.25),
                       z_scale=dgp.pop("z_scale", 2.0), n=n, seed=seed)
    data = sim.generate(spec)
    model = CopulaModel("gaussian", 2)
    return spec, data, model


def build_pseudo(data, cfg):
    margin = MarginModel("nonparametric", kernel=cfg.z_kernel, h=cfg.h)
    return build_pseudo_sample(data, margin, TrimBox(cfg.nu_n, cfg.m_z))


# ---------------------------------------------------------------------------
# IndexParam
# ---------------------------------------------------------------------------

def test_index_param_normalization():
    p = IndexParam(np.array([1.0, 0.5, -0.2]))
    np.testing.assert_array_equal(p.free, [0.5, -0.2])
    assert IndexParam.from_free([2.0]).beta[0] == 1.0
    with pytest.raises(ValueError):
        IndexParam(np.array([0.9, 0.5]))
    with pytest.raises(ValueError):
        IndexParam(np.array([1.0]))


# ---------------------------------------------------------------------------
# Nelder-Mead
# ---------------------------------------------------------------------------

def test_nelder_mead_quadratic():
    fun = lambda x: float((x[0] - 2.0) ** 2 + 2 * (x[1] + 1.0) ** 2)
    x, f, iters, converged, n_eval = nelder_mead(fun, np.zeros(2),
                                                 simplex_tol=1e-8,
                                                 max_iter=500)
    assert converged
    np.testing.assert_allclose(x, [2.0, -1.0], atol=1e-6)


def test_nelder_mead_respects_inf_walls():
    fun = lambda x: np.inf if abs(x[0]) > 1 else float((x[0] - 0.5) ** 2)
    x, f, *_ = nelder_mead(fun, np.array([0.0]), simplex_tol=1e-8)
    assert abs(x[0] - 0.5) < 1e-6


# ---------------------------------------------------------------------------
# criterion
# ---------------------------------------------------------------------------

def test_criterion_independence_stub_is_zero():
    _, data, _ = small_problem(seed=1)
    stub = CopulaModel("gaussian", 2, theta_lo=0.0, theta_hi=0.0)
    cfg = resolve_config(data, EstimationConfig())
    pseudo = build_pseudo(data, cfg)
    val = criterion(data, pseudo, stub, np.array([1.0, 1.0]), KQ, 0.5)
    assert val == 0.0


def test_criterion_bit_stable():
    _, data, model = small_problem(seed=2)
    cfg = resolve_config(data, EstimationConfig())
    pseudo = build_pseudo(data, cfg)
    beta = np.array([1.0, 0.8])
    a = criterion(data, pseudo, model, beta, KQ, 0.4)
    b = criterion(data, pseudo, model, beta, KQ, 0.4)
    assert a == b


def test_criterion_duplication_relation():
    # with a constant link (degenerate domain), row-local (parametric)
    # margins, leave-one-out off and fixed bandwidths, duplicating every
    # row changes the criterion only through the (n_kept + 1)
    # normalization: M_dup = M * 2 (n_kept + 1) / (2 n_kept + 1)
    spec, data, _ = small_problem(seed=3)
    stub = CopulaModel("gaussian", 2, theta_lo=0.5, theta_hi=0.5)
    margin = spec.oracle_margin_model()
    trim = TrimBox(0.05, 2.0)
    pseudo = build_pseudo_sample(data, margin, trim)
    beta = np.array([1.0, 1.0])
    base = criterion(data, pseudo, stub, beta, KQ, 0.7, leave_one_out=False)

    dup = Dataset(np.repeat(data.X, 2, axis=0), np.repeat(data.Z, 2, axis=0))
    pseudo_dup = build_pseudo_sample(dup, margin, trim)
    assert pseudo_dup.n_kept == 2 * pseudo.n_kept
    val_dup = criterion(dup, pseudo_dup, stub, beta, KQ, 0.7,
                        leave_one_out=False)
    expected = base * 2 * (pseudo.n_kept + 1) / (2 * pseudo.n_kept + 1)
    assert val_dup == pytest.approx(expected, rel=1e-12)


def test_criterion_prefers_truth_on_strong_dgp():
    # M(beta0) > M(beta_far) in at least 18 of 20 replications
    wins = 0
    for rep in range(20):
        spec, data, model = small_problem(n=1000, seed=100 + rep)
        cfg = resolve_config(data, EstimationConfig())
        pseudo = build_pseudo(data, cfg)
        h_fn = cfg.h_tilde_fn(data)
        plan = make_plan(model, data)
        b0 = np.array([1.0, 1.0])
        bf = np.array([1.0, -2.0])
        m0 = criterion(data, pseudo, model, b0, cfg.index_kernel, h_fn(b0),
                       plan=plan)
        mf = criterion(data, pseudo, model, bf, cfg.index_kernel, h_fn(bf),
                       plan=plan)
        wins += m0 > mf
    assert wins >= 18


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def test_fit_structure_and_normalization():
    _, data, model = small_problem(n=600, seed=5)
    res = fit(data, model, EstimationConfig(starts=3))
    assert res.beta_hat.beta[0] == 1.0
    assert res.sigma_hat.shape == (1, 1)
    assert res.s_hat.shape == (1, 1)
    assert res.cov.shape == (1, 1)
    assert res.ci.shape == (1, 2)
    assert res.ci[0, 0] <= res.beta_hat.beta[1] <= res.ci[0, 1]
    assert np.allclose(res.sigma_hat, res.sigma_hat.T)
    assert np.all(np.linalg.eigvalsh(res.cov) >= 0)
    d = res.diagnostics
    assert d["n_kept"] > 0 and "config" in d
    assert len(d["optimizer_trace"]) == 3


def test_fit_permutation_invariant():
    _, data, model = small_problem(n=300, seed=6)
    cfg = EstimationConfig(starts=2, nu_exponent=0.5)
    res = fit(data, model, cfg)
    rng = np.random.default_rng(0)
    perm = rng.permutation(data.n)
    data_p = Dataset(data.X[perm], data.Z[perm])
    res_p = fit(data_p, model, cfg)
    assert res_p.beta_hat.beta[1] == pytest.approx(res.beta_hat.beta[1],
                                                   abs=2e-6)


def test_fit_weak_identification_flag():
    # flat link: the criterion barely moves across starts
    spec = sim.DGPSpec("gaussian", 2, 2, [1.0, 1.0], "constant", 0.3,
                       n=400, seed=7)
    data = sim.generate(spec)
    res = fit(data, CopulaModel("gaussian", 2), EstimationConfig())
    assert "weak_identification" in res.diagnostics
    # the flag is evidence-based; on a flat link it fires most of the time,
    # and the criterion range across starts must be tiny either way
    values = [t["value"] for t in res.diagnostics["optimizer_trace"]
              if t["value"] is not None]
    assert max(values) - min(values) < 5e-3


def test_fit_insufficient_data():
    spec = sim.DGPSpec("gaussian", 2, 2, [1.0, 1.0], "constant", 0.3,
                       n=40, seed=8)
    data = sim.generate(spec)
    with pytest.raises(InsufficientDataError):
        fit(data, CopulaModel("gaussian", 2),
            EstimationConfig(nu_n=0.45))


def test_fit_dimension_checks():
    _, data, _ = small_problem(seed=9)
    with pytest.raises(ValueError):
        fit(data, CopulaModel("gaussian", 3), EstimationConfig())


# ---------------------------------------------------------------------------
# asymptotics
# ---------------------------------------------------------------------------

def test_sandwich_matches_criterion_hessian(monkeypatch):
    # chain-rule identity: with matching (small) steps the Sigma-hat
    # assembly g1 psi'' + g2 psi'^2 reproduces the finite-difference
    # Hessian of the criterion itself
    from sicopula import estimator as est_mod
    monkeypatch.setattr(est_mod, "GRAD_STEP", 5e-4)
    monkeypatch.setattr(est_mod, "HESS_OFFSETS", (5e-4, 1e-3, 1.5e-3))
    # n small enough that the tau fast path stays in double precision
    # (micro differences would otherwise read single-precision grain)
    _, data, model = small_problem(n=600, seed=10)
    cfg = resolve_config(data, EstimationConfig())
    pseudo = build_pseudo(data, cfg)
    h_fn = cfg.h_tilde_fn(data)
    plan = make_plan(model, data)
    beta = IndexParam(np.array([1.0, 1.0]))
    sigma, _, _, _ = estimate_asymptotics(
        data, pseudo, model, beta, cfg.index_kernel, h_fn(beta.beta),
        h_tilde_fn=h_fn, plan=plan)

    def m_of(v):
        b = np.array([1.0, v])
        return criterion(data, pseudo, model, b, cfg.index_kernel, h_fn(b),
                         plan=plan)

    eps = 1e-3 * 2.0
    fd = (m_of(1.0 + eps) + m_of(1.0 - eps) - 2 * m_of(1.0)) / eps**2
    fd *= (pseudo.n_kept + 1) / pseudo.n_kept
    assert sigma[0, 0] == pytest.approx(fd, rel=0.2)


def test_scalar_sandwich_ci_formula():
    _, data, model = small_problem(n=600, seed=11)
    res = fit(data, model, EstimationConfig(starts=2))
    se = float(np.sqrt(res.cov[0, 0]))
    lo = res.beta_hat.beta[1] - 1.959963984540054 * se
    hi = res.beta_hat.beta[1] + 1.959963984540054 * se
    assert res.ci[0] == pytest.approx([lo, hi])

import numpy as np
import pytest

from sicopula import simulate as sim
from sicopula.copulas import CopulaModel
from sicopula.estimator import EstimationConfig


def test_spec_validation():
    with pytest.raises(ValueError):
        sim.DGPSpec("gaussian", 2, 2, [0.5, 1.0], "constant", 0.3)
    with pytest.raises(ValueError):
        sim.DGPSpec("gaussian", 2, 2, [1.0, 1.0], "spiral", 0.3)
    with pytest.raises(ValueError):
        # affine link escapes the attainable tau range over the index range
        sim.DGPSpec("gaussian", 2, 2, [1.0, 1.0], "affine-tau", 0.3, 0.9)
    with pytest.raises(ValueError):
        # Clayton needs positive tau over the whole index range
        sim.DGPSpec("clayton", 2, 2, [1.0, 1.0], "tanh-tau", 0.1, 0.3)


def test_generate_deterministic():
    spec = sim.DGPSpec("gaussian", 2, 2, [1.0, 1.0], "tanh-tau", 0.3, 0.25,
                       n=200, seed=5)
    a = sim.generate(spec)
    b = sim.generate(spec)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.Z, b.Z)


def test_generate_shapes_and_names():
    spec = sim.DGPSpec("clayton", 3, 2, [1.0, -0.5], "constant", 0.4,
                       n=150, seed=6)
    data = sim.generate(spec)
    assert data.X.shape == (150, 3)
    assert data.Z.shape == (150, 2)
    assert data.x_names == ("x1", "x2", "x3")
    assert data.z_names == ("z1", "z2")


def test_conditional_independence_under_zero_link():
    # theta = 0 Gaussian: X columns conditionally independent given Z;
    # pairwise tau of the true conditional PITs is ~0
    spec = sim.DGPSpec("gaussian", 2, 2, [1.0, 1.0], "constant", 0.0,
                       n=10_000, seed=7)
    data = sim.generate(spec)
    u = sim.true_u(spec, data)
    rng = np.random.default_rng(0)
    i = rng.integers(0, data.n, 200_000)
    j = rng.integers(0, data.n, 200_000)
    ok = i != j
    i, j = i[ok], j[ok]
    conc = ((u[i, 0] < u[j, 0]) & (u[i, 1] < u[j, 1])) | \
           ((u[i, 0] > u[j, 0]) & (u[i, 1] > u[j, 1]))
    assert 2 * conc.mean() - 1 == pytest.approx(0.0, abs=0.03)


def test_margin_conditional_mean():
    spec = sim.DGPSpec("gaussian", 2, 2, [1.0, 1.0], "constant", 0.3,
                       n=20_000, seed=8)
    data = sim.generate(spec)
    # E[X_k | Z in a window] tracks the location shift a_k'z
    sel = np.all(np.abs(data.Z - 0.5) < 0.2, axis=1)
    assert data.X[sel, 0].mean() == pytest.approx(0.5, abs=0.05)


def test_true_u_uniform():
    spec = sim.DGPSpec("gumbel", 2, 2, [1.0, 1.0], "constant", 0.4,
                       n=5000, seed=9)
    data = sim.generate(spec)
    u = sim.true_u(spec, data)
    assert np.all((u > 0) & (u < 1))
    # PIT values are marginally uniform
    for k in range(2):
        hist, _ = np.histogram(u[:, k], bins=10, range=(0, 1))
        assert hist.max() - hist.min() < 5 * np.sqrt(500)


def test_run_replications_single_equals_manual():
    spec = sim.DGPSpec("gaussian", 2, 2, [1.0, 1.0], "tanh-tau", 0.3, 0.25,
                       z_scale=2.0, n=300, seed=10)
    cfg = EstimationConfig(starts=2)
    rep = sim.run_replications(spec, 1, cfg, workers=1)
    assert len(rep.rows) == 1
    row = rep.rows[0]
    assert row.ok
    from dataclasses import replace
    from sicopula.estimator import fit
    manual = fit(sim.generate(replace(spec, seed=spec.seed)),
                 CopulaModel("gaussian", 2), cfg)
    assert row.beta2 == manual.beta_hat.beta[1]


def test_run_replications_reproducible_and_aggregates():
    spec = sim.DGPSpec("gaussian", 2, 2, [1.0, 1.0], "tanh-tau", 0.3, 0.25,
                       z_scale=2.0, n=300, seed=11)
    cfg = EstimationConfig(starts=2)
    a = sim.run_replications(spec, 3, cfg, workers=2)
    b = sim.run_replications(spec, 3, cfg, workers=1)
    assert [r.beta2 for r in a.rows] == [r.beta2 for r in b.rows]
    est = a.estimates()
    assert a.bias == pytest.approx(float(est.mean() - 1.0))
    assert a.rmse == pytest.approx(float(np.sqrt(np.mean((est - 1) ** 2))))
    assert 0.0 <= a.coverage <= 1.0


def test_oracle_margin_kind():
    spec = sim.DGPSpec("gaussian", 2, 2, [1.0, 1.0], "tanh-tau", 0.3, 0.25,
                       z_scale=2.0, n=300, seed=12)
    rep = sim.run_replications(spec, 1, EstimationConfig(starts=2),
                               margin_kind="oracle", workers=1)
    assert rep.rows[0].ok
    with pytest.raises(ValueError):
        sim.run_replications(spec, 1, margin_kind="bogus")
    with pytest.raises(ValueError):
        sim.run_replications(spec, 0)

"""Trimmed pseudo-maximum-likelihood estimation of the index parameter.

The criterion is

    M_n(beta) = (1/(n_kept + 1)) sum_i omega_i ln c_{theta_i}(U_hat_i),
    theta_i = tau_to_theta(clamp(tau_hat(beta, beta'Z_i))),

with leave-one-out weights inside the tau double sum.  The first component
of beta is pinned to one; optimization runs over the remaining components
with a multi-start Nelder-Mead.  Plug-in sandwich asymptotics follow:
Sigma-hat from the analytic theta-derivatives of the log density combined
with finite-difference link derivatives, S-hat from the score outer
product, covariance Sigma^-1 S Sigma^-1 / n_kept.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .cond_ecdf import Dataset, TrimBox
from .copulas import CopulaModel, grad_theta_log_density, log_density, tau_to_theta
from .errors import InsufficientDataError, NonFiniteCriterionError, SingularHessianError
from .kendall import DominancePlan
from .kernels import KernelSpec, make_higher_order
from .link import clamp_tau, link_tau
from .pseudo import MarginModel, PseudoSample, build_pseudo_sample, default_m_z

_Z975 = 1.959963984540054

#: finite-difference steps (per unit parameter scale) for the link
#: derivatives entering the sandwich.  The score gradient uses a small
#: step; the Hessian comes from a local quadratic fit over macro offsets,
#: because the estimated link is noisy below the smoothing scale and
#: second differences there read wiggle curvature of arbitrary sign.
GRAD_STEP = 0.1
HESS_OFFSETS = (0.2, 0.35, 0.5)


@dataclass(frozen=True)
class IndexParam:
    """Index direction with the identifiability normalization beta[0] = 1."""

    beta: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.beta, dtype=float)
        if b.ndim != 1 or b.shape[0] < 2:
            raise ValueError("beta must be a vector of length >= 2")
        if b[0] != 1.0:
            raise ValueError("first component of beta must be exactly 1")
        object.__setattr__(self, "beta", b)

    @property
    def free(self) -> np.ndarray:
        return self.beta[1:]

    @staticmethod
    def from_free(free) -> "IndexParam":
        free = np.atleast_1d(np.asarray(free, dtype=float))
        return IndexParam(np.concatenate(([1.0], free)))


@dataclass
class EstimationConfig:
    """Bandwidths, trimming, kernels and optimizer settings.

    Any ``None`` field is resolved from the data by the default schedule:
    s = 2p, h_k = sd(Z_k) n^(-1/(2s+p)), nu_n = n^(-nu_exponent), M_z the
    componentwise 95th percentile of |Z|.  The index bandwidth follows
    h_tilde(beta) = sd(beta'Z) n^(-h_tilde_exponent), re-derived at every
    candidate beta so that stretching the index does not shrink the
    relative smoothing window; setting ``h_tilde`` pins it to a fixed
    value instead.
    """

    h: np.ndarray = None
    h_scale: float = 2.5
    h_tilde: float = None
    h_tilde_exponent: float = 1.0 / 9.0
    z_kernel: KernelSpec = None
    index_kernel: KernelSpec = None
    s_order: int = None
    nu_n: float = None
    nu_exponent: float = 0.5
    m_z: object = None
    beta_box: float = 6.0
    starts: int = 5
    seed: int = 0
    max_iter: int = 300
    simplex_tol: float = 1e-6
    leave_one_out: bool = True

    def h_tilde_fn(self, data: "Dataset"):
        """Per-beta index bandwidth (fixed when ``h_tilde`` is set)."""
        if self.h_tilde is not None:
            fixed = float(self.h_tilde)
            return lambda beta: fixed
        expo = -abs(self.h_tilde_exponent)

        def adaptive(beta):
            proj = data.Z @ np.asarray(beta, dtype=float)
            return float(np.std(proj, ddof=1) * float(data.n) ** expo)

        return adaptive


@dataclass
class FitResult:
    """Fitted index, criterion value, sandwich matrices and diagnostics."""

    beta_hat: IndexParam
    criterion_value: float
    sigma_hat: np.ndarray
    s_hat: np.ndarray
    cov: np.ndarray
    se: np.ndarray
    ci: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def make_plan(model: CopulaModel, data: Dataset):
    """Reusable dominance plans for the tau double sums (d = 2 only)."""
    if data.d == 2:
        return DominancePlan(data.X)
    if model.family == "gaussian":
        from itertools import combinations
        return [DominancePlan(data.X[:, [k, l]])
                for k, l in combinations(range(data.d), 2)]
    return None


def _criterion_terms(data, pseudo, model, beta, kernel, h_tilde,
                     leave_one_out=True, plan=None):
    """Per-kept-row theta estimates and log densities."""
    beta = np.asarray(beta, dtype=float)
    kept = pseudo.kept_idx
    y = (data.Z @ beta)[kept]
    exclude = kept if leave_one_out else None
    tau, _, status = link_tau(model, data, beta, y, kernel, h_tilde,
                              exclude=exclude, plan=plan)
    failed = status != 0
    tau = np.where(failed, 0.0, tau)
    tau_cl, outside = clamp_tau(model, tau)
    theta = np.asarray(tau_to_theta(model, tau_cl), dtype=float)
    lp = log_density(model, theta, pseudo.u_hat[kept])
    bad = ~np.isfinite(lp)
    if np.any(bad):
        raise NonFiniteCriterionError(int(kept[np.nonzero(bad)[0][0]]))
    return theta, lp, (outside | failed), int(failed.sum())


def criterion(data: Dataset, pseudo: PseudoSample, model: CopulaModel,
              beta, kernel: KernelSpec, h_tilde: float,
              leave_one_out: bool = True, plan=None) -> float:
    """Trimmed pseudo-log-likelihood M_n(beta).

    ``beta`` is the full vector (first component 1) or an IndexParam.
    Rows whose tau window failed fall back to the clamped independence-side
    theta and are counted in the diagnostics of :func:`fit`.
    """
    if isinstance(beta, IndexParam):
        beta = beta.beta
    if pseudo.n_kept < 2:
        raise InsufficientDataError("criterion needs at least 2 kept rows")
    _, lp, _, _ = _criterion_terms(data, pseudo, model, beta, kernel,
                                   h_tilde, leave_one_out, plan=plan)
    return float(lp.sum() / (pseudo.n_kept + 1))


def nelder_mead(fun, x0, simplex_tol=1e-6, max_iter=300, init_scale=0.25):
    """Minimize ``fun`` with a plain Nelder-Mead simplex.

    Convergence is declared when the simplex diameter (max inf-norm
    distance from the best vertex) falls below ``simplex_tol``.  Returns
    (x, f, iterations, converged, n_eval).
    """
    x0 = np.asarray(x0, dtype=float)
    k = x0.shape[0]
    evals = [0]

    def f(x):
        evals[0] += 1
        return fun(x)

    if k == 0:
        return x0, f(x0), 0, True, evals[0]
    sim = np.empty((k + 1, k))
    sim[0] = x0
    for j in range(k):
        sim[j + 1] = x0
        sim[j + 1, j] += init_scale * (1.0 + abs(x0[j]))
    fv = np.array([f(v) for v in sim])
    it = 0
    converged = False
    while it < max_iter:
        order = np.argsort(fv, kind="stable")
        sim, fv = sim[order], fv[order]
        if np.max(np.abs(sim[1:] - sim[0])) < simplex_tol:
            converged = True
            break
        it += 1
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + (centroid - sim[-1])
        fr = f(xr)
        if fr < fv[0]:
            xe = centroid + 2.0 * (centroid - sim[-1])
            fe = f(xe)
            if fe < fr:
                sim[-1], fv[-1] = xe, fe
            else:
                sim[-1], fv[-1] = xr, fr
        elif fr < fv[-2]:
            sim[-1], fv[-1] = xr, fr
        else:
            xc = centroid + 0.5 * (sim[-1] - centroid)
            fc = f(xc)
            if fc < fv[-1]:
                sim[-1], fv[-1] = xc, fc
            else:
                for j in range(1, k + 1):
                    sim[j] = sim[0] + 0.5 * (sim[j] - sim[0])
                    fv[j] = f(sim[j])
    order = np.argsort(fv, kind="stable")
    return sim[order][0], fv[order][0], it, converged, evals[0]


def _start_heuristic(u_hat: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Least-squares index start: regress prod_k (2 U_hat_k - 1) on Z.

    The product of centered pseudo-observations is a cheap local
    concordance proxy whose regression slope points roughly along the
    dependence-variation direction.
    """
    v = np.prod(2.0 * u_hat - 1.0, axis=1)
    design = np.column_stack([np.ones(z.shape[0]), z])
    coef, *_ = np.linalg.lstsq(design, v, rcond=None)
    b = coef[1:]
    if not np.all(np.isfinite(b)) or abs(b[0]) < 1e-8 * np.linalg.norm(b):
        return np.ones(z.shape[1] - 1)
    return b[1:] / b[0]


def resolve_config(data: Dataset, config: EstimationConfig) -> EstimationConfig:
    """Fill data-driven defaults (everything except ``h_tilde``)."""
    cfg = EstimationConfig(**vars(config))
    if cfg.s_order is None:
        cfg.s_order = 2 * data.p
    if cfg.z_kernel is None:
        cfg.z_kernel = make_higher_order(KernelSpec("epanechnikov"), cfg.s_order)
    if cfg.h is None:
        rate = float(data.n) ** (-1.0 / (2 * cfg.s_order + data.p))
        cfg.h = cfg.h_scale * np.std(data.Z, axis=0, ddof=1) * rate
    else:
        cfg.h = np.broadcast_to(np.asarray(cfg.h, dtype=float), (data.p,)).copy()
    if cfg.index_kernel is None:
        cfg.index_kernel = KernelSpec("quartic")
    if cfg.nu_n is None:
        cfg.nu_n = float(data.n) ** (-abs(cfg.nu_exponent))
    if cfg.m_z is None:
        cfg.m_z = default_m_z(data.Z)
    return cfg


def config_summary(cfg: EstimationConfig) -> dict:
    """JSON-ready view of a resolved configuration."""
    return {
        "h": [float(v) for v in np.atleast_1d(cfg.h)],
        "h_scale": float(cfg.h_scale),
        "h_tilde": None if cfg.h_tilde is None else float(cfg.h_tilde),
        "h_tilde_exponent": float(cfg.h_tilde_exponent),
        "z_kernel": {"base": cfg.z_kernel.base, "order": cfg.z_kernel.order},
        "index_kernel": {"base": cfg.index_kernel.base,
                         "order": cfg.index_kernel.order},
        "s_order": int(cfg.s_order),
        "nu_n": float(cfg.nu_n),
        "nu_exponent": float(cfg.nu_exponent),
        "m_z": [float(v) for v in np.atleast_1d(cfg.m_z)],
        "beta_box": float(cfg.beta_box),
        "starts": int(cfg.starts),
        "seed": int(cfg.seed),
        "max_iter": int(cfg.max_iter),
        "simplex_tol": float(cfg.simplex_tol),
        "leave_one_out": bool(cfg.leave_one_out),
    }


def fit(data: Dataset, model: CopulaModel, config: EstimationConfig = None,
        margin: MarginModel = None) -> FitResult:
    """Fit the index parameter by trimmed pseudo-maximum likelihood.

    Parameters
    ----------
    data : Dataset
    model : CopulaModel
        Copula family for the link; its dimension must match ``data.d``.
    config : EstimationConfig, optional
        Unset fields are resolved by the default schedule.
    margin : MarginModel, optional
        Conditional-margin model for the pseudo-observations; defaults to
        the nonparametric kernel margins of the resolved configuration.

    Returns
    -------
    FitResult
        With ``beta_hat.beta[0] == 1``, the sandwich matrices, per-component
        95% intervals for the free components, and diagnostics (clamp
        fraction, kept count, optimizer trace, weak-identification flag,
        trimming-bias estimate, resolved configuration).
    """
    if model.dim != data.d:
        raise ValueError("model dimension does not match data")
    if data.p < 2:
        raise ValueError("the index needs at least 2 covariates (m >= 2)")
    cfg = resolve_config(data, config or EstimationConfig())
    if margin is None:
        margin = MarginModel("nonparametric", kernel=cfg.z_kernel, h=cfg.h)
    trim = TrimBox(cfg.nu_n, cfg.m_z)
    pseudo = build_pseudo_sample(data, margin, trim)

    box = abs(cfg.beta_box)
    free0 = np.clip(_start_heuristic(pseudo.u_hat, data.Z), -0.9 * box,
                    0.9 * box)
    h_fn = cfg.h_tilde_fn(data)
    plan = make_plan(model, data)
    rng = np.random.default_rng(cfg.seed)
    starts = [free0]
    for _ in range(cfg.starts - 1):
        cand = free0 + rng.normal(0.0, 0.75 * (1.0 + np.abs(free0)))
        starts.append(np.clip(cand, -0.9 * box, 0.9 * box))

    def objective(free):
        # compact parameter set: reject candidates outside the box
        if np.any(np.abs(free) > box):
            return np.inf
        beta = np.concatenate(([1.0], free))
        try:
            return -criterion(data, pseudo, model, beta, cfg.index_kernel,
                              h_fn(beta), cfg.leave_one_out, plan=plan)
        except NonFiniteCriterionError:
            return np.inf

    trace = []
    best = None
    for s, x0 in enumerate(starts):
        x, fval, iters, converged, n_eval = nelder_mead(
            objective, x0, cfg.simplex_tol, cfg.max_iter)
        ok = np.isfinite(fval)
        trace.append({"start": [float(v) for v in np.atleast_1d(x0)],
                      "value": float(-fval) if ok else None,
                      "free": [float(v) for v in np.atleast_1d(x)],
                      "iterations": int(iters), "converged": bool(converged),
                      "n_eval": int(n_eval)})
        if not ok:
            continue
        cand = (fval, float(np.linalg.norm(x)), x)
        if best is None or cand[0] < best[0] - 1e-12 or (
                abs(cand[0] - best[0]) <= 1e-12 and cand[1] < best[1]):
            best = cand
    if best is None:
        raise NonFiniteCriterionError(-1, "criterion non-finite at every start")
    values = [t["value"] for t in trace if t["value"] is not None]
    weak = (max(values) - min(values)) < 1e-4 if len(values) > 1 else False

    beta_hat = IndexParam.from_free(best[2])
    h_tilde_hat = h_fn(beta_hat.beta)
    theta, lp, clamped, failures = _criterion_terms(
        data, pseudo, model, beta_hat.beta, cfg.index_kernel, h_tilde_hat,
        cfg.leave_one_out, plan=plan)
    crit_value = float(lp.sum() / (pseudo.n_kept + 1))

    sigma_hat, s_hat, cov, b_n = estimate_asymptotics(
        data, pseudo, model, beta_hat, cfg.index_kernel, h_tilde_hat,
        leave_one_out=cfg.leave_one_out, h_tilde_fn=h_fn, plan=plan)
    if cov is not None:
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        ci = np.column_stack([beta_hat.free - _Z975 * se,
                              beta_hat.free + _Z975 * se])
    else:
        se = np.full(data.p - 1, np.nan)
        ci = np.full((data.p - 1, 2), np.nan)

    diagnostics = {
        "n_kept": pseudo.n_kept,
        "n": data.n,
        "empty_window_rows": int(pseudo.empty_rows.sum()),
        "clamp_fraction": float(np.mean(clamped)),
        "link_failures": failures,
        "weak_identification": bool(weak),
        "optimizer_trace": trace,
        "b_n": [float(v) for v in np.atleast_1d(b_n)],
        "h_tilde_hat": float(h_tilde_hat),
        "config": config_summary(cfg),
    }
    return FitResult(beta_hat, crit_value, sigma_hat, s_hat, cov, se, ci,
                     diagnostics)


def _link_theta_vector(data, pseudo, model, beta, kernel, h_tilde,
                       rows, leave_one_out=True, plan=None):
    """Clamped link values theta-hat at beta'Z_i for the given rows."""
    y = (data.Z @ beta)[rows]
    exclude = rows if leave_one_out else None
    tau, _, status = link_tau(model, data, beta, y, kernel, h_tilde,
                              exclude=exclude, plan=plan)
    tau = np.where(status != 0, 0.0, tau)
    tau_cl, _ = clamp_tau(model, tau)
    return np.asarray(tau_to_theta(model, tau_cl), dtype=float)


def estimate_asymptotics(data: Dataset, pseudo: PseudoSample,
                         model: CopulaModel, beta_hat,
                         kernel: KernelSpec, h_tilde: float,
                         leave_one_out: bool = True, h_tilde_fn=None,
                         plan=None):
    """Plug-in sandwich pieces at beta_hat.

    Returns ``(sigma_hat, s_hat, cov, b_n)``: the criterion-Hessian
    estimate, the score second moment, the covariance
    Sigma^-1 S Sigma^-1 / n_kept (symmetrized, eigenvalues floored at 0)
    and the Monte Carlo trimming-bias diagnostic b_n (reported, never
    subtracted).  Raises :class:`SingularHessianError` when Sigma-hat has
    condition number above 1e12.

    ``h_tilde_fn`` lets the finite-difference link derivatives follow a
    beta-adaptive bandwidth (the same objective the optimizer saw);
    without it the bandwidth stays at ``h_tilde``.
    """
    if isinstance(beta_hat, IndexParam):
        beta = beta_hat.beta
    else:
        beta = np.asarray(beta_hat, dtype=float)
    m_free = beta.shape[0] - 1
    kept = pseudo.kept_idx
    u_kept = pseudo.u_hat[kept]
    if h_tilde_fn is None:
        h_tilde_fn = lambda b: h_tilde

    def theta_at(b, rows):
        return _link_theta_vector(data, pseudo, model, b, kernel,
                                  h_tilde_fn(b), rows, leave_one_out,
                                  plan=plan)

    theta0 = theta_at(beta, kept)
    g1 = np.asarray(grad_theta_log_density(model, theta0, u_kept))
    # second theta-derivative: centered difference of the analytic gradient,
    # with the step shrunk near the domain boundary
    dist = np.minimum(theta0 - model.theta_lo, model.theta_hi - theta0)
    dt = np.minimum(1e-5 * (1.0 + np.abs(theta0)), 0.49 * np.maximum(dist, 1e-12))
    dt = np.maximum(dt, 1e-12)
    g2 = (np.asarray(grad_theta_log_density(model, theta0 + dt, u_kept))
          - np.asarray(grad_theta_log_density(model, theta0 - dt, u_kept))) / (2 * dt)

    scale = 1.0 + float(np.linalg.norm(beta[1:]) / max(1, m_free))
    eps = GRAD_STEP * scale
    offsets = scale * np.asarray(HESS_OFFSETS)
    deltas = np.concatenate([[0.0], offsets, -offsets])
    design = np.column_stack([np.ones_like(deltas), deltas, deltas**2])
    quad_proj = np.linalg.pinv(design)
    eps_h = offsets[1]
    grad_psi = np.empty((kept.shape[0], m_free))      # score-scale slope
    grad_macro = np.empty((kept.shape[0], m_free))    # curvature-scale slope
    hess_psi = np.empty((kept.shape[0], m_free, m_free))
    for j in range(m_free):
        ej = np.zeros_like(beta)
        ej[j + 1] = 1.0
        grad_psi[:, j] = (theta_at(beta + eps * ej, kept)
                          - theta_at(beta - eps * ej, kept)) / (2 * eps)
        stack = np.stack([theta0] + [theta_at(beta + dlt * ej, kept)
                                     for dlt in deltas[1:]])
        coef = quad_proj @ stack
        grad_macro[:, j] = coef[1]
        hess_psi[:, j, j] = 2.0 * coef[2]
    for j in range(m_free):
        for l in range(j + 1, m_free):
            ej = np.zeros_like(beta)
            el = np.zeros_like(beta)
            ej[j + 1] = 1.0
            el[l + 1] = 1.0
            tpp = theta_at(beta + eps_h * (ej + el), kept)
            tpm = theta_at(beta + eps_h * (ej - el), kept)
            tmp = theta_at(beta - eps_h * (ej - el), kept)
            tmm = theta_at(beta - eps_h * (ej + el), kept)
            cross = (tpp - tpm - tmp + tmm) / (4 * eps_h**2)
            hess_psi[:, j, l] = cross
            hess_psi[:, l, j] = cross

    sigma_hat = (g1[:, None, None] * hess_psi
                 + g2[:, None, None] * grad_macro[:, :, None]
                 * grad_macro[:, None, :]).mean(axis=0)
    sigma_hat = 0.5 * (sigma_hat + sigma_hat.T)
    scores = g1[:, None] * grad_psi
    s_hat = (scores[:, :, None] * scores[:, None, :]).mean(axis=0)
    s_hat = 0.5 * (s_hat + s_hat.T)

    cond = np.linalg.cond(sigma_hat)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularHessianError(f"Sigma-hat condition number {cond:.3g}")
    sig_inv = np.linalg.inv(sigma_hat)
    cov = sig_inv @ s_hat @ sig_inv / pseudo.n_kept
    cov = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(cov)
    cov = (evecs * np.clip(evals, 0.0, None)) @ evecs.T

    # trimming-bias diagnostic: rows inside the Z box but trimmed on the
    # U_hat side contribute -(1/n) M_i
    b_n = np.zeros(m_free)
    rows_bn = np.nonzero(pseudo.z_in_box & ~pseudo.omega
                         & ~pseudo.empty_rows)[0]
    if rows_bn.size:
        theta_bn = theta_at(beta, rows_bn)
        g1_bn = np.asarray(grad_theta_log_density(model, theta_bn,
                                                  pseudo.u_hat[rows_bn]))
        gp = np.empty((rows_bn.shape[0], m_free))
        for j in range(m_free):
            ej = np.zeros_like(beta)
            ej[j + 1] = 1.0
            gp[:, j] = (theta_at(beta + eps * ej, rows_bn)
                        - theta_at(beta - eps * ej, rows_bn)) / (2 * eps)
        b_n = -(g1_bn[:, None] * gp).sum(axis=0) / data.n
    return sigma_hat, s_hat, cov, b_n

"""Copula families: densities, parameter gradients, tau maps and samplers.

Three scalar-parameter families are supported:

* ``gaussian`` -- pairwise correlation for d = 2, exchangeable
  (equicorrelation) matrix for d > 2, parameter rho constrained so the
  smallest eigenvalue stays above ``GAUSS_LAMBDA_MIN``;
* ``clayton`` -- theta in (0, inf), restricted to a working interval;
* ``gumbel`` -- theta in (1, inf), restricted to a working interval.

The tau map follows the two multivariate conventions: the classic
4*int(C dC) - 1 for d = 2 and the Joe-normalized
(2^d int(C dC) - 1)/(2^d - 1) for d >= 3.  For the Gaussian family the map
is always the pairwise one (the exchangeable model is parameterized by a
single pairwise correlation).
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.interpolate import PchipInterpolator

FAMILIES = ("gaussian", "clayton", "gumbel")

#: eigenvalue floor for the Gaussian correlation matrix
GAUSS_LAMBDA_MIN = 0.05
#: default working theta intervals
CLAYTON_THETA_RANGE = (0.01, 50.0)
GUMBEL_THETA_RANGE = (1.001, 50.0)

#: boundary clamp applied to points of the unit hypercube
UNIT_EPS = 1e-10
#: tau clamp margin when inverting the tau map outside the attainable range
TAU_CLAMP_MARGIN = 1e-6

_MC_TAU_SEED = 20160915
_MC_TAU_DRAWS = 200_000
_MC_TAU_GRID = 48


def clamp_unit(u) -> np.ndarray:
    """Clamp coordinates into the open cube [UNIT_EPS, 1-UNIT_EPS]^d."""
    return np.clip(np.asarray(u, dtype=float), UNIT_EPS, 1.0 - UNIT_EPS)


def _default_theta_range(family: str, dim: int):
    if family == "gaussian":
        if dim == 2:
            hi = 1.0 - GAUSS_LAMBDA_MIN
            return (-hi, hi)
        return ((GAUSS_LAMBDA_MIN - 1.0) / (dim - 1), 1.0 - GAUSS_LAMBDA_MIN)
    if family == "clayton":
        return CLAYTON_THETA_RANGE
    return GUMBEL_THETA_RANGE


@dataclass(frozen=True)
class CopulaModel:
    """Family tag, dimension and admissible parameter interval.

    A degenerate interval (lo == hi) is allowed; it pins the parameter to a
    constant, which is occasionally useful as an independence stub.
    """

    family: str
    dim: int = 2
    theta_lo: float = None
    theta_hi: float = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown copula family {self.family!r}")
        if self.dim < 2:
            raise ValueError("copula dimension must be >= 2")
        lo, hi = _default_theta_range(self.family, self.dim)
        if self.theta_lo is None:
            object.__setattr__(self, "theta_lo", lo)
        if self.theta_hi is None:
            object.__setattr__(self, "theta_hi", hi)
        if self.theta_lo > self.theta_hi:
            raise ValueError("theta_lo > theta_hi")

    def in_domain(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        if self.theta_lo == self.theta_hi:
            return bool(np.all(theta == self.theta_lo))
        return bool(np.all((theta > self.theta_lo) & (theta < self.theta_hi)))

    def tau_bounds(self):
        """Attainable tau interval over the closure of the theta domain."""
        lo = _theta_to_tau_raw(self, np.asarray(self.theta_lo))
        hi = _theta_to_tau_raw(self, np.asarray(self.theta_hi))
        return float(lo), float(hi)


def _require_domain(model: CopulaModel, theta):
    if not model.in_domain(theta):
        raise ValueError(
            f"theta outside the admissible domain "
            f"[{model.theta_lo}, {model.theta_hi}] for {model.family}"
        )


# ---------------------------------------------------------------------------
# Gaussian (exchangeable) family
# ---------------------------------------------------------------------------

def _gauss_parts(theta, u, dim):
    x = ndtri(clamp_unit(u))
    s = x.sum(axis=-1)
    ssq = (x * x).sum(axis=-1)
    a_ = 1.0 + (dim - 1) * theta
    b_ = 1.0 - theta
    return x, s, ssq, a_, b_


def _gauss_logpdf(theta, u, dim):
    x, s, ssq, a_, b_ = _gauss_parts(theta, u, dim)
    logdet = (dim - 1) * np.log(b_) + np.log(a_)
    quad = (ssq - theta * s * s / a_) / b_
    return -0.5 * logdet - 0.5 * (quad - ssq)


def _gauss_dtheta(theta, u, dim):
    x, s, ssq, a_, b_ = _gauss_parts(theta, u, dim)
    dlogdet = -(dim - 1) / b_ + (dim - 1) / a_
    one_a = s / a_
    a_dot_a = (ssq - 2.0 * theta * s * s / a_
               + theta * theta * s * s * dim / (a_ * a_)) / (b_ * b_)
    return -0.5 * dlogdet + 0.5 * (one_a * one_a - a_dot_a)


def _gauss_du(theta, u, dim):
    x, s, ssq, a_, b_ = _gauss_parts(theta, u, dim)
    a_vec = (x - (theta * s / a_)[..., None]) / (
        b_[..., None] if np.ndim(b_) else b_)
    phi = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return (x - a_vec) / phi


def gaussian_pair_cdf(u, v, rho) -> np.ndarray:
    """Bivariate Gaussian copula CDF C(u, v; rho).

    Single-integral (Drezner-Wesolowsky) form evaluated by fixed
    Gauss-Legendre quadrature; vectorized over points, ~1e-12 accurate for
    moderate correlations.
    """
    u = clamp_unit(u)
    v = clamp_unit(v)
    x = ndtri(u)
    y = ndtri(v)
    nodes, weights = np.polynomial.legendre.leggauss(48)
    r = 0.5 * rho * (nodes + 1.0)
    w = 0.5 * rho * weights
    omr2 = 1.0 - r * r
    expo = np.exp(-(x[..., None] ** 2 - 2.0 * r * x[..., None] * y[..., None]
                    + y[..., None] ** 2) / (2.0 * omr2))
    corr = (expo * (w / np.sqrt(omr2))).sum(axis=-1) / (2.0 * math.pi)
    return ndtr(x) * ndtr(y) + corr


# ---------------------------------------------------------------------------
# Clayton family
# ---------------------------------------------------------------------------

def _clayton_parts(theta, u):
    lu = np.log(clamp_unit(u))
    th = theta[..., None] if np.ndim(theta) else theta
    # T = sum_k u_k^(-theta) - d + 1, computed via expm1 for stability
    t_ = 1.0 + np.expm1(-th * lu).sum(axis=-1)
    return lu, t_


def _clayton_logpdf(theta, u, dim):
    lu, t_ = _clayton_parts(theta, u)
    ks = np.arange(1, dim)
    const = np.log1p(np.multiply.outer(theta, ks)).sum(axis=-1)
    return const - (1.0 + theta) * lu.sum(axis=-1) - (1.0 / theta + dim) * np.log(t_)


def _clayton_dtheta(theta, u, dim):
    lu, t_ = _clayton_parts(theta, u)
    ks = np.arange(1, dim)
    dconst = (ks / (1.0 + np.multiply.outer(theta, ks))).sum(axis=-1)
    th = theta[..., None] if np.ndim(theta) else theta
    dt = (-lu * np.exp(-th * lu)).sum(axis=-1)
    return (dconst - lu.sum(axis=-1)
            + np.log(t_) / theta**2 - (1.0 / theta + dim) * dt / t_)


def _clayton_du(theta, u, dim):
    uc = clamp_unit(u)
    lu, t_ = _clayton_parts(theta, u)
    th = theta[..., None] if np.ndim(theta) else theta
    tv = t_[..., None] if np.ndim(t_) else t_
    return -(1.0 + th) / uc + (1.0 + dim * th) * uc ** (-th - 1.0) / tv


def _clayton_cdf(theta, u):
    _, t_ = _clayton_parts(theta, u)
    return t_ ** (-1.0 / theta)


def _clayton_joe_integral(theta, dim):
    """2^d * int C dC for Clayton: 2^d prod_{k<d} (1+k theta)/(2+k theta)."""
    theta = np.asarray(theta, dtype=float)
    out = np.ones_like(theta)
    for k in range(dim):
        out = out * (1.0 + k * theta) / (2.0 + k * theta)
    return 2.0**dim * out


# ---------------------------------------------------------------------------
# Gumbel family
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _gumbel_poly_coefs(dim: int) -> np.ndarray:
    """Coefficients c[j, k] with a_j(alpha) = sum_k c[j, k] alpha^k.

    The d-th derivative of the generator exp(-t^alpha) is
    (-1)^d exp(-t^alpha) t^(-d) P(t^alpha) with P(x) = sum_j a_j x^j and
    a_j(alpha) = sum_{k=j}^{d} (-1)^(k-j) |s(d, k)| S(k, j) alpha^k
    (Stirling numbers of the first and second kind).
    """
    s1 = np.zeros((dim + 1, dim + 1))  # unsigned first kind
    s1[0, 0] = 1.0
    for n in range(1, dim + 1):
        for k in range(1, n + 1):
            s1[n, k] = s1[n - 1, k - 1] + (n - 1) * s1[n - 1, k]
    s2 = np.zeros((dim + 1, dim + 1))  # second kind
    s2[0, 0] = 1.0
    for n in range(1, dim + 1):
        for k in range(1, n + 1):
            s2[n, k] = k * s2[n - 1, k] + s2[n - 1, k - 1]
    coefs = np.zeros((dim + 1, dim + 1))
    for j in range(1, dim + 1):
        for k in range(j, dim + 1):
            coefs[j, k] = (-1.0) ** (k - j) * s1[dim, k] * s2[k, j]
    return coefs


def _gumbel_state(theta, u, dim):
    uc = clamp_unit(u)
    lw = np.log(-np.log(uc))                      # log(-log u), finite
    th = theta[..., None] if np.ndim(theta) else theta
    z = th * lw
    zmax = z.max(axis=-1, keepdims=True)
    lnt = (zmax + np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True)))[..., 0]
    alpha = 1.0 / theta
    x = np.exp(alpha * lnt)                       # t^(1/theta)
    coefs = _gumbel_poly_coefs(dim)
    apow = alpha[..., None] ** np.arange(dim + 1) if np.ndim(alpha) \
        else alpha ** np.arange(dim + 1)
    a_j = apow @ coefs.T                          # a_j(alpha), j = 0..d
    xp = x[..., None] ** np.arange(dim + 1)
    p_ = (a_j * xp).sum(axis=-1)
    dp_ = (a_j[..., 1:] * np.arange(1, dim + 1) * xp[..., :-1]).sum(axis=-1)
    return uc, lw, lnt, alpha, x, a_j, p_, dp_


def _gumbel_logpdf(theta, u, dim):
    uc, lw, lnt, alpha, x, a_j, p_, dp_ = _gumbel_state(theta, u, dim)
    th = theta[..., None] if np.ndim(theta) else theta
    return (-x - dim * lnt + np.log(p_) + dim * np.log(theta)
            + ((th - 1.0) * lw - np.log(uc)).sum(axis=-1))


def _gumbel_dtheta(theta, u, dim):
    uc, lw, lnt, alpha, x, a_j, p_, dp_ = _gumbel_state(theta, u, dim)
    th = theta[..., None] if np.ndim(theta) else theta
    soft = np.exp(th * lw - lnt[..., None])
    mbar = (soft * lw).sum(axis=-1)               # d(lnt)/d(theta)
    dalpha = -alpha * alpha
    dlnx = dalpha * lnt + alpha * mbar
    dx = x * dlnx
    ks = np.arange(dim + 1)
    coefs = _gumbel_poly_coefs(dim)
    apow_d = (ks * (alpha[..., None] ** np.maximum(ks - 1, 0))) if np.ndim(alpha) \
        else ks * alpha ** np.maximum(ks - 1, 0)
    da_j = apow_d @ coefs.T                       # d a_j / d alpha
    xp = x[..., None] ** ks
    dp_dtheta = (da_j * xp).sum(axis=-1) * dalpha + dp_ * dx
    return (-dx - dim * mbar + dp_dtheta / p_
            + dim / theta + lw.sum(axis=-1))


def _gumbel_du(theta, u, dim):
    uc, lw, lnt, alpha, x, a_j, p_, dp_ = _gumbel_state(theta, u, dim)
    th = theta[..., None] if np.ndim(theta) else theta
    w = np.exp(lw)
    soft = np.exp(th * lw - lnt[..., None])
    dlnt = -th * soft / (uc * w)                  # d(lnt)/d(u_k)
    al = alpha[..., None] if np.ndim(alpha) else alpha
    xv = x[..., None] if np.ndim(x) else x
    fac = (-al * xv - dim + al * xv * (dp_ / p_)[..., None])
    return fac * dlnt - (th - 1.0) / (uc * w) - 1.0 / uc


def _gumbel_cdf(theta, u):
    uc = clamp_unit(u)
    lw = np.log(-np.log(uc))
    th = theta[..., None] if np.ndim(theta) else theta
    z = th * lw
    zmax = z.max(axis=-1, keepdims=True)
    lnt = (zmax + np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True)))[..., 0]
    return np.exp(-np.exp(lnt / theta))


# ---------------------------------------------------------------------------
# Public density / gradient operations
# ---------------------------------------------------------------------------

_LOGPDF = {"gaussian": _gauss_logpdf, "clayton": _clayton_logpdf,
           "gumbel": _gumbel_logpdf}
_DTHETA = {"gaussian": _gauss_dtheta, "clayton": _clayton_dtheta,
           "gumbel": _gumbel_dtheta}
_DU = {"gaussian": _gauss_du, "clayton": _clayton_du, "gumbel": _gumbel_du}


def _prep(model, theta, u, check=True):
    theta = np.asarray(theta, dtype=float)
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != model.dim:
        raise ValueError(f"point dimension {u.shape[-1]} != model dim {model.dim}")
    if check:
        _require_domain(model, theta)
    return theta, u


def log_density(model: CopulaModel, theta, u) -> np.ndarray:
    """ln c_theta(u).  ``u`` is a point (d,) or a batch (n, d).

    ``theta`` may be a scalar or one value per row of ``u``.  Coordinates
    are clamped into the open unit cube before evaluation.
    """
    theta, u = _prep(model, theta, u)
    return _LOGPDF[model.family](theta, u, model.dim)


def grad_theta_log_density(model: CopulaModel, theta, u) -> np.ndarray:
    """Analytic d/d(theta) ln c_theta(u); shape follows the batch."""
    theta, u = _prep(model, theta, u)
    return _DTHETA[model.family](theta, u, model.dim)


def grad_u_log_density(model: CopulaModel, theta, u) -> np.ndarray:
    """Analytic gradient of ln c_theta in the point u; shape (..., d)."""
    theta, u = _prep(model, theta, u)
    return _DU[model.family](theta, u, model.dim)


def cdf(model: CopulaModel, theta, u) -> np.ndarray:
    """Copula CDF C_theta(u).  Gaussian is implemented for d = 2 only."""
    theta, u = _prep(model, theta, u)
    if model.family == "clayton":
        return _clayton_cdf(theta, u)
    if model.family == "gumbel":
        return _gumbel_cdf(theta, u)
    if model.dim != 2:
        raise NotImplementedError("Gaussian CDF only available for d = 2")
    return gaussian_pair_cdf(u[..., 0], u[..., 1], float(theta))


# ---------------------------------------------------------------------------
# Tau maps
# ---------------------------------------------------------------------------

def _joe_normalize(joe_integral, dim):
    """Map 2^d int(C dC) to tau: classic for d = 2, Joe's for d >= 3."""
    if dim == 2:
        return joe_integral - 1.0
    return (joe_integral - 1.0) / (2.0**dim - 1.0)


@lru_cache(maxsize=None)
def _gumbel_tau_interpolant(dim: int, lo: float, hi: float):
    """Monotone interpolant of theta -> tau_d for Gumbel, d >= 3.

    Built once per (dim, domain) from common-random-number frailty samples:
    with U_k = exp(-(E_k/S)^alpha), the Gumbel CDF at the sample point
    collapses to exp(-((sum E_k)/S)^alpha), so only S has to be recomputed
    per grid theta.
    """
    rng = np.random.default_rng(_MC_TAU_SEED)
    n = _MC_TAU_DRAWS
    tgrid = 1.0 + np.geomspace(max(lo - 1.0, 1e-6), hi - 1.0, _MC_TAU_GRID)
    tgrid[0] = min(tgrid[0], lo)
    tgrid[-1] = max(tgrid[-1], hi)
    theta_u = rng.uniform(0.0, math.pi, size=n)
    logw = np.log(rng.exponential(size=n))
    esum = rng.exponential(size=(n, dim)).sum(axis=1)
    taus = np.empty_like(tgrid)
    for i, th in enumerate(tgrid):
        alpha = 1.0 / th
        log_a = (alpha * np.log(np.sin(alpha * theta_u))
                 + (1.0 - alpha) * np.log(np.sin((1.0 - alpha) * theta_u))
                 - np.log(np.sin(theta_u))) / (1.0 - alpha)
        log_s = (1.0 - alpha) / alpha * (log_a - logw)
        c_vals = np.exp(-np.exp(alpha * (np.log(esum) - log_s)))
        taus[i] = _joe_normalize(2.0**dim * c_vals.mean(), dim)
    if np.any(np.diff(taus) <= 0):
        raise RuntimeError("Monte Carlo Gumbel tau grid is not monotone")
    return PchipInterpolator(tgrid, taus), float(taus[0]), float(taus[-1])


def _theta_to_tau_raw(model: CopulaModel, theta) -> np.ndarray:
    """Tau map without the domain check (used for bounds)."""
    theta = np.asarray(theta, dtype=float)
    if model.family == "gaussian":
        return 2.0 / math.pi * np.arcsin(theta)
    if model.family == "clayton":
        return _joe_normalize(_clayton_joe_integral(theta, model.dim), model.dim)
    if model.dim == 2:
        return (theta - 1.0) / theta
    interp, _, _ = _gumbel_tau_interpolant(model.dim, model.theta_lo,
                                           model.theta_hi)
    return np.asarray(interp(np.clip(theta, model.theta_lo, model.theta_hi)))


def theta_to_tau(model: CopulaModel, theta) -> np.ndarray:
    """Kendall's tau of the family at ``theta`` (vectorized).

    Gaussian returns the pairwise tau (2/pi) arcsin(theta) for every d;
    Clayton uses the product formula; Gumbel uses (theta-1)/theta for d = 2
    and a cached fixed-seed Monte Carlo interpolant for d >= 3.
    """
    _require_domain(model, theta)
    return _theta_to_tau_raw(model, theta)


def _bisect_increasing(fun, target, lo, hi, tol=1e-10, iters=80):
    target = np.asarray(target, dtype=float)
    lo = np.full_like(target, lo)
    hi = np.full_like(target, hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = fun(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(hi - lo) < tol:
            break
    return 0.5 * (lo + hi)


def tau_to_theta(model: CopulaModel, tau):
    """Invert the tau map; closed form where available, else bisection.

    Tau values outside the attainable interval (induced by the theta
    domain) are clamped into it, shrunk by ``TAU_CLAMP_MARGIN``, so the
    returned theta always lies inside the domain.  Callers that need the
    clamp diagnostic should compare against :func:`CopulaModel.tau_bounds`.
    """
    tau = np.asarray(tau, dtype=float)
    scalar = tau.ndim == 0
    t_lo, t_hi = model.tau_bounds()
    tau = np.clip(tau, t_lo + TAU_CLAMP_MARGIN, t_hi - TAU_CLAMP_MARGIN)
    if model.family == "gaussian":
        theta = np.sin(0.5 * math.pi * tau)
    elif model.family == "clayton" and model.dim == 2:
        theta = 2.0 * tau / (1.0 - tau)
    elif model.family == "clayton":
        theta = _bisect_increasing(
            lambda th: _theta_to_tau_raw(model, th), tau,
            model.theta_lo, model.theta_hi)
    elif model.dim == 2:
        theta = 1.0 / (1.0 - tau)
    else:
        interp, _, _ = _gumbel_tau_interpolant(model.dim, model.theta_lo,
                                               model.theta_hi)
        theta = _bisect_increasing(lambda th: np.asarray(interp(th)), tau,
                                   model.theta_lo, model.theta_hi)
    theta = np.clip(theta, np.nextafter(model.theta_lo, model.theta_hi),
                    np.nextafter(model.theta_hi, model.theta_lo))
    return float(theta) if scalar else theta


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _helmert_basis(dim: int) -> np.ndarray:
    """Orthonormal basis whose first column is the equiangular direction."""
    h = np.zeros((dim, dim))
    h[:, 0] = 1.0 / math.sqrt(dim)
    for j in range(1, dim):
        h[:j, j] = 1.0
        h[j, j] = -j
        h[:, j] /= math.sqrt(j * (j + 1))
    return h


def _sample_gaussian(theta, n, dim, rng):
    lam1 = 1.0 + (dim - 1) * theta
    lam2 = 1.0 - theta
    scales = np.empty((n, dim))
    scales[:, 0] = np.sqrt(lam1)
    scales[:, 1:] = np.sqrt(lam2)[:, None]
    eps = rng.standard_normal((n, dim))
    x = (eps * scales) @ _helmert_basis(dim).T
    return ndtr(x)


def _sample_clayton(theta, n, dim, rng):
    v = rng.gamma(shape=1.0 / theta, scale=1.0, size=n)
    e = rng.exponential(size=(n, dim))
    return np.exp(-np.log1p(e / v[:, None]) / theta[:, None])


def _stable_positive(alpha, rng):
    """Kanter draw of the positive stable law with LT exp(-s^alpha)."""
    n = alpha.shape[0]
    th = rng.uniform(0.0, math.pi, size=n)
    w = rng.exponential(size=n)
    one_m = 1.0 - alpha
    log_a = (alpha * np.log(np.sin(alpha * th))
             + one_m * np.log(np.sin(one_m * th))
             - np.log(np.sin(th))) / one_m
    return np.exp(one_m / alpha * (log_a - np.log(w)))


def _sample_gumbel(theta, n, dim, rng):
    alpha = 1.0 / theta
    s = _stable_positive(alpha, rng)
    e = rng.exponential(size=(n, dim))
    return np.exp(-((e / s[:, None]) ** alpha[:, None]))


def sample(model: CopulaModel, theta, n: int, rng_seed) -> np.ndarray:
    """Draw ``n`` i.i.d. points from C_theta, strictly inside (0, 1)^d.

    ``theta`` may be a scalar or an array of length ``n`` (one parameter per
    row, as needed by covariate-driven generators).  ``rng_seed`` is an int
    seed or a ``numpy.random.Generator``.
    """
    _require_domain(model, theta)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) \
        else np.random.default_rng(rng_seed)
    theta = np.broadcast_to(np.asarray(theta, dtype=float), (n,)).copy()
    if model.family == "gaussian":
        u = _sample_gaussian(theta, n, model.dim, rng)
    elif model.family == "clayton":
        u = _sample_clayton(theta, n, model.dim, rng)
    else:
        u = _sample_gumbel(theta, n, model.dim, rng)
    return clamp_unit(u)

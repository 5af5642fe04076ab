"""Link-function estimation: tau inversion of the conditional Kendall's tau.

The moment route: estimate tau(beta, y) by the kernel double sum, clamp it
into the family-attainable interval (shrunk by a small margin) and invert
the family's one-to-one tau map.  For the exchangeable Gaussian model with
d > 2 the pairwise taus are pooled (averaged over pairs) before inversion.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .cond_ecdf import Dataset
from .copulas import TAU_CLAMP_MARGIN, CopulaModel, tau_to_theta
from .kendall import TauEstimate, batched_cond_tau, cond_tau
from .kernels import KernelSpec


@dataclass(frozen=True)
class LinkEstimate:
    """theta-hat at one index point, with the clamp diagnostic."""

    theta_hat: float
    tau_hat: TauEstimate
    clamped: bool


def clamp_tau(model: CopulaModel, tau):
    """Clamp tau into the attainable interval shrunk by the margin.

    Returns ``(clamped_tau, was_outside)``.
    """
    t_lo, t_hi = model.tau_bounds()
    tau = np.asarray(tau, dtype=float)
    out = (tau < t_lo) | (tau > t_hi)
    return np.clip(tau, t_lo + TAU_CLAMP_MARGIN, t_hi - TAU_CLAMP_MARGIN), out


def _pooled_pair_tau(data: Dataset, beta, y_arr, kernel, h_tilde,
                     exclude=None, plans=None):
    """Average pairwise tau over all X-column pairs (Gaussian d > 2 link)."""
    proj = data.Z @ np.asarray(beta, dtype=float)
    pairs = list(combinations(range(data.d), 2))
    acc = None
    ess = None
    status = None
    for idx, (k, l) in enumerate(pairs):
        plan = plans[idx] if plans is not None else None
        t, e, s = batched_cond_tau(proj, data.X[:, [k, l]], y_arr, kernel,
                                   h_tilde, exclude=exclude, plan=plan)
        if acc is None:
            acc, ess, status = t, e, s
        else:
            acc = acc + t
            ess = np.minimum(ess, e)
            status = np.maximum(status, s)
    return acc / len(pairs), ess, status


def link_tau(model: CopulaModel, data: Dataset, beta, y_arr, kernel,
             h_tilde, exclude=None, plan=None):
    """Raw tau estimates feeding the link, batched over index points.

    Gaussian with d > 2 pools pairwise taus (pass ``plan`` as a list, one
    per column pair); every other family uses the d-variate double sum.
    """
    y_arr = np.asarray(y_arr, dtype=float)
    if model.family == "gaussian" and model.dim > 2:
        return _pooled_pair_tau(data, beta, y_arr, kernel, h_tilde, exclude,
                                plans=plan)
    proj = data.Z @ np.asarray(beta, dtype=float)
    return batched_cond_tau(proj, data.X, y_arr, kernel, h_tilde,
                            exclude=exclude, plan=plan)


def estimate_link(model: CopulaModel, data: Dataset, beta, y: float,
                  kernel: KernelSpec, h_tilde: float,
                  exclude: int = None) -> LinkEstimate:
    """theta-hat(beta, y) = tau_to_theta(clamp(tau-hat(beta, y)))."""
    if model.family == "gaussian" and model.dim > 2:
        excl = None if exclude is None else np.array([exclude])
        tau, ess, status = _pooled_pair_tau(data, beta, np.array([float(y)]),
                                            kernel, h_tilde, exclude=excl)
        from .errors import EmptyWindowError, InsufficientSupportError
        if status[0] == 1:
            raise EmptyWindowError(f"no kernel mass at y={y}")
        if status[0] == 2:
            raise InsufficientSupportError(f"fewer than 2 points at y={y}")
        tau_est = TauEstimate(float(tau[0]), float(ess[0]), float(y),
                              np.asarray(beta, dtype=float))
    else:
        tau_est = cond_tau(data, beta, y, kernel, h_tilde, exclude=exclude)
    tau_cl, outside = clamp_tau(model, tau_est.value)
    theta = tau_to_theta(model, float(tau_cl))
    return LinkEstimate(float(theta), tau_est, bool(outside))


def link_curve(model: CopulaModel, data: Dataset, beta, y_grid,
               kernel: KernelSpec, h_tilde: float) -> list:
    """Batched :func:`estimate_link` over a grid, sharing projections.

    Index points whose window failed produce ``theta_hat = nan`` with the
    clamp flag unset.
    """
    y_grid = np.asarray(y_grid, dtype=float)
    tau, ess, status = link_tau(model, data, beta, y_grid, kernel, h_tilde)
    out = []
    beta = np.asarray(beta, dtype=float)
    for i, yv in enumerate(y_grid):
        t_est = TauEstimate(float(tau[i]), float(ess[i]), float(yv), beta)
        if status[i] != 0:
            out.append(LinkEstimate(float("nan"), t_est, False))
            continue
        tau_cl, outside = clamp_tau(model, tau[i])
        theta = tau_to_theta(model, float(tau_cl))
        out.append(LinkEstimate(float(theta), t_est, bool(outside)))
    return out


def clamp_fraction(estimates: list) -> float:
    """Fraction of grid points whose tau was clamped."""
    if not estimates:
        return 0.0
    return sum(1 for e in estimates if e.clamped) / len(estimates)

"""Kernel estimators of conditional distributions.

Two smoothing geometries coexist:

* full-covariate Nadaraya-Watson weights over Z (product kernel, bandwidth
  vector ``h``) for the marginal conditional CDFs and the pseudo-observations;
* univariate weights over the index ``beta'Z`` (bandwidth ``h_tilde``) for
  the joint conditional CDF and the index density.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyWindowError
from .kernels import KernelSpec, eval_kernel, product_weight_matrix
from .copulas import UNIT_EPS


@dataclass(frozen=True)
class Dataset:
    """An i.i.d. sample (X_i, Z_i), X in R^d and Z in R^p.

    Values must be finite and n >= 10.  Column names are optional metadata
    used by the CLI.
    """

    X: np.ndarray
    Z: np.ndarray
    x_names: tuple = ()
    z_names: tuple = ()

    def __post_init__(self):
        # C-contiguous copies keep reductions bit-identical regardless of
        # how the caller sliced the columns
        x = np.ascontiguousarray(np.atleast_2d(np.asarray(self.X,
                                                          dtype=float)))
        z = np.ascontiguousarray(np.atleast_2d(np.asarray(self.Z,
                                                          dtype=float)))
        if x.shape[0] != z.shape[0]:
            raise ValueError("X and Z row counts differ")
        if x.shape[0] < 10:
            raise ValueError("need at least 10 observations")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            raise ValueError("X and Z must be finite (no missing values)")
        object.__setattr__(self, "X", x)
        object.__setattr__(self, "Z", z)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def p(self) -> int:
        return self.Z.shape[1]


@dataclass(frozen=True)
class TrimBox:
    """Trimming scheme: keep rows with U_hat in [nu_n, 1-nu_n]^d and
    Z in the box [-M_z, M_z]^p.

    ``nu_n = 0`` and ``m_z = inf`` are degenerate settings that disable one
    side of the trim (useful in tests).  ``m_z`` may be a scalar or one
    half-width per covariate.  The default schedule is nu_n = n^(-1/5).
    """

    nu_n: float
    m_z: object = np.inf

    def __post_init__(self):
        if not 0.0 <= self.nu_n < 0.5:
            raise ValueError("nu_n must lie in [0, 0.5)")
        mz = np.asarray(self.m_z, dtype=float)
        if np.any(mz <= 0):
            raise ValueError("m_z must be positive")

    @staticmethod
    def default_nu(n: int) -> float:
        return float(n) ** (-0.2)


def nw_weights(kernel: KernelSpec, z_obs: np.ndarray, z: np.ndarray,
               h: np.ndarray) -> np.ndarray:
    """Normalized Nadaraya-Watson weights w_j(z) over the full covariate.

    Raises :class:`EmptyWindowError` when no observation carries kernel
    mass (or when a higher-order kernel drives the normalizing sum to zero
    or below, which is treated the same way).
    """
    raw = product_weight_matrix(kernel, np.atleast_2d(z), z_obs,
                                np.asarray(h, dtype=float))[0]
    total = raw.sum()
    if not np.isfinite(total) or total <= 0:
        raise EmptyWindowError("no kernel mass at the evaluation point")
    return raw / total


def cond_marginal_cdf(data: Dataset, k: int, x: float, z, kernel: KernelSpec,
                      h) -> float:
    """F_k(x | z) estimate: sum_j w_j(z) 1(X_{j,k} <= x), clipped to [0, 1].

    ``k`` is the 0-based X column.
    """
    if not 0 <= k < data.d:
        raise ValueError(f"column index {k} outside 0..{data.d - 1}")
    w = nw_weights(kernel, data.Z, z, h)
    ind = data.X[:, k] <= x
    if ind.all():
        return 1.0
    if not ind.any():
        return 0.0
    return min(max(float(w @ ind), 0.0), 1.0)


def _index_weights(kernel: KernelSpec, proj: np.ndarray, y: float,
                   h_tilde: float) -> np.ndarray:
    raw = eval_kernel(kernel, (proj - y) / h_tilde)
    total = raw.sum()
    if not np.isfinite(total) or total <= 0:
        raise EmptyWindowError("no kernel mass at the index point")
    return raw / total


def index_cond_cdf(data: Dataset, beta, x, y: float, kernel: KernelSpec,
                   h_tilde: float) -> float:
    """F_beta(x | y) estimate: sum_j w_j(y) 1(X_j <= x componentwise)."""
    beta = np.asarray(beta, dtype=float)
    w = _index_weights(kernel, data.Z @ beta, y, h_tilde)
    ind = np.all(data.X <= np.asarray(x, dtype=float), axis=1)
    if ind.all():
        return 1.0
    if not ind.any():
        return 0.0
    return min(max(float(w @ ind), 0.0), 1.0)


def index_cond_joint_cdf(data: Dataset, beta, x, z, y: float,
                         kernel: KernelSpec, h_tilde: float) -> float:
    """Joint H_beta(x, z | y) estimate over the (X, Z) block."""
    beta = np.asarray(beta, dtype=float)
    w = _index_weights(kernel, data.Z @ beta, y, h_tilde)
    ind = np.all(data.X <= np.asarray(x, dtype=float), axis=1) \
        & np.all(data.Z <= np.asarray(z, dtype=float), axis=1)
    if ind.all():
        return 1.0
    if not ind.any():
        return 0.0
    return min(max(float(w @ ind), 0.0), 1.0)


def index_density(data: Dataset, beta, y, kernel: KernelSpec,
                  h_tilde: float) -> np.ndarray:
    """Kernel density of beta'Z at y: (1/(n h)) sum_j K((beta'Z_j - y)/h)."""
    beta = np.asarray(beta, dtype=float)
    proj = data.Z @ beta
    y = np.asarray(y, dtype=float)
    vals = eval_kernel(kernel, (proj - np.atleast_1d(y)[:, None]) / h_tilde)
    out = vals.sum(axis=1) / (data.n * h_tilde)
    return out if y.ndim else float(out[0])


def pseudo_marginals(data: Dataset, kernel: KernelSpec, h,
                     leave_one_out: bool = True):
    """Pseudo-observations U_hat[i, k] = F_k(X[i, k] | Z_i).

    Returns ``(u_hat, empty_rows)`` where ``empty_rows`` is a boolean vector
    marking rows whose kernel window carried no usable mass (those rows are
    left at 0.5 and should be dropped by trimming downstream).  Entries are
    clamped strictly inside (0, 1).

    Leave-one-out (default on) removes the own-observation indicator from
    every weighted sum, which otherwise biases U_hat[i, k] upward by the
    self weight.
    """
    h = np.asarray(h, dtype=float)
    n, d = data.n, data.d
    u_hat = np.full((n, d), 0.5)
    empty = np.zeros(n, dtype=bool)
    chunk = max(1, int(2e6) // max(n, 1))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        w = product_weight_matrix(kernel, data.Z[lo:hi], data.Z, h)
        if leave_one_out:
            w[np.arange(hi - lo), np.arange(lo, hi)] = 0.0
        totals = w.sum(axis=1)
        bad = ~np.isfinite(totals) | (totals <= 0)
        empty[lo:hi] = bad
        totals[bad] = 1.0
        for k in range(d):
            ind = data.X[None, :, k] <= data.X[lo:hi, None, k]
            u_hat[lo:hi, k] = (w * ind).sum(axis=1) / totals
        u_hat[lo:hi][bad] = 0.5
    np.clip(u_hat, UNIT_EPS, 1.0 - UNIT_EPS, out=u_hat)
    return u_hat, empty

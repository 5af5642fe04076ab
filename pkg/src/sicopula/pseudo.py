"""Pseudo-observations and trimming indicators.

``build_pseudo_sample`` assembles U_hat (nonparametric kernel margins or a
caller-supplied parametric plug-in) and the trimming vector
omega_i = 1(U_hat_i in [nu_n, 1-nu_n]^d, Z_i in [-M_z, M_z]^p).
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cond_ecdf import Dataset, TrimBox, pseudo_marginals
from .copulas import UNIT_EPS
from .errors import InsufficientDataError
from .kernels import KernelSpec


@dataclass(frozen=True)
class MarginModel:
    """Conditional-margin model for the pseudo-observations.

    ``kind = "nonparametric"`` smooths over Z with the given product kernel
    and bandwidth vector; ``kind = "parametric"`` delegates to
    ``cdf(k, x_col, Z) -> (n,) array``, a fitted conditional CDF evaluator
    per X column (values in [0, 1], nondecreasing in x -- the caller's
    contract; parameters are not refit here).
    """

    kind: str
    kernel: KernelSpec = None
    h: np.ndarray = None
    cdf: Callable = None

    def __post_init__(self):
        if self.kind not in ("nonparametric", "parametric"):
            raise ValueError(f"unknown margin kind {self.kind!r}")
        if self.kind == "nonparametric" and (self.kernel is None or self.h is None):
            raise ValueError("nonparametric margins need kernel and h")
        if self.kind == "parametric" and self.cdf is None:
            raise ValueError("parametric margins need a cdf evaluator")


@dataclass(frozen=True)
class PseudoSample:
    """U_hat matrix, trimming indicators and bookkeeping.

    ``empty_rows`` marks rows whose kernel window failed; those always have
    omega = 0.  ``z_in_box`` is the Z-side indicator alone (used by the
    trimming-bias diagnostic).
    """

    u_hat: np.ndarray
    omega: np.ndarray
    n_kept: int
    empty_rows: np.ndarray
    z_in_box: np.ndarray

    @property
    def kept_idx(self) -> np.ndarray:
        return np.nonzero(self.omega)[0]


def z_box_indicator(z: np.ndarray, trim: TrimBox) -> np.ndarray:
    mz = np.asarray(trim.m_z, dtype=float)
    with np.errstate(invalid="ignore"):
        return np.all(np.abs(z) <= mz, axis=1)


def trim_indicator(u_hat: np.ndarray, z: np.ndarray, trim: TrimBox) -> np.ndarray:
    """omega_i = 1(U_hat_i in [nu, 1-nu]^d and |Z_i| <= M_z componentwise)."""
    nu = trim.nu_n
    in_u = np.all((u_hat >= nu) & (u_hat <= 1.0 - nu), axis=1)
    return in_u & z_box_indicator(z, trim)


def default_m_z(z: np.ndarray) -> np.ndarray:
    """Componentwise 95th percentile of |Z| (data-driven box).

    The theory wants a fixed box with the Z density bounded below on it;
    that is unverifiable from data, so this default is a pragmatic stand-in
    and can be overridden.
    """
    return np.quantile(np.abs(z), 0.95, axis=0)


def build_pseudo_sample(data: Dataset, margin: MarginModel,
                        trim: TrimBox) -> PseudoSample:
    """Assemble the pseudo-sample and trimming for the criterion.

    Raises :class:`InsufficientDataError` when fewer than p + 5 rows
    survive trimming (not enough to identify the index).
    """
    if margin.kind == "nonparametric":
        u_hat, empty = pseudo_marginals(data, margin.kernel, margin.h,
                                        leave_one_out=True)
    else:
        u_hat = np.empty((data.n, data.d))
        for k in range(data.d):
            vals = np.asarray(margin.cdf(k, data.X[:, k], data.Z), dtype=float)
            if vals.shape != (data.n,):
                raise ValueError("margin cdf must return one value per row")
            if np.any(vals < 0) or np.any(vals > 1):
                raise ValueError("margin cdf values must lie in [0, 1]")
            u_hat[:, k] = vals
        u_hat = np.clip(u_hat, UNIT_EPS, 1.0 - UNIT_EPS)
        empty = np.zeros(data.n, dtype=bool)
    omega = trim_indicator(u_hat, data.Z, trim) & ~empty
    n_kept = int(omega.sum())
    if n_kept < data.p + 5:
        raise InsufficientDataError(
            f"only {n_kept} observations kept by trimming; "
            f"need at least {data.p + 5}")
    return PseudoSample(u_hat, omega, n_kept, empty,
                        z_box_indicator(data.Z, trim))

"""Univariate and product smoothing kernels, including higher-order variants.

A kernel is a symmetric density on a compact symmetric support (the
truncated Gaussian is renormalized on [-5, 5]).  Higher-order kernels are
built as ``base(u) * q(u^2)`` with the even polynomial ``q`` solved from the
moment conditions: all moments of order 1..s-1 vanish while the kernel still
integrates to one.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtr

_BASES = ("epanechnikov", "quartic", "gaussian")

#: number of Simpson nodes used for moment quadrature (odd)
SIMPSON_NODES = 10_001

_GAUSS_SUPPORT = 5.0
_GAUSS_MASS = ndtr(_GAUSS_SUPPORT) - ndtr(-_GAUSS_SUPPORT)


@dataclass(frozen=True)
class KernelSpec:
    """Immutable kernel description.

    Parameters
    ----------
    base : str
        One of ``epanechnikov``, ``quartic``, ``gaussian`` (truncated at
        +-5 standard deviations).
    order : int
        Even integer s >= 2; moments 1..s-1 vanish.
    poly : tuple of float
        Coefficients of the even polynomial multiplier in powers of u^2;
        ``(1.0,)`` for a plain second-order kernel.
    """

    base: str = "epanechnikov"
    order: int = 2
    poly: tuple = (1.0,)

    def __post_init__(self):
        if self.base not in _BASES:
            raise ValueError(f"unknown kernel base {self.base!r}")
        if self.order < 2 or self.order % 2:
            raise ValueError("kernel order must be an even integer >= 2")

    @property
    def support(self) -> float:
        """Half-width of the support."""
        return _GAUSS_SUPPORT if self.base == "gaussian" else 1.0

    @property
    def differentiable(self) -> bool:
        """True when K' is continuous on R (needed for analytic tau gradients).

        Epanechnikov's derivative jumps at the support edge; the quartic's
        vanishes there and the truncated Gaussian's edge jump is ~1e-5 and
        treated as negligible.
        """
        return self.base != "epanechnikov"


def _base_values(base: str, u: np.ndarray) -> np.ndarray:
    if base == "epanechnikov":
        return 0.75 * (1.0 - u * u)
    if base == "quartic":
        t = 1.0 - u * u
        return 0.9375 * t * t
    return np.exp(-0.5 * u * u) / (np.sqrt(2.0 * np.pi) * _GAUSS_MASS)


def _base_deriv(base: str, u: np.ndarray) -> np.ndarray:
    if base == "epanechnikov":
        return -1.5 * u
    if base == "quartic":
        return -3.75 * u * (1.0 - u * u)
    return -u * _base_values("gaussian", u)


def eval_kernel(kernel: KernelSpec, u) -> np.ndarray:
    """Evaluate K(u); zero outside the support.  Vectorized in ``u``."""
    u = np.asarray(u, dtype=float)
    usq = u * u
    if kernel.base == "epanechnikov" and kernel.poly == (1.0,):
        return 0.75 * np.maximum(1.0 - usq, 0.0)
    if kernel.base == "quartic" and kernel.poly == (1.0,):
        t = np.maximum(1.0 - usq, 0.0)
        return 0.9375 * t * t
    inside = np.abs(u) <= kernel.support
    q = np.zeros_like(u)
    for c in reversed(kernel.poly):
        q = q * usq + c
    out = q * _base_values(kernel.base, u)
    return np.where(inside, out, 0.0)


def eval_kernel_deriv(kernel: KernelSpec, u) -> np.ndarray:
    """Derivative K'(u); zero outside the support."""
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) <= kernel.support
    usq = u * u
    q = np.zeros_like(u)
    dq = np.zeros_like(u)
    for c in reversed(kernel.poly):
        dq = dq * usq + q
        q = q * usq + c
    # d/du [q(u^2) base(u)] = 2u q'(u^2) base + q(u^2) base'
    out = 2.0 * u * dq * _base_values(kernel.base, u) + q * _base_deriv(kernel.base, u)
    return np.where(inside, out, 0.0)


def _simpson_nodes(half: float):
    x = np.linspace(-half, half, SIMPSON_NODES)
    w = np.ones(SIMPSON_NODES)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    w *= (x[1] - x[0]) / 3.0
    return x, w


def kernel_moment(kernel: KernelSpec, j: int) -> float:
    """j-th moment of the kernel by composite Simpson quadrature."""
    x, w = _simpson_nodes(kernel.support)
    return float(np.sum(w * x**j * eval_kernel(kernel, x)))


@lru_cache(maxsize=None)
def _higher_order_poly(base: str, s: int) -> tuple:
    """Solve the moment system for the even polynomial multiplier.

    With q(u) = sum_j c_j u^(2j), j = 0..s/2-1, the conditions
    int u^(2i) q(u) K_base(u) du = delta_{i0} form a dense symmetric system
    in the base moments m_{2(i+j)}.
    """
    half = _GAUSS_SUPPORT if base == "gaussian" else 1.0
    x, w = _simpson_nodes(half)
    kb = _base_values(base, x)
    nterms = s // 2
    moments = [float(np.sum(w * x ** (2 * k) * kb)) for k in range(2 * nterms - 1)]
    a = np.array([[moments[i + j] for j in range(nterms)] for i in range(nterms)])
    rhs = np.zeros(nterms)
    rhs[0] = 1.0
    return tuple(np.linalg.solve(a, rhs))


def make_higher_order(base: KernelSpec, s: int) -> KernelSpec:
    """Return an order-``s`` kernel on the same base.

    Odd ``s`` is rejected: symmetric kernels kill odd moments for free, so an
    odd order is a configuration error.
    """
    if s % 2 or s < 2:
        raise ValueError("kernel order s must be an even integer >= 2")
    if s == 2:
        return KernelSpec(base.base, 2, (1.0,))
    return KernelSpec(base.base, s, _higher_order_poly(base.base, s))


def product_weight(kernel: KernelSpec, dz, h) -> float:
    """Product kernel (1/prod h_k) prod_k K(dz_k / h_k).

    ``dz`` and ``h`` must have the same length p; ``h`` strictly positive.
    """
    dz = np.atleast_1d(np.asarray(dz, dtype=float))
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if dz.shape[-1] != h.shape[-1]:
        raise ValueError("dz and h dimensions differ")
    if np.any(h <= 0):
        raise ValueError("bandwidths must be positive")
    vals = eval_kernel(kernel, dz / h)
    return float(np.prod(vals, axis=-1) / np.prod(h))


def product_weight_matrix(kernel: KernelSpec, z_eval: np.ndarray,
                          z_obs: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Unnormalized product-kernel weights K(Z_j - z_i, h) as an (m, n) matrix."""
    z_eval = np.atleast_2d(z_eval)
    z_obs = np.atleast_2d(z_obs)
    h = np.asarray(h, dtype=float)
    out = np.ones((z_eval.shape[0], z_obs.shape[0]))
    for k in range(z_obs.shape[1]):
        out *= eval_kernel(kernel, (z_obs[None, :, k] - z_eval[:, None, k]) / h[k])
    return out / np.prod(h)

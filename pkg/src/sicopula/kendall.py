"""Conditional Kendall's tau along an index direction.

The estimator is the weighted concordance double sum

    S = sum_{a != b} w_a(y) w_b(y) 1(X_b < X_a componentwise, strict),

with Nadaraya-Watson weights on beta'Z, renormalized by 1/(1 - sum w_a^2)
for the excluded diagonal, then mapped to tau: 4 S' - 1 for d = 2 and
(2^d S' - 1)/(2^d - 1) for d >= 3.  Ties contribute zero (continuous laws
are assumed); on fully tied data tau is -1 (d = 2) or -1/(2^d - 1).
"""

from dataclasses import dataclass

import numpy as np

from .cond_ecdf import Dataset
from .errors import EmptyWindowError, InsufficientSupportError
from .kernels import KernelSpec, eval_kernel, eval_kernel_deriv

#: cap on the broadcast block size of the windowed concordance tensor
_BLOCK_CELLS = 4_000_000
#: windowed-path cost (m * K^2 * d) above which the d = 2 merge plan is used
_PLAN_CUTOFF = 6_000_000


class DominancePlan:
    """Precomputed merge schedule for weighted 2-D dominance sums.

    For observations sorted by X1 (ties broken by X2), a bottom-up merge
    over power-of-two blocks accumulates, for every point a,
    V_a = sum of weights of points b with X1_b < X1_a and X2_b < X2_a.
    The block permutations and searchsorted positions depend only on the
    data, so one plan serves every weight vector (one criterion evaluation
    feeds m weight rows through it at once).  Pairs tied in X1 are counted
    by the raw sweep and subtracted through the per-run correction.
    """

    def __init__(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        if x.shape[1] != 2:
            raise ValueError("dominance plan is for d = 2 only")
        n = x.shape[0]
        order = np.lexsort((x[:, 1], x[:, 0]))
        self.order = order
        x1s = x[order, 0]
        x2s = x[order, 1]
        self.n = n
        self.levels = []
        width = 1
        while width < n:
            src_parts, alist_parts, qidx_parts, qbase_parts = [], [], [], []
            offset = 0
            for lo in range(0, n, 2 * width):
                mid = min(lo + width, n)
                hi = min(lo + 2 * width, n)
                if mid >= hi:
                    continue
                left = np.arange(lo, mid)
                right = np.arange(mid, hi)
                lsort = left[np.argsort(x2s[left], kind="stable")]
                cnt = np.searchsorted(x2s[lsort], x2s[right], side="left")
                src_parts.append(lsort)
                alist_parts.append(right)
                qidx_parts.append(offset + cnt)
                qbase_parts.append(np.full(right.shape[0], offset))
                offset += left.shape[0]
            if not src_parts:
                break
            self.levels.append((
                np.concatenate(src_parts),
                np.concatenate(alist_parts),
                np.concatenate(qidx_parts),
                np.concatenate(qbase_parts),
            ))
            width *= 2
        # X1-tie runs: positions of equal x1 values, with the per-element
        # count of strictly-smaller-x2 predecessors inside the run
        self.run_fix = []
        start = 0
        for end in np.append(np.nonzero(np.diff(x1s))[0] + 1, n):
            if end - start > 1:
                seg = np.arange(start, end)
                cnt = np.searchsorted(x2s[seg], x2s[seg], side="left")
                self.run_fix.append((seg, cnt))
            start = end
        self.has_x1_ties = bool(self.run_fix)

    def weighted_dominance_t(self, wt: np.ndarray) -> np.ndarray:
        """V in the transposed layout: ``wt`` is (n, m) with rows in the
        plan's sort order; returns vt with vt[a] = sum of wt[b] over the
        points b strictly dominated by a."""
        n, m = wt.shape
        vt = np.zeros_like(wt)
        buf = np.empty((n + 1, m), dtype=wt.dtype)
        for src, alist, qidx, qbase in self.levels:
            cs = buf[: src.shape[0] + 1]
            cs[0] = 0.0
            np.cumsum(wt[src], axis=0, out=cs[1:])
            vt[alist] += cs[qidx] - cs[qbase]
        for seg, cnt in self.run_fix:
            cs = buf[: seg.shape[0] + 1]
            cs[0] = 0.0
            np.cumsum(wt[seg], axis=0, out=cs[1:])
            vt[seg] -= cs[cnt]
        return vt

    def weighted_dominance(self, w_sorted: np.ndarray) -> np.ndarray:
        """V[:, a] for weight rows aligned to the plan's sort order."""
        return self.weighted_dominance_t(
            np.ascontiguousarray(w_sorted.T)).T


@dataclass(frozen=True)
class TauEstimate:
    """A conditional tau value at one index point.

    ``effective_weight_mass`` is the Kish effective sample size
    1 / sum_j w_j^2 of the normalized weights; ``value`` is clamped into
    [-1, 1] (higher-order kernels can push the raw double sum outside).
    """

    value: float
    effective_weight_mass: float
    y: float
    beta: np.ndarray


def tau_normalization(sprime: np.ndarray, d: int) -> np.ndarray:
    """Map the renormalized concordance mass S' to tau."""
    sprime = np.asarray(sprime, dtype=float)
    if d == 2:
        return 4.0 * sprime - 1.0
    return (2.0**d * sprime - 1.0) / (2.0**d - 1.0)


def _window_bounds(ts: np.ndarray, y: np.ndarray, radius: float):
    if np.isfinite(radius):
        lo = np.searchsorted(ts, y - radius, side="left")
        hi = np.searchsorted(ts, y + radius, side="right")
    else:
        lo = np.zeros(y.shape[0], dtype=np.int64)
        hi = np.full(y.shape[0], ts.shape[0], dtype=np.int64)
    return lo, hi


#: above this weight-matrix size the plan path accumulates in float32
#: (relative tau error ~1e-6, immaterial next to the statistical noise)
_SINGLE_PREC_CELLS = 400_000


def _tau_via_plan(proj, x, y, kernel, h_tilde, exclude, plan):
    """Merge-plan evaluation of the same double sum (d = 2).

    Works in the transposed (n, m) layout so level gathers touch
    contiguous rows.
    """
    n, d = x.shape
    m = y.shape[0]
    tso = proj[plan.order]
    inv = np.empty(n, dtype=np.int64)
    inv[plan.order] = np.arange(n)
    single = n * m > _SINGLE_PREC_CELLS
    plain = kernel.poly == (1.0,) and kernel.base in ("quartic",
                                                      "epanechnikov")
    if single and plain:
        # constant kernel factors cancel in the normalized weights
        u = np.subtract.outer(tso.astype(np.float32),
                              y.astype(np.float32))
        u /= np.float32(h_tilde)
        np.square(u, out=u)
        wt = np.subtract(np.float32(1.0), u, out=u)
        np.maximum(wt, np.float32(0.0), out=wt)
        if kernel.base == "quartic":
            np.square(wt, out=wt)
    else:
        wt = eval_kernel(kernel, (tso[:, None] - y[None, :]) / h_tilde)
        if single:
            wt = wt.astype(np.float32)
    if exclude is not None:
        wt[inv[exclude], np.arange(m)] = 0.0
    totals = wt.sum(axis=0)
    support = (wt != 0.0).sum(axis=0)
    ok = np.isfinite(totals.astype(float)) & (totals > 0)
    thin = ok & (support < 2)
    ok &= support >= 2
    wt /= np.where(ok, totals, 1.0)[None, :]
    q = (wt * wt).sum(axis=0).astype(float)
    vt = plan.weighted_dominance_t(wt)
    s_raw = (wt * vt).sum(axis=0).astype(float)
    sprime = s_raw / (1.0 - q)
    vals = np.clip(tau_normalization(sprime, d), -1.0, 1.0)
    tau = np.where(ok, vals, np.nan)
    ess = np.where(ok, 1.0 / np.maximum(q, 1e-300), np.nan)
    status = np.ones(m, dtype=np.int8)
    status[ok] = 0
    status[thin] = 2
    return tau, ess, status


def batched_cond_tau(proj: np.ndarray, x: np.ndarray, y: np.ndarray,
                     kernel: KernelSpec, h_tilde: float,
                     exclude: np.ndarray = None, plan: DominancePlan = None):
    """Tau at many index points in one pass over sorted projections.

    Parameters
    ----------
    proj : (n,) array
        Index values beta'Z_j of the observations.
    x : (n, d) array
        Endogenous block.
    y : (m,) array
        Evaluation points.
    exclude : (m,) int array, optional
        Observation index excluded from the weights at each evaluation
        point (leave-one-out).
    plan : DominancePlan, optional
        Reusable merge schedule for d = 2; built on the fly when the
        windowed broadcast would be more expensive.

    Returns
    -------
    tau : (m,) array, nan where the window failed
    ess : (m,) array, Kish effective sample size (nan on failure)
    status : (m,) int array, 0 ok / 1 empty window / 2 insufficient support
    """
    n, d = x.shape
    y = np.asarray(y, dtype=float)
    m = y.shape[0]
    order = np.argsort(proj, kind="stable")
    ts = proj[order]
    xs = x[order]
    inv = np.empty(n, dtype=np.int64)
    inv[order] = np.arange(n)

    radius = kernel.support * h_tilde
    lo, hi = _window_bounds(ts, y, radius)
    kmax = int((hi - lo).max(initial=0))
    tau = np.full(m, np.nan)
    ess = np.full(m, np.nan)
    status = np.ones(m, dtype=np.int8)
    if kmax == 0:
        return tau, ess, status

    if d == 2 and not np.isinf(h_tilde) and (
            plan is not None or m * kmax * kmax * d > _PLAN_CUTOFF):
        if plan is None:
            plan = DominancePlan(x)
        return _tau_via_plan(proj, x, y, kernel, h_tilde, exclude, plan)

    block = max(1, _BLOCK_CELLS // max(kmax * kmax, 1))
    cols = np.arange(kmax)
    for b0 in range(0, m, block):
        b1 = min(b0 + block, m)
        lob, hib = lo[b0:b1], hi[b0:b1]
        idx = lob[:, None] + cols[None, :]
        valid = idx < hib[:, None]
        idxc = np.minimum(idx, n - 1)
        if np.isinf(h_tilde):
            raw = np.where(valid, eval_kernel(kernel, 0.0), 0.0)
        else:
            u = (ts[idxc] - y[b0:b1, None]) / h_tilde
            raw = np.where(valid, eval_kernel(kernel, u), 0.0)
        if exclude is not None:
            pos = inv[exclude[b0:b1]]
            col = pos - lob
            rows = np.nonzero((col >= 0) & (col < kmax))[0]
            raw[rows, col[rows]] = 0.0
        totals = raw.sum(axis=1)
        ok = np.isfinite(totals) & (totals > 0)
        support = (raw != 0.0).sum(axis=1)
        thin = ok & (support < 2)
        ok &= support >= 2
        totals[~ok] = 1.0
        xw = xs[idxc]
        conc = (xw[:, :, None, :] > xw[:, None, :, :]).all(axis=-1)
        if np.isinf(h_tilde):
            # uniform weights: integer pair counting keeps comonotone data
            # at tau exactly 1
            mask = (raw > 0).astype(np.int64)
            cnt = np.einsum("ia,iab,ib->i", mask, conc.astype(np.int64), mask)
            denom = support * np.maximum(support - 1, 1)
            sprime = cnt / denom
            q = 1.0 / np.maximum(support, 1)
        else:
            w = raw / totals[:, None]
            q = (w * w).sum(axis=1)
            s_raw = np.einsum("ia,iab,ib->i", w, conc, w)
            sprime = s_raw / (1.0 - q)
        vals = np.clip(tau_normalization(sprime, d), -1.0, 1.0)
        tau[b0:b1] = np.where(ok, vals, np.nan)
        ess[b0:b1] = np.where(ok, 1.0 / np.maximum(q, 1e-300), np.nan)
        st = np.ones(b1 - b0, dtype=np.int8)
        st[ok] = 0
        st[thin] = 2
        status[b0:b1] = st
    return tau, ess, status


def cond_tau(data: Dataset, beta, y: float, kernel: KernelSpec,
             h_tilde: float, exclude: int = None) -> TauEstimate:
    """Conditional Kendall's tau of X given beta'Z = y.

    ``h_tilde = inf`` gives exactly uniform weights.  ``exclude`` drops one
    observation from the weights (leave-one-out).  Raises
    :class:`EmptyWindowError` / :class:`InsufficientSupportError` when the
    window carries no mass or fewer than two weighted points.
    """
    beta = np.asarray(beta, dtype=float)
    if data.d < 2:
        raise ValueError("tau needs d >= 2")
    proj = data.Z @ beta
    excl = None if exclude is None else np.array([exclude], dtype=np.int64)
    tau, ess, status = batched_cond_tau(
        proj, data.X, np.array([float(y)]), kernel, h_tilde, exclude=excl)
    if status[0] == 1:
        raise EmptyWindowError(f"no kernel mass at y={y}")
    if status[0] == 2:
        raise InsufficientSupportError(f"fewer than 2 weighted points at y={y}")
    return TauEstimate(float(tau[0]), float(ess[0]), float(y), beta)


def cond_tau_curve(data: Dataset, beta, y_grid, kernel: KernelSpec,
                   h_tilde: float) -> list:
    """Elementwise :func:`cond_tau` over a sorted grid, sharing the
    projection sort.  Failed points come back with ``value = nan``."""
    beta = np.asarray(beta, dtype=float)
    y_grid = np.asarray(y_grid, dtype=float)
    tau, ess, status = batched_cond_tau(data.Z @ beta, data.X, y_grid,
                                        kernel, h_tilde)
    return [TauEstimate(float(t), float(e), float(yv), beta)
            for t, e, yv in zip(tau, ess, y_grid)]


def _tau_and_grad_single(proj, x, z, y, kernel, h_tilde, free_idx,
                         exclude=None):
    """Value and analytic gradient of tau wrt the free beta components."""
    n, d = x.shape
    u = (proj - y) / h_tilde
    raw = eval_kernel(kernel, u)
    draw = eval_kernel_deriv(kernel, u) / h_tilde
    if exclude is not None:
        raw[exclude] = 0.0
        draw[exclude] = 0.0
    live = raw != 0.0
    if live.sum() < 2:
        raise InsufficientSupportError("fewer than 2 weighted points")
    total = raw.sum()
    if total <= 0:
        raise EmptyWindowError("no kernel mass")
    w = raw / total
    conc = (x[:, None, :] > x[None, :, :]).all(axis=-1)
    q = w @ w
    s_raw = w @ conc @ w
    sprime = s_raw / (1.0 - q)
    grad = np.empty(len(free_idx))
    cw = conc @ w + conc.T @ w
    for g, j in enumerate(free_idx):
        dk = draw * z[:, j]
        dw = (dk - w * dk.sum()) / total
        ds = dw @ cw
        dq = 2.0 * (w @ dw)
        grad[g] = (ds * (1.0 - q) + s_raw * dq) / (1.0 - q) ** 2
    scale = 4.0 if d == 2 else 2.0**d / (2.0**d - 1.0)
    return tau_normalization(sprime, d), scale * grad


def grad_beta_cond_tau(data: Dataset, beta, y: float, kernel: KernelSpec,
                       h_tilde: float, mode: str = "finite_diff",
                       exclude: int = None) -> np.ndarray:
    """Gradient of cond_tau over the free components beta[1:], at fixed y.

    ``analytic`` differentiates the kernel weights and needs a kernel with
    a continuous derivative; ``finite_diff`` uses central differences with
    step 1e-4 (1 + |beta|).
    """
    beta = np.asarray(beta, dtype=float)
    free_idx = list(range(1, beta.shape[0]))
    if mode == "analytic":
        if not kernel.differentiable:
            raise ValueError(
                "analytic mode needs a differentiable kernel "
                "(quartic or truncated gaussian base)")
        _, grad = _tau_and_grad_single(data.Z @ beta, data.X, data.Z, y,
                                       kernel, h_tilde, free_idx, exclude)
        return grad
    if mode != "finite_diff":
        raise ValueError(f"unknown mode {mode!r}")
    step = 1e-4 * (1.0 + float(np.linalg.norm(beta)))
    grad = np.empty(len(free_idx))
    for g, j in enumerate(free_idx):
        bp, bm = beta.copy(), beta.copy()
        bp[j] += step
        bm[j] -= step
        tp = cond_tau(data, bp, y, kernel, h_tilde, exclude=exclude).value
        tm = cond_tau(data, bm, y, kernel, h_tilde, exclude=exclude).value
        grad[g] = (tp - tm) / (2.0 * step)
    return grad

"""Rearrangement maps and the interval-censored choice-probability estimator.

For a covariate point w the map tau -> w'beta_tau crosses zero at the
level tau_w, and the conditional choice probability equals 1 - tau_w.
The estimator integrates the indicator of the estimated process over a
window [a, b], which is insensitive to noisy sign flips of the path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .dgp import DGPSpec, population_Q
from .estimator import CoefficientPath
from .exceptions import (
    ConfigurationError,
    DomainError,
    IllConditionedCrossing,
    NumericError,
    PreconditionNotMet,
)
from .kernels import KernelSpec, builtin_kernel, kernel_square_integral
from .score import CovariatePoint, Dataset, ScorePoint, asymptotic_variance, margins, score_hessian

__all__ = [
    "SampledFunction",
    "ChoiceProbEstimate",
    "psi",
    "monotone_rearrangement",
    "choice_prob",
    "choice_prob_se",
    "crossing_se",
    "linearization_bound_check",
]

_DENSE_GRID = 10_001
_CROSSING_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class SampledFunction:
    """A function on [0,1] represented by samples on a strictly increasing grid."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.size == 0:
            raise ConfigurationError("grid must be a nonempty 1-d array")
        if values.shape != grid.shape:
            raise ConfigurationError(
                f"values shape {values.shape} does not match grid shape {grid.shape}"
            )
        if np.any(np.diff(grid) <= 0.0):
            raise ConfigurationError("grid must be strictly increasing")
        if grid[0] < 0.0 or grid[-1] > 1.0:
            raise ConfigurationError("grid must lie inside [0,1]")
        if not np.all(np.isfinite(values)):
            raise ConfigurationError("values must be finite")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class ChoiceProbEstimate:
    """Choice-probability estimate at one covariate point."""

    w: CovariatePoint
    a: float
    b: float
    p_hat: float
    tau_w_hat: float
    se_hat: float | None
    n_sign_changes: int

    def __post_init__(self) -> None:
        if not (self.a < self.b):
            raise ConfigurationError(f"need a < b, got a={self.a}, b={self.b}")
        if not (1.0 - self.b <= self.p_hat <= 1.0 - self.a):
            raise ConfigurationError(
                f"p_hat={self.p_hat} outside [{1.0 - self.b}, {1.0 - self.a}]"
            )
        if not (self.a <= self.tau_w_hat <= self.b):
            raise ConfigurationError(
                f"tau_w_hat={self.tau_w_hat} outside [{self.a}, {self.b}]"
            )
        if self.n_sign_changes < 0:
            raise ConfigurationError("n_sign_changes must be >= 0")
        if self.se_hat is not None and not (self.se_hat >= 0.0):
            raise ConfigurationError(f"se_hat must be >= 0, got {self.se_hat}")


def _cell_edges(grid: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Midpoint-rule cell edges: each point owns the span between neighbor
    midpoints, with the boundary cells extended to lo and hi."""
    edges = np.empty(grid.size + 1)
    edges[0] = lo
    edges[-1] = hi
    edges[1:-1] = 0.5 * (grid[:-1] + grid[1:])
    return edges


def psi(g: SampledFunction, v: float) -> float:
    """Lebesgue measure of the sublevel set {u in [0,1] : g(u) <= v}.

    The measure is approximated by midpoint-rule cell weights on the
    sample grid; it is a nondecreasing step function of v.
    """
    edges = _cell_edges(g.grid, 0.0, 1.0)
    mask = g.values <= v
    return float(np.sum((edges[1:] - edges[:-1])[mask]))


def monotone_rearrangement(g: SampledFunction, query) -> np.ndarray:
    """Increasing rearrangement Phi_g(u) = inf{v : psi(g, v) >= u}.

    Each query in (0,1) is resolved by bisection over the sampled value
    range; the output is forced nondecreasing in the query.
    """
    query = np.asarray(query, dtype=float)
    flat = np.atleast_1d(query)
    if np.any(flat <= 0.0) or np.any(flat >= 1.0):
        raise ConfigurationError("queries must lie in (0,1)")
    vlo, vhi = float(np.min(g.values)), float(np.max(g.values))
    order = np.argsort(flat, kind="stable")
    out = np.empty_like(flat)
    prev = -np.inf
    for pos in order:
        u = flat[pos]
        if psi(g, vlo) >= u:
            val = vlo
        else:
            lo, hi = vlo, vhi
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if mid <= lo or mid >= hi:
                    break
                if psi(g, mid) >= u:
                    hi = mid
                else:
                    lo = mid
            val = hi
        # enforce monotonicity against ulp-level bisection jitter
        val = max(val, prev)
        prev = val
        out[pos] = val
    return out.reshape(query.shape) if query.ndim else out[0]


def _indicator_runs(gvals: np.ndarray, edges: np.ndarray):
    """Maximal runs of cells with gvals <= 0 as (start, stop) edge indices."""
    mask = gvals <= 0.0
    runs = []
    i = 0
    m = mask.size
    while i < m:
        if mask[i]:
            j = i
            while j < m and mask[j]:
                j += 1
            runs.append((i, j))
            i = j
        else:
            i += 1
    return runs


def choice_prob(
    path: CoefficientPath, w: CovariatePoint, a: float, b: float
) -> ChoiceProbEstimate:
    """Interval-censored choice-probability estimate at w over [a, b].

    tau_w_hat accumulates the midpoint-rule measure of {tau in [a,b] :
    w'beta_hat_tau <= 0}; p_hat follows from the identity
    p = 1 - b + integral of I{w'beta_hat_tau >= 0} = 1 - tau_w_hat plus
    the (usually empty) measure of exact zeros, so the two outputs are
    consistent by construction.  Sign flips of the path are integrated
    as-is and surfaced through n_sign_changes.
    """
    if not (0.0 < a < b < 1.0):
        raise ConfigurationError(f"need 0 < a < b < 1, got a={a}, b={b}")
    if w.x.shape[0] != path.d:
        raise ConfigurationError(
            f"w.x has length {w.x.shape[0]} but path has d = {path.d}"
        )
    taus = path.taus
    if taus[0] > a or taus[-1] < b:
        raise DomainError(
            f"[{a}, {b}] not covered by the path grid "
            f"[{taus[0]}, {taus[-1]}]"
        )
    inside = (taus >= a) & (taus <= b)
    if not np.any(inside):
        raise DomainError(f"no path grid points inside [{a}, {b}]")
    idx = np.nonzero(inside)[0]
    sub = slice(idx[0], idx[-1] + 1)
    gvals = path.b_hat[sub] @ w.x + path.s_hat[sub] * w.z
    edges = _cell_edges(taus[sub], a, b)

    runs = _indicator_runs(gvals, edges)
    if runs and runs[0][0] == 0:
        # the first run starts at a, so its measure telescopes to its
        # right edge; this keeps tau_w_hat independent of the window
        # for the single-crossing case
        tau_w = edges[runs[0][1]]
        later = runs[1:]
    else:
        tau_w = a
        later = runs
    for start, stop in later:
        tau_w += edges[stop] - edges[start]
    zero_mask = gvals == 0.0
    zero_mass = float(np.sum((edges[1:] - edges[:-1])[zero_mask]))
    tau_w = min(max(float(tau_w), a), b)
    p_hat = min(max(1.0 - tau_w + zero_mass, 1.0 - b), 1.0 - a)

    signs = np.sign(gvals)
    nz = signs[signs != 0.0]
    flips = int(np.sum(nz[1:] != nz[:-1])) if nz.size > 1 else 0
    return ChoiceProbEstimate(
        w=w,
        a=float(a),
        b=float(b),
        p_hat=p_hat,
        tau_w_hat=tau_w,
        se_hat=None,
        n_sign_changes=flips,
    )


def _resolve_kernel(path: CoefficientPath, kernel: KernelSpec | None) -> KernelSpec:
    if kernel is not None:
        return kernel
    if not path.kernel_name:
        raise ConfigurationError(
            "path does not record a kernel name; pass kernel= explicitly"
        )
    return builtin_kernel(path.kernel_name)


def _sandwich_se(Q: np.ndarray, sigma: np.ndarray, xw: np.ndarray, nh: float) -> float:
    try:
        u = np.linalg.solve(Q, xw)
    except np.linalg.LinAlgError:
        raise NumericError("hessian matrix is singular in the variance sandwich") from None
    var = float(u @ sigma @ u) / nh
    if not np.isfinite(var) or var < 0.0:
        raise NumericError(f"variance sandwich produced {var}")
    return math.sqrt(var)


def crossing_se(
    dgp: DGPSpec,
    w: CovariatePoint,
    tau_w: float,
    n: int,
    h: float,
    kernel: KernelSpec,
) -> float:
    """Population delta-method standard error of p_hat at a known crossing.

    Evaluates |w'Delta_{tau_w}|^{-1} sqrt(x' Q^{-1} Sigma Q^{-1} x / (n h))
    with Q, Sigma and Delta taken from the population design.
    """
    if n <= 0 or not (h > 0.0):
        raise ConfigurationError(f"need n > 0 and h > 0, got n={n}, h={h}")
    delta = dgp.delta(tau_w)
    wtd = w.z * delta[0] + float(w.x @ delta[1:])
    if abs(wtd) < _CROSSING_FLOOR:
        raise IllConditionedCrossing(
            f"|w'Delta| = {abs(wtd):.3g} below {_CROSSING_FLOOR} at tau={tau_w}"
        )
    Q = population_Q(dgp, tau_w)
    sigma = asymptotic_variance(dgp, tau_w, kernel)
    return _sandwich_se(Q, sigma, w.x, n * h) / abs(wtd)


def choice_prob_se(
    path: CoefficientPath,
    estimate: ChoiceProbEstimate,
    dgp_or_plugin,
    kernel: KernelSpec | None = None,
) -> float:
    """Plug-in standard error for p_hat via the crossing-point delta method.

    se = |w'Delta_{tau_w}|^{-1} * sqrt(x' Q^{-1} Sigma Q^{-1} x / (n h)).
    Oracle mode (a DGP specification) uses the population Q, Sigma and
    Delta at tau_w_hat; data mode (a Dataset) plugs in the sample hessian,
    a kernel-weighted sample moment for Sigma, and a symmetric
    finite-difference slope of tau -> w'beta_hat_tau across the crossing.
    """
    kernel = _resolve_kernel(path, kernel)
    w = estimate.w
    tau_w = float(estimate.tau_w_hat)
    if not (path.h > 0.0):
        raise ConfigurationError("path does not record a positive bandwidth")

    if isinstance(dgp_or_plugin, DGPSpec):
        if path.n <= 0:
            raise ConfigurationError(
                "path does not record the sample size; rebuild it via estimate_process"
            )
        return crossing_se(dgp_or_plugin, w, tau_w, path.n, path.h, kernel)

    if isinstance(dgp_or_plugin, Dataset):
        data = dgp_or_plugin
        if data.d != path.d:
            raise ConfigurationError(
                f"dataset has d={data.d} but path has d={path.d}"
            )
        taus = path.taus
        j = int(np.argmin(np.abs(taus - tau_w)))
        lo, hi = max(0, j - 5), min(taus.size - 1, j + 5)
        if hi <= lo:
            raise ConfigurationError("path grid too short for the slope window")
        gvals = path.path_margins(w)
        wtd = (gvals[hi] - gvals[lo]) / (taus[hi] - taus[lo])
        if abs(wtd) < _CROSSING_FLOOR:
            raise IllConditionedCrossing(
                f"|w'Delta| = {abs(wtd):.3g} below {_CROSSING_FLOOR} at tau={tau_w}"
            )
        point = ScorePoint(
            s=int(path.s_hat[j]), b=path.b_hat[j], tau=float(taus[j]), h=path.h
        )
        Q = score_hessian(data, point, kernel)
        m = margins(data, point.s, point.b) / path.h
        kw = kernel.eval_K(m)
        moment = np.einsum("i,ij,ik->jk", kw, data.x, data.x) / (data.n * path.h)
        moment = 0.5 * (moment + moment.T)
        sigma = tau_w * (1.0 - tau_w) * kernel_square_integral(kernel) * moment
        return _sandwich_se(Q, sigma, w.x, data.n * path.h) / abs(wtd)

    raise ConfigurationError(
        "dgp_or_plugin must be a DGPSpec (oracle mode) or a Dataset (data mode)"
    )


# =========================================================================
# linearization diagnostics
# =========================================================================


def _eval_on(f, grid: np.ndarray) -> np.ndarray:
    try:
        vals = np.asarray(f(grid), dtype=float)
        if vals.shape == grid.shape:
            return vals
    except (TypeError, ValueError):
        pass
    return np.array([float(f(u)) for u in grid])


def _indicator_integral(f, a: float, b: float) -> float:
    """Measure of {u in [a,b] : f(u) <= 0} via a dense grid with
    bracketed roots refined by Brent's method."""
    grid = np.linspace(a, b, _DENSE_GRID)
    vals = _eval_on(f, grid)
    cuts = [a]
    for i in range(grid.size - 1):
        v0, v1 = vals[i], vals[i + 1]
        if v0 == 0.0 and grid[i] > a:
            cuts.append(float(grid[i]))
        elif v0 * v1 < 0.0:
            cuts.append(float(brentq(lambda u: float(f(u)), grid[i], grid[i + 1])))
    if vals[-1] == 0.0:
        cuts.append(float(grid[-1]))
    cuts.append(b)
    cuts = sorted(set(cuts))
    total = 0.0
    for left, right in zip(cuts[:-1], cuts[1:]):
        if right <= left:
            continue
        if float(f(0.5 * (left + right))) <= 0.0:
            total += right - left
    return total


def linearization_bound_check(
    g,
    h_fn,
    u0: float,
    eps: float,
    a: float,
    b: float,
    gamma: float = 1.0,
):
    """Verify the crossing-point linearization inequality on test functions.

    Returns (lhs, rhs, passed) where
      lhs = |int I{g<=0} - int I{h<=0} - h(u0)/|g'(u0)||   over [a,b],
      rhs = (2 xi(eps) + 4 C_H eps^(1+gamma)) / |g'(u0)|,
      passed = lhs <= rhs + 1e-9.
    xi(eps) is the centered oscillation sup |h(u0)-h(u) - (g(u0)-g(u))|
    over |u-u0| <= eps and C_H the centered Taylor-remainder constant of
    g at u0, both maximized on a dense grid.  Violations of the lemma's
    entry condition raise PreconditionNotMet rather than failing.
    """
    if not (a < b and eps > 0.0 and gamma > 0.0):
        raise ConfigurationError(
            f"need a < b, eps > 0, gamma > 0; got a={a}, b={b}, eps={eps}, gamma={gamma}"
        )
    if u0 - eps < a or u0 + eps > b:
        raise PreconditionNotMet(
            f"[u0-eps, u0+eps] = [{u0 - eps}, {u0 + eps}] not inside [{a}, {b}]"
        )
    g_u0 = float(g(u0))
    if abs(g_u0) > 1e-12:
        raise PreconditionNotMet(f"g(u0) = {g_u0:.3g}, need a root of g at u0")
    step = 1e-6
    gprime = (float(g(u0 + step)) - float(g(u0 - step))) / (2.0 * step)
    if abs(gprime) < 1e-12:
        raise PreconditionNotMet("g'(u0) vanishes; crossing is degenerate")

    grid = np.linspace(u0 - eps, u0 + eps, _DENSE_GRID)
    gv = _eval_on(g, grid)
    hv = _eval_on(h_fn, grid)
    h_u0 = float(h_fn(u0))
    xi = float(np.max(np.abs((h_u0 - hv) - (g_u0 - gv))))
    offset = grid - u0
    keep = np.abs(offset) > eps * 1e-6
    remainder = np.abs(gv - g_u0 - gprime * offset)
    c_h = float(np.max(remainder[keep] / np.abs(offset[keep]) ** (1.0 + gamma)))

    entry = abs(h_u0) + 2.0 * (xi + c_h * eps ** (1.0 + gamma)) / abs(gprime)
    if entry > eps:
        raise PreconditionNotMet(
            f"entry condition fails: |h(u0)| + 2(xi + C_H eps^(1+gamma))/|g'| "
            f"= {entry:.3g} > eps = {eps:.3g}"
        )

    ig = _indicator_integral(g, a, b)
    ih = _indicator_integral(h_fn, a, b)
    lhs = abs(ig - ih - h_u0 / abs(gprime))
    rhs = (2.0 * xi + 4.0 * c_h * eps ** (1.0 + gamma)) / abs(gprime)
    return lhs, rhs, bool(lhs <= rhs + 1e-9)

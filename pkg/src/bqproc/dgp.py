"""Location-scale designs with closed-form quantile coefficient paths.

The latent model is Y* = Z + X'gamma + (1 + lam * X1) * eps with eps
independent of (Z, X), so the conditional tau-quantile of Y* is linear in
(z, x) with coefficients known in closed form.  That makes every
population quantity the estimator targets (coefficient path, crossing
level, choice probability, curvature matrix, smoothing bias, path slope)
available as an oracle, either exactly or by low-dimensional quadrature.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit, ndtr, ndtri

from .exceptions import (
    ConfigurationError,
    DomainError,
    NoCrossing,
    NumericError,
)
from .kernels import KernelSpec, kernel_moment
from .score import CovariatePoint, Dataset

__all__ = [
    "DGPSpec",
    "reference_dgp",
    "parse_dgp_config",
    "philox_generator",
    "simulate",
    "true_beta",
    "true_choice_prob",
    "true_tau_w",
    "population_Q",
    "population_bias",
    "population_delta",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Crossing levels closer to {0, 1} than this are treated as no crossing:
# the margin sign is constant over every numerically resolvable quantile.
_TAU_FLOOR = 1e-12


def philox_generator(entropy) -> np.random.Generator:
    """Counter-based generator keyed by one or more non-negative integers.

    Streams keyed by distinct tuples are independent and do not depend on
    creation order, which is what makes sharded replications bitwise
    reproducible.
    """
    if np.ndim(entropy) == 0:
        entropy = [entropy]
    key = [int(v) for v in entropy]
    if any(v < 0 for v in key):
        raise ConfigurationError(f"seed components must be non-negative, got {key}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


@dataclass(frozen=True, eq=False)
class DGPSpec:
    """Simulation design and its closed-form population quantities.

    Attributes
    ----------
    gamma : ndarray, shape (d,)
        Location coefficients on x, intercept slot first.
    lam : float
        Heteroskedasticity loading on the first non-constant x component;
        requires 1 + lam * x1 > 0 on the support.
    error_dist : str
        'logistic' or 'normal'.
    x_intervals : tuple of (lo, hi)
        Uniform supports of the d-1 non-constant x components; the first
        x component is the constant 1.
    z_interval : (lo, hi)
        Uniform support of Z, drawn independently of X.
    name : str
        Label used in manifests.
    """

    gamma: np.ndarray
    lam: float
    error_dist: str
    x_intervals: tuple
    z_interval: tuple
    name: str = "custom"

    def __post_init__(self) -> None:
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if gamma.ndim != 1 or not np.all(np.isfinite(gamma)):
            raise ConfigurationError("gamma must be a finite vector")
        intervals = tuple((float(lo), float(hi)) for lo, hi in self.x_intervals)
        if len(intervals) != gamma.shape[0] - 1:
            raise ConfigurationError(
                f"gamma has {gamma.shape[0]} entries, so {gamma.shape[0] - 1} "
                f"x-intervals are required, got {len(intervals)}"
            )
        for lo, hi in intervals:
            if not (lo < hi):
                raise ConfigurationError(f"empty x-interval ({lo}, {hi})")
        if self.error_dist not in ("logistic", "normal"):
            raise ConfigurationError(
                f"error_dist must be 'logistic' or 'normal', got {self.error_dist!r}"
            )
        lam = float(self.lam)
        if not (lam >= 0.0) or not np.isfinite(lam):
            raise ConfigurationError(f"lambda must be a finite real >= 0, got {lam}")
        if lam > 0.0 and not intervals:
            raise ConfigurationError("lambda > 0 requires a non-constant x component")
        if intervals:
            lo, hi = intervals[0]
            if 1.0 + lam * lo <= 0.0 or 1.0 + lam * hi <= 0.0:
                raise ConfigurationError(
                    "1 + lambda * x1 must stay positive on the x1-support"
                )
        z_lo, z_hi = (float(v) for v in self.z_interval)
        if not (z_lo <= z_hi) or not np.isfinite(z_lo) or not np.isfinite(z_hi):
            raise ConfigurationError(f"invalid z-interval ({z_lo}, {z_hi})")
        gamma.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "x_intervals", intervals)
        object.__setattr__(self, "z_interval", (z_lo, z_hi))

    @property
    def d(self) -> int:
        return self.gamma.shape[0]

    # -- error distribution ------------------------------------------------

    def error_cdf(self, v):
        v = np.asarray(v, dtype=float)
        return expit(v) if self.error_dist == "logistic" else ndtr(v)

    def error_pdf(self, v):
        v = np.asarray(v, dtype=float)
        if self.error_dist == "logistic":
            p = expit(v)
            return p * (1.0 - p)
        return np.exp(-0.5 * v * v) / _SQRT_2PI

    def error_pdf_deriv(self, v):
        v = np.asarray(v, dtype=float)
        if self.error_dist == "logistic":
            p = expit(v)
            return p * (1.0 - p) * (1.0 - 2.0 * p)
        return -v * np.exp(-0.5 * v * v) / _SQRT_2PI

    def error_quantile(self, tau):
        tau = np.asarray(tau, dtype=float)
        return logit(tau) if self.error_dist == "logistic" else ndtri(tau)

    # -- design pieces -----------------------------------------------------

    def scale_at(self, x) -> float:
        """Conditional error scale 1 + lam * x1 at a full x vector."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape[0] != self.d:
            raise ConfigurationError(f"x must have length {self.d}, got {x.shape[0]}")
        s = 1.0 + self.lam * x[1] if self.d >= 2 else 1.0
        if s <= 0.0:
            raise DomainError(f"non-positive error scale {s} at x = {x}")
        return float(s)

    def z_density(self, z):
        """Marginal density of Z, elementwise."""
        z_lo, z_hi = self.z_interval
        if z_hi <= z_lo:
            raise DomainError("z-density undefined for a degenerate z-interval")
        z = np.asarray(z, dtype=float)
        return np.where((z >= z_lo) & (z <= z_hi), 1.0 / (z_hi - z_lo), 0.0)

    def x_quadrature(self, nodes_per_dim: int = 64):
        """Gauss-Legendre nodes and probability weights for the X-law.

        Returns (nodes, weights) with nodes of shape (m, d), first column
        constant 1, and weights summing to one.
        """
        if not self.x_intervals:
            return np.ones((1, 1)), np.ones(1)
        base, wts = np.polynomial.legendre.leggauss(nodes_per_dim)
        cols, colw = [], []
        for lo, hi in self.x_intervals:
            cols.append(0.5 * (hi - lo) * base + 0.5 * (hi + lo))
            colw.append(0.5 * wts)  # times (hi-lo), divided by the density norm
        grids = np.meshgrid(*cols, indexing="ij")
        wgrids = np.meshgrid(*colw, indexing="ij")
        m = grids[0].size
        nodes = np.column_stack(
            [np.ones(m)] + [g.reshape(-1) for g in grids]
        )
        weights = np.ones(m)
        for wg in wgrids:
            weights = weights * wg.reshape(-1)
        return nodes, weights

    # -- closed-form population path ----------------------------------------

    def beta_bar(self, tau: float):
        """Sign and normalized coefficient vector of the tau-quantile plane."""
        if not (0.0 < tau < 1.0):
            raise DomainError(f"tau must lie in (0,1), got {tau}")
        q = float(self.error_quantile(tau))
        b = self.gamma.copy()
        b[0] += q
        if self.d >= 2:
            b[1] += self.lam * q
        return 1, b

    def delta(self, tau: float) -> np.ndarray:
        """Derivative of the full coefficient path (z-entry first)."""
        if not (0.0 < tau < 1.0):
            raise DomainError(f"tau must lie in (0,1), got {tau}")
        qprime = 1.0 / float(self.error_pdf(self.error_quantile(tau)))
        out = np.zeros(self.d + 1)
        out[1] = qprime
        if self.d >= 2:
            out[2] = self.lam * qprime
        return out


def reference_dgp() -> DGPSpec:
    """The fixed design used by the acceptance suite."""
    return DGPSpec(
        gamma=np.array([0.25, 1.0]),
        lam=0.5,
        error_dist="logistic",
        x_intervals=((0.0, 1.0),),
        z_interval=(-4.0, 4.0),
        name="ref",
    )


def parse_dgp_config(path: str) -> DGPSpec:
    """Read a DGPSpec from an INI-style config with a [dgp] section.

    Expected keys: error, gamma (comma list), lambda, z (lo, hi), and one
    interval per non-constant x component as x1, x2, ...
    """
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read or not cp.has_section("dgp"):
        raise ConfigurationError(f"{path}: missing [dgp] section")
    sec = cp["dgp"]
    try:
        gamma = [float(v) for v in sec["gamma"].split(",")]
        z = tuple(float(v) for v in sec["z"].split(","))
        lam = float(sec.get("lambda", "0"))
        error = sec.get("error", "logistic").strip()
        intervals = []
        j = 1
        while f"x{j}" in sec:
            lo, hi = (float(v) for v in sec[f"x{j}"].split(","))
            intervals.append((lo, hi))
            j += 1
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"{path}: bad [dgp] section: {exc}") from None
    if len(z) != 2:
        raise ConfigurationError(f"{path}: z must be 'lo, hi'")
    return DGPSpec(
        gamma=np.array(gamma),
        lam=lam,
        error_dist=error,
        x_intervals=tuple(intervals),
        z_interval=z,
        name=sec.get("name", "custom").strip(),
    )


def simulate(dgp: DGPSpec, n: int, seed) -> Dataset:
    """Draw a dataset of size n, deterministically in the seed key."""
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    rng = philox_generator(seed)
    cols = [np.ones(n)]
    for lo, hi in dgp.x_intervals:
        cols.append(rng.uniform(lo, hi, size=n))
    x = np.column_stack(cols)
    z_lo, z_hi = dgp.z_interval
    z = rng.uniform(z_lo, z_hi, size=n) if z_hi > z_lo else np.full(n, z_lo)
    if dgp.error_dist == "logistic":
        eps = rng.logistic(0.0, 1.0, size=n)
    else:
        eps = rng.standard_normal(n)
    scale = 1.0 + dgp.lam * x[:, 1] if dgp.d >= 2 else np.ones(n)
    y_star = z + x @ dgp.gamma + scale * eps
    y = (y_star >= 0.0).astype(float)
    seed_repr = int(seed) if np.ndim(seed) == 0 else tuple(int(v) for v in seed)
    return Dataset(y=y, z=z, x=x, meta={"dgp": dgp.name, "seed": seed_repr, "n": n})


def true_beta(dgp: DGPSpec, tau: float):
    """Return (s0, b_bar) for the tau-quantile plane; s0 is always +1."""
    return dgp.beta_bar(tau)


def true_choice_prob(dgp: DGPSpec, w: CovariatePoint) -> float:
    """P(Y = 1 | W = w) = 1 - F_eps(-(z + x'gamma)/scale)."""
    scale = dgp.scale_at(w.x)
    u = -(w.z + float(w.x @ dgp.gamma)) / scale
    return float(1.0 - dgp.error_cdf(u))


def true_tau_w(dgp: DGPSpec, w: CovariatePoint) -> float:
    """Quantile level at which the margin w'beta_tau crosses zero."""
    scale = dgp.scale_at(w.x)
    u = -(w.z + float(w.x @ dgp.gamma)) / scale
    tau_w = float(dgp.error_cdf(u))
    if not (_TAU_FLOOR <= tau_w <= 1.0 - _TAU_FLOOR):
        raise NoCrossing(
            f"margin sign constant over (0,1) at w = ({w.z}, {w.x}); "
            f"crossing level {tau_w:.3e} not resolvable"
        )
    return tau_w


def _interior_z(dgp: DGPSpec, z_vals: np.ndarray, slack: float = 0.0) -> None:
    z_lo, z_hi = dgp.z_interval
    if np.any(z_vals <= z_lo + slack) or np.any(z_vals >= z_hi - slack):
        raise DomainError(
            "crossing covariate values touch the z-density boundary; "
            "population quantities are defined for interior crossings only"
        )


def _psi_tilde(dgp: DGPSpec, tau: float, nodes: np.ndarray, u) -> np.ndarray:
    """Integrand (tau - F_{Y*|X,Z}(0|x, z(u))) f_Z(z(u)) at z(u) = -x'b + u.

    Vectorized over quadrature nodes; u may be scalar or per-node.
    """
    s0, b_bar = dgp.beta_bar(tau)
    z_u = -s0 * (nodes @ b_bar) + np.asarray(u, dtype=float)
    if dgp.d >= 2:
        scale = 1.0 + dgp.lam * nodes[:, 1]
    else:
        scale = np.ones(nodes.shape[0])
    arg = -(z_u + nodes @ dgp.gamma) / scale
    return (tau - dgp.error_cdf(arg)) * dgp.z_density(z_u)


def population_Q(dgp: DGPSpec, tau: float) -> np.ndarray:
    """Curvature matrix of the population score at the true coefficient.

    This is the second derivative in b of the population objective at
    (s0, b_bar), equal to the h -> 0 limit of the empirical Hessian.  It
    is computed analytically: for interior crossings the z-density is
    locally constant and the u-derivative of the integrand reduces to
    f_Z(z*) f_eps(Q_eps(tau)) / scale(x); the curvature integrates
    -x x' times that derivative over the X-law.  Negative definite.
    """
    if not (0.0 < tau < 1.0):
        raise DomainError(f"tau must lie in (0,1), got {tau}")
    s0, b_bar = dgp.beta_bar(tau)
    nodes, weights = dgp.x_quadrature()
    z_star = -s0 * (nodes @ b_bar)
    _interior_z(dgp, z_star)
    if dgp.d >= 2:
        scale = 1.0 + dgp.lam * nodes[:, 1]
    else:
        scale = np.ones(nodes.shape[0])
    arg = -(z_star + nodes @ dgp.gamma) / scale
    deriv = s0 * dgp.z_density(z_star) * dgp.error_pdf(arg) / scale
    wd = weights * deriv
    q = -(nodes * wd[:, None]).T @ nodes
    return 0.5 * (q + q.T)


def population_bias(
    dgp: DGPSpec, tau: float, kernel: KernelSpec, h: float
) -> np.ndarray:
    """Leading smoothing bias of the score gradient at (s0, b_bar).

    Computes the k-th u-derivative g_k of the population integrand by
    Richardson-refined central finite differences at each quadrature
    node, integrates x g_k(x) over the X-law and scales by
    h^k / k! times the k-th kernel moment.
    """
    if not (0.0 < tau < 1.0):
        raise DomainError(f"tau must lie in (0,1), got {tau}")
    if not (h > 0.0):
        raise DomainError(f"bandwidth must be positive, got {h}")
    k = kernel.order
    s0, b_bar = dgp.beta_bar(tau)
    nodes, weights = dgp.x_quadrature()
    z_star = -s0 * (nodes @ b_bar)
    step = 1e-2
    _interior_z(dgp, z_star, slack=2.0 * step)

    if k == 2:
        stencil = {-1.0: 1.0, 0.0: -2.0, 1.0: 1.0}
    elif k == 4:
        stencil = {-2.0: 1.0, -1.0: -4.0, 0.0: 6.0, 1.0: -4.0, 2.0: 1.0}
    else:
        raise ConfigurationError(f"no g_k stencil for kernel order {k}")

    def central(delta: float) -> np.ndarray:
        acc = np.zeros(nodes.shape[0])
        for off, coef in stencil.items():
            acc += coef * _psi_tilde(dgp, tau, nodes, off * delta)
        return acc / delta**k

    coarse = central(step)
    fine = central(0.5 * step)
    # Both stencils have O(delta^2) error, so the standard refinement is
    # (4 fine - coarse) / 3; disagreement with fine flags instability.
    refined = (4.0 * fine - coarse) / 3.0
    if float(np.max(np.abs(refined - fine))) > 1e-4:
        raise NumericError(
            "finite-difference estimate of g_k unstable: refinement moved "
            f"by {float(np.max(np.abs(refined - fine))):.3e}"
        )
    g_k = refined
    integral = (nodes * (weights * g_k)[:, None]).sum(axis=0)
    return (h**k / math.factorial(k)) * kernel_moment(kernel, k) * integral


def population_delta(dgp: DGPSpec, tau: float) -> np.ndarray:
    """Closed-form derivative of tau -> beta_tau, z-entry first."""
    return dgp.delta(tau)

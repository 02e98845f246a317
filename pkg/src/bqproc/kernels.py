"""Smoothing kernels and their numerical validation.

A kernel of order ``k`` integrates to one, has vanishing moments below
order ``k``, and a finite absolute moment at order ``k``.  The smoothed
objective uses the antiderivative of the kernel as a soft indicator, so
each kernel is shipped together with its antiderivative and derivative
in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from .exceptions import ConfigurationError, NumericError

__all__ = [
    "KernelSpec",
    "builtin_kernel",
    "kernel_moment",
    "kernel_square_integral",
    "validate_moments",
    "MomentReport",
    "antiderivative_consistency",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _phi(v):
    """Standard normal density, elementwise."""
    v = np.asarray(v, dtype=float)
    return np.exp(-0.5 * v * v) / _SQRT_2PI


@dataclass(frozen=True)
class KernelSpec:
    """Immutable bundle of kernel callables.

    Attributes
    ----------
    name : str
        Identifier used in reports and manifests.
    order : int
        Even integer k >= 2; moments 1..k-1 vanish.
    eval_K : callable
        Kernel density ``K(v)``; accepts scalars or arrays.
    eval_Kc : callable
        Antiderivative with ``Kc(u) -> 0`` as ``u -> -inf`` and
        ``Kc(u) -> 1`` as ``u -> +inf``.
    eval_Kprime : callable
        Derivative ``K'(v)``.
    support_hint : float
        Effective support radius used to truncate validation quadrature.
    """

    name: str
    order: int
    eval_K: Callable
    eval_Kc: Callable
    eval_Kprime: Callable
    support_hint: float

    def __post_init__(self) -> None:
        if self.order < 2 or self.order % 2 != 0:
            raise ConfigurationError(
                f"kernel order must be an even integer >= 2, got {self.order}"
            )
        if not (self.support_hint > 0):
            raise ConfigurationError(
                f"support_hint must be positive, got {self.support_hint}"
            )


def _gauss2() -> KernelSpec:
    # Standard Gaussian density; antiderivative is the normal cdf.
    return KernelSpec(
        name="gauss2",
        order=2,
        eval_K=_phi,
        eval_Kc=lambda u: ndtr(np.asarray(u, dtype=float)),
        eval_Kprime=lambda v: -np.asarray(v, dtype=float) * _phi(v),
        support_hint=6.0,
    )


def _gauss4() -> KernelSpec:
    # Fourth-order Gaussian-based kernel ((3 - v^2)/2) phi(v).  Its
    # antiderivative and derivative follow from d/dv[v phi(v)] =
    # (1 - v^2) phi(v).
    def k4(v):
        v = np.asarray(v, dtype=float)
        return 0.5 * (3.0 - v * v) * _phi(v)

    def kc4(u):
        u = np.asarray(u, dtype=float)
        return ndtr(u) + 0.5 * u * _phi(u)

    def kp4(v):
        v = np.asarray(v, dtype=float)
        return -0.5 * v * (5.0 - v * v) * _phi(v)

    return KernelSpec(
        name="gauss4",
        order=4,
        eval_K=k4,
        eval_Kc=kc4,
        eval_Kprime=kp4,
        support_hint=6.0,
    )


_BUILTINS = {"gauss2": _gauss2, "gauss4": _gauss4}


def builtin_kernel(name: str) -> KernelSpec:
    """Return a built-in kernel by name ('gauss2' or 'gauss4')."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown kernel {name!r}; available: {sorted(_BUILTINS)}"
        ) from None
    return factory()


def _quad(f: Callable, lo: float, hi: float, interior: tuple = ()) -> float:
    """Adaptive quadrature with an explicit failure mode."""
    pts = [p for p in interior if lo < p < hi] or None
    out = integrate.quad(
        f, lo, hi, points=pts, limit=400, epsabs=1e-12, epsrel=1e-12, full_output=1
    )
    val, abserr = out[0], out[1]
    if len(out) > 3:
        raise NumericError(
            f"quadrature did not converge on [{lo}, {hi}]: {out[3]}"
        )
    # an order of magnitude below the strictest supported moment tolerance
    if abserr > 1e-9 * max(1.0, abs(val)):
        raise NumericError(
            f"quadrature error estimate {abserr:.3e} too large on [{lo}, {hi}]"
        )
    return val


def kernel_moment(kernel: KernelSpec, j: int) -> float:
    """Compute the j-th moment of the kernel by quadrature."""
    r = 10.0 * kernel.support_hint
    sh = kernel.support_hint
    return _quad(
        lambda v: v**j * float(kernel.eval_K(v)), -r, r, interior=(-sh, 0.0, sh)
    )


def kernel_square_integral(kernel: KernelSpec) -> float:
    """Compute the integral of the squared kernel by quadrature."""
    r = 10.0 * kernel.support_hint
    sh = kernel.support_hint
    return _quad(
        lambda v: float(kernel.eval_K(v)) ** 2, -r, r, interior=(-sh, 0.0, sh)
    )


@dataclass(frozen=True)
class MomentReport:
    """Quadrature results backing a kernel validation decision."""

    name: str
    order: int
    tol: float
    integral: float
    moments: dict[int, float]
    abs_moment_k: float
    moment_k: float
    tail_low: float
    tail_high: float
    decay_samples: tuple[tuple[float, float], ...]
    passed: bool
    failures: tuple[str, ...]


def validate_moments(kernel: KernelSpec, tol: float = 1e-8) -> MomentReport:
    """Check the defining moment conditions of a kernel numerically.

    Passes iff the kernel integrates to one within ``tol`` and every
    moment of order ``1 <= j < kernel.order`` vanishes within ``tol``.
    The report additionally records the k-th absolute moment, tail decay
    samples ``x * sup_{|a| >= x} |K(a)|`` and the antiderivative limits;
    those are informational and do not affect the verdict.
    """
    if not (tol > 0):
        raise ConfigurationError(f"tol must be positive, got {tol}")
    failures = []
    integral = kernel_moment(kernel, 0)
    if abs(integral - 1.0) > tol:
        failures.append(f"integral {integral!r} differs from 1 by more than {tol}")
    moments = {}
    for j in range(1, kernel.order):
        moments[j] = kernel_moment(kernel, j)
        if abs(moments[j]) > tol:
            failures.append(f"moment {j} = {moments[j]!r} exceeds {tol}")
    r = 10.0 * kernel.support_hint
    sh = kernel.support_hint
    abs_moment_k = _quad(
        lambda v: abs(v) ** kernel.order * abs(float(kernel.eval_K(v))),
        -r,
        r,
        interior=(-sh, 0.0, sh),
    )
    moment_k = kernel_moment(kernel, kernel.order)
    # Tail decay x * sup_{|a| >= x} |K(a)|, sampled on a dense tail grid.
    decay = []
    for x in (0.5 * sh, sh, 2.0 * sh, 4.0 * sh):
        grid = np.linspace(x, r, 4001)
        sup_tail = float(np.max(np.abs(kernel.eval_K(grid))))
        grid_neg = np.linspace(-r, -x, 4001)
        sup_tail = max(sup_tail, float(np.max(np.abs(kernel.eval_K(grid_neg)))))
        decay.append((float(x), float(x) * sup_tail))
    tail_low = float(kernel.eval_Kc(-r))
    tail_high = float(kernel.eval_Kc(r))
    return MomentReport(
        name=kernel.name,
        order=kernel.order,
        tol=tol,
        integral=integral,
        moments=moments,
        abs_moment_k=abs_moment_k,
        moment_k=moment_k,
        tail_low=tail_low,
        tail_high=tail_high,
        decay_samples=tuple(decay),
        passed=not failures,
        failures=tuple(failures),
    )


def antiderivative_consistency(kernel: KernelSpec, grid) -> float:
    """Return ``max_u |Kc(u) - int_{-R}^{u} K|`` over the supplied grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ConfigurationError("grid must be a non-empty one-dimensional array")
    r = 10.0 * kernel.support_hint
    if np.any(np.abs(grid) > r):
        raise ConfigurationError(f"grid points must lie within [-{r}, {r}]")
    sh = kernel.support_hint
    worst = 0.0
    for u in grid:
        acc = _quad(
            lambda v: float(kernel.eval_K(v)),
            -r,
            float(u),
            interior=(-sh, 0.0, sh),
        )
        worst = max(worst, abs(float(kernel.eval_Kc(u)) - acc))
    return worst

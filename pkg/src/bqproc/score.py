"""Raw and smoothed score functions and their exact derivatives.

The raw score averages signed indicator contributions (y - (1 - tau)) over
the halfspace w'beta >= 0.  The smoothed score replaces the indicator with
the kernel antiderivative at bandwidth h, which makes the objective
differentiable; the gradient and Hessian in b are available in closed form
and are used both by the optimizer and by the asymptotic oracles.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, DomainError, NumericError
from .kernels import KernelSpec, kernel_square_integral

__all__ = [
    "Dataset",
    "CovariatePoint",
    "ScorePoint",
    "load_dataset_csv",
    "save_dataset_csv",
    "margins",
    "raw_score",
    "smoothed_score",
    "score_gradient",
    "score_hessian",
    "asymptotic_variance",
]

# Above this sample size, per-observation contributions are accumulated in
# extended precision: kernel weights in the tails are near machine epsilon
# and plain float64 accumulation can lose them entirely.
_EXTENDED_N = 10_000


def _accum(contrib: np.ndarray) -> np.ndarray | float:
    """Sum contributions over axis 0, in extended precision for large n."""
    if contrib.shape[0] >= _EXTENDED_N:
        total = contrib.sum(axis=0, dtype=np.longdouble)
        return float(total) if np.ndim(total) == 0 else total.astype(float)
    return contrib.sum(axis=0)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Binary responses with the sign-normalized covariate split out.

    Attributes
    ----------
    y : ndarray, shape (n,)
        Binary responses in {0, 1}.
    z : ndarray, shape (n,)
        Covariate whose coefficient is normalized to +-1.
    x : ndarray, shape (n, d)
        Remaining covariates; the first column may be the constant 1.
    meta : dict
        Provenance (seed, source file, generator name); not validated.
    """

    y: np.ndarray
    z: np.ndarray
    x: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float)
        z = np.asarray(self.z, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim != 1 or z.ndim != 1 or x.ndim != 2:
            raise ConfigurationError("y and z must be 1-d, x must be n by d")
        n = y.shape[0]
        if n < 1 or z.shape[0] != n or x.shape[0] != n:
            raise ConfigurationError(
                f"length mismatch: y has {n}, z has {z.shape[0]}, x has {x.shape[0]} rows"
            )
        if x.shape[1] < 1:
            raise ConfigurationError("x must have at least one column")
        if not np.all(np.isfinite(z)) or not np.all(np.isfinite(x)):
            raise ConfigurationError("non-finite covariate values")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ConfigurationError("responses must be 0 or 1")
        for name, arr in (("y", y), ("z", z), ("x", x)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True, eq=False)
class CovariatePoint:
    """A single evaluation point w = (z, x)."""

    z: float
    x: np.ndarray

    def __post_init__(self) -> None:
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if x.ndim != 1 or not np.all(np.isfinite(x)) or not np.isfinite(self.z):
            raise ConfigurationError("covariate point must be finite, x one-dimensional")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", float(self.z))


@dataclass(frozen=True, eq=False)
class ScorePoint:
    """Evaluation point (s, b, tau, h) for the score functions."""

    s: int
    b: np.ndarray
    tau: float
    h: float = 1.0

    def __post_init__(self) -> None:
        if self.s not in (-1, 1):
            raise ConfigurationError(f"sign must be -1 or +1, got {self.s}")
        if not (0.0 < self.tau < 1.0):
            raise ConfigurationError(f"tau must lie in (0,1), got {self.tau}")
        if not (self.h > 0.0) or not np.isfinite(self.h):
            raise ConfigurationError(f"bandwidth must be positive, got {self.h}")
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if b.ndim != 1 or not np.all(np.isfinite(b)):
            raise ConfigurationError("b must be a finite vector")
        b.setflags(write=False)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "s", int(self.s))
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "h", float(self.h))


def load_dataset_csv(path: str) -> Dataset:
    """Read a dataset from CSV with header ``y,z,x1,...,xd``."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigurationError(f"{path}: empty file") from None
        header = [c.strip() for c in header]
        expect = ["y", "z"] + [f"x{j}" for j in range(1, len(header) - 1)]
        if len(header) < 3 or header != expect:
            raise ConfigurationError(
                f"{path}: line 1: header must be y,z,x1,...,xd, got {','.join(header)}"
            )
        d = len(header) - 2
        ys, zs, xs = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 2:
                raise ConfigurationError(
                    f"{path}: line {lineno}: expected {d + 2} fields, got {len(row)}"
                )
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise ConfigurationError(
                    f"{path}: line {lineno}: non-numeric field"
                ) from None
            if not all(np.isfinite(v) for v in vals):
                raise ConfigurationError(f"{path}: line {lineno}: non-finite value")
            if vals[0] not in (0.0, 1.0):
                raise ConfigurationError(
                    f"{path}: line {lineno}: y must be 0 or 1, got {row[0]}"
                )
            ys.append(vals[0])
            zs.append(vals[1])
            xs.append(vals[2:])
    if not ys:
        raise ConfigurationError(f"{path}: no data rows")
    return Dataset(
        y=np.array(ys), z=np.array(zs), x=np.array(xs), meta={"source": path}
    )


def save_dataset_csv(data: Dataset, path: str) -> None:
    """Write a dataset in the ``y,z,x1,...,xd`` format, full precision."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", "z"] + [f"x{j + 1}" for j in range(data.d)])
        for i in range(data.n):
            writer.writerow(
                [format(int(data.y[i]), "d"), format(data.z[i], ".17g")]
                + [format(v, ".17g") for v in data.x[i]]
            )


def _check_dim(data: Dataset, p: ScorePoint) -> None:
    if p.b.shape[0] != data.d:
        raise ConfigurationError(
            f"b has length {p.b.shape[0]} but data has d = {data.d}"
        )


def margins(data: Dataset, s: int, b: np.ndarray) -> np.ndarray:
    """Return the n-vector of margins x_i'b + s z_i."""
    return data.x @ b + s * data.z


def raw_score(data: Dataset, p: ScorePoint) -> float:
    """Average of (y_i - (1 - tau)) over the closed halfspace margin >= 0."""
    _check_dim(data, p)
    m = margins(data, p.s, p.b)
    w = data.y - (1.0 - p.tau)
    return float(_accum(w * (m >= 0.0))) / data.n


def smoothed_score(data: Dataset, p: ScorePoint, kernel: KernelSpec) -> float:
    """Kernel-smoothed score (1/n) sum (y_i - (1-tau)) Kc(margin_i / h)."""
    _check_dim(data, p)
    m = margins(data, p.s, p.b)
    w = data.y - (1.0 - p.tau)
    return float(_accum(w * kernel.eval_Kc(m / p.h))) / data.n


def score_gradient(data: Dataset, p: ScorePoint, kernel: KernelSpec) -> np.ndarray:
    """Exact gradient of the smoothed score in b.

    Returns (1/(n h)) sum (y_i - (1-tau)) x_i K(margin_i / h), a d-vector.
    """
    _check_dim(data, p)
    m = margins(data, p.s, p.b)
    w = (data.y - (1.0 - p.tau)) * kernel.eval_K(m / p.h)
    return np.asarray(_accum(w[:, None] * data.x)) / (data.n * p.h)


def score_hessian(data: Dataset, p: ScorePoint, kernel: KernelSpec) -> np.ndarray:
    """Exact Hessian of the smoothed score in b; exactly symmetric.

    Returns (1/(n h^2)) sum (y_i - (1-tau)) x_i x_i' K'(margin_i / h).
    """
    _check_dim(data, p)
    m = margins(data, p.s, p.b)
    w = (data.y - (1.0 - p.tau)) * kernel.eval_Kprime(m / p.h)
    if data.n >= _EXTENDED_N:
        a = np.einsum(
            "i,ij,ik->jk", w.astype(np.longdouble), data.x, data.x
        ).astype(float)
    else:
        a = np.einsum("i,ij,ik->jk", w, data.x, data.x)
    a = 0.5 * (a + a.T)
    return a / (data.n * p.h * p.h)


def asymptotic_variance(dgp, tau: float, kernel: KernelSpec) -> np.ndarray:
    """Asymptotic covariance of the scaled score at the true coefficient.

    Computes tau (1-tau) * int K^2 * int x x' f_{Z|X}(-s0 x'b_bar | x) dP_X
    by quadrature over the X-distribution supplied by the DGP.  The result
    is positive semidefinite by construction.
    """
    if not (0.0 < tau < 1.0):
        raise DomainError(f"tau must lie in (0,1), got {tau}")
    s0, b_bar = dgp.beta_bar(tau)
    nodes, weights = dgp.x_quadrature()
    z_star = -s0 * (nodes @ b_bar)
    dens = dgp.z_density(z_star)
    if not np.all(np.isfinite(dens)):
        raise NumericError("z-density not finite at the crossing values")
    wd = weights * dens
    m = (nodes * wd[:, None]).T @ nodes
    m = 0.5 * (m + m.T)
    return tau * (1.0 - tau) * kernel_square_integral(kernel) * m

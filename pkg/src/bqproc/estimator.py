"""Maximization of the smoothed score over the sign and coefficient vector.

The smoothed objective is differentiable but can be multimodal, so each
fit runs a deterministic multi-start scheme per sign: projected gradient
ascent with a backtracking line search (the analytic gradient is cheap),
followed by a bounded simplex polish.  Full quantile paths reuse the
previous solution as a warm start along the grid.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import expit

from .dgp import philox_generator
from .exceptions import (
    ConfigurationError,
    DegenerateResponse,
    EstimationError,
)
from .kernels import KernelSpec
from .score import CovariatePoint, Dataset, ScorePoint, smoothed_score

__all__ = [
    "OptimizerConfig",
    "FitDiagnostics",
    "CoefficientPath",
    "estimate_beta",
    "estimate_process",
    "default_bandwidth",
    "BandwidthWarning",
]

_EXTENDED_N = 10_000
_TIE_GAP = 1e-12


class BandwidthWarning(UserWarning):
    """Finite-sample bandwidth condition violated."""


@dataclass(frozen=True)
class OptimizerConfig:
    """Multi-start optimizer settings.

    n_starts counts start points per sign: b = 0, a rescaled monotone-link
    surrogate fit, and n_starts - 2 uniform draws inside the search box.
    """

    n_starts: int = 8
    max_iters: int = 200
    grad_tol: float = 1e-8
    step_tol: float = 1e-11
    box_radius: float = 10.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_starts < 1:
            raise ConfigurationError(f"n_starts must be >= 1, got {self.n_starts}")
        if self.max_iters < 1:
            raise ConfigurationError(f"max_iters must be >= 1, got {self.max_iters}")
        for name in ("grad_tol", "step_tol", "box_radius"):
            if not (getattr(self, name) > 0):
                raise ConfigurationError(f"{name} must be > 0")
        if int(self.seed) < 0:
            raise ConfigurationError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class FitDiagnostics:
    """Per-fit convergence record."""

    converged: bool
    start: str
    ga_iters: int
    box_hit: bool
    n_starts: int
    sign_gap: float


@dataclass(frozen=True, eq=False)
class CoefficientPath:
    """Estimated quantile-coefficient process on a tau-grid.

    Carries the bandwidth, the sample size behind the fit and the kernel
    name so downstream variance formulas can be evaluated without the
    original dataset.
    """

    taus: np.ndarray
    s_hat: np.ndarray
    b_hat: np.ndarray
    objective: np.ndarray
    h: float
    diagnostics: tuple
    n: int = 0
    kernel_name: str = ""

    def __post_init__(self) -> None:
        taus = np.asarray(self.taus, dtype=float)
        s_hat = np.asarray(self.s_hat, dtype=int)
        b_hat = np.asarray(self.b_hat, dtype=float)
        objective = np.asarray(self.objective, dtype=float)
        if taus.ndim != 1 or np.any(np.diff(taus) <= 0.0):
            raise ConfigurationError("taus must be strictly increasing")
        if np.any(taus <= 0.0) or np.any(taus >= 1.0):
            raise ConfigurationError("taus must lie in (0,1)")
        m = taus.shape[0]
        if b_hat.ndim != 2 or b_hat.shape[0] != m:
            raise ConfigurationError("b_hat must have one row per tau")
        if s_hat.shape != (m,) or not np.all(np.abs(s_hat) == 1):
            raise ConfigurationError("s_hat must be one sign of +-1 per tau")
        if objective.shape != (m,):
            raise ConfigurationError("objective must have one value per tau")
        for name, arr in (
            ("taus", taus),
            ("s_hat", s_hat),
            ("b_hat", b_hat),
            ("objective", objective),
        ):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def d(self) -> int:
        return self.b_hat.shape[1]

    def path_margins(self, w: CovariatePoint) -> np.ndarray:
        """Values of tau -> w'beta_hat_tau on the grid."""
        if w.x.shape[0] != self.d:
            raise ConfigurationError(
                f"w.x has length {w.x.shape[0]} but path has d = {self.d}"
            )
        return self.b_hat @ w.x + self.s_hat * w.z

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["tau", "s_hat"]
                + [f"b_{j + 1}" for j in range(self.d)]
                + ["objective", "converged"]
            )
            for j in range(self.taus.shape[0]):
                writer.writerow(
                    [format(self.taus[j], ".17g"), str(int(self.s_hat[j]))]
                    + [format(v, ".17g") for v in self.b_hat[j]]
                    + [
                        format(self.objective[j], ".17g"),
                        str(int(self.diagnostics[j].converged)),
                    ]
                )

    @classmethod
    def from_csv(
        cls, path: str, h: float = float("nan"), n: int = 0, kernel_name: str = ""
    ) -> "CoefficientPath":
        taus, s_hat, b_hat, obj, diags = [], [], [], [], []
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if (
                header is None
                or len(header) < 5
                or header[0] != "tau"
                or header[-2] != "objective"
            ):
                raise ConfigurationError(f"{path}: not a coefficient path CSV")
            d = len(header) - 4
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != d + 4:
                    raise ConfigurationError(
                        f"{path}: line {lineno}: expected {d + 4} fields"
                    )
                try:
                    taus.append(float(row[0]))
                    s_hat.append(int(row[1]))
                    b_hat.append([float(v) for v in row[2 : 2 + d]])
                    obj.append(float(row[2 + d]))
                    conv = bool(int(row[3 + d]))
                except ValueError:
                    raise ConfigurationError(
                        f"{path}: line {lineno}: non-numeric field"
                    ) from None
                diags.append(
                    FitDiagnostics(
                        converged=conv,
                        start="file",
                        ga_iters=0,
                        box_hit=False,
                        n_starts=0,
                        sign_gap=float("nan"),
                    )
                )
        if not taus:
            raise ConfigurationError(f"{path}: no path rows")
        return cls(
            taus=np.array(taus),
            s_hat=np.array(s_hat),
            b_hat=np.array(b_hat),
            objective=np.array(obj),
            h=h,
            diagnostics=tuple(diags),
            n=n,
            kernel_name=kernel_name,
        )


def default_bandwidth(n: int, k: int, c: float = 1.0) -> float:
    """Rate-optimal bandwidth c * n^(-1/(2k+1)) for a kernel of order k.

    Warns when the finite-sample analogue of the variance-domination
    condition, (n h^3)^(-1/2) (log n)^2 <= 1, fails.
    """
    if n < 2 or k < 2 or not (c > 0.0):
        raise ConfigurationError(
            f"need n >= 2, k >= 2, c > 0; got n={n}, k={k}, c={c}"
        )
    h = c * float(n) ** (-1.0 / (2 * k + 1))
    check = (n * h**3) ** -0.5 * math.log(n) ** 2
    if check > 1.0:
        warnings.warn(
            f"bandwidth h={h:.4g} fails the finite-sample variance condition: "
            f"(n h^3)^(-1/2) (log n)^2 = {check:.3g} > 1",
            BandwidthWarning,
            stacklevel=2,
        )
    return h


# =========================================================================
# objective closures and local maximization
# =========================================================================


def _closures(data: Dataset, tau: float, h: float, kernel: KernelSpec, s: int):
    """Fast objective/gradient closures for the optimizer.

    Arguments beyond twice the declared kernel support are treated as
    saturated (smoothed indicator 0 or 1, density 0), which agrees with
    the exact evaluation far below the 1e-12 objective contract for the
    builtin Gaussian-family kernels; the recorded objective is always
    re-evaluated through smoothed_score.
    """
    w = data.y - (1.0 - tau)
    sz = s * data.z
    x = data.x
    n = data.n
    big = n >= _EXTENDED_N
    eval_kc, eval_k = kernel.eval_Kc, kernel.eval_K
    cut = 2.0 * kernel.support_hint

    def fval(b: np.ndarray) -> float:
        v = (x @ b + sz) / h
        inside = np.abs(v) < cut
        high = w[v >= cut]
        c = w[inside] * eval_kc(v[inside])
        if big:
            total = high.sum(dtype=np.longdouble) + c.sum(dtype=np.longdouble)
        else:
            total = high.sum() + c.sum()
        return float(total) / n

    def grad(b: np.ndarray) -> np.ndarray:
        v = (x @ b + sz) / h
        inside = np.abs(v) < cut
        c = (w[inside] * eval_k(v[inside]))[:, None] * x[inside]
        if big:
            g = c.sum(axis=0, dtype=np.longdouble).astype(float)
        else:
            g = c.sum(axis=0)
        return g / (n * h)

    return fval, grad


def _gradient_ascent(fval, grad, b0: np.ndarray, cfg: OptimizerConfig):
    """Projected ascent with backtracking; returns (b, f, converged, iters).

    Stops on a small gradient, on failure to find an acceptable step
    above step_tol, or once successive accepted steps stop improving the
    objective beyond float resolution; the simplex polish owns the last
    digits either way.
    """
    r = cfg.box_radius
    b = np.clip(b0, -r, r)
    f = fval(b)
    step = 1.0
    converged = False
    it = 0
    flat = 0
    for it in range(1, cfg.max_iters + 1):
        g = grad(b)
        gmax = float(np.max(np.abs(g)))
        if gmax <= cfg.grad_tol:
            converged = True
            break
        # keep proposals inside a sane range before projection
        step = min(2.0 * step, r / gmax)
        moved = False
        for _ in range(40):
            cand = np.clip(b + step * g, -r, r)
            delta = cand - b
            if float(np.max(np.abs(delta))) <= cfg.step_tol:
                break
            fc = fval(cand)
            if fc >= f + 1e-4 * float(g @ delta):
                gain = fc - f
                b, f = cand, fc
                moved = True
                break
            step *= 0.5
        if not moved:
            # no acceptable step above step_tol: stationary to tolerance
            converged = True
            break
        # polish owns the last digits; stop the ascent once gains stall
        if gain <= 1e-8 * (1.0 + abs(f)):
            flat += 1
            if flat >= 3:
                converged = True
                break
        else:
            flat = 0
    return b, f, converged, it


def _polish(fval, b: np.ndarray, f: float, cfg: OptimizerConfig):
    """Bounded simplex refinement; never returns a worse point."""
    d = b.shape[0]
    res = optimize.minimize(
        lambda v: -fval(v),
        b,
        method="Nelder-Mead",
        bounds=[(-cfg.box_radius, cfg.box_radius)] * d,
        options={
            "xatol": 1e-9,
            "fatol": 1e-13,
            "maxfev": 120 * (d + 1),
            "disp": False,
        },
    )
    if -res.fun > f:
        return np.clip(res.x, -cfg.box_radius, cfg.box_radius), -res.fun, bool(res.success)
    return b, f, bool(res.success)


def _surrogate_start(data: Dataset, s: int, cfg: OptimizerConfig) -> np.ndarray:
    """Monotone-link surrogate fit rescaled to the unit z-coefficient.

    Fits a ridge-stabilized logistic regression of y on (z, x) and
    converts its halfspace to the (s, b) parametrization.  Under a
    monotone link the slope ratios land near the true coefficients.
    """
    feats = np.column_stack([data.z, data.x])
    y = data.y

    def nll(c):
        eta = feats @ c
        # log(1 + exp(-eta)) evaluated stably
        loss = np.logaddexp(0.0, -eta) + (1.0 - y) * eta
        return float(loss.sum()) / data.n + 1e-6 * float(c @ c)

    def nll_grad(c):
        eta = feats @ c
        resid = expit(eta) - y
        return feats.T @ resid / data.n + 2e-6 * c

    res = optimize.minimize(
        nll,
        np.zeros(feats.shape[1]),
        jac=nll_grad,
        method="L-BFGS-B",
        options={"maxiter": 200},
    )
    c_z, c_x = res.x[0], res.x[1:]
    if abs(c_z) < 1e-8:
        b = c_x
    else:
        b = s * c_x / c_z
    return np.clip(b, -cfg.box_radius, cfg.box_radius)


def _start_points(
    data: Dataset,
    cfg: OptimizerConfig,
    s: int,
    rng_key,
    warm: np.ndarray | None,
    warm_sign: int,
    cold: bool,
):
    """Deterministic labeled start list for one sign.

    Cold fits give each sign the full budget: b = 0, the surrogate fit
    and n_starts - 2 box draws.  Warm fits start from the previous
    solution (orientation-flipped on the other sign), keep the two
    deterministic anchors on the warm sign so a basin overtaken between
    neighboring taus is still found, and add max(1, n_starts // 4)
    fresh draws split across the signs, warm sign first.
    """
    d = data.d
    starts: list[tuple[str, np.ndarray]] = []
    if cold:
        starts.append(("zero", np.zeros(d)))
        if cfg.n_starts >= 2:
            starts.append(("surrogate", _surrogate_start(data, s, cfg)))
        n_random = max(cfg.n_starts - 2, 0)
    else:
        if warm is not None:
            label = "warm" if s == warm_sign else "warm-flip"
            starts.append((label, warm if s == warm_sign else -warm))
        if s == warm_sign:
            starts.append(("zero", np.zeros(d)))
            starts.append(("surrogate", _surrogate_start(data, s, cfg)))
        fresh = max(1, cfg.n_starts // 4)
        n_random = (fresh + 1) // 2 if s == warm_sign else fresh // 2
    if n_random > 0:
        rng = philox_generator(rng_key)
        draws = rng.uniform(-cfg.box_radius, cfg.box_radius, size=(n_random, d))
        starts.extend((f"rand{i}", draws[i]) for i in range(n_random))
    return starts


def _fit_one(
    data: Dataset,
    tau: float,
    h: float,
    kernel: KernelSpec,
    cfg: OptimizerConfig,
    tau_index: int = 0,
    warm: np.ndarray | None = None,
    warm_sign: int = 1,
    cold: bool = True,
):
    """Multi-start maximization at a single tau; both signs."""
    if np.all(data.y == data.y[0]):
        raise DegenerateResponse(
            f"all {data.n} responses equal {int(data.y[0])}; score is uninformative"
        )
    if data.n < data.d + 2:
        raise ConfigurationError(f"need n >= d + 2, got n={data.n}, d={data.d}")
    any_converged = False
    total_iters = 0
    ascended = {1: [], -1: []}
    objectives = {}
    for s in (1, -1):
        fval, grad = _closures(data, tau, h, kernel, s)
        objectives[s] = fval
        # distinct random starts per sign, deterministic in (seed, tau index)
        rng_key = [cfg.seed, tau_index, 0 if s == 1 else 1]
        starts = _start_points(data, cfg, s, rng_key, warm, warm_sign, cold)
        for label, b0 in starts:
            b_ga, f_ga, ga_ok, iters = _gradient_ascent(fval, grad, b0, cfg)
            total_iters += iters
            any_converged = any_converged or ga_ok
            ascended[s].append((b_ga, f_ga, label, ga_ok))
    # polish contenders only: a start whose ascent landed more than the
    # polish can recover below the overall best cannot win, and near
    # duplicates of an already polished point share its basin
    f_top = max(a[1] for s in (1, -1) for a in ascended[s])
    best = {}
    for s in (1, -1):
        fval = objectives[s]
        s_best = None
        polished: list[np.ndarray] = []
        for b_ga, f_ga, label, ga_ok in sorted(
            ascended[s], key=lambda a: -a[1]
        ):
            contender = f_ga >= f_top - 1e-3 and not any(
                np.max(np.abs(b_ga - p)) <= 1e-2 for p in polished
            )
            if contender:
                b_fin, f_fin, nm_ok = _polish(fval, b_ga, f_ga, cfg)
                conv = ga_ok or nm_ok
                any_converged = any_converged or conv
                polished.append(b_ga)
                polished.append(b_fin)
            else:
                b_fin, f_fin, conv = b_ga, f_ga, ga_ok
            if s_best is None or f_fin > s_best[1]:
                s_best = (b_fin, f_fin, label, conv)
        best[s] = s_best
    if not any_converged:
        raise EstimationError(
            f"no start converged at tau={tau} "
            f"(n_starts={cfg.n_starts}, max_iters={cfg.max_iters})"
        )
    # sign choice; exact ties and sub-tolerance gaps go to s = +1
    f_plus, f_minus = best[1][1], best[-1][1]
    s_hat = 1 if f_plus >= f_minus - _TIE_GAP else -1
    b_hat, f_hat, label, conv = best[s_hat]
    objective = smoothed_score(data, ScorePoint(s_hat, b_hat, tau, h), kernel)
    diag = FitDiagnostics(
        converged=conv,
        start=label,
        ga_iters=total_iters,
        box_hit=bool(np.any(np.abs(b_hat) >= cfg.box_radius - 1e-9)),
        n_starts=cfg.n_starts,
        sign_gap=float(f_plus - f_minus),
    )
    return s_hat, b_hat, objective, diag


def estimate_beta(
    data: Dataset,
    tau: float,
    h: float,
    kernel: KernelSpec,
    cfg: OptimizerConfig | None = None,
):
    """Maximize the smoothed score at one tau.

    Returns (s_hat, b_hat, objective, diagnostics).  Ties between the two
    signs within 1e-12 in objective break toward s = +1.
    """
    if not (0.0 < tau < 1.0):
        raise ConfigurationError(f"tau must lie in (0,1), got {tau}")
    if not (h > 0.0):
        raise ConfigurationError(f"bandwidth must be positive, got {h}")
    cfg = cfg or OptimizerConfig()
    return _fit_one(data, tau, h, kernel, cfg)


def estimate_process(
    data: Dataset,
    taus,
    h: float,
    kernel: KernelSpec,
    cfg: OptimizerConfig | None = None,
) -> CoefficientPath:
    """Estimate the coefficient path over a strictly increasing tau-grid.

    The first tau is fit cold with the full start budget; later taus warm
    start from the previous solution plus max(1, n_starts // 4) fresh
    random starts.
    """
    taus = np.asarray(taus, dtype=float)
    if taus.ndim != 1 or taus.size == 0 or np.any(np.diff(taus) <= 0.0):
        raise ConfigurationError("taus must be a strictly increasing sequence")
    if np.any(taus <= 0.0) or np.any(taus >= 1.0):
        raise ConfigurationError("taus must lie in (0,1)")
    if not (h > 0.0):
        raise ConfigurationError(f"bandwidth must be positive, got {h}")
    cfg = cfg or OptimizerConfig()
    s_list, b_list, o_list, d_list = [], [], [], []
    warm = None
    warm_sign = 1
    for j, tau in enumerate(taus):
        try:
            s_hat, b_hat, obj, diag = _fit_one(
                data,
                float(tau),
                h,
                kernel,
                cfg,
                tau_index=j,
                warm=warm,
                warm_sign=warm_sign,
                cold=(j == 0),
            )
        except (DegenerateResponse, EstimationError) as exc:
            raise type(exc)(f"tau={float(tau)}: {exc}") from exc
        s_list.append(s_hat)
        b_list.append(b_hat)
        o_list.append(obj)
        d_list.append(diag)
        warm, warm_sign = b_hat, s_hat
    return CoefficientPath(
        taus=taus,
        s_hat=np.array(s_list),
        b_hat=np.array(b_list),
        objective=np.array(o_list),
        h=float(h),
        diagnostics=tuple(d_list),
        n=data.n,
        kernel_name=kernel.name,
    )

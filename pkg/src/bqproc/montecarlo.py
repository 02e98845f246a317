"""Replicated simulation experiments for the smoothed score estimator.

Replications are deterministic in (config, seed): each (replication, n)
task draws from its own counter-based stream keyed by the seed and the
task indices, so the results table is bitwise identical for any worker
count.  Summaries center the coefficient estimates at the population
path plus the oracle smoothing-bias correction and compare empirical
second moments against the population sandwich variance.
"""

from __future__ import annotations

import configparser
import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .choiceprob import choice_prob, crossing_se
from .dgp import (
    DGPSpec,
    parse_dgp_config,
    population_Q,
    population_bias,
    simulate,
    true_choice_prob,
    true_tau_w,
)
from .estimator import (
    BandwidthWarning,
    OptimizerConfig,
    default_bandwidth,
    estimate_process,
)
from .exceptions import (
    ConfigurationError,
    DegenerateResponse,
    EstimationError,
    MonteCarloError,
    NoCrossing,
)
from .kernels import builtin_kernel
from .score import CovariatePoint, asymptotic_variance

__all__ = [
    "ExperimentConfig",
    "CoefRow",
    "ProbRow",
    "RawResults",
    "CoefCell",
    "ProbCell",
    "CorrBlock",
    "McSummary",
    "RateReport",
    "run_experiment",
    "summarize",
    "rate_check",
    "parse_experiment_config",
]

_MIN_RELIABLE = 30
_Z90 = float(ndtri(0.95))


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Settings for one replicated experiment."""

    dgp: DGPSpec
    n_values: tuple
    taus: tuple
    n_reps: int
    kernel: str = "gauss2"
    bandwidth_c: float = 1.0
    w_points: tuple = ()
    seed: int = 0
    a: float = 0.25
    b: float = 0.75

    def __post_init__(self) -> None:
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))
        object.__setattr__(self, "taus", tuple(float(t) for t in self.taus))
        object.__setattr__(self, "w_points", tuple(self.w_points))
        if self.n_reps < 2:
            raise ConfigurationError(f"n_reps must be >= 2, got {self.n_reps}")
        if not self.n_values or any(n < 50 for n in self.n_values):
            raise ConfigurationError(f"all sample sizes must be >= 50, got {self.n_values}")
        taus = np.asarray(self.taus)
        if taus.size == 0 or np.any(np.diff(taus) <= 0.0):
            raise ConfigurationError("taus must be strictly increasing")
        if np.any(taus <= 0.0) or np.any(taus >= 1.0):
            raise ConfigurationError("taus must lie in (0,1)")
        builtin_kernel(self.kernel)
        if not (self.bandwidth_c > 0.0):
            raise ConfigurationError(f"bandwidth_c must be > 0, got {self.bandwidth_c}")
        if not (0.0 < self.a < self.b < 1.0):
            raise ConfigurationError(f"need 0 < a < b < 1, got a={self.a}, b={self.b}")
        if int(self.seed) < 0:
            raise ConfigurationError(f"seed must be non-negative, got {self.seed}")
        d = self.dgp.d
        for i, w in enumerate(self.w_points):
            if not isinstance(w, CovariatePoint):
                raise ConfigurationError(f"w_points[{i}] is not a covariate point")
            if w.x.shape[0] != d:
                raise ConfigurationError(
                    f"w_points[{i}].x has length {w.x.shape[0]}, dgp has d={d}"
                )
        if self.w_points and (self.taus[0] > self.a or self.taus[-1] < self.b):
            raise ConfigurationError(
                "tau-grid must cover [a, b] when choice probabilities are requested"
            )


@dataclass(frozen=True)
class CoefRow:
    rep: int
    n: int
    tau: float
    s_hat: int
    b_hat: tuple
    objective: float
    converged: bool
    failed: bool


@dataclass(frozen=True)
class ProbRow:
    rep: int
    n: int
    w_id: int
    p_hat: float
    tau_w_hat: float
    n_sign_changes: int
    failed: bool


@dataclass(frozen=True, eq=False)
class RawResults:
    """Flat per-replication results, ordered by (replication, n) task index."""

    coef_rows: tuple
    prob_rows: tuple
    n_failures: int

    @staticmethod
    def prob_csv_path(path: str) -> str:
        stem, dot, ext = path.rpartition(".")
        return f"{stem}_probs{dot}{ext}" if dot else f"{path}_probs"

    def to_csv(self, path: str) -> None:
        """Write coefficient rows at path and p_hat rows at a sibling file."""
        if not self.coef_rows:
            raise ConfigurationError("no coefficient rows to write")
        d = len(self.coef_rows[0].b_hat)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["rep", "n", "tau", "s_hat"]
                + [f"b_{j + 1}" for j in range(d)]
                + ["objective", "converged"]
            )
            for r in self.coef_rows:
                writer.writerow(
                    [r.rep, r.n, format(r.tau, ".17g"), r.s_hat]
                    + [format(v, ".17g") for v in r.b_hat]
                    + [format(r.objective, ".17g"), int(r.converged)]
                )
        if self.prob_rows:
            with open(self.prob_csv_path(path), "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(
                    ["rep", "n", "w_id", "p_hat", "tau_w_hat", "n_sign_changes"]
                )
                for p in self.prob_rows:
                    writer.writerow(
                        [
                            p.rep,
                            p.n,
                            p.w_id,
                            format(p.p_hat, ".17g"),
                            format(p.tau_w_hat, ".17g"),
                            p.n_sign_changes,
                        ]
                    )


def _replicate(cfg: ExperimentConfig, opt: OptimizerConfig, rep: int, i_n: int):
    """One (replication, sample size) task; returns (coef rows, prob rows, failed)."""
    n = cfg.n_values[i_n]
    kernel = builtin_kernel(cfg.kernel)
    with warnings.catch_warnings():
        # the config-level bandwidth check is reported once by the caller
        warnings.simplefilter("ignore", BandwidthWarning)
        h = default_bandwidth(n, kernel.order, cfg.bandwidth_c)
    data = simulate(cfg.dgp, n, seed=[cfg.seed, i_n, rep])
    nan_b = tuple([float("nan")] * data.d)
    try:
        path = estimate_process(data, np.asarray(cfg.taus), h, kernel, opt)
    except (DegenerateResponse, EstimationError):
        coef = [
            CoefRow(rep, n, t, 1, nan_b, float("nan"), False, True) for t in cfg.taus
        ]
        prob = [
            ProbRow(rep, n, i, float("nan"), float("nan"), 0, True)
            for i in range(len(cfg.w_points))
        ]
        return coef, prob, True
    coef = [
        CoefRow(
            rep,
            n,
            float(path.taus[j]),
            int(path.s_hat[j]),
            tuple(float(v) for v in path.b_hat[j]),
            float(path.objective[j]),
            bool(path.diagnostics[j].converged),
            False,
        )
        for j in range(path.taus.shape[0])
    ]
    prob = []
    for i, w in enumerate(cfg.w_points):
        est = choice_prob(path, w, cfg.a, cfg.b)
        prob.append(
            ProbRow(rep, n, i, est.p_hat, est.tau_w_hat, est.n_sign_changes, False)
        )
    return coef, prob, False


def run_experiment(
    cfg: ExperimentConfig, workers: int = 1, opt: OptimizerConfig | None = None
) -> RawResults:
    """Run all replications; reproducible bitwise for any worker count.

    Per-replication estimation failures are recorded as rows of NaNs; the
    experiment aborts only when more than 5% of (replication, n) tasks
    fail.
    """
    opt = opt or OptimizerConfig(seed=cfg.seed)
    tasks = [
        (rep, i_n) for rep in range(cfg.n_reps) for i_n in range(len(cfg.n_values))
    ]
    if workers <= 1:
        outs = [_replicate(cfg, opt, rep, i_n) for rep, i_n in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_replicate, cfg, opt, rep, i_n) for rep, i_n in tasks]
            outs = [f.result() for f in futures]
    coef_rows, prob_rows = [], []
    n_failures = 0
    for coef, prob, failed in outs:
        coef_rows.extend(coef)
        prob_rows.extend(prob)
        n_failures += int(failed)
    if n_failures > 0.05 * len(tasks):
        raise MonteCarloError(
            f"{n_failures} of {len(tasks)} replication tasks failed (> 5%)"
        )
    return RawResults(
        coef_rows=tuple(coef_rows), prob_rows=tuple(prob_rows), n_failures=n_failures
    )


# =========================================================================
# summaries
# =========================================================================


@dataclass(frozen=True, eq=False)
class CoefCell:
    """Moments of the coefficient estimates for one (n, tau) cell.

    bias/sd/rmse are per component on the raw error scale; the corrected
    columns center at b_bar plus the oracle bias -Q^{-1} T_n, the raw
    columns at b_bar alone.  var_ratio compares nh * Var(corrected error)
    against the diagonal of the sandwich Q^{-1} Sigma Q^{-1}, and
    coverage90 counts hits of the two-sided 90% oracle-variance interval.
    """

    n: int
    tau: float
    n_success: int
    reliable: bool
    bias: np.ndarray
    bias_raw: np.ndarray
    sd: np.ndarray
    rmse: np.ndarray
    rmse_raw: np.ndarray
    var_ratio: np.ndarray
    coverage90: np.ndarray
    sandwich: np.ndarray


@dataclass(frozen=True, eq=False)
class ProbCell:
    n: int
    w_id: int
    n_success: int
    reliable: bool
    true_p: float
    bias: float
    sd: float
    rmse: float
    se_oracle: float
    coverage90: float


@dataclass(frozen=True, eq=False)
class CorrBlock:
    """Correlation matrix of sqrt(nh)-standardized corrected errors,
    stacked over (tau, component)."""

    n: int
    labels: tuple
    matrix: np.ndarray
    max_cross_tau: float


@dataclass(frozen=True, eq=False)
class McSummary:
    n_values: tuple
    taus: tuple
    h_by_n: dict
    coef: dict
    corr: dict
    prob: dict

    def to_csv(self, path: str) -> None:
        """Long-format named-statistic rows."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["kind", "n", "key", "component", "statistic", "value"])

            def put(kind, n, key, comp, stat, value):
                writer.writerow([kind, n, key, comp, stat, format(value, ".17g")])

            for (n, tau), cell in sorted(self.coef.items()):
                key = format(tau, ".17g")
                put("coef", n, key, "", "n_success", cell.n_success)
                put("coef", n, key, "", "reliable", int(cell.reliable))
                for j in range(cell.bias.shape[0]):
                    comp = f"b_{j + 1}"
                    put("coef", n, key, comp, "bias_corrected", cell.bias[j])
                    put("coef", n, key, comp, "bias_raw", cell.bias_raw[j])
                    put("coef", n, key, comp, "sd", cell.sd[j])
                    put("coef", n, key, comp, "rmse_corrected", cell.rmse[j])
                    put("coef", n, key, comp, "rmse_raw", cell.rmse_raw[j])
                    put("coef", n, key, comp, "var_ratio", cell.var_ratio[j])
                    put("coef", n, key, comp, "coverage90", cell.coverage90[j])
            for n, block in sorted(self.corr.items()):
                put("corr", n, "", "", "max_cross_tau_abs", block.max_cross_tau)
                m = block.matrix.shape[0]
                for i in range(m):
                    for j in range(i + 1, m):
                        put(
                            "corr",
                            n,
                            f"{block.labels[i]}|{block.labels[j]}",
                            "",
                            "rho",
                            block.matrix[i, j],
                        )
            for (n, w_id), cell in sorted(self.prob.items()):
                key = str(w_id)
                put("prob", n, key, "", "n_success", cell.n_success)
                put("prob", n, key, "", "reliable", int(cell.reliable))
                put("prob", n, key, "", "true_p", cell.true_p)
                put("prob", n, key, "", "bias", cell.bias)
                put("prob", n, key, "", "sd", cell.sd)
                put("prob", n, key, "", "rmse", cell.rmse)
                put("prob", n, key, "", "se_oracle", cell.se_oracle)
                put("prob", n, key, "", "coverage90", cell.coverage90)


def summarize(raw: RawResults, cfg: ExperimentConfig) -> McSummary:
    """Reduce raw rows to centered moments, correlations and coverage.

    Coefficient errors are reported both corrected (centered at b_bar
    minus Q^{-1} T_n with the oracle smoothing bias T_n) and raw
    (centered at b_bar).  sd uses the population normalizer so that
    rmse^2 = bias^2 + sd^2 holds exactly; var_ratio uses the unbiased
    variance.  Cells with fewer than 30 successes are marked unreliable.
    """
    kernel = builtin_kernel(cfg.kernel)
    d = cfg.dgp.d
    h_by_n = {}
    for n in cfg.n_values:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BandwidthWarning)
            h_by_n[n] = default_bandwidth(n, kernel.order, cfg.bandwidth_c)

    # population objects per tau, shared across n
    per_tau = {}
    for tau in cfg.taus:
        _, b_bar = cfg.dgp.beta_bar(tau)
        Q = population_Q(cfg.dgp, tau)
        sigma = asymptotic_variance(cfg.dgp, tau, kernel)
        qinv = np.linalg.inv(Q)
        sandwich = qinv @ sigma @ qinv
        per_tau[tau] = (b_bar, Q, sandwich)

    coef_cells = {}
    corr_blocks = {}
    scaled_by_cell = {}
    for n in cfg.n_values:
        h = h_by_n[n]
        for tau in cfg.taus:
            rows = [
                r
                for r in raw.coef_rows
                if r.n == n and r.tau == tau and not r.failed
            ]
            b_bar, Q, sandwich = per_tau[tau]
            shift = -np.linalg.solve(Q, population_bias(cfg.dgp, tau, kernel, h))
            est = np.array([r.b_hat for r in rows], dtype=float)
            n_success = est.shape[0]
            if n_success < 2:
                raise MonteCarloError(
                    f"cell (n={n}, tau={tau}) has {n_success} successes; "
                    "cannot form moments"
                )
            err_raw = est - b_bar
            err = err_raw - shift
            bias = err.mean(axis=0)
            bias_raw = err_raw.mean(axis=0)
            sd = err.std(axis=0, ddof=0)
            rmse = np.sqrt((err**2).mean(axis=0))
            rmse_raw = np.sqrt((err_raw**2).mean(axis=0))
            var_ratio = (n * h) * err.var(axis=0, ddof=1) / np.diag(sandwich)
            half = _Z90 * np.sqrt(np.diag(sandwich))
            scaled = math.sqrt(n * h) * err
            coverage = (np.abs(scaled) <= half).mean(axis=0)
            coef_cells[(n, tau)] = CoefCell(
                n=n,
                tau=tau,
                n_success=n_success,
                reliable=n_success >= _MIN_RELIABLE,
                bias=bias,
                bias_raw=bias_raw,
                sd=sd,
                rmse=rmse,
                rmse_raw=rmse_raw,
                var_ratio=var_ratio,
                coverage90=coverage,
                sandwich=sandwich,
            )
            scaled_by_cell[(n, tau)] = {r.rep: scaled[i] for i, r in enumerate(rows)}

        # correlation over reps successful at every tau for this n
        common = None
        for tau in cfg.taus:
            reps = set(scaled_by_cell[(n, tau)])
            common = reps if common is None else (common & reps)
        common = sorted(common)
        stacked = np.array(
            [
                np.concatenate([scaled_by_cell[(n, tau)][rep] for tau in cfg.taus])
                for rep in common
            ]
        )
        labels = tuple(
            f"tau={tau:g}:b_{j + 1}" for tau in cfg.taus for j in range(d)
        )
        if stacked.shape[0] >= 2 and len(cfg.taus) >= 1:
            matrix = np.corrcoef(stacked.T)
            matrix = np.atleast_2d(matrix)
            tau_of = np.repeat(np.arange(len(cfg.taus)), d)
            cross = tau_of[:, None] != tau_of[None, :]
            max_cross = float(np.max(np.abs(matrix[cross]))) if cross.any() else 0.0
            corr_blocks[n] = CorrBlock(
                n=n, labels=labels, matrix=matrix, max_cross_tau=max_cross
            )

    prob_cells = {}
    for n in cfg.n_values:
        h = h_by_n[n]
        for w_id, w in enumerate(cfg.w_points):
            rows = [
                p
                for p in raw.prob_rows
                if p.n == n and p.w_id == w_id and not p.failed
            ]
            p_true = true_choice_prob(cfg.dgp, w)
            vals = np.array([p.p_hat for p in rows], dtype=float)
            n_success = vals.shape[0]
            if n_success < 2:
                raise MonteCarloError(
                    f"cell (n={n}, w_id={w_id}) has {n_success} successes"
                )
            err = vals - p_true
            try:
                se = crossing_se(cfg.dgp, w, true_tau_w(cfg.dgp, w), n, h, kernel)
                coverage = float((np.abs(err) <= _Z90 * se).mean())
            except NoCrossing:
                se = float("nan")
                coverage = float("nan")
            prob_cells[(n, w_id)] = ProbCell(
                n=n,
                w_id=w_id,
                n_success=n_success,
                reliable=n_success >= _MIN_RELIABLE,
                true_p=p_true,
                bias=float(err.mean()),
                sd=float(err.std(ddof=0)),
                rmse=float(np.sqrt((err**2).mean())),
                se_oracle=se,
                coverage90=coverage,
            )

    return McSummary(
        n_values=cfg.n_values,
        taus=cfg.taus,
        h_by_n=h_by_n,
        coef=coef_cells,
        corr=corr_blocks,
        prob=prob_cells,
    )


@dataclass(frozen=True, eq=False)
class RateReport:
    """Fitted convergence rate against the sqrt(nh) scale.

    exponent is the least-squares slope of log rmse on log (nh)^(-1/2),
    so 1.0 means the rmse shrinks exactly at the sqrt(nh) rate.  ratios
    holds rmse(n_i) / rmse(n_{i+1}) next to the theoretical factors
    sqrt((n_{i+1} h_{i+1}) / (n_i h_i)).
    """

    n_values: tuple
    exponent: float
    ratios: np.ndarray
    theoretical_factors: np.ndarray


def rate_check(entries) -> RateReport:
    """Fit the rmse decay rate from (n, h, rmse) triples sorted by n."""
    entries = [(int(n), float(h), float(r)) for n, h, r in entries]
    if len(entries) < 2:
        raise ConfigurationError("rate_check needs at least two sample sizes")
    ns = [e[0] for e in entries]
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ConfigurationError("entries must be sorted by strictly increasing n")
    if any(h <= 0 or r <= 0 for _, h, r in entries):
        raise ConfigurationError("bandwidths and rmse values must be positive")
    nh = np.array([n * h for n, h, _ in entries])
    rmse = np.array([r for _, _, r in entries])
    x = -0.5 * np.log(nh)
    exponent = float(np.polyfit(x, np.log(rmse), 1)[0])
    ratios = rmse[:-1] / rmse[1:]
    theo = np.sqrt(nh[1:] / nh[:-1])
    return RateReport(
        n_values=tuple(ns),
        exponent=exponent,
        ratios=ratios,
        theoretical_factors=theo,
    )


def parse_experiment_config(path: str) -> ExperimentConfig:
    """Read an ExperimentConfig from an INI file with [dgp] and [experiment].

    Keys: n_values (comma list), taus (comma list or lo:hi:count),
    n_reps, kernel, bandwidth_c, seed, a, b, and w_points as
    semicolon-separated "z, x1, ..., xd" tuples.
    """
    dgp = parse_dgp_config(path)
    cp = configparser.ConfigParser()
    cp.read(path)
    if not cp.has_section("experiment"):
        raise ConfigurationError(f"{path}: missing [experiment] section")
    sec = cp["experiment"]
    try:
        n_values = tuple(int(v) for v in sec["n_values"].split(","))
        n_reps = int(sec["n_reps"])
        taus_text = sec["taus"].strip()
        if ":" in taus_text:
            lo, hi, count = taus_text.split(":")
            taus = tuple(np.linspace(float(lo), float(hi), int(count)))
        else:
            taus = tuple(float(v) for v in taus_text.split(","))
        w_points = []
        for chunk in sec.get("w_points", "").split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            vals = [float(v) for v in chunk.split(",")]
            if len(vals) < 2:
                raise ConfigurationError(
                    f"{path}: w point '{chunk}' needs z plus at least one x"
                )
            w_points.append(CovariatePoint(z=vals[0], x=np.array(vals[1:])))
        return ExperimentConfig(
            dgp=dgp,
            n_values=n_values,
            taus=taus,
            n_reps=n_reps,
            kernel=sec.get("kernel", "gauss2"),
            bandwidth_c=float(sec.get("bandwidth_c", "1.0")),
            w_points=tuple(w_points),
            seed=int(sec.get("seed", "0")),
            a=float(sec.get("a", "0.25")),
            b=float(sec.get("b", "0.75")),
        )
    except KeyError as exc:
        raise ConfigurationError(f"{path}: missing experiment key {exc}") from None
    except ValueError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None

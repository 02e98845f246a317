"""Replication harness: determinism, failure policy, summary identities."""

import numpy as np
import pytest

from bqproc import (
    ConfigurationError,
    CovariatePoint,
    DGPSpec,
    ExperimentConfig,
    MonteCarloError,
    OptimizerConfig,
    RawResults,
    parse_experiment_config,
    rate_check,
    reference_dgp,
    run_experiment,
    summarize,
)


def tiny_config(**overrides):
    base = dict(
        dgp=reference_dgp(),
        n_values=(60, 90),
        taus=(0.35, 0.5, 0.65),
        n_reps=3,
        kernel="gauss2",
        seed=5,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def test_experiment_config_validation():
    with pytest.raises(ConfigurationError):
        tiny_config(n_reps=1)
    with pytest.raises(ConfigurationError):
        tiny_config(n_values=(40,))
    with pytest.raises(ConfigurationError):
        tiny_config(taus=(0.5, 0.4))
    with pytest.raises(ConfigurationError):
        tiny_config(kernel="triangle")
    with pytest.raises(ConfigurationError):
        tiny_config(a=0.8, b=0.2)
    # w_points demand tau coverage of [a, b]
    with pytest.raises(ConfigurationError):
        tiny_config(
            w_points=(CovariatePoint(z=-0.8, x=np.array([1.0, 0.5])),),
            a=0.3,
            b=0.7,
        )


def test_run_experiment_row_counts_and_determinism():
    cfg = tiny_config()
    raw1 = run_experiment(cfg, workers=1, opt=OptimizerConfig(n_starts=2, seed=5))
    raw2 = run_experiment(cfg, workers=1, opt=OptimizerConfig(n_starts=2, seed=5))
    assert len(raw1.coef_rows) == cfg.n_reps * len(cfg.n_values) * len(cfg.taus)
    assert len(raw1.prob_rows) == 0
    assert raw1.n_failures == raw2.n_failures
    for r1, r2 in zip(raw1.coef_rows, raw2.coef_rows):
        assert r1 == r2


def test_run_experiment_parallel_matches_serial():
    cfg = tiny_config(n_reps=4, n_values=(60,))
    opt = OptimizerConfig(n_starts=2, seed=5)
    serial = run_experiment(cfg, workers=1, opt=opt)
    parallel = run_experiment(cfg, workers=2, opt=opt)
    assert serial.coef_rows == parallel.coef_rows
    assert serial.prob_rows == parallel.prob_rows


def test_run_experiment_with_probability_points():
    cfg = tiny_config(
        taus=tuple(np.linspace(0.35, 0.65, 13)),
        w_points=(
            CovariatePoint(z=-0.8, x=np.array([1.0, 0.5])),
            CovariatePoint(z=-1.0, x=np.array([1.0, 0.25])),
        ),
        a=0.4,
        b=0.6,
        n_values=(80,),
    )
    raw = run_experiment(cfg, workers=1, opt=OptimizerConfig(n_starts=2, seed=5))
    assert len(raw.prob_rows) == cfg.n_reps * len(cfg.w_points)
    for row in raw.prob_rows:
        if not row.failed:
            assert 1.0 - cfg.b <= row.p_hat <= 1.0 - cfg.a
            assert row.w_id in (0, 1)


def test_run_experiment_fails_on_degenerate_design():
    bad = DGPSpec(
        gamma=(30.0,),
        lam=0.0,
        error_dist="logistic",
        x_intervals=(),
        z_interval=(-1.0, 1.0),
        name="impossible",
    )
    cfg = ExperimentConfig(dgp=bad, n_values=(60,), taus=(0.5,), n_reps=3, seed=1)
    with pytest.raises(MonteCarloError):
        run_experiment(cfg, workers=1, opt=OptimizerConfig(n_starts=2, seed=1))


def test_summary_moment_identities():
    cfg = tiny_config(n_reps=8, n_values=(120,))
    raw = run_experiment(cfg, workers=1, opt=OptimizerConfig(n_starts=2, seed=7))
    summary = summarize(raw, cfg)
    for (n, tau), cell in summary.coef.items():
        assert n == 120
        assert cell.n_success == 8
        assert not cell.reliable
        lhs = cell.rmse**2
        rhs = cell.bias**2 + cell.sd**2
        assert np.abs(lhs - rhs).max() <= 1e-10
        lhs_raw = cell.rmse_raw**2
        rhs_raw = cell.bias_raw**2 + cell.sd**2
        assert np.abs(lhs_raw - rhs_raw).max() <= 1e-10
        assert (cell.var_ratio > 0.0).all()
        assert ((0.0 <= cell.coverage90) & (cell.coverage90 <= 1.0)).all()
    block = summary.corr[120]
    m = block.matrix.shape[0]
    assert np.allclose(np.diag(block.matrix), 1.0, atol=1e-12)
    assert np.abs(block.matrix - block.matrix.T).max() <= 1e-12
    assert 0.0 <= block.max_cross_tau <= 1.0
    assert m == len(cfg.taus) * cfg.dgp.d


def test_summary_csv_layout(tmp_path):
    cfg = tiny_config(n_reps=3, n_values=(60,))
    raw = run_experiment(cfg, workers=1, opt=OptimizerConfig(n_starts=2, seed=9))
    summary = summarize(raw, cfg)
    out = tmp_path / "summary.csv"
    summary.to_csv(str(out))
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "kind,n,key,component,statistic,value"
    kinds = {ln.split(",")[0] for ln in lines[1:]}
    assert "coef" in kinds and "corr" in kinds


def test_raw_results_csv_roundtrip(tmp_path):
    cfg = tiny_config(
        taus=tuple(np.linspace(0.35, 0.65, 13)),
        w_points=(CovariatePoint(z=-0.8, x=np.array([1.0, 0.5])),),
        a=0.4,
        b=0.6,
        n_values=(80,),
    )
    raw = run_experiment(cfg, workers=1, opt=OptimizerConfig(n_starts=2, seed=5))
    out = str(tmp_path / "raw.csv")
    raw.to_csv(out)
    assert RawResults.prob_csv_path(out).endswith("raw_probs.csv")
    coef_lines = open(out).read().strip().splitlines()
    assert coef_lines[0].startswith("rep,n,tau,s_hat,b_1")
    assert len(coef_lines) == 1 + len(raw.coef_rows)
    prob_lines = open(RawResults.prob_csv_path(out)).read().strip().splitlines()
    assert len(prob_lines) == 1 + len(raw.prob_rows)


def test_rate_check_recovers_synthetic_exponents():
    entries = [(n, n ** (-0.2), (n * n ** (-0.2)) ** (-0.5)) for n in (1000, 4000, 16000)]
    report = rate_check(entries)
    assert report.exponent == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(report.ratios, report.theoretical_factors, rtol=1e-12)
    steep = [(n, n ** (-0.2), (n * n ** (-0.2)) ** (-0.8)) for n in (1000, 4000, 16000)]
    assert rate_check(steep).exponent == pytest.approx(1.6, abs=1e-12)


def test_rate_check_input_guards():
    with pytest.raises(ConfigurationError):
        rate_check([(1000, 0.2, 0.1)])
    with pytest.raises(ConfigurationError):
        rate_check([(4000, 0.2, 0.1), (1000, 0.3, 0.2)])
    with pytest.raises(ConfigurationError):
        rate_check([(1000, 0.2, 0.1), (4000, 0.2, -0.1)])


def test_parse_experiment_config(tmp_path):
    ini = tmp_path / "exp.ini"
    ini.write_text(
        "[dgp]\n"
        "name = ref\n"
        "gamma = 0.25, 1.0\n"
        "lambda = 0.5\n"
        "error = logistic\n"
        "z = -4, 4\n"
        "x1 = 0, 1\n"
        "[experiment]\n"
        "n_values = 60, 90\n"
        "n_reps = 3\n"
        "taus = 0.3:0.7:9\n"
        "kernel = gauss4\n"
        "bandwidth_c = 1.5\n"
        "seed = 11\n"
        "a = 0.35\n"
        "b = 0.65\n"
        "w_points = -0.8, 1.0, 0.5; -1.0, 1.0, 0.25\n"
    )
    cfg = parse_experiment_config(str(ini))
    assert cfg.n_values == (60, 90)
    assert cfg.n_reps == 3
    assert len(cfg.taus) == 9
    assert cfg.taus[0] == pytest.approx(0.3) and cfg.taus[-1] == pytest.approx(0.7)
    assert cfg.kernel == "gauss4"
    assert cfg.bandwidth_c == 1.5
    assert cfg.seed == 11
    assert len(cfg.w_points) == 2
    assert cfg.w_points[1].z == -1.0
    assert np.array_equal(cfg.w_points[1].x, [1.0, 0.25])

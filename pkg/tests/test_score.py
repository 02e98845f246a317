"""Score function values against naive re-summation and finite differences."""

import math

import numpy as np
import pytest
from scipy.special import expit

from bqproc import (
    ConfigurationError,
    Dataset,
    DGPSpec,
    ScorePoint,
    asymptotic_variance,
    builtin_kernel,
    kernel_square_integral,
    load_dataset_csv,
    margins,
    raw_score,
    save_dataset_csv,
    score_gradient,
    score_hessian,
    smoothed_score,
)

GAUSS2 = builtin_kernel("gauss2")
GAUSS4 = builtin_kernel("gauss4")


def make_data(n: int, d: int, seed: int) -> Dataset:
    """Logistic binary response with uniform covariates, fixed seed."""
    rng = np.random.default_rng(seed)
    z = rng.uniform(-2.0, 2.0, n)
    x = np.column_stack([np.ones(n)] + [rng.uniform(0.0, 1.0, n) for _ in range(d - 1)])
    gamma = np.linspace(0.25, 1.0, d)
    eps = rng.logistic(size=n)
    y = (z + x @ gamma + eps >= 0.0).astype(np.int64)
    return Dataset(y=y, z=z, x=x)


def naive_raw(data, s, b, tau):
    total = 0.0
    for i in range(data.n):
        m = float(np.dot(data.x[i], b)) + s * float(data.z[i])
        total += (float(data.y[i]) - (1.0 - tau)) * (1.0 if m >= 0.0 else 0.0)
    return total / data.n


def naive_smoothed(data, s, b, tau, h, kern):
    total = 0.0
    for i in range(data.n):
        m = float(np.dot(data.x[i], b)) + s * float(data.z[i])
        total += (float(data.y[i]) - (1.0 - tau)) * float(kern.eval_Kc(m / h))
    return total / data.n


def naive_gradient(data, s, b, tau, h, kern):
    g = np.zeros(data.d)
    for i in range(data.n):
        m = float(np.dot(data.x[i], b)) + s * float(data.z[i])
        g += (float(data.y[i]) - (1.0 - tau)) * data.x[i] * float(kern.eval_K(m / h))
    return g / (data.n * h)


def naive_hessian(data, s, b, tau, h, kern):
    q = np.zeros((data.d, data.d))
    for i in range(data.n):
        m = float(np.dot(data.x[i], b)) + s * float(data.z[i])
        q += (
            (float(data.y[i]) - (1.0 - tau))
            * np.outer(data.x[i], data.x[i])
            * float(kern.eval_Kprime(m / h))
        )
    return q / (data.n * h * h)


def test_raw_score_single_observation():
    data = Dataset(y=np.array([1]), z=np.array([1.0]), x=np.array([[1.0]]))
    assert raw_score(data, ScorePoint(s=1, b=np.array([0.0]), tau=0.5)) == 0.5


def test_raw_score_two_observations():
    data = Dataset(y=np.array([1, 0]), z=np.array([1.0, -1.0]), x=np.array([[1.0], [1.0]]))
    assert raw_score(data, ScorePoint(s=1, b=np.array([0.0]), tau=0.5)) == 0.25


def test_raw_score_matches_naive_sum():
    data = make_data(50, 1, seed=11)
    p = ScorePoint(s=1, b=np.array([0.7]), tau=0.3)
    assert abs(raw_score(data, p) - naive_raw(data, 1, p.b, 0.3)) <= 1e-12


def test_smoothed_score_at_zero_margin():
    data = Dataset(y=np.array([1]), z=np.array([0.5]), x=np.array([[1.0]]))
    p = ScorePoint(s=1, b=np.array([-0.5]), tau=0.5, h=0.2)
    assert smoothed_score(data, p, GAUSS2) == pytest.approx(0.25, abs=1e-15)


def test_smoothed_score_approaches_raw_score():
    data = make_data(80, 3, seed=3)
    b = np.array([0.4, -0.2, 0.9])
    m = margins(data, 1, b)
    assert np.abs(m).min() > 1e-6, "fixture must keep margins off the hyperplane"
    p = ScorePoint(s=1, b=b, tau=0.35, h=1e-8)
    assert abs(smoothed_score(data, p, GAUSS2) - raw_score(data, p)) <= 1e-12


def test_smoothed_score_matches_naive_sum():
    data = make_data(50, 3, seed=11)
    p = ScorePoint(s=-1, b=np.array([0.3, -0.8, 0.5]), tau=0.6, h=0.5)
    for kern in (GAUSS2, GAUSS4):
        got = smoothed_score(data, p, kern)
        want = naive_smoothed(data, -1, p.b, 0.6, 0.5, kern)
        assert abs(got - want) <= 1e-12


def test_extended_precision_accumulation():
    """n >= 10^4 takes the compensated path; compare to long double sums."""
    data = make_data(12_000, 3, seed=19)
    p = ScorePoint(s=1, b=np.array([0.1, 0.4, -0.3]), tau=0.45, h=0.25)
    w = data.y.astype(np.longdouble) - np.longdouble(1.0 - p.tau)
    m = (data.x @ p.b + data.z).astype(np.longdouble)
    want = float((w * GAUSS2.eval_Kc(m / np.longdouble(p.h))).sum() / data.n)
    assert abs(smoothed_score(data, p, GAUSS2) - want) <= 1e-12


def test_gradient_cancels_on_balanced_design():
    # equal-magnitude opposite weights on a common covariate
    data = Dataset(y=np.array([1, 0]), z=np.array([1.0, 1.0]), x=np.array([[1.0], [1.0]]))
    g = score_gradient(data, ScorePoint(s=1, b=np.array([0.0]), tau=0.5), GAUSS2)
    assert np.abs(g).max() == 0.0


def test_gradient_matches_finite_difference():
    data = make_data(50, 3, seed=11)
    p = ScorePoint(s=1, b=np.array([0.2, -0.5, 0.7]), tau=0.4, h=0.6)
    g = score_gradient(data, p, GAUSS2)
    step = 1e-5
    for j in range(data.d):
        e = np.zeros(data.d)
        e[j] = step
        up = smoothed_score(data, ScorePoint(1, p.b + e, 0.4, 0.6), GAUSS2)
        dn = smoothed_score(data, ScorePoint(1, p.b - e, 0.4, 0.6), GAUSS2)
        assert abs(g[j] - (up - dn) / (2.0 * step)) <= 1e-6


def test_gradient_matches_naive_sum_across_bandwidths():
    data = make_data(50, 3, seed=11)
    b = np.array([0.2, -0.5, 0.7])
    for h in (0.6, 1.2):
        g = score_gradient(data, ScorePoint(s=1, b=b, tau=0.4, h=h), GAUSS2)
        want = naive_gradient(data, 1, b, 0.4, h, GAUSS2)
        assert np.abs(g - want).max() <= 1e-12


def test_hessian_symmetric_and_matches_gradient_differences():
    data = make_data(50, 4, seed=23)
    p = ScorePoint(s=-1, b=np.array([0.1, 0.3, -0.4, 0.6]), tau=0.55, h=0.5)
    q = score_hessian(data, p, GAUSS2)
    assert np.abs(q - q.T).max() == 0.0
    step = 1e-5
    for j in range(data.d):
        e = np.zeros(data.d)
        e[j] = step
        up = score_gradient(data, ScorePoint(-1, p.b + e, 0.55, 0.5), GAUSS2)
        dn = score_gradient(data, ScorePoint(-1, p.b - e, 0.55, 0.5), GAUSS2)
        assert np.abs(q[:, j] - (up - dn) / (2.0 * step)).max() <= 1e-5
    want = naive_hessian(data, -1, p.b, 0.55, 0.5, GAUSS2)
    assert np.abs(q - 0.5 * (want + want.T)).max() <= 1e-12


def test_hessian_single_observation_at_zero_margin():
    data = Dataset(y=np.array([1]), z=np.array([0.5]), x=np.array([[1.0, 2.0]]))
    p = ScorePoint(s=1, b=np.array([0.5, -0.5]), tau=0.5, h=0.4)
    assert np.abs(score_hessian(data, p, GAUSS2)).max() == 0.0


def test_raw_score_scale_invariance():
    """Scaling b and z by the same positive constant leaves the sign set alone."""
    data = make_data(60, 3, seed=31)
    b = np.array([0.4, -0.7, 0.2])
    base = raw_score(data, ScorePoint(s=1, b=b, tau=0.3))
    for a in (0.5, 2.0, 10.0):
        scaled = Dataset(y=data.y, z=a * data.z, x=data.x)
        assert raw_score(scaled, ScorePoint(s=1, b=a * b, tau=0.3)) == base


def test_smoothed_score_bandwidth_scale_duality():
    data = make_data(60, 3, seed=31)
    b = np.array([0.4, -0.7, 0.2])
    base = smoothed_score(data, ScorePoint(s=1, b=b, tau=0.3, h=0.5), GAUSS2)
    for a in (0.5, 2.0, 10.0):
        scaled = Dataset(y=data.y, z=a * data.z, x=a * data.x)
        got = smoothed_score(scaled, ScorePoint(s=1, b=b, tau=0.3, h=a * 0.5), GAUSS2)
        assert abs(got - base) <= 1e-14


def test_smoothed_score_bound():
    grid = np.linspace(-8.0, 8.0, 20001)
    for kern in (GAUSS2, GAUSS4):
        sup_kc = float(np.abs(kern.eval_Kc(grid)).max())
        rng = np.random.default_rng(101)
        for _ in range(20):
            data = make_data(40, 3, seed=int(rng.integers(1 << 30)))
            tau = float(rng.uniform(0.05, 0.95))
            p = ScorePoint(
                s=int(rng.choice([-1, 1])),
                b=rng.uniform(-3.0, 3.0, 3),
                tau=tau,
                h=float(rng.uniform(0.05, 2.0)),
            )
            bound = max(tau, 1.0 - tau) * sup_kc
            assert abs(smoothed_score(data, p, kern)) <= bound + 1e-12


def test_asymptotic_variance_uniform_z_closed_form():
    dgp = DGPSpec(
        gamma=(0.25,),
        lam=0.0,
        error_dist="logistic",
        x_intervals=(),
        z_interval=(-3.0, 3.0),
        name="flat",
    )
    for kern in (GAUSS2, GAUSS4):
        sigma = asymptotic_variance(dgp, 0.5, kern)
        want = 0.25 * kernel_square_integral(kern) / 6.0
        assert sigma.shape == (1, 1)
        assert sigma[0, 0] == pytest.approx(want, rel=1e-10)


def test_asymptotic_variance_tau_symmetry():
    dgp = DGPSpec(
        gamma=(0.25,),
        lam=0.0,
        error_dist="logistic",
        x_intervals=(),
        z_interval=(-4.0, 4.0),
        name="flat",
    )
    s3 = asymptotic_variance(dgp, 0.3, GAUSS2)
    s7 = asymptotic_variance(dgp, 0.7, GAUSS2)
    assert np.allclose(s3 / s7, 1.0, atol=1e-12)


def test_asymptotic_variance_positive_semidefinite():
    rng = np.random.default_rng(55)
    for _ in range(20):
        dgp = DGPSpec(
            gamma=tuple(rng.uniform(-0.5, 0.5, 2)),
            lam=float(rng.uniform(0.0, 0.8)),
            error_dist=str(rng.choice(["logistic", "normal"])),
            x_intervals=((0.0, 1.0),),
            z_interval=(-6.0, 6.0),
            name="rand",
        )
        sigma = asymptotic_variance(dgp, float(rng.uniform(0.2, 0.8)), GAUSS2)
        assert float(np.linalg.eigvalsh(sigma).min()) >= -1e-10


def test_dataset_validation():
    with pytest.raises(ConfigurationError):
        Dataset(y=np.array([2, 0]), z=np.zeros(2), x=np.ones((2, 1)))
    with pytest.raises(ConfigurationError):
        Dataset(y=np.array([1, 0]), z=np.array([np.inf, 0.0]), x=np.ones((2, 1)))
    with pytest.raises(ConfigurationError):
        Dataset(y=np.array([1, 0]), z=np.zeros(3), x=np.ones((2, 1)))


def test_score_point_validation():
    with pytest.raises(ConfigurationError):
        ScorePoint(s=2, b=np.zeros(1), tau=0.5)
    with pytest.raises(ConfigurationError):
        ScorePoint(s=1, b=np.zeros(1), tau=1.0)
    with pytest.raises(ConfigurationError):
        ScorePoint(s=1, b=np.zeros(1), tau=0.5, h=0.0)


def test_dataset_csv_roundtrip(tmp_path):
    data = make_data(25, 2, seed=77)
    path = str(tmp_path / "data.csv")
    save_dataset_csv(data, path)
    back = load_dataset_csv(path)
    assert np.array_equal(back.y, data.y)
    assert np.array_equal(back.z, data.z)
    assert np.array_equal(back.x, data.x)


def test_dataset_csv_rejects_bad_rows(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("y,z,x1\n1,0.5,0.2\n2,0.1,0.3\n")
    with pytest.raises(ConfigurationError, match="line 3"):
        load_dataset_csv(str(path))
    path.write_text("y,z,x1\n1,inf,0.2\n")
    with pytest.raises(ConfigurationError):
        load_dataset_csv(str(path))
    path.write_text("y,x1,z\n1,0.5,0.2\n")
    with pytest.raises(ConfigurationError):
        load_dataset_csv(str(path))

import csv
import math

import numpy as np
import pytest

from conftest import STUDY_RESOLUTIONS
from sdaesim.brownian import generate
from sdaesim.convergence import (
    fit_rate,
    mean_errors,
    pathwise_error,
    run_sample,
    run_study,
    write_study_csvs,
)
from sdaesim.errors import GridMismatch
from sdaesim.integrators import Trajectory, grid_times, integrate
from sdaesim.models import example3d, ornstein_uhlenbeck


def make_traj(states, horizon=1.0):
    states = np.asarray(states, dtype=float)
    n = len(states) - 1
    return Trajectory(grid_times(horizon, n), states, "primary", np.zeros(n))


def test_pathwise_error_self_is_zero():
    traj = integrate(example3d(), 64, generate(1, 1.0, 64, 3))
    assert pathwise_error(traj, traj) == 0.0


def test_pathwise_error_constant_shift():
    rng = np.random.default_rng(0)
    ref = make_traj(rng.standard_normal((17, 3)))
    c = np.array([0.3, -0.4, 1.2])
    assert pathwise_error(make_traj(ref.states + c), ref) == pytest.approx(np.linalg.norm(c))


def test_pathwise_error_brute_force():
    p = example3d()
    path = generate(1, 1.0, 2**14, 3)
    ref = integrate(p, 2**14, path, check_constraints=False)
    coarse = integrate(p, 2**6, path, check_constraints=False)
    brute = 0.0
    for i in range(65):
        j = i * 2**8
        assert coarse.times[i] == ref.times[j]
        brute = max(brute, math.sqrt(sum((coarse.states[i, k] - ref.states[j, k]) ** 2
                                         for k in range(3))))
    err = pathwise_error(coarse, ref)
    assert err > 0
    assert err == pytest.approx(brute, rel=1e-14)


def test_pathwise_error_grid_mismatch():
    with pytest.raises(GridMismatch):
        pathwise_error(make_traj(np.zeros((4, 1))), make_traj(np.zeros((9, 1))))


def test_single_resolution_rate_undefined():
    rep = run_sample(example3d(), 1, 64, [64])
    assert rep.ok
    assert rep.errors == [0.0]
    assert math.isnan(rep.rate) and not rep.rate_defined


def test_three_seed_rates(serial_study):
    for rep in serial_study.reports[:3]:
        assert rep.ok
        assert 0.3 < rep.rate < 0.65, (rep.seed, rep.rate)


def test_ou_rate_near_one():
    p = ornstein_uhlenbeck(sigma=0.5)
    n_ref = 2**14
    for seed in (1, 2, 3):
        rep = run_sample(p, seed, n_ref, STUDY_RESOLUTIONS)
        assert 0.8 <= rep.rate <= 1.25, (seed, rep.rate)


def test_ou_reference_matches_exact_solution():
    # Y(t) = e^{-t} y0 + sigma * int_0^t e^{-(t-s)} dW(s), quadrature on the fine path
    sigma, n = 0.5, 2**14
    p = ornstein_uhlenbeck(sigma=sigma)
    path = generate(1, 1.0, n, 1)
    ref = integrate(p, n, path)
    dw = path.increments[:, 0]
    s = np.arange(n) / n
    for idx in (0, n // 4, n // 2, 3 * n // 4, n):
        t = idx / n
        exact = math.exp(-t) + sigma * np.sum(np.exp(-(t - s[:idx])) * dw[:idx])
        assert abs(ref.states[idx, 0] - exact) < 1e-4


def test_fit_recovers_half():
    ns = np.array(STUDY_RESOLUTIONS, dtype=float)
    rate, intercept = fit_rate(ns, 3.0 * ns**-0.5)
    assert rate == pytest.approx(0.5, abs=1e-12)
    assert math.exp(intercept) == pytest.approx(3.0, rel=1e-12)


@pytest.mark.parametrize("scale", [1e-6, 0.1, 7.0, 1e5])
def test_fit_rate_scale_invariant(scale):
    rng = np.random.default_rng(4)
    ns = np.array(STUDY_RESOLUTIONS, dtype=float)
    errs = ns**-0.45 * np.exp(0.2 * rng.standard_normal(ns.size))
    r0, i0 = fit_rate(ns, errs)
    r1, i1 = fit_rate(ns, scale * errs)
    assert r1 == pytest.approx(r0, abs=1e-12)
    assert i1 - i0 == pytest.approx(math.log(scale), abs=1e-10)


def test_fit_rate_degenerate():
    assert all(math.isnan(v) for v in fit_rate([32], [0.1]))
    assert all(math.isnan(v) for v in fit_rate([32, 64], [0.0, 0.1]))


def test_one_seed_study():
    study = run_study(example3d(), [2], 2**10, [32, 64, 128])
    assert study.mean_rate == study.reports[0].rate
    assert study.std_rate == 0.0


def test_parallel_matches_serial():
    p = example3d()
    kw = dict(seeds=[1, 2, 3, 4], n_ref=2**10, resolutions=[32, 64, 128])
    a = run_study(p, parallel=False, **kw)
    b = run_study(p, parallel=True, max_workers=4, **kw)
    for ra, rb in zip(a.reports, b.reports):
        assert ra.seed == rb.seed
        assert ra.errors == rb.errors
        assert ra.rate == rb.rate and ra.intercept == rb.intercept


def test_mean_error_decreases(serial_study):
    ns, errs = mean_errors(serial_study)
    assert ns[0] == 2**5 and ns[-1] == 2**10
    assert errs[-1] < errs[0]


def test_failed_sample_is_reported():
    # a coarse grid on a strongly explosive problem overflows
    from sdaesim.problem import SdaeProblem

    p = SdaeProblem(d=1, d1=1, horizon=1.0, a=[[1.0]], b=[[0.0]],
                    f=lambda t, y: np.asarray(y) ** 3, g=lambda t, y: np.zeros((1, 1)),
                    zeta=[3.0])
    study = run_study(p, [1, 2], 64, [2, 4])
    assert study.n_failed == 2
    assert all(r.status == "failed" for r in study.reports)
    assert math.isnan(study.mean_rate)


def test_study_csvs(tmp_path):
    study = run_study(example3d(), [1, 2], 2**8, [16, 32, 64])
    files = write_study_csvs(study, tmp_path)
    with files["samples"].open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6 and set(rows[0]) == {"seed", "n", "h", "error"}
    assert float(rows[0]["h"]) == 1 / 16
    with files["summary"].open() as fh:
        summary = list(csv.DictReader(fh))
    assert [float(r["rate"]) for r in summary] == [r.rate for r in study.reports]
    plot = np.loadtxt(files["plot"], delimiter=",", skiprows=1)
    np.testing.assert_allclose(plot[:, 0], [4, 5, 6])

import warnings

import numpy as np
import pytest

from sdaesim.brownian import generate
from sdaesim.errors import Overflow, SingularIterationMatrix
from sdaesim.integrators import (
    DualState,
    constraint_residual,
    integrate,
    integrate_batch,
    read_trajectory_csv,
    step_dual,
    step_primary,
)
from sdaesim.models import Heat2dSpec, build_heat2d, example3d, example3d_full_drift
from sdaesim.problem import SdaeProblem

ZETA = np.array([1.0, -2.0, 1.0])
DW = np.array([0.1, -0.05, 0.2])


def scalar(a, b, g, f=None):
    f = f or (lambda t, y: np.zeros(1))
    return SdaeProblem(d=1, d1=1, horizon=1.0, a=[[a]], b=[[b]], f=f,
                       g=lambda t, y: np.array([[g]]), zeta=[1.0])


def test_step_euler_maruyama_scalar():
    x = step_primary(scalar(1.0, 0.0, 1.0), 0.0, 0.1, [0.0], [0.3])
    assert x[0] == pytest.approx(0.3, abs=1e-15)


def test_step_implicit_decay():
    x = step_primary(scalar(1.0, -1.0, 0.0), 0.0, 0.1, [1.0], [0.0])
    assert x[0] == pytest.approx(1 / 1.1, rel=1e-15)


def test_example3d_without_split_is_singular():
    base = example3d()
    unsplit = SdaeProblem(d=3, d1=3, horizon=1.0, a=base.a, b=np.zeros((3, 3)),
                          f=example3d_full_drift, g=base.g, zeta=ZETA)
    with pytest.raises(SingularIterationMatrix):
        step_primary(unsplit, 0.0, 2.0**-4, ZETA, DW)


def test_example3d_step_matches_dense_solve():
    p = example3d()
    h = 2.0**-4
    x = step_primary(p, 0.0, h, ZETA, DW)
    a0, b = p.a(0.0), p.b(0.0)
    rhs = a0 @ ZETA + h * p.f(0.0, ZETA) + p.g(0.0, ZETA) @ DW
    expected = np.linalg.solve(a0 - h * b, rhs)
    np.testing.assert_allclose(x, expected, rtol=0, atol=1e-12)
    # the split reproduces the original drift
    np.testing.assert_allclose(b @ ZETA + p.f(0.0, ZETA), example3d_full_drift(0.0, ZETA))


def test_overflow_reports_step():
    # explosive cubic drift at a coarse step
    p = SdaeProblem(d=1, d1=1, horizon=1.0, a=[[1.0]], b=[[0.0]],
                    f=lambda t, y: y**3, g=lambda t, y: np.zeros((1, 1)), zeta=[10.0])
    with pytest.raises(Overflow) as info:
        integrate(p, 4, np.zeros((4, 1)))
    assert info.value.step is not None and info.value.step >= 0


def test_dual_identity_mass_is_euler_maruyama():
    p = SdaeProblem(d=2, d1=2, horizon=1.0, a=np.eye(2), b=np.zeros((2, 2)),
                    f=lambda t, y: -y, g=lambda t, y: np.diag([1.0, 2.0]), zeta=[1.0, 1.0])
    u = np.array([0.5, -1.0])
    dw = np.array([0.1, 0.2])
    state = step_dual(p, 0.0, 0.1, 0.1, u, dw)
    np.testing.assert_allclose(state.u, u + 0.1 * (-u) + np.diag([1.0, 2.0]) @ dw, atol=1e-15)
    assert np.array_equal(state.v, np.zeros(2))


def test_dual_constraint_hand_solution():
    p = example3d()
    ps = p.projectors(0.0)
    u0 = ps.p @ ZETA
    np.testing.assert_allclose(u0, [1.0, 0.0, 1.0], atol=1e-12)
    h = 2.0**-4
    state = step_dual(p, 0.0, h, h, DualState(u0, ps.q @ ZETA), DW)
    u, v = state.u, state.v
    assert abs(v[0]) <= 1e-12 and abs(v[2]) <= 1e-12
    assert v[1] == pytest.approx(-(u[0] + u[1] + u[2]), abs=1e-12)


def test_one_dual_step_equals_primary():
    p = example3d()
    h = 2.0**-4
    ps = p.projectors(0.0)
    x_primary = step_primary(p, 0.0, h, ZETA, DW)
    x_dual = step_dual(p, 0.0, h, h, DualState(ps.p @ ZETA, ps.q @ ZETA), DW).x
    np.testing.assert_allclose(x_dual, x_primary, rtol=0, atol=1e-8)


def test_trivial_integration_keeps_zeta():
    p = SdaeProblem(d=2, d1=1, horizon=1.0, a=np.eye(2), b=np.zeros((2, 2)),
                    f=lambda t, y: np.zeros(2), g=lambda t, y: np.zeros((2, 1)),
                    zeta=[3.0, -4.0])
    traj = integrate(p, 1, np.zeros((1, 1)))
    assert np.array_equal(traj.states, [[3.0, -4.0], [3.0, -4.0]])


@pytest.mark.parametrize("k", [4, 5, 6, 7, 8])
def test_equivalence_example3d(k):
    p = example3d()
    n = 2**k
    for seed in range(1, 6):
        path = generate(seed, 1.0, n, 3)
        prim = integrate(p, n, path, "primary")
        dual = integrate(p, n, path, "dual")
        assert prim.states[0].tolist() == ZETA.tolist()
        gap = np.max(np.linalg.norm(prim.states - dual.states, axis=1))
        scale = 1 + np.max(np.linalg.norm(prim.states, axis=1))
        assert gap <= 1e-8 * scale
        bound = 1e-8 * (1 + np.linalg.norm(prim.states[1:], axis=1))
        assert np.all(prim.constraint_residuals <= bound)


def test_equivalence_heat2d():
    p = build_heat2d(Heat2dSpec(m=8))
    for seed in (1, 2):
        path = generate(seed, 1.0, 64, p.d1)
        prim = integrate(p, 64, path)
        dual = integrate(p, 64, path, "dual")
        gap = np.max(np.linalg.norm(prim.states - dual.states, axis=1))
        assert gap <= 1e-8 * (1 + np.max(np.linalg.norm(prim.states, axis=1)))


def test_constraint_residual_oracle():
    p = example3d()
    h = 2.0**-5
    x1 = step_primary(p, 0.0, h, ZETA, DW)
    r = np.diag([0.0, 0.0, 1.0])
    oracle = abs((r @ (p.b(0.0) @ x1 + p.f(0.0, ZETA)))[2])
    assert constraint_residual(p, 0.0, x1, p.f(0.0, ZETA)) == pytest.approx(oracle, abs=1e-13)
    assert oracle <= 1e-12


def test_euler_maruyama_bit_identical():
    def f(t, y):
        return np.array([-y[0] ** 3 + y[1], np.sin(y[0])])

    def g(t, y):
        return np.array([[1.0 + y[1] ** 2, 0.0], [0.3, y[0]]])

    p = SdaeProblem(d=2, d1=2, horizon=1.0, a=np.eye(2), b=np.zeros((2, 2)),
                    f=f, g=g, zeta=[0.5, -0.2])
    n = 256
    h = 1.0 / n
    path = generate(17, 1.0, n, 2)
    x = p.zeta.copy()
    ref = [x]
    for i in range(n):
        x = x + h * f(0.0, x) + g(0.0, x) @ path.increments[i]
        ref.append(x)
    assert np.array_equal(integrate(p, n, path).states, np.array(ref))


def test_heat2d_runs_with_fixed_boundary():
    m = 20
    p = build_heat2d(Heat2dSpec(m=m))
    traj = integrate(p, 64, generate(1, 1.0, 64, p.d1))
    assert np.all(np.isfinite(traj.states))
    wall = [iy * (m + 1) for iy in range(m + 1)]
    assert np.all(traj.states[:, wall] == 1.0)


def test_dual_warns_on_inconsistent_zeta():
    base = example3d()
    p = SdaeProblem(d=3, d1=3, horizon=1.0, a=base.a, b=base.b, f=base.f, g=base.g,
                    zeta=[1.0, 5.0, 1.0])
    with pytest.warns(RuntimeWarning, match="constraint"):
        traj = integrate(p, 4, generate(1, 1.0, 4, 3), "dual")
    assert traj.notes


def test_batch_matches_single_paths():
    p = example3d()
    n = 64
    inc = np.stack([generate(s, 1.0, n, 3).increments for s in (1, 2, 3)])
    batch = integrate_batch(p, n, inc)
    assert not batch.failed.any()
    for k in range(3):
        single = integrate(p, n, inc[k], check_constraints=False).states
        np.testing.assert_allclose(batch.states[k], single, rtol=1e-13, atol=1e-13)


def test_batch_flags_failed_paths():
    p = SdaeProblem(d=1, d1=1, horizon=1.0, a=[[1.0]], b=[[0.0]],
                    f=lambda t, y: np.asarray(y) ** 3, g=lambda t, y: np.ones(np.shape(y) + (1,)),
                    zeta=[1.0], vectorized=True)
    inc = np.zeros((2, 8, 1))
    inc[1, 0, 0] = 100.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = integrate_batch(p, 8, inc)
    assert res.failed.tolist() == [False, True]
    assert np.isnan(res.states[1, -1]).all()


def test_trajectory_csv_round_trip(tmp_path):
    p = example3d()
    traj = integrate(p, 32, generate(2, 1.0, 32, 3))
    fn = tmp_path / "traj.csv"
    traj.to_csv(fn)
    assert fn.read_text().splitlines()[0] == "t,x_1,x_2,x_3"
    t, x = read_trajectory_csv(fn)
    assert np.array_equal(t, traj.times) and np.array_equal(x, traj.states)

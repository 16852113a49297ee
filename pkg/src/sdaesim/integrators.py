"""Semi-implicit Euler integration of index-1 SDAEs.

The primary scheme advances the full state with one linear solve per step::

    (A(t_i) - h B(t_i)) X_{i+1} = A(t_i) X_i + h f(t_i, X_i) + g(t_i, X_i) dW_i

The dual scheme splits ``X = u + v`` with ``u`` in Im P and ``v`` in Ker A,
eliminates the algebraic part through the affine constraint::

    v_{i+1} = -(A + R B)^{-1} [R B u_{i+1} + R f(t_i, X_i)]

(all matrices frozen at ``t_i``) and advances ``u`` through the inherent
SDE.  Both produce the same grid values when ``P`` is constant in time; the
dual scheme exists to check the primary one.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import scipy.linalg

from .brownian import BrownianPath, coarsen
from .errors import (
    InvalidResolution,
    NonFiniteCoefficient,
    Overflow,
    RankChange,
    SdaeError,
    SingularConstraintMatrix,
    SingularIterationMatrix,
)
from .problem import RHO_GUARD, SdaeProblem

#: Linear systems with sigma_min < SINGULAR_TOL * sigma_max are rejected.
SINGULAR_TOL = 1e-12

Scheme = Literal["primary", "dual"]


@dataclass
class Trajectory:
    """Grid times ``t_i = i T / n`` and the states ``X_i`` computed on them."""

    times: np.ndarray
    states: np.ndarray
    scheme: str
    solve_residuals: np.ndarray
    constraint_residuals: np.ndarray | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.times) - 1

    def to_csv(self, filename) -> None:
        write_trajectory_csv(self, filename)


@dataclass(frozen=True)
class DualState:
    u: np.ndarray
    v: np.ndarray

    @property
    def x(self) -> np.ndarray:
        return self.u + self.v


def _check_conditioning(m: np.ndarray, exc_type, what: str) -> None:
    s = np.linalg.svd(m, compute_uv=False)
    if not s[-1] >= SINGULAR_TOL * s[0]:
        raise exc_type(f"{what} is numerically singular "
                       f"(sigma_min={s[-1]:.3e}, sigma_max={s[0]:.3e})")


def _coefficients(p: SdaeProblem, t: float, x: np.ndarray):
    fx = np.asarray(p.f(t, x), dtype=float).reshape(p.d)
    gx = np.asarray(p.g(t, x), dtype=float).reshape(p.d, p.d1)
    if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(gx))):
        raise NonFiniteCoefficient(f"f or g is non-finite at t={t}")
    return fx, gx


def _guard(x: np.ndarray, t: float) -> None:
    norm = np.linalg.norm(x)
    if not np.isfinite(norm) or norm > RHO_GUARD:
        raise Overflow(f"|X|={norm:.3e} exceeds guard radius {RHO_GUARD:.0e} at t={t}")


class _IterationSolver:
    """Row-equilibrated LU factors of ``A(t) - h B(t)``.

    Rows are scaled to unit max-norm before partial-pivoted factorization,
    so a row holding a single unit entry (e.g. a pinned boundary value) is
    pivoted on itself and reproduces its right-hand side exactly.  Factors
    are reused across steps when ``A`` and ``B`` are both constant.
    """

    def __init__(self, p: SdaeProblem, h: float):
        self.p = p
        self.h = h
        self.reuse = p.a.constant and p.b.constant
        self._cached = None

    def factor(self, t: float):
        if self.reuse and self._cached is not None:
            return self._cached
        m = self.p.a(t) - self.h * self.p.b(t)
        _check_conditioning(m, SingularIterationMatrix, f"A - hB at t={t}")
        scale = 1.0 / np.abs(m).max(axis=1)
        lu = scipy.linalg.lu_factor(scale[:, None] * m, check_finite=False)
        out = (m, scale, lu)
        if self.reuse:
            self._cached = out
        return out

    @staticmethod
    def solve(factors, rhs: np.ndarray) -> np.ndarray:
        _, scale, lu = factors
        s = scale if rhs.ndim == 1 else scale[:, None]
        return scipy.linalg.lu_solve(lu, s * rhs, check_finite=False)


def _primary(p: SdaeProblem, t: float, h: float, x: np.ndarray, dw: np.ndarray,
             solver: _IterationSolver) -> tuple[np.ndarray, float, np.ndarray]:
    fx, gx = _coefficients(p, t, x)
    factors = solver.factor(t)
    m = factors[0]
    rhs = p.a(t) @ x + h * fx + gx @ dw
    x_next = solver.solve(factors, rhs)
    _guard(x_next, t + h)
    residual = float(np.linalg.norm(m @ x_next - rhs))
    return x_next, residual, fx


def step_primary(p: SdaeProblem, t_i: float, h: float, x_i, dw) -> np.ndarray:
    """One semi-implicit Euler step; returns ``X_{i+1}``.

    Raises
    ------
    SingularIterationMatrix
        If ``A(t_i) - h B(t_i)`` is numerically singular.
    NonFiniteCoefficient
        If ``f`` or ``g`` is non-finite at ``(t_i, x_i)``.
    Overflow
        If the new state leaves the guard ball.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x_i = np.asarray(x_i, dtype=float)
    dw = np.asarray(dw, dtype=float).reshape(p.d1)
    _guard(x_i, t_i)
    return _primary(p, t_i, h, x_i, dw, _IterationSolver(p, h))[0]


class _DualOperator:
    """State-independent pieces of the dual step at time ``t``.

    ``factor(t)`` returns ``(ps, M, K_lu, drift, S, S_lu)`` with
    ``K = A + RB``, ``M = -K^{-1} R B``, ``drift = P' + A^- B`` and the
    u-system matrix ``S = I - h drift (I + M)``.  Cached across steps when
    ``A``, ``B`` and any projector override are constant.
    """

    def __init__(self, p: SdaeProblem, h: float, rank_tol: float):
        self.p = p
        self.h = h
        self.rank_tol = rank_tol
        override = p.projector_override or ()
        self.reuse = p.a.constant and p.b.constant and all(m.constant for m in override)
        self._cached = None

    def factor(self, t: float):
        if self.reuse and self._cached is not None:
            return self._cached
        p, d = self.p, self.p.d
        ps = p.projectors(t, self.rank_tol)
        b = p.b(t)
        dp = p.projector_derivative(t, rank_tol=self.rank_tol)
        rb = ps.r @ b
        k = p.a(t) + rb
        _check_conditioning(k, SingularConstraintMatrix, f"A + RB at t={t}")
        k_lu = scipy.linalg.lu_factor(k, check_finite=False)
        m = -scipy.linalg.lu_solve(k_lu, rb, check_finite=False)
        drift = dp + ps.a_pinv @ b
        system = np.eye(d) - self.h * drift @ (np.eye(d) + m)
        _check_conditioning(system, SingularIterationMatrix, f"dual u-system at t={t}")
        out = (ps, m, k_lu, drift, system, scipy.linalg.lu_factor(system, check_finite=False))
        if self.reuse:
            self._cached = out
        return out


def _dual(p: SdaeProblem, t: float, h: float, state: DualState, dw: np.ndarray,
          op: _DualOperator) -> tuple[DualState, float]:
    ps, m, k_lu, drift, system, sys_lu = op.factor(t)
    fx, gx = _coefficients(p, t, state.x)
    # v_{i+1} = m u_{i+1} + c
    c = -scipy.linalg.lu_solve(k_lu, ps.r @ fx, check_finite=False)
    rhs = state.u + h * (drift @ c) + h * (ps.a_pinv @ fx) + (ps.a_pinv @ gx) @ dw
    u_next = scipy.linalg.lu_solve(sys_lu, rhs, check_finite=False)
    residual = float(np.linalg.norm(system @ u_next - rhs))
    v_next = m @ u_next + c
    _guard(u_next + v_next, t + h)
    return DualState(u_next, v_next), residual


def step_dual(p: SdaeProblem, t_i: float, t_next: float, h: float, state, dw,
              rank_tol: float = 1e-10) -> DualState:
    """One step of the projector-split scheme.

    ``state`` is the current :class:`DualState` ``(u_i, v_i)``; a bare
    vector is taken as ``u_i`` with ``v_i = 0``.  Matrices are evaluated at
    ``t_i`` throughout, including inside the constraint that produces
    ``v_{i+1}``; ``t_next`` only labels the new state.

    Raises
    ------
    SingularConstraintMatrix
        If ``A(t_i) + R(t_i) B(t_i)`` is numerically singular.
    SingularIterationMatrix
        If the assembled system for ``u_{i+1}`` is singular.
    RankChange
        If the rank of ``A`` changes within the derivative stencil.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if not isinstance(state, DualState):
        u = np.asarray(state, dtype=float)
        state = DualState(u, np.zeros_like(u))
    dw = np.asarray(dw, dtype=float).reshape(p.d1)
    return _dual(p, t_i, h, state, dw, _DualOperator(p, h, rank_tol))[0]


def constraint_residual(p: SdaeProblem, t: float, x_next: np.ndarray, f_prev: np.ndarray,
                        r: np.ndarray | None = None) -> float:
    """``||R(t) [B(t) X_{i+1} + f(t, X_i)]||`` for one primary step."""
    if r is None:
        r = p.projectors(t).r
    return float(np.linalg.norm(r @ (p.b(t) @ x_next + f_prev)))


def initial_constraint_residual(p: SdaeProblem, rank_tol: float = 1e-10) -> float:
    """How far ``zeta`` is from satisfying ``R(0) mu(0, zeta) = 0``."""
    r = p.projectors(0.0, rank_tol).r
    return float(np.linalg.norm(r @ p.mu(0.0, p.zeta)))


def grid_times(horizon: float, n: int) -> np.ndarray:
    return np.arange(n + 1) * horizon / n


def _increments(p: SdaeProblem, n: int, path) -> np.ndarray:
    if isinstance(path, BrownianPath):
        if path.d1 != p.d1:
            raise ValueError(f"path has d1={path.d1}, problem needs {p.d1}")
        if not np.isclose(path.horizon, p.horizon, rtol=1e-14, atol=0.0):
            raise ValueError("path horizon differs from problem horizon")
        if n < 1 or path.n_fine % n:
            raise InvalidResolution(f"n={n} does not divide n_fine={path.n_fine}")
        return coarsen(path, n)
    inc = np.asarray(path, dtype=float)
    if inc.shape != (n, p.d1):
        raise ValueError(f"increments must have shape {(n, p.d1)}, got {inc.shape}")
    return inc


def integrate(p: SdaeProblem, n: int, path, scheme: Scheme = "primary",
              check_constraints: bool = True, rank_tol: float = 1e-10) -> Trajectory:
    """Run ``n`` steps of the chosen scheme on ``path`` coarsened to ``n`` steps.

    ``path`` is a :class:`BrownianPath` (with ``n | n_fine``) or an explicit
    ``(n, d1)`` increment array.  With ``check_constraints`` the primary
    scheme records the discrete constraint residual of every step.

    Errors from a step are re-raised with ``exc.step`` set to its index.
    """
    if scheme not in ("primary", "dual"):
        raise ValueError(f"unknown scheme {scheme!r}")
    inc = _increments(p, n, path)
    h = p.horizon / n
    times = grid_times(p.horizon, n)
    states = np.empty((n + 1, p.d))
    states[0] = p.zeta
    solve_res = np.zeros(n)
    notes = []
    i = 0
    try:
        _guard(p.zeta, 0.0)
        if scheme == "primary":
            constr = np.zeros(n) if check_constraints else None
            solver = _IterationSolver(p, h)
            last_rank = None
            for i in range(n):
                t = times[i]
                x_next, solve_res[i], f_prev = _primary(p, t, h, states[i], inc[i], solver)
                states[i + 1] = x_next
                if check_constraints:
                    ps = p.projectors(t, rank_tol)
                    if last_rank is not None and ps.rank != last_rank:
                        msg = f"rank of A changes from {last_rank} to {ps.rank} at t={t}"
                        warnings.warn(msg, RuntimeWarning, stacklevel=2)
                        notes.append(msg)
                    last_rank = ps.rank
                    constr[i] = constraint_residual(p, t, x_next, f_prev, ps.r)
        else:
            constr = None
            res0 = initial_constraint_residual(p, rank_tol)
            if res0 > 1e-8 * (1.0 + np.linalg.norm(p.zeta)):
                msg = f"initial state violates the t=0 constraint (residual {res0:.3e})"
                warnings.warn(msg, RuntimeWarning, stacklevel=2)
                notes.append(msg)
            ps0 = p.projectors(0.0, rank_tol)
            state = DualState(ps0.p @ p.zeta, ps0.q @ p.zeta)
            op = _DualOperator(p, h, rank_tol)
            for i in range(n):
                state, solve_res[i] = _dual(p, times[i], h, state, inc[i], op)
                states[i + 1] = state.u + state.v
    except (SdaeError, RankChange) as exc:
        exc.step = i
        exc.args = (f"step {i}: {exc.args[0] if exc.args else exc}",)
        raise
    return Trajectory(times=times, states=states, scheme=scheme, solve_residuals=solve_res,
                      constraint_residuals=constr, notes=notes)


@dataclass
class BatchResult:
    """States of many paths integrated side by side, with per-path failure flags."""

    times: np.ndarray
    states: np.ndarray
    failed: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return ~self.failed


def integrate_batch(p: SdaeProblem, n: int, increments: np.ndarray) -> BatchResult:
    """Primary scheme for ``k`` independent paths sharing one factorization per step.

    ``increments`` has shape ``(k, n, d1)``.  A path whose state becomes
    non-finite or leaves the guard ball is flagged in ``failed`` and frozen
    as NaN from then on; the others continue.  Requires ``p.vectorized``
    for speed but falls back to a per-path loop over ``f`` and ``g``.
    """
    inc = np.asarray(increments, dtype=float)
    k = inc.shape[0]
    if inc.shape[1:] != (n, p.d1):
        raise ValueError(f"increments must have shape (k, {n}, {p.d1})")
    h = p.horizon / n
    times = grid_times(p.horizon, n)
    states = np.full((k, n + 1, p.d), np.nan)
    states[:, 0] = p.zeta
    failed = np.zeros(k, dtype=bool)
    solver = _IterationSolver(p, h)
    for i in range(n):
        t = times[i]
        live = ~failed
        x = states[live, i]
        if p.vectorized:
            fx = np.asarray(p.f(t, x), dtype=float).reshape(-1, p.d)
            gx = np.asarray(p.g(t, x), dtype=float).reshape(-1, p.d, p.d1)
        else:
            fx = np.array([p.f(t, xi) for xi in x], dtype=float).reshape(-1, p.d)
            gx = np.array([p.g(t, xi) for xi in x], dtype=float).reshape(-1, p.d, p.d1)
        rhs = x @ p.a(t).T + h * fx + np.einsum("kij,kj->ki", gx, inc[live, i])
        with np.errstate(invalid="ignore", over="ignore"):
            x_next = solver.solve(solver.factor(t), rhs.T).T
            norms = np.linalg.norm(x_next, axis=1)
        bad = ~np.isfinite(norms) | (norms > RHO_GUARD)
        x_next[bad] = np.nan
        states[live, i + 1] = x_next
        idx = np.flatnonzero(live)
        failed[idx[bad]] = True
    return BatchResult(times=times, states=states, failed=failed)


def write_trajectory_csv(traj: Trajectory, filename) -> None:
    d = traj.states.shape[1]
    with Path(filename).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x_{j + 1}" for j in range(d)])
        for t, x in zip(traj.times, traj.states):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in x])


def read_trajectory_csv(filename) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(filename, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1:]

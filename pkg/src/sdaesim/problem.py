"""Problem description and structural validation.

An :class:`SdaeProblem` describes::

    A(t) dY = [B(t) Y + f(t, Y)] dt + g(t, Y) dW,    Y(0) = zeta,  t in [0, T]

with a possibly singular mass matrix ``A(t)``.  The validators check the
hypotheses the integrators rely on: noise-free constraints (index 1), a
nonvanishing constraint Jacobian, and a nonsingular iteration matrix
``A - hB``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidSpec, SdaeError
from .projectors import (
    DEFAULT_RANK_TOL,
    MatrixFn,
    ProjectorSet,
    as_matrix_fn,
    check_a13,
    compute_projectors,
    projector_derivative,
)

#: States with norm beyond this radius abort an integration.
RHO_GUARD = 1e8


@dataclass(frozen=True, eq=False)
class SdaeProblem:
    """Immutable SDAE instance.

    ``f(t, y)`` returns a length-``d`` vector and ``g(t, y)`` a ``d x d1``
    matrix.  When ``vectorized`` is true both also accept a stack of states
    of shape ``(k, d)`` and return ``(k, d)`` and ``(k, d, d1)`` respectively,
    which lets the batched integrator advance many paths at once.

    ``projector_override`` replaces the Moore-Penrose choice of
    ``(A^-, P, R)`` by user-supplied matrix functions.
    """

    d: int
    d1: int
    horizon: float
    a: MatrixFn
    b: MatrixFn
    f: Callable[[float, np.ndarray], np.ndarray]
    g: Callable[[float, np.ndarray], np.ndarray]
    zeta: np.ndarray
    projector_override: Optional[tuple[MatrixFn, MatrixFn, MatrixFn]] = None
    vectorized: bool = False
    name: str = "custom"
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "a", as_matrix_fn(self.a))
        object.__setattr__(self, "b", as_matrix_fn(self.b))
        zeta = np.array(self.zeta, dtype=float).reshape(-1)
        zeta.setflags(write=False)
        object.__setattr__(self, "zeta", zeta)
        if self.projector_override is not None:
            object.__setattr__(self, "projector_override",
                               tuple(as_matrix_fn(m) for m in self.projector_override))
        if not (0 < self.horizon < np.inf):
            raise InvalidSpec(f"horizon must be positive and finite, got {self.horizon}")
        if self.d < 1 or self.d1 < 1:
            raise InvalidSpec("dimensions must be positive")
        if zeta.shape != (self.d,):
            raise InvalidSpec(f"zeta has length {zeta.size}, expected {self.d}")

    def mu(self, t: float, y: np.ndarray) -> np.ndarray:
        """Total drift ``B(t) y + f(t, y)``."""
        return self.b(t) @ y + np.asarray(self.f(t, y), dtype=float)

    def projectors(self, t: float, rank_tol: float = DEFAULT_RANK_TOL) -> ProjectorSet:
        base = compute_projectors(self.a, t, rank_tol)
        if self.projector_override is None:
            return base
        a_pinv, p, r = (np.asarray(m(t), dtype=float) for m in self.projector_override)
        return ProjectorSet(t=float(t), a_pinv=a_pinv, p=p, q=np.eye(self.d) - p, r=r,
                            rank=base.rank, sigma_max=base.sigma_max, rank_tol=rank_tol)

    def projector_derivative(self, t: float, fd_step: float | None = None,
                             rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
        if self.projector_override is None:
            return projector_derivative(self.a, t, fd_step, rank_tol)
        p_fn = self.projector_override[1]
        if p_fn.constant and self.a.constant:
            return np.zeros((self.d, self.d))
        return projector_derivative(self.a, t, fd_step, rank_tol,
                                    projector_fn=lambda s: np.asarray(p_fn(s), dtype=float))


def _as_list(x):
    return [x] if np.ndim(x) == 0 else list(x)


def check_index1(p: SdaeProblem, sample_times: Sequence[float],
                 sample_states: Sequence[np.ndarray], tol: float = 1e-10,
                 rank_tol: float = DEFAULT_RANK_TOL) -> tuple[bool, float]:
    """Check that the noise does not enter the constraints.

    Returns ``(passed, worst)`` where ``worst`` is the largest normalized
    residual ``||R(t) g(t, Y)|| / (1 + ||g(t, Y)||)`` over all samples.
    """
    sample_times = _as_list(sample_times)
    if not sample_times or len(sample_states) == 0:
        raise ValueError("samples must be nonempty")
    worst = 0.0
    for t in sample_times:
        r = p.projectors(t, rank_tol).r
        for y in sample_states:
            gy = np.asarray(p.g(t, np.asarray(y, dtype=float)), dtype=float).reshape(p.d, -1)
            res = np.linalg.norm(r @ gy) / (1.0 + np.linalg.norm(gy))
            worst = max(worst, float(res))
    return worst <= tol, worst


def drift_jacobian(p: SdaeProblem, t: float, y: np.ndarray) -> np.ndarray:
    """``d mu / dY`` with ``B(t)`` added exactly and ``f`` differenced centrally."""
    y = np.asarray(y, dtype=float)
    step = 1e-6 * (1.0 + np.linalg.norm(y))
    shifts = step * np.eye(p.d)
    if p.vectorized:
        jac_f = (np.asarray(p.f(t, y + shifts)) - np.asarray(p.f(t, y - shifts))).T / (2 * step)
    else:
        jac_f = np.column_stack([
            (np.asarray(p.f(t, y + e)) - np.asarray(p.f(t, y - e))) / (2 * step) for e in shifts
        ])
    return p.b(t) + jac_f


@dataclass
class JacobianSummary:
    passed: bool
    min_abs_det: float
    min_log_abs_det: float
    max_log_abs_det: float
    signs: set


def _jacobian_summary(p, sample_times, sample_states, tol, rank_tol) -> JacobianSummary:
    sample_times = _as_list(sample_times)
    if not sample_times or len(sample_states) == 0:
        raise ValueError("samples must be nonempty")
    logs, signs = [], set()
    for t in sample_times:
        ps = p.projectors(t, rank_tol)
        a = p.a(t)
        for y in sample_states:
            jac = a + ps.r @ drift_jacobian(p, t, y)
            sign, logdet = np.linalg.slogdet(jac)
            signs.add(float(sign))
            logs.append(float(logdet))
    lo, hi = min(logs), max(logs)
    passed = 0.0 not in signs and len(signs) == 1 and lo >= np.log(tol)
    with np.errstate(over="ignore"):
        min_abs = float(np.exp(lo))
    return JacobianSummary(passed=passed, min_abs_det=min_abs,
                           min_log_abs_det=lo, max_log_abs_det=hi, signs=signs)


def check_jacobian(p: SdaeProblem, sample_times: Sequence[float],
                   sample_states: Sequence[np.ndarray], tol: float = 1e-10,
                   rank_tol: float = DEFAULT_RANK_TOL) -> tuple[bool, float]:
    """Sampled check that ``J = A + R mu_Y`` is invertible with constant sign.

    Determinants go through ``slogdet`` so large systems do not overflow; the
    returned minimum may still be ``inf`` when it exceeds double range.
    """
    s = _jacobian_summary(p, sample_times, sample_states, tol, rank_tol)
    return s.passed, s.min_abs_det


def check_iteration_matrix(p: SdaeProblem, h: float, sample_times: Sequence[float],
                           tol: float = 1e-10) -> tuple[bool, float]:
    """Smallest singular value of ``A(t) - h B(t)`` over the sample times."""
    if h <= 0:
        raise ValueError("h must be positive")
    sigma = min(
        float(np.linalg.svd(p.a(t) - h * p.b(t), compute_uv=False)[-1])
        for t in _as_list(sample_times)
    )
    return sigma >= tol, sigma


@dataclass
class ValidationConfig:
    n_times: int = 11
    n_perturbations: int = 20
    perturbation_std: float = 1.0
    seed: int = 0
    n_steps: int = 64
    index1_tol: float = 1e-10
    jacobian_tol: float = 1e-10
    iteration_tol: float = 1e-10
    a13_tol: float = 1e-6
    rank_tol: float = DEFAULT_RANK_TOL


@dataclass
class ValidationReport:
    index1_ok: bool
    index1_residual: float
    jacobian_ok: bool
    jacobian_min_abs_det: float
    iteration_matrix_ok: bool
    iteration_min_sigma: float
    a13_ok: bool
    a13_max_derivative: float
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.index1_ok and self.jacobian_ok and self.iteration_matrix_ok and self.a13_ok

    def lines(self) -> list[str]:
        def flag(ok):
            return "PASS" if ok else "FAIL"
        out = [
            f"index1            {flag(self.index1_ok)}  worst residual {self.index1_residual:.3e}",
            f"jacobian          {flag(self.jacobian_ok)}  min |det J| {self.jacobian_min_abs_det:.6e}",
            f"iteration matrix  {flag(self.iteration_matrix_ok)}  min sigma {self.iteration_min_sigma:.6e}",
            f"a13               {flag(self.a13_ok)}  max ||P'|| {self.a13_max_derivative:.3e}",
        ]
        out.extend(f"note: {n}" for n in self.notes)
        return out

    def __str__(self):
        return "\n".join(self.lines())


def default_samples(p: SdaeProblem, config: ValidationConfig):
    times = list(np.linspace(0.0, p.horizon, config.n_times))
    rng = np.random.default_rng(config.seed)
    perturbed = p.zeta + config.perturbation_std * rng.standard_normal((config.n_perturbations, p.d))
    states = [np.array(p.zeta)] + list(perturbed)
    return times, states


def validate(p: SdaeProblem, config: ValidationConfig | None = None) -> ValidationReport:
    """Run all structural checks; failures are recorded, never raised."""
    config = config or ValidationConfig()
    times, states = default_samples(p, config)
    notes = [f"{len(times)} times x {len(states)} states sampled"]
    nan = float("nan")

    def guarded(label, fn, default):
        try:
            return fn()
        except (SdaeError, np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            notes.append(f"{label} check raised {type(exc).__name__}: {exc}")
            return default

    idx_ok, idx_res = guarded("index1", lambda: check_index1(
        p, times, states, config.index1_tol, config.rank_tol), (False, nan))
    jac = guarded("jacobian", lambda: _jacobian_summary(
        p, times, states, config.jacobian_tol, config.rank_tol), None)
    if jac is None:
        jac_ok, jac_det = False, nan
    else:
        jac_ok, jac_det = jac.passed, jac.min_abs_det
        notes.append(f"log|det J| spread [{jac.min_log_abs_det:.6g}, {jac.max_log_abs_det:.6g}], "
                     f"signs {sorted(jac.signs)}")
    h = p.horizon / config.n_steps
    it_ok, it_sigma = guarded("iteration matrix", lambda: check_iteration_matrix(
        p, h, times, config.iteration_tol), (False, nan))
    a13 = guarded("a13", lambda: check_a13(p.a, times, config.a13_tol, config.rank_tol), None)
    if a13 is None:
        a13_ok, a13_max = False, nan
    else:
        a13_ok, a13_max = a13.passed, a13.max_derivative_norm
        if a13.notes:
            notes.append(a13.notes)
    return ValidationReport(idx_ok, idx_res, jac_ok, jac_det, it_ok, it_sigma,
                            a13_ok, a13_max, notes)

"""Pseudo-inverse and projector construction for (possibly singular) matrices.

For a matrix function ``A(t)`` this module builds the Moore-Penrose inverse
``A^-`` and the projectors::

    P = A^- A        (onto the dynamic subspace, Ker P = Ker A)
    Q = I - P        (onto Ker A)
    R = I - A A^-    (along Im A, so that R A = 0)

All quantities come from one SVD of ``A(t)``, so ``P`` and ``R`` are
orthogonal projectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteMatrix, RankChange

DEFAULT_RANK_TOL = 1e-10


class MatrixFn:
    """A pure map ``t -> d x d`` matrix.

    Parameters
    ----------
    fn : callable or array_like
        Either a callable of one float argument or a constant matrix.
    constant : bool, optional
        Declare that ``fn(t)`` does not depend on ``t``.  Constant functions
        get their projectors cached and a zero projector derivative.
    """

    def __init__(self, fn, constant: bool = False):
        if callable(fn):
            self._fn = fn
            self._value = None
        else:
            value = np.array(fn, dtype=float)
            if value.ndim != 2:
                raise ValueError("constant matrix must be two-dimensional")
            value.setflags(write=False)
            self._fn = None
            self._value = value
            constant = True
        self.constant = constant
        self._projector_cache: dict[float, ProjectorSet] = {}

    def __call__(self, t: float) -> np.ndarray:
        if self._value is not None:
            return self._value
        return np.asarray(self._fn(t), dtype=float)

    def __repr__(self):
        kind = "constant" if self.constant else "time-varying"
        return f"MatrixFn({kind})"


def as_matrix_fn(obj) -> MatrixFn:
    if isinstance(obj, MatrixFn):
        return obj
    return MatrixFn(obj)


@dataclass(frozen=True)
class ProjectorSet:
    """Generalized inverse and projectors of ``A(t)`` at a single time."""

    t: float
    a_pinv: np.ndarray
    p: np.ndarray
    q: np.ndarray
    r: np.ndarray
    rank: int
    sigma_max: float = 0.0
    rank_tol: float = DEFAULT_RANK_TOL

    @property
    def d(self) -> int:
        return self.p.shape[0]

    @property
    def tol(self) -> float:
        """Invariant tolerance: ``rank_tol * sigma_max * d``."""
        return self.rank_tol * self.sigma_max * self.d

    def residuals(self, a: np.ndarray) -> dict[str, float]:
        """Norms of every defect in the projector identities against ``a``."""
        eye = np.eye(self.d)
        ap = self.a_pinv
        return {
            "p_idempotent": float(np.linalg.norm(self.p @ self.p - self.p)),
            "r_idempotent": float(np.linalg.norm(self.r @ self.r - self.r)),
            "q_complement": float(np.linalg.norm(self.q - (eye - self.p))),
            "r_annihilates_a": float(np.linalg.norm(self.r @ a)),
            "pinv_a_is_p": float(np.linalg.norm(ap @ a - self.p)),
            "a_pinv_is_i_minus_r": float(np.linalg.norm(a @ ap - (eye - self.r))),
            "pinv_reflexive": float(np.linalg.norm(ap @ a @ ap - ap)),
            "a_reflexive": float(np.linalg.norm(a @ ap @ a - a)),
        }

    def check(self, a: np.ndarray, tol: float | None = None) -> dict[str, bool]:
        tol = self.tol if tol is None else tol
        return {k: v <= tol for k, v in self.residuals(a).items()}


def _projectors_from_matrix(a: np.ndarray, t: float, rank_tol: float) -> ProjectorSet:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteMatrix(f"A({t}) has non-finite entries")
    d = a.shape[0]
    u, s, vt = np.linalg.svd(a)
    sigma_max = float(s[0]) if d else 0.0
    rank = int(np.count_nonzero(s > rank_tol * sigma_max)) if sigma_max > 0 else 0
    ur = u[:, :rank]
    vr = vt[:rank].T
    a_pinv = (vr / s[:rank]) @ ur.T
    eye = np.eye(d)
    p = vr @ vr.T
    r = eye - ur @ ur.T
    if rank == d:
        # Full rank: projectors are exact, not rounded outer products.
        p = eye.copy()
        r = np.zeros((d, d))
    elif rank == 0:
        p = np.zeros((d, d))
        r = eye.copy()
    q = eye - p
    for m in (a_pinv, p, q, r):
        m.setflags(write=False)
    return ProjectorSet(t=float(t), a_pinv=a_pinv, p=p, q=q, r=r, rank=rank,
                        sigma_max=sigma_max, rank_tol=rank_tol)


def compute_projectors(a, t: float, rank_tol: float = DEFAULT_RANK_TOL) -> ProjectorSet:
    """Moore-Penrose inverse and projectors of ``a(t)`` via the SVD.

    The numerical rank counts singular values above ``rank_tol * sigma_max``.

    Raises
    ------
    NonFiniteMatrix
        If ``a(t)`` contains NaN or infinity.
    """
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    a = as_matrix_fn(a)
    if a.constant:
        cached = a._projector_cache.get(rank_tol)
        if cached is None:
            cached = _projectors_from_matrix(a(t), 0.0, rank_tol)
            a._projector_cache[rank_tol] = cached
        return ProjectorSet(t=float(t), a_pinv=cached.a_pinv, p=cached.p, q=cached.q,
                            r=cached.r, rank=cached.rank, sigma_max=cached.sigma_max,
                            rank_tol=rank_tol)
    return _projectors_from_matrix(a(t), t, rank_tol)


def default_fd_step(t: float) -> float:
    return 1e-6 * max(1.0, abs(t))


def projector_derivative(a, t: float, fd_step: float | None = None,
                         rank_tol: float = DEFAULT_RANK_TOL,
                         projector_fn: Callable[[float], np.ndarray] | None = None) -> np.ndarray:
    """Finite-difference approximation of ``P'(t)``.

    Central differences are used when ``t - fd_step >= 0``, otherwise a
    forward difference.  ``projector_fn`` lets callers substitute their own
    ``P(t)`` (e.g. a user override); rank checks still use ``a``.

    Raises
    ------
    RankChange
        If the numerical rank of ``a`` differs between the stencil points.
    """
    a = as_matrix_fn(a)
    h = default_fd_step(t) if fd_step is None else fd_step
    if h <= 0:
        raise ValueError("fd_step must be positive")
    if a.constant and projector_fn is None:
        d = a(t).shape[0]
        return np.zeros((d, d))

    central = t - h >= 0
    stencil = [t - h, t + h] if central else [t, t + h]
    sets = {s: compute_projectors(a, s, rank_tol) for s in {t, *stencil}}
    ranks = {s: ps.rank for s, ps in sets.items()}
    if len(set(ranks.values())) > 1:
        raise RankChange(f"rank of A changes near t={t}: {sorted(ranks.items())}")

    def proj(s):
        return projector_fn(s) if projector_fn is not None else sets[s].p

    lo, hi = stencil
    return (proj(hi) - proj(lo)) / (hi - lo)


@dataclass
class A13Report:
    """Diagnostic for the constant-projector assumption ``P'(t) = 0``."""

    max_derivative_norm: float
    passed: bool
    constant_rank: bool
    ranks: list[int] = field(default_factory=list)
    notes: str = ""


def check_a13(a, sample_times: Sequence[float], tol: float = 1e-6,
              rank_tol: float = DEFAULT_RANK_TOL,
              fd_step: float | None = None) -> A13Report:
    """Sample ``||P'(t)||`` over ``sample_times``; never raises on rank changes."""
    if len(sample_times) == 0:
        raise ValueError("sample_times must be nonempty")
    a = as_matrix_fn(a)
    ranks = [compute_projectors(a, t, rank_tol).rank for t in sample_times]
    worst = 0.0
    notes = []
    for t in sample_times:
        try:
            dp = projector_derivative(a, t, fd_step, rank_tol)
        except RankChange as exc:
            worst = np.inf
            notes.append(str(exc))
            continue
        worst = max(worst, float(np.linalg.norm(dp)))
    constant_rank = len(set(ranks)) == 1
    if not constant_rank:
        notes.append(f"rank varies over samples: {sorted(set(ranks))}")
    passed = constant_rank and worst <= tol
    return A13Report(max_derivative_norm=worst, passed=passed, constant_rank=constant_rank,
                     ranks=ranks, notes="; ".join(notes))

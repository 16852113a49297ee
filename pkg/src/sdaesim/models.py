"""Ready-made problems.

``example3d``
    A three-dimensional index-1 SDAE with time-dependent singular mass
    matrix, cubic drift and multiplicative noise.
``build_heat2d``
    A porous-medium diffusion problem on ``[0, 2]^2`` discretized by finite
    differences, whose mass matrix ``diag(phi)`` is singular wherever the
    porosity vanishes.

Both register a linear/nonlinear drift split ``B Y + f(t, Y)`` chosen so the
iteration matrix ``A - hB`` is invertible for every step size in ``(0, 1)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import InvalidSpec
from .problem import SdaeProblem
from .projectors import MatrixFn

SQRT2 = np.sqrt(2.0)


def _example3d_a(t: float) -> np.ndarray:
    return np.array([[1.0, 0.0, 0.0],
                     [-1.0, 0.0, t * t + 1.0],
                     [0.0, 0.0, 0.0]])


# linear part of the drift (-y1, y1 + y3, y1 + y2 + y3)
_EXAMPLE3D_B = np.array([[-1.0, 0.0, 0.0],
                         [1.0, 0.0, 1.0],
                         [1.0, 1.0, 1.0]])


def _example3d_f(t, y):
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        c = y[0] ** 3
        return np.array([-c, c, 0.0])
    cube = y[..., 0] ** 3
    return np.stack([-cube, cube, np.zeros_like(cube)], axis=-1)


def _example3d_g(t, y):
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y1, y2, y3 = y
        s = SQRT2 * y1 * y1
        return np.array([[s, 0.0, 0.0], [-s + y2, y1 + y3, y1], [0.0, 0.0, 0.0]])
    y1, y2, y3 = y[..., 0], y[..., 1], y[..., 2]
    s = SQRT2 * y1 * y1
    zero = np.zeros_like(y1)
    rows = [
        np.stack([s, zero, zero], axis=-1),
        np.stack([-s + y2, y1 + y3, y1], axis=-1),
        np.stack([zero, zero, zero], axis=-1),
    ]
    return np.stack(rows, axis=-2)


def example3d_full_drift(t, y):
    """The drift as originally posed, ``mu = (-y1 - y1^3, y1 + y1^3 + y3, y1 + y2 + y3)``."""
    y = np.asarray(y, dtype=float)
    y1, y2, y3 = y[..., 0], y[..., 1], y[..., 2]
    return np.stack([-y1 - y1**3, y1 + y1**3 + y3, y1 + y2 + y3], axis=-1)


def example3d(horizon: float = 1.0, zeta=(1.0, -2.0, 1.0)) -> SdaeProblem:
    """Three-dimensional index-1 SDAE with ``A(t) = [[1,0,0],[-1,0,t^2+1],[0,0,0]]``.

    The whole drift is originally written inside ``f`` with no linear part,
    which would leave ``A - hB = A`` singular.  Here the linear terms are
    moved into ``B``::

        B = [[-1, 0, 0], [1, 0, 1], [1, 1, 1]],   f = (-y1^3, y1^3, 0)

    so that ``det(A - hB) = h (1 + h)(1 + t^2)``.
    """
    b = _EXAMPLE3D_B.copy()
    b.setflags(write=False)
    return SdaeProblem(
        d=3, d1=3, horizon=horizon,
        a=MatrixFn(_example3d_a),
        b=MatrixFn(b),
        f=_example3d_f, g=_example3d_g,
        zeta=np.asarray(zeta, dtype=float),
        vectorized=True,
        name="example3d",
        description="B carries the linear drift (-y1; y1+y3; y1+y2+y3); f keeps the cubic terms",
    )


@dataclass
class PorosityField:
    """Nodal porosity on the ``(m+1) x (m+1)`` grid; row index is y, column index is x."""

    m: int
    phi: np.ndarray

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        if self.phi.shape != (self.m + 1, self.m + 1):
            raise InvalidSpec(f"porosity grid must be {(self.m + 1,) * 2}, got {self.phi.shape}")
        if not np.all((self.phi >= 0) & (self.phi <= 1)):
            raise InvalidSpec("porosity values must lie in [0, 1]")

    def flat(self) -> np.ndarray:
        return self.phi.reshape(-1)


# impermeable blocks as (x_lo, x_hi, y_lo, y_hi) on [0, 2]^2
DEFAULT_BLOCKS = (
    (0.5, 0.9, 0.4, 0.8),
    (1.1, 1.5, 1.2, 1.6),
    (1.2, 1.6, 0.3, 0.6),
)


def default_porosity(m: int) -> PorosityField:
    """Unit porosity with three rectangular zero-porosity inclusions in the interior."""
    if m < 8:
        raise InvalidSpec("default porosity needs m >= 8")
    coords = np.linspace(0.0, 2.0, m + 1)
    phi = np.ones((m + 1, m + 1))
    eps = 1e-12
    for x0, x1, y0, y1 in DEFAULT_BLOCKS:
        xs = (coords >= x0 - eps) & (coords <= x1 + eps)
        ys = (coords >= y0 - eps) & (coords <= y1 + eps)
        phi[np.ix_(ys, xs)] = 0.0
    return PorosityField(m, phi)


def write_porosity_csv(field_: PorosityField, filename) -> None:
    with Path(filename).open("w", newline="") as fh:
        fh.write(f"{field_.m}\n")
        w = csv.writer(fh)
        for row in field_.phi:
            w.writerow([f"{v:.17g}" for v in row])


def read_porosity_csv(filename) -> PorosityField:
    with Path(filename).open() as fh:
        m = int(fh.readline().strip())
        rows = [[float(v) for v in rec] for rec in csv.reader(fh) if rec]
    return PorosityField(m, np.array(rows))


@dataclass
class Heat2dSpec:
    m: int = 20
    diffusion: float = 100.0
    noise_amp: float = 1e-4
    porosity: PorosityField | None = None
    horizon: float = 1.0

    def __post_init__(self):
        if self.m < 4:
            raise InvalidSpec("m must be at least 4")
        if not self.diffusion > 0:
            raise InvalidSpec("diffusion must be positive")
        if not self.noise_amp >= 0:
            raise InvalidSpec("noise_amp must be nonnegative")
        if not self.horizon > 0:
            raise InvalidSpec("horizon must be positive")
        if self.porosity is None:
            self.porosity = default_porosity(self.m)
        elif self.porosity.m != self.m:
            raise InvalidSpec(f"porosity grid has m={self.porosity.m}, spec has m={self.m}")


def node_index(m: int, ix: int, iy: int) -> int:
    return iy * (m + 1) + ix


def laplacian_2d(m: int, spacing: float) -> np.ndarray:
    """Five-point Laplacian with homogeneous Neumann sides at x=2, y=0, y=2.

    Rows of the Dirichlet column ``x = 0`` are left zero; the caller decides
    how to treat them.  Missing neighbours across a Neumann side are replaced
    by their mirror image inside the domain.
    """
    n = m + 1
    lap = np.zeros((n * n, n * n))
    inv = 1.0 / spacing**2
    for iy in range(n):
        for ix in range(1, n):
            j = node_index(m, ix, iy)
            lap[j, j] -= 4.0 * inv
            east = ix + 1 if ix < m else ix - 1
            north = iy + 1 if iy < m else iy - 1
            south = iy - 1 if iy > 0 else iy + 1
            for kx, ky in ((ix - 1, iy), (east, iy), (ix, north), (ix, south)):
                lap[j, node_index(m, kx, ky)] += inv
    return lap


def build_heat2d(spec: Heat2dSpec | None = None) -> SdaeProblem:
    """Porous-medium diffusion ``diag(phi) dY = [D L Y + f] dt + g dW``.

    Unknowns are nodal values in row-major order (``y`` major).  On the
    Dirichlet column ``x = 0`` the row is ``dY = 0`` with unit mass and
    ``Y(0) = 1``, which keeps the boundary value for all time; elsewhere
    ``f = Y - phi`` and ``g = noise_amp * diag(phi)``.  Nodes with
    ``phi = 0`` become algebraic rows ``D (L Y)_j + Y_j = 0``.
    """
    spec = spec or Heat2dSpec()
    m = spec.m
    n = m + 1
    d = n * n
    phi = spec.porosity.flat().copy()
    dirichlet = np.zeros(d, dtype=bool)
    dirichlet[[node_index(m, 0, iy) for iy in range(n)]] = True
    free = ~dirichlet

    mass = np.where(dirichlet, 1.0, phi)
    a = np.diag(mass)
    b = spec.diffusion * laplacian_2d(m, 2.0 / m)
    b[dirichlet] = 0.0
    noise_diag = np.where(dirichlet, 0.0, spec.noise_amp * phi)
    g_mat = np.diag(noise_diag)
    zeta = np.where(dirichlet, 1.0, 0.0)
    for arr in (a, b, g_mat, phi, free, noise_diag):
        arr.setflags(write=False)

    def f(t, y):
        y = np.asarray(y, dtype=float)
        return np.where(free, y - phi, 0.0)

    def g(t, y):
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            return g_mat
        return np.broadcast_to(g_mat, y.shape[:-1] + g_mat.shape)

    return SdaeProblem(
        d=d, d1=d, horizon=spec.horizon,
        a=MatrixFn(a), b=MatrixFn(b), f=f, g=g, zeta=zeta,
        vectorized=True,
        name="heat2d",
        description=(f"m={m}, D={spec.diffusion}, noise_amp={spec.noise_amp}, "
                     f"{int(np.sum(phi[free] == 0))} algebraic nodes"),
    )


def grid_values(state: np.ndarray, m: int) -> np.ndarray:
    """Reshape a heat2d state vector into its ``(m+1) x (m+1)`` grid."""
    return np.asarray(state).reshape(m + 1, m + 1)


def write_grid_csv(grid: np.ndarray, filename) -> None:
    with Path(filename).open("w", newline="") as fh:
        w = csv.writer(fh)
        for row in grid:
            w.writerow([f"{v:.17g}" for v in row])


def read_grid_csv(filename) -> np.ndarray:
    return np.loadtxt(filename, delimiter=",", ndmin=2)


def ornstein_uhlenbeck(sigma: float = 1.0, horizon: float = 1.0, y0: float = 1.0) -> SdaeProblem:
    """Scalar ``dY = -Y dt + sigma dW`` with identity mass, as a nonsingular control case."""
    return SdaeProblem(
        d=1, d1=1, horizon=horizon,
        a=MatrixFn(np.eye(1)), b=MatrixFn(-np.eye(1)),
        f=lambda t, y: np.zeros_like(np.asarray(y, dtype=float)),
        g=lambda t, y: np.full(np.shape(y)[:-1] + (1, 1), sigma),
        zeta=[y0], vectorized=True, name="ou",
    )


def broken_index1() -> SdaeProblem:
    """Negative control: noise drives the algebraic row, so the problem is not index 1."""
    return SdaeProblem(
        d=2, d1=1, horizon=1.0,
        a=MatrixFn(np.diag([1.0, 0.0])), b=MatrixFn(-np.eye(2)),
        f=lambda t, y: np.zeros_like(np.asarray(y, dtype=float)),
        g=lambda t, y: np.broadcast_to(np.array([[0.0], [1.0]]), np.shape(y)[:-1] + (2, 1)),
        zeta=[0.0, 0.0], vectorized=True, name="broken",
    )


MODELS: dict[str, Callable[..., SdaeProblem]] = {
    "example3d": example3d,
    "heat2d": lambda **kw: build_heat2d(Heat2dSpec(**kw)),
    "ou": ornstein_uhlenbeck,
    "broken": broken_index1,
}


def get_model(name: str, **kwargs) -> SdaeProblem:
    try:
        factory = MODELS[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return factory(**kwargs)

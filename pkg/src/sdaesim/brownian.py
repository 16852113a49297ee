"""Seeded Brownian increments on a dyadic grid, with exact coarsening.

Every increment is addressed by ``(seed, step, component)``.  Entry
``e = step * d1 + component`` consumes the ``e``-th 64-bit word of the
Philox4x64 stream keyed by ``seed``, which is mapped to a standard normal
through the inverse normal CDF.  Any sub-range of steps can therefore be
regenerated on its own and agrees bit-for-bit with the full path.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .errors import InvalidResolution

_WORDS_PER_BLOCK = 4


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def standard_normals(seed: int, start: int, stop: int) -> np.ndarray:
    """Standard normals for flat entry indices ``start <= e < stop``."""
    if stop <= start:
        return np.empty(0)
    gen = np.random.Philox(key=int(seed) & 0xFFFFFFFFFFFFFFFF)
    first_block = start // _WORDS_PER_BLOCK
    gen.advance(first_block)
    offset = start - first_block * _WORDS_PER_BLOCK
    words = gen.random_raw(offset + stop - start)[offset:]
    # 53-bit midpoint uniforms, strictly inside (0, 1)
    u = ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """Wiener increments ``W(t_{i+1}) - W(t_i)`` on ``n_fine`` equal steps."""

    seed: int
    horizon: float
    n_fine: int
    d1: int
    increments: np.ndarray

    @property
    def dt(self) -> float:
        return self.horizon / self.n_fine

    def total(self) -> np.ndarray:
        return self.coarsen(1)[0]

    def coarsen(self, n_coarse: int) -> np.ndarray:
        return coarsen(self, n_coarse)


def generate(seed: int, horizon: float, n_fine: int, d1: int) -> BrownianPath:
    if not _is_power_of_two(n_fine):
        raise InvalidResolution(f"n_fine={n_fine} is not a power of two")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if d1 < 1:
        raise ValueError("d1 must be at least 1")
    z = standard_normals(seed, 0, n_fine * d1).reshape(n_fine, d1)
    inc = np.sqrt(horizon / n_fine) * z
    inc.setflags(write=False)
    return BrownianPath(seed=int(seed), horizon=float(horizon), n_fine=n_fine, d1=d1,
                        increments=inc)


def generate_steps(seed: int, horizon: float, n_fine: int, d1: int,
                   start: int, stop: int) -> np.ndarray:
    """Increments for fine steps ``start..stop-1`` only, identical to the full path's rows."""
    if not _is_power_of_two(n_fine):
        raise InvalidResolution(f"n_fine={n_fine} is not a power of two")
    if not 0 <= start <= stop <= n_fine:
        raise ValueError("step range out of bounds")
    z = standard_normals(seed, start * d1, stop * d1).reshape(stop - start, d1)
    return np.sqrt(horizon / n_fine) * z


def coarsen(path, n_coarse: int) -> np.ndarray:
    """Sum fine increments over consecutive blocks of ``n_fine / n_coarse`` steps.

    ``path`` is a :class:`BrownianPath` or an ``(n, d1)`` increment array.
    Blocks are reduced by repeated pairwise halving (neighbours ``2k`` and
    ``2k+1``), so coarsening in stages gives bit-identical results to
    coarsening in one go.
    """
    inc = path.increments if isinstance(path, BrownianPath) else np.asarray(path, dtype=float)
    n_fine = inc.shape[0]
    if n_coarse < 1 or n_fine % n_coarse or not _is_power_of_two(n_fine // n_coarse):
        raise InvalidResolution(f"n_coarse={n_coarse} does not divide n_fine={n_fine}")
    out = np.array(inc, copy=True)
    while out.shape[0] > n_coarse:
        out = out[0::2] + out[1::2]
    return out


def write_csv(path: BrownianPath, filename) -> None:
    with Path(filename).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "component", "increment"])
        for i, row in enumerate(path.increments):
            for j, x in enumerate(row):
                w.writerow([i, j, repr(float(x))])


def read_csv(filename, seed: int, horizon: float) -> BrownianPath:
    rows = []
    with Path(filename).open() as fh:
        r = csv.DictReader(fh)
        for rec in r:
            rows.append((int(rec["step"]), int(rec["component"]), float(rec["increment"])))
    n_fine = max(r[0] for r in rows) + 1
    d1 = max(r[1] for r in rows) + 1
    inc = np.zeros((n_fine, d1))
    for i, j, x in rows:
        inc[i, j] = x
    inc.setflags(write=False)
    return BrownianPath(seed=seed, horizon=horizon, n_fine=n_fine, d1=d1, increments=inc)

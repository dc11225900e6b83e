"""Model-based baseline: OMP over an angle-delay dictionary plus geometric inversion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .channel import SPEED_OF_LIGHT, ArrayGeometry, BsConfig


@dataclass
class Dictionary:
    """Separable angle-delay dictionary.

    Atom (g_theta, g_tau) is the row-major flattening of
    a(theta) f(tau)^T / sqrt(n_ant n_subc) with f_k(tau) = exp(-j 2 pi k df tau),
    k = 1..n_subc.  Only the two factor matrices are stored; ``atoms``
    materializes the full matrix for small problems.
    """

    angle_grid: np.ndarray
    delay_grid: np.ndarray
    steer: np.ndarray  # (n_ant, G_theta)
    freq: np.ndarray  # (n_subc, G_tau)

    @property
    def n_ant(self) -> int:
        return self.steer.shape[0]

    @property
    def n_subc(self) -> int:
        return self.freq.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.angle_grid), len(self.delay_grid)

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.n_ant * self.n_subc)

    def atom(self, g_theta: int, g_tau: int) -> np.ndarray:
        return np.outer(self.steer[:, g_theta], self.freq[:, g_tau]).ravel() * self.scale

    @property
    def atoms(self) -> np.ndarray:
        """(n_ant * n_subc, G_theta * G_tau), column index g_theta * G_tau + g_tau."""
        full = np.einsum("ag,kh->akgh", self.steer, self.freq) * self.scale
        return full.reshape(self.n_ant * self.n_subc, -1)

    def correlate(self, residual: np.ndarray) -> np.ndarray:
        """Inner products of every atom with a residual matrix, shape (G_theta, G_tau)."""
        return self.steer.conj().T @ residual @ self.freq.conj() * self.scale


def build_dictionary(geom: ArrayGeometry, config: BsConfig, n_subc: int,
                     g_theta: int = 181, g_tau: int | None = None,
                     angle_grid: np.ndarray | None = None,
                     delay_grid: np.ndarray | None = None) -> Dictionary:
    """Default grids: uniform in sin(theta) over [-1, 1] and uniform delay over [0, 1/df)."""
    df = config.subcarrier_spacing(n_subc)
    if angle_grid is None:
        angle_grid = np.arcsin(np.linspace(-1.0, 1.0, g_theta))
    if delay_grid is None:
        g_tau = 2 * n_subc if g_tau is None else g_tau
        delay_grid = np.arange(g_tau) / (g_tau * df)
    angle_grid = np.asarray(angle_grid, dtype=np.float64)
    delay_grid = np.asarray(delay_grid, dtype=np.float64)
    n = np.arange(geom.n_ant)[:, None]
    k = np.arange(1, n_subc + 1)[:, None]
    steer = np.exp(-2j * math.pi * (geom.spacing / geom.wavelength) * n * np.sin(angle_grid)[None, :])
    freq = np.exp(-2j * math.pi * df * k * delay_grid[None, :])
    return Dictionary(angle_grid, delay_grid, steer, freq)


class PathEstimate(NamedTuple):
    theta: float
    tau: float
    gain: complex


class OmpResult(NamedTuple):
    support: list[tuple[int, int]]
    gains: np.ndarray
    residual_norms: list[float]


def omp_solve(cfr: np.ndarray, d: Dictionary, k_paths: int, rank_tol: float = 1e-10) -> OmpResult:
    """Greedy atom selection with a least-squares refit after each pick.

    Stops early if the residual vanishes or a new atom makes the selected
    set numerically rank deficient.
    """
    n_atoms = d.shape[0] * d.shape[1]
    if not 1 <= k_paths <= n_atoms:
        raise ValueError(f"k_paths must lie in [1, {n_atoms}], got {k_paths}")
    y = np.asarray(cfr, dtype=np.complex128).ravel()
    residual = y.copy()
    norms = [float(np.linalg.norm(residual))]
    support: list[tuple[int, int]] = []
    cols: list[np.ndarray] = []
    gains = np.zeros(0, dtype=np.complex128)
    y_norm = norms[0]
    for _ in range(k_paths):
        if norms[-1] <= 1e-13 * max(y_norm, 1e-300):
            break
        corr = np.abs(d.correlate(residual.reshape(d.n_ant, d.n_subc)))
        g = np.unravel_index(int(np.argmax(corr)), corr.shape)
        a = d.atom(*g)
        trial = np.column_stack(cols + [a])
        sv = np.linalg.svd(trial, compute_uv=False)
        if sv[-1] <= rank_tol * sv[0]:
            break
        support.append((int(g[0]), int(g[1])))
        cols.append(a)
        gains, *_ = np.linalg.lstsq(trial, y, rcond=None)
        residual = y - trial @ gains
        norms.append(float(np.linalg.norm(residual)))
    return OmpResult(support, gains, norms)


def omp_estimate(cfr: np.ndarray, d: Dictionary, k_paths: int) -> list[PathEstimate]:
    """Recovered paths sorted by |gain| descending.

    Gains refer to unit-norm atoms; divide by sqrt(n_ant n_subc) for the
    physical path amplitude.
    """
    res = omp_solve(cfr, d, k_paths)
    paths = [
        PathEstimate(float(d.angle_grid[i]), float(d.delay_grid[j]), complex(g))
        for (i, j), g in zip(res.support, res.gains)
    ]
    return sorted(paths, key=lambda p: -abs(p.gain))


def localize_from_toa_aoa(theta: float, tau: float, geom: ArrayGeometry) -> np.ndarray:
    """Invert the ULA label convention: p = p_bs + c tau (sin theta, cos theta)."""
    if tau <= 0:
        raise ValueError(f"ToA must be positive, got {tau}")
    dist = SPEED_OF_LIGHT * tau
    return np.asarray(geom.bs_position, dtype=np.float64) + dist * np.array([math.sin(theta), math.cos(theta)])


def first_arrival(paths: Sequence[PathEstimate]) -> PathEstimate:
    """The earliest recovered path, taken as the LoS estimate."""
    if not paths:
        raise ValueError("no paths recovered")
    return min(paths, key=lambda p: p.tau)


def omp_localize(cfr: np.ndarray, d: Dictionary, geom: ArrayGeometry, k_paths: int = 3) -> np.ndarray:
    los = first_arrival(omp_estimate(cfr, d, k_paths))
    # a zero-delay grid point cannot be inverted; nudge to half a delay step
    tau = los.tau if los.tau > 0 else float(d.delay_grid[1] - d.delay_grid[0]) / 2
    return localize_from_toa_aoa(los.theta, tau, geom)


def multi_bs_average(estimates: Sequence) -> np.ndarray:
    if len(estimates) == 0:
        raise ValueError("no estimates to average")
    return np.mean(np.asarray(estimates, dtype=np.float64), axis=0)

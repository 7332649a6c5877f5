"""Ergodic mutual information over fading channels.

With the exponential surrogate, averaging over an SNR density f reduces to
Laplace transforms of f evaluated at the decay rates:

    E[I] = log2(M) * (1 - sum_i a_i L_f(b_i)),  L_f(s) = int exp(-s g) f(g) dg

:func:`ergodic_mi_numeric` integrates any MI curve against f directly and
serves as the independent check of that identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import gammainc, gammaincc, gammainccinv, gammaln

from .constellation import Constellation
from .errors import DomainError
from .exact_mi import DEFAULT_QUADRATURE, QuadratureSpec, SnrGrid, _map_points, mi_quadrature
from .medcf import EdcfModel, eval_edcf

TAIL_MASS = 1e-8
PDF_NORM_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class FadingModel:
    """SNR distribution: ``rayleigh``, ``nakagami`` or ``tabulated``.

    Use the :meth:`rayleigh`, :meth:`nakagami` and :meth:`tabulated`
    constructors. Tabulated densities are linear between their samples and
    zero outside them.
    """

    kind: str
    mean_snr: float
    m: float = 1.0
    gamma: Optional[np.ndarray] = None
    density: Optional[np.ndarray] = None

    @classmethod
    def rayleigh(cls, mean_snr: float) -> "FadingModel":
        return cls("rayleigh", _check_mean(mean_snr), 1.0)

    @classmethod
    def nakagami(cls, m: float, mean_snr: float) -> "FadingModel":
        m = float(m)
        if not (math.isfinite(m) and m >= 0.5):
            raise DomainError(f"Nakagami m must be >= 0.5, got {m!r}")
        return cls("nakagami", _check_mean(mean_snr), m)

    @classmethod
    def tabulated(cls, gamma, density) -> "FadingModel":
        g = np.array(gamma, dtype=float).ravel()
        f = np.array(density, dtype=float).ravel()
        if len(g) != len(f) or len(g) < 2:
            raise DomainError("need matching abscissae and densities (at least two)")
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(f))):
            raise DomainError("tabulated pdf must be finite")
        if g[0] < 0 or np.any(np.diff(g) <= 0):
            raise DomainError("tabulated abscissae must be nonnegative and increasing")
        if np.any(f < 0):
            raise DomainError("tabulated densities must be nonnegative")
        mass = float(np.trapezoid(f, g))
        if abs(mass - 1.0) > PDF_NORM_TOL:
            raise DomainError(f"tabulated pdf integrates to {mass!r}, not 1")
        g.setflags(write=False)
        f.setflags(write=False)
        mean = float(np.sum(np.diff(g) * (f[:-1] * (2 * g[:-1] + g[1:]) + f[1:] * (g[:-1] + 2 * g[1:])) / 6.0))
        return cls("tabulated", mean, float("nan"), g, f)

    @property
    def _rayleigh_like(self) -> bool:
        # Nakagami-1 shares the Rayleigh code path so the two agree bitwise
        return self.kind == "rayleigh" or (self.kind == "nakagami" and self.m == 1.0)

    def pdf(self, gamma):
        g = np.asarray(gamma, dtype=float)
        if self.kind == "tabulated":
            return np.interp(g, self.gamma, self.density, left=0.0, right=0.0)
        if self._rayleigh_like:
            return np.where(g < 0, 0.0, np.exp(-g / self.mean_snr) / self.mean_snr)
        m, mu = self.m, self.mean_snr
        with np.errstate(divide="ignore"):
            logf = m * math.log(m / mu) - gammaln(m) + (m - 1) * np.log(g) - m * g / mu
        return np.where(g < 0, 0.0, np.exp(logf))

    def sqrt_density(self, u):
        """Density of sqrt(gamma): 2 u f(u^2); finite at u = 0 for m >= 0.5."""
        u = np.asarray(u, dtype=float)
        if self._rayleigh_like:
            return 2.0 * u * np.exp(-u * u / self.mean_snr) / self.mean_snr
        if self.kind == "tabulated":
            return 2.0 * u * self.pdf(u * u)
        m, mu = self.m, self.mean_snr
        c = math.log(2.0) + m * math.log(m / mu) - gammaln(m)
        return np.exp(c - m * u * u / mu) * np.power(u, 2.0 * m - 1.0)

    def survival(self, gamma: float) -> float:
        """P(SNR > gamma)."""
        g = max(float(gamma), 0.0)
        if self.kind == "tabulated":
            if g >= self.gamma[-1]:
                return 0.0
            gg = np.concatenate([[g], self.gamma[self.gamma > g]])
            return float(np.trapezoid(self.pdf(gg), gg))
        if self._rayleigh_like:
            return math.exp(-g / self.mean_snr)
        return float(gammaincc(self.m, self.m * g / self.mean_snr))

    def cdf(self, gamma: float) -> float:
        g = max(float(gamma), 0.0)
        if self.kind == "nakagami" and not self._rayleigh_like:
            return float(gammainc(self.m, self.m * g / self.mean_snr))
        return 1.0 - self.survival(g)

    def tail_extent(self, mass: float = TAIL_MASS) -> float:
        """Smallest SNR with at most ``mass`` probability above it."""
        if self.kind == "tabulated":
            return float(self.gamma[-1])
        if self._rayleigh_like:
            return -self.mean_snr * math.log(mass)
        return float(gammainccinv(self.m, mass)) * self.mean_snr / self.m


def _check_mean(mean_snr) -> float:
    mu = float(mean_snr)
    if not (math.isfinite(mu) and mu > 0):
        raise DomainError(f"mean SNR must be positive and finite, got {mean_snr!r}")
    return mu


@dataclass(frozen=True)
class ErgodicResult:
    value: float
    method: str
    error_estimate: Optional[float] = None


def _phi1(z):
    # (1 - e^-z) / z
    z = np.asarray(z, dtype=float)
    small = z < 1e-8
    zs = np.where(small, 1.0, z)
    return np.where(small, 1.0 - z / 2.0, -np.expm1(-zs) / zs)


def _phi2(z):
    # int_0^1 t e^{-z t} dt = (1 - (1 + z) e^-z) / z^2
    z = np.asarray(z, dtype=float)
    small = z < 1e-3
    zs = np.where(small, 1.0, z)
    series = 0.5 - z / 3.0 + z * z / 8.0 - z**3 / 30.0
    exact = (-np.expm1(-zs) - zs * np.exp(-zs)) / (zs * zs)
    return np.where(small, series, exact)


def laplace_of_pdf(f: FadingModel, s: float) -> float:
    """E[exp(-s * SNR)] for ``s >= 0``."""
    s = float(s)
    if not s >= 0 or not math.isfinite(s):
        raise DomainError(f"Laplace argument must be finite and >= 0, got {s!r}")
    if f._rayleigh_like:
        return 1.0 / (1.0 + s * f.mean_snr)
    if f.kind == "nakagami":
        return (1.0 + s * f.mean_snr / f.m) ** (-f.m)
    # exact transform of the piecewise-linear density
    g, d = f.gamma, f.density
    h = np.diff(g)
    z = s * h
    left = d[:-1]
    seg = np.exp(-s * g[:-1]) * h * (left * _phi1(z) + (d[1:] - left) * _phi2(z))
    return float(np.sum(seg))


def ergodic_mi_closed(model: EdcfModel, f: FadingModel) -> ErgodicResult:
    """Surrogate ergodic MI through the Laplace-transform identity."""
    tail = math.fsum(a * laplace_of_pdf(f, b) for a, b in zip(model.a, model.b))
    return ErgodicResult(math.log2(model.order) * (1.0 - tail), "closed-form", None)


# -- numeric oracle ---------------------------------------------------------------

def surrogate_source(model: EdcfModel) -> Callable:
    return lambda g: eval_edcf(model, g)


def exact_source(c: Constellation, q: Optional[QuadratureSpec] = None, workers=None) -> Callable:
    q = q or DEFAULT_QUADRATURE

    def source(g):
        g = np.asarray(g, dtype=float)
        return np.array(_map_points(lambda j, x: mi_quadrature(c, x, q), g.ravel(), workers)).reshape(g.shape)

    return source


def _romberg(fn, edges, tol, min_levels, max_levels):
    """Composite trapezoid over ``edges`` with Richardson extrapolation."""
    edges = np.asarray(edges, dtype=float)
    width = np.diff(edges)
    vals = fn(edges)
    trap = float(np.sum(width * (vals[:-1] + vals[1:]) / 2.0))
    rows = [[trap]]
    h = width
    for level in range(1, max_levels + 1):
        npanel = 2 ** (level - 1)
        # midpoints of the current subpanels inside every original panel
        offs = (np.arange(npanel) + 0.5) / npanel
        mids = (edges[:-1, None] + width[:, None] * offs[None, :]).ravel()
        h = width / npanel
        mid_sum = float(np.sum(fn(mids).reshape(len(width), npanel).sum(axis=1) * h))
        trap = 0.5 * trap + 0.5 * mid_sum
        row = [trap]
        for j in range(1, level + 1):
            row.append(row[j - 1] + (row[j - 1] - rows[-1][j - 1]) / (4.0**j - 1.0))
        err = abs(row[-1] - rows[-1][-1])
        rows.append(row)
        if level >= min_levels and err <= tol:
            return row[-1], err
    return rows[-1][-1], err


def ergodic_mi_numeric(
    curve_source: Callable,
    f: FadingModel,
    grid: Optional[SnrGrid] = None,
    tol: float = 1e-10,
    max_levels: int = 12,
) -> ErgodicResult:
    """Integrate ``curve_source(gamma) * f(gamma)`` over the SNR axis.

    ``curve_source`` maps an array of linear SNRs to MI in bits (see
    :func:`surrogate_source` and :func:`exact_source`). ``grid`` supplies
    the initial panel boundaries; its top must reach the point beyond
    which f holds less than 1e-8 of its mass. Analytic densities are
    integrated in ``u = sqrt(gamma)``, which keeps the Nakagami
    ``m < 1`` integrand bounded. The error estimate is the change between
    the last two refinement levels.
    """
    need = f.tail_extent(TAIL_MASS)
    if f.kind == "tabulated":
        edges = np.asarray(f.gamma)
        if grid is not None and grid.values[-1] < need:
            raise DomainError(f"integration grid must extend to at least gamma={need!r}")

        def integrand(g):
            return np.asarray(curve_source(g), dtype=float) * f.pdf(g)

    else:
        if grid is None:
            top = f.tail_extent(1e-14)
            edges = np.linspace(0.0, math.sqrt(top), 65)
        else:
            if grid.values[-1] < need:
                raise DomainError(
                    f"integration grid must extend to at least gamma={need!r} "
                    f"(tail mass {TAIL_MASS:g}); top is {grid.values[-1]!r}"
                )
            edges = np.sqrt(grid.values)
            if edges[0] > 0:
                edges = np.concatenate([[0.0], edges])

        def integrand(u):
            u = np.asarray(u, dtype=float)
            return np.asarray(curve_source(u * u), dtype=float) * f.sqrt_density(u)

    value, err = _romberg(integrand, edges, tol, min_levels=2, max_levels=max_levels)
    return ErgodicResult(float(value), "numeric", float(err))

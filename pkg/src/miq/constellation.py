"""Finite input alphabets: square M-QAM and L-PAM with symbol priors.

All constellations are normalized to unit average symbol energy, so the
linear SNR ``gamma`` used throughout the package is Es/N0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, InvalidOrderError

_TOL = 1e-12


def _readonly(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


def _pam_levels(levels: int) -> np.ndarray:
    """Equispaced odd-integer levels -(L-1), ..., L-1 (unnormalized)."""
    return np.arange(-(levels - 1), levels, 2, dtype=float)


@dataclass(frozen=True, eq=False)
class Constellation:
    """Input alphabet with explicit priors.

    Parameters
    ----------
    order : int
        Number of symbols M.
    points : array_like of complex, shape (M,)
        Signal points, unit average energy under ``priors``.
    priors : array_like of float, shape (M,)
        Symbol probabilities.
    """

    order: int
    points: np.ndarray
    priors: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=complex).ravel()
        priors = np.asarray(self.priors, dtype=float).ravel()
        object.__setattr__(self, "points", _readonly(points))
        object.__setattr__(self, "priors", _readonly(priors))
        self._validate()

    def _validate(self):
        m = self.order
        if not isinstance(m, (int, np.integer)) or m < 1:
            raise InvalidOrderError(f"order must be a positive integer, got {m!r}")
        if len(self.points) != m or len(self.priors) != m:
            raise DomainError(
                f"expected {m} points and priors, got {len(self.points)} and {len(self.priors)}"
            )
        if not (np.all(np.isfinite(self.points)) and np.all(np.isfinite(self.priors))):
            raise DomainError("points and priors must be finite")
        if np.any(self.priors < 0):
            raise DomainError("priors must be nonnegative")
        if abs(self.priors.sum() - 1.0) > _TOL:
            raise DomainError(f"priors sum to {self.priors.sum()!r}, not 1")
        energy = float(np.dot(self.priors, np.abs(self.points) ** 2))
        if abs(energy - 1.0) > _TOL:
            raise DomainError(f"average symbol energy is {energy!r}, not 1")
        if len(np.unique(self.points)) != m:
            raise DomainError("constellation points must be distinct")

    @property
    def bits(self) -> float:
        return float(np.log2(self.order))

    @property
    def is_real(self) -> bool:
        return bool(np.all(self.points.imag == 0.0))

    def product_factors(self) -> Optional[tuple]:
        """Split into independent in-phase and quadrature PAM factors.

        Returns ``(i_levels, i_priors, q_levels, q_priors)`` when the
        points form a full rectangular grid and the priors factor as an
        outer product, otherwise ``None``. Real constellations return
        ``None``; they are already one-dimensional.
        """
        if self.is_real:
            return None
        re = np.unique(self.points.real)
        im = np.unique(self.points.imag)
        if len(re) * len(im) != self.order:
            return None
        ia = np.searchsorted(re, self.points.real)
        qa = np.searchsorted(im, self.points.imag)
        # distinct points filling an L1 x L2 grid occupy every cell once
        joint = np.zeros((len(re), len(im)))
        joint[ia, qa] = self.priors
        pi = joint.sum(axis=1)
        pq = joint.sum(axis=0)
        if not np.allclose(joint, np.outer(pi, pq), rtol=0.0, atol=_TOL):
            return None
        return re, pi, im, pq

    def to_json(self) -> dict:
        return {
            "order": int(self.order),
            "points": [[float(z.real), float(z.imag)] for z in self.points],
            "priors": [float(p) for p in self.priors],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Constellation":
        pts = [complex(re, im) for re, im in data["points"]]
        return cls(int(data["order"]), pts, data["priors"])


def _is_power_of(n, base):
    if n < 1:
        return False
    while n % base == 0:
        n //= base
    return n == 1


def build_pam(levels: int) -> Constellation:
    """Real equispaced L-PAM with uniform priors and unit average energy."""
    if not isinstance(levels, (int, np.integer)) or levels < 2 or not _is_power_of(levels, 2):
        raise InvalidOrderError(f"PAM needs a power of 2 >= 2 levels, got {levels!r}")
    x = _pam_levels(levels)
    x = x / np.sqrt(np.mean(x**2))
    return Constellation(int(levels), x.astype(complex), np.full(levels, 1.0 / levels))


def build_qam(order: int) -> Constellation:
    """Square M-QAM with uniform priors and unit average energy.

    Points are listed row-major over the grid: the in-phase level is the
    outer (slow) index and the quadrature level the inner one, both
    ascending.
    """
    if not isinstance(order, (int, np.integer)) or order < 4 or not _is_power_of(order, 4):
        raise InvalidOrderError(f"square QAM needs a power of 4 >= 4, got {order!r}")
    side = int(round(np.sqrt(order)))
    lev = _pam_levels(side)
    # mean |x|^2 of the unnormalized grid is 2 * (L^2 - 1) / 3
    scale = np.sqrt(2.0 * np.mean(lev**2))
    i, q = np.meshgrid(lev, lev, indexing="ij")
    pts = (i + 1j * q).ravel() / scale
    return Constellation(int(order), pts, np.full(order, 1.0 / order))

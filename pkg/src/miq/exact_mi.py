"""Exact mutual information of a finite constellation over complex AWGN.

Channel model: ``y = x + n`` with ``n`` circularly-symmetric complex
Gaussian, ``E|n|^2 = 1/gamma`` (variance ``1/(2 gamma)`` per real
dimension). Real constellations only see the in-phase noise component.

For every transmitted symbol ``x_k`` the integrand

    -log sum_i p_i p(y|x_i) / p(y|x_k)

is a log-sum-exp of functions that are affine in the standardized noise.
It is smooth but has sharp transitions where two of those affine pieces
cross, which defeats a plain Gauss-Hermite rule at moderate SNR. The
default ``"panel"`` rule therefore integrates against the Gaussian density
with composite Gauss-Legendre panels split exactly at the upper-envelope
breakpoints. Rectangular-grid constellations with product priors (every
square QAM) are reduced to two one-dimensional problems; anything else
falls back to a tensor Gauss-Hermite rule.
"""

from __future__ import annotations

import io
import math
import os
from functools import lru_cache
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .constellation import Constellation
from .errors import ConfigError, DomainError

LOG2E = 1.0 / math.log(2.0)

# standardized-noise half-width; the Gaussian mass beyond it is ~1e-23
_T_MAX = 10.0
_PANEL_WIDTH = 1.0

MC_MIN_SAMPLES = 1000


@dataclass(frozen=True)
class QuadratureSpec:
    """Quadrature settings.

    ``nodes_per_dim`` is the Gauss-Legendre order per panel for the
    ``"panel"`` rule and the Gauss-Hermite order per dimension for the
    ``"hermite"`` rule (and for the two-dimensional fallback).
    ``factorize=False`` forces complex constellations through the
    two-dimensional tensor rule even when they are separable.
    """

    nodes_per_dim: int = 64
    rule: str = "panel"
    factorize: bool = True

    def __post_init__(self):
        if int(self.nodes_per_dim) != self.nodes_per_dim or self.nodes_per_dim < 8:
            raise ConfigError(f"nodes_per_dim must be an integer >= 8, got {self.nodes_per_dim!r}")
        if self.rule not in ("panel", "hermite"):
            raise ConfigError(f"unknown quadrature rule {self.rule!r}")


DEFAULT_QUADRATURE = QuadratureSpec()


class SnrGrid:
    """Strictly increasing grid of linear SNR values (Es/N0)."""

    __slots__ = ("values", "_db")

    def __init__(self, values):
        v = np.array(values, dtype=float).ravel()
        if v.size == 0:
            raise DomainError("SNR grid is empty")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise DomainError("SNR grid values must be finite and >= 0")
        if np.any(np.diff(v) <= 0):
            raise DomainError("SNR grid must be strictly increasing")
        v.setflags(write=False)
        self.values = v
        self._db = None

    @classmethod
    def from_db(cls, start_db: float, stop_db: float, step_db: float) -> "SnrGrid":
        """Inclusive dB range; the endpoint is kept when it lies on the step lattice."""
        if step_db <= 0:
            raise DomainError("step must be positive")
        if stop_db < start_db:
            raise DomainError("stop must not be below start")
        n = int(math.floor((stop_db - start_db) / step_db + 1e-9)) + 1
        db = np.round(start_db + step_db * np.arange(n), 10)
        grid = cls(db_to_linear(db))
        # keep the exact dB labels rather than round-tripping through log10
        db.setflags(write=False)
        grid._db = db
        return grid

    @property
    def db(self) -> np.ndarray:
        return self._db if self._db is not None else linear_to_db(self.values)

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __eq__(self, other):
        return isinstance(other, SnrGrid) and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"SnrGrid({len(self)} points, {self.values[0]:g}..{self.values[-1]:g})"


def db_to_linear(db):
    return np.power(10.0, np.asarray(db, dtype=float) / 10.0)


def linear_to_db(gamma):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(gamma, dtype=float))


@dataclass(frozen=True, eq=False)
class MiCurve:
    """Sampled MI curve of one modulation order (bits per symbol)."""

    snr: SnrGrid
    mi: np.ndarray
    order: int

    def __post_init__(self):
        mi = np.array(self.mi, dtype=float).ravel()
        if len(mi) != len(self.snr):
            raise DomainError(f"{len(mi)} MI values for {len(self.snr)} grid points")
        mi.setflags(write=False)
        object.__setattr__(self, "mi", mi)

    def check(self, tol: float = 1e-9):
        """Raise DomainError unless MI is within bounds and nondecreasing."""
        top = math.log2(self.order)
        if np.any(self.mi < -tol) or np.any(self.mi > top + tol):
            raise DomainError(f"MI outside [0, {top}]")
        if np.any(np.diff(self.mi) < -tol):
            raise DomainError("MI curve is not nondecreasing")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("gamma_linear,gamma_db,mi_bits\n")
        for g, d, m in zip(self.snr.values, self.snr.db, self.mi):
            buf.write(f"{float(g)!r},{float(d)!r},{float(m)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, order: int) -> "MiCurve":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != "gamma_linear,gamma_db,mi_bits":
            raise DomainError("missing MI curve CSV header")
        try:
            rows = np.array([[float(x) for x in ln.split(",")[:3]] for ln in lines[1:]], dtype=float)
        except ValueError as exc:
            raise DomainError(f"malformed MI curve CSV: {exc}") from None
        if rows.shape[0] == 0 or rows.shape[1] != 3:
            raise DomainError("MI curve CSV needs three columns and at least one row")
        grid = SnrGrid(rows[:, 0])
        db = rows[:, 1].copy()
        db.setflags(write=False)
        grid._db = db
        return cls(grid, rows[:, 2], order)


def _check_gamma(gamma) -> float:
    try:
        g = float(gamma)
    except (TypeError, ValueError):
        raise DomainError(f"SNR must be a number, got {gamma!r}") from None
    if not math.isfinite(g):
        raise DomainError(f"SNR must be finite, got {g!r}")
    if g < 0:
        raise DomainError(f"SNR must be >= 0, got {g!r}")
    return g


# -- one-dimensional engine ---------------------------------------------------

def _envelope_breaks(alpha, beta):
    """Breakpoints of max_i(alpha_i + beta_i t), ascending."""
    hull = []
    for j in np.lexsort((alpha, beta)):
        if hull and beta[hull[-1]] == beta[j]:
            # equal slopes: lexsort put the larger intercept last
            hull.pop()
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # b is dominated if a meets j no later than a meets b
            if (alpha[a] - alpha[j]) * (beta[b] - beta[a]) <= (alpha[a] - alpha[b]) * (beta[j] - beta[a]):
                hull.pop()
            else:
                break
        hull.append(j)
    return np.array(
        [(alpha[a] - alpha[b]) / (beta[b] - beta[a]) for a, b in zip(hull, hull[1:])]
    )


@lru_cache(maxsize=None)
def _legendre(n):
    return np.polynomial.legendre.leggauss(n)


def _panel_nodes(breaks, n):
    edges = [-_T_MAX]
    inner = breaks[(breaks > -_T_MAX) & (breaks < _T_MAX)]
    for x in list(inner) + [_T_MAX]:
        lo = edges[-1]
        if x <= lo:
            continue
        k = max(1, int(math.ceil((x - lo) / _PANEL_WIDTH)))
        edges.extend(np.linspace(lo, x, k + 1)[1:])
    edges = np.asarray(edges)
    u, w = _legendre(n)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    t = (lo + hi) * 0.5 + half * u
    wt = half * w * np.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)
    return t.ravel(), wt.ravel()


@lru_cache(maxsize=None)
def _hermite_nodes(n):
    x, w = np.polynomial.hermite.hermgauss(n)
    return math.sqrt(2.0) * x, w / math.sqrt(math.pi)


def _mi_real(levels, priors, sigma, q: QuadratureSpec) -> float:
    """MI in nats of real levels with real Gaussian noise of std ``sigma``."""
    levels = np.asarray(levels, dtype=float)
    priors = np.asarray(priors, dtype=float)
    keep = priors > 0
    levels, priors = levels[keep], priors[keep]
    logp = np.log(priors)
    entropy = -float(np.dot(priors, logp))
    if q.rule == "hermite":
        t_h, w_h = _hermite_nodes(q.nodes_per_dim)
    loss = 0.0
    for k in range(len(levels)):
        d = levels[k] - levels
        # log p_i + log p(y|x_i)/p(y|x_k), affine in the standardized noise t
        alpha = logp - d * d / (2.0 * sigma * sigma)
        beta = -d / sigma
        if q.rule == "hermite":
            t, w = t_h, w_h
        else:
            t, w = _panel_nodes(_envelope_breaks(alpha, beta), q.nodes_per_dim)
        lse = logsumexp(alpha[:, None] + beta[:, None] * t[None, :], axis=0)
        # lse >= log p_k; the excess is the per-symbol equivocation
        loss += priors[k] * float(np.dot(w, lse - logp[k]))
    return entropy - loss


def _mi_complex_tensor(c: Constellation, gamma, q: QuadratureSpec) -> float:
    """MI in nats via a tensor Gauss-Hermite rule over both noise dimensions."""
    t, w = _hermite_nodes(q.nodes_per_dim)
    t1, t2 = (a.ravel() for a in np.meshgrid(t, t, indexing="ij"))
    w12 = np.outer(w, w).ravel()
    keep = c.priors > 0
    pts, pri = c.points[keep], c.priors[keep]
    logp = np.log(pri)
    entropy = -float(np.dot(pri, logp))
    sigma = 1.0 / math.sqrt(2.0 * gamma)
    loss = 0.0
    for k in range(len(pts)):
        d = pts[k] - pts
        alpha = logp - np.abs(d) ** 2 / (2.0 * sigma * sigma)
        expo = alpha[:, None] - (d.real[:, None] * t1 + d.imag[:, None] * t2) / sigma
        loss += pri[k] * float(np.dot(w12, logsumexp(expo, axis=0) - logp[k]))
    return entropy - loss


def mi_quadrature(c: Constellation, gamma: float, q: Optional[QuadratureSpec] = None) -> float:
    """Mutual information I(X;Y) in bits at linear SNR ``gamma``.

    Returns exactly 0 at ``gamma == 0``; the result is clamped to
    ``[0, log2 M]``.
    """
    g = _check_gamma(gamma)
    if g == 0.0:
        return 0.0
    q = q or DEFAULT_QUADRATURE
    sigma = 1.0 / math.sqrt(2.0 * g)
    if c.is_real:
        nats = _mi_real(c.points.real, c.priors, sigma, q)
    else:
        factors = c.product_factors() if q.factorize else None
        if factors is not None:
            re, pi, im, pq = factors
            nats = _mi_real(re, pi, sigma, q) + _mi_real(im, pq, sigma, q)
        else:
            nats = _mi_complex_tensor(c, g, q)
    return min(max(nats * LOG2E, 0.0), c.bits)


# -- Monte Carlo ---------------------------------------------------------------

def _chunk_size(order):
    # fixed per order so results never depend on anything but the seed
    return max(1024, (1 << 22) // max(order, 1))


# terms whose weight relative to the transmitted symbol is below e^-40 for
# every sample of a chunk cannot change a double-precision sum
_NEGLIGIBLE = -40.0


def _grouped_values(points, logp, sym, z_re, z_im, gamma, out):
    """Add per-sample -log2 sum_i p_i p(y|x_i)/p(y|x_k) into ``out``.

    The exponent of term i never exceeds log p_i + |z|^2 / 2, so the sum
    is formed without a max shift. Samples are processed grouped by the
    drawn symbol (stable radix sort on the symbol index).
    """
    s = math.sqrt(2.0 * gamma)
    order = np.argsort(sym.astype(np.uint16), kind="stable")
    bounds = np.searchsorted(sym[order], np.arange(len(points) + 1))
    vals = np.empty(len(sym))
    for k in range(len(points)):
        lo, hi = bounds[k], bounds[k + 1]
        if lo == hi:
            continue
        sel = order[lo:hi]
        d = points[k] - points
        base = logp - gamma * np.abs(d) ** 2
        zr = z_re[sel]
        zi = None if z_im is None else z_im[sel]
        zmax = np.abs(zr).max() if zi is None else np.sqrt(zr * zr + zi * zi).max()
        keep = base - logp[k] + s * np.abs(d) * zmax > _NEGLIGIBLE
        keep[k] = True
        d, base = d[keep], base[keep]
        expo = np.multiply.outer(-s * d.real, zr)
        if zi is not None:
            expo -= np.multiply.outer(s * d.imag, zi)
        expo += base[:, None]
        np.exp(expo, out=expo)
        vals[lo:hi] = np.log(expo.sum(axis=0))
    out[order] -= vals * LOG2E


def _sampler(c: Constellation):
    uniform = bool(np.all(c.priors == c.priors[0]))
    cdf = np.cumsum(c.priors)
    cdf[-1] = 1.0

    def draw(rng, n):
        if uniform:
            return rng.integers(0, c.order, size=n)
        return np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), c.order - 1)

    return draw


def mi_monte_carlo(
    c: Constellation,
    gamma: float,
    samples: int,
    seed,
    factorize: bool = True,
) -> tuple:
    """Monte Carlo estimate of I(X;Y) in bits and its standard error.

    Draws ``samples`` (symbol, noise) pairs from a generator seeded with
    ``seed`` (an int or a ``numpy.random.SeedSequence``); the same seed
    always returns the same pair of floats. For separable constellations
    the per-sample integrand is evaluated as the sum of its in-phase and
    quadrature parts, which is an exact identity and cheaper.
    """
    g = _check_gamma(gamma)
    samples = int(samples)
    if samples < MC_MIN_SAMPLES:
        raise ConfigError(f"need at least {MC_MIN_SAMPLES} samples, got {samples}")
    if g == 0.0:
        return 0.0, 0.0
    rng = np.random.default_rng(seed)
    draw = _sampler(c)
    factors = None if c.is_real or not factorize else c.product_factors()
    with np.errstate(divide="ignore"):
        logp = np.log(c.priors)
    if factors is not None:
        re, pi, im, pq = factors
        with np.errstate(divide="ignore"):
            lpi, lpq = np.log(pi), np.log(pq)
        ia = np.searchsorted(re, c.points.real)
        qa = np.searchsorted(im, c.points.imag)

    chunk = _chunk_size(c.order)
    count, mean, m2 = 0, 0.0, 0.0
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        sym = draw(rng, n)
        z = rng.standard_normal((2, n))
        v = np.zeros(n)
        if factors is not None:
            _grouped_values(re, lpi, ia[sym], z[0], None, g, v)
            _grouped_values(im, lpq, qa[sym], z[1], None, g, v)
        else:
            _grouped_values(c.points, logp, sym, z[0], None if c.is_real else z[1], g, v)
        # merge chunk statistics (Chan et al.)
        cm = float(v.mean())
        cm2 = float(np.sum((v - cm) ** 2))
        tot = count + n
        delta = cm - mean
        mean += delta * n / tot
        m2 += cm2 + delta * delta * count * n / tot
        count = tot
        done += n
    std_err = math.sqrt(m2 / (count - 1)) / math.sqrt(count)
    return mean, std_err


def point_seed(seed: int, index: int) -> np.random.SeedSequence:
    """Independent, schedule-free seed for grid point ``index``."""
    return np.random.SeedSequence([int(seed), int(index)])


# -- curves ---------------------------------------------------------------------

def thread_count() -> int:
    """Worker cap from ``MIQ_THREADS`` (default 1)."""
    raw = os.environ.get("MIQ_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"MIQ_THREADS must be an integer, got {raw!r}") from None


def _map_points(fn: Callable, values: Sequence[float], workers: Optional[int]):
    workers = thread_count() if workers is None else max(1, int(workers))
    idx = range(len(values))

    def one(j):
        try:
            return fn(j, values[j])
        except DomainError as exc:
            raise DomainError(f"at gamma={float(values[j])!r}: {exc}") from exc
        except (ArithmeticError, ValueError) as exc:
            raise DomainError(f"at gamma={float(values[j])!r}: {exc}") from exc

    if workers == 1:
        return [one(j) for j in idx]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, idx))


def mi_curve(
    c: Constellation,
    grid: SnrGrid,
    q: Optional[QuadratureSpec] = None,
    workers: Optional[int] = None,
) -> MiCurve:
    """Quadrature MI at every grid point; parallel and sequential runs agree bitwise."""
    q = q or DEFAULT_QUADRATURE
    mi = _map_points(lambda j, g: mi_quadrature(c, g, q), grid.values, workers)
    return MiCurve(grid, mi, c.order)


def mi_curve_monte_carlo(
    c: Constellation,
    grid: SnrGrid,
    samples: int,
    seed: int,
    workers: Optional[int] = None,
) -> tuple:
    """Monte Carlo curve with per-point derived seeds; returns (MiCurve, std_errs)."""
    res = _map_points(
        lambda j, g: mi_monte_carlo(c, g, samples, point_seed(seed, j)), grid.values, workers
    )
    est = [r[0] for r in res]
    err = np.array([r[1] for r in res])
    return MiCurve(grid, est, c.order), err

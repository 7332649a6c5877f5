"""Levenberg-Marquardt fitting of the multi-exponential surrogate.

Internal parameters are unconstrained reals:

* weight logits ``w_1..w_{N-1}`` (``w_N`` pinned to 0), ``a = softmax(w)``,
  so the weights are positive and sum to one by construction;
* log decay rates ``c_1..c_N`` with ``b = exp(c)``.

A single-term model has no weight parameters (``a = 1``). Global search is
a seeded multi-start over a Latin hypercube of initial points.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DomainError, NonConvergenceError, NumericalError
from .exact_mi import MiCurve, SnrGrid, thread_count
from .medcf import EdcfModel, rmse

LOG_B_RANGE = (math.log(1e-3), math.log(10.0))
LOGIT_RANGE = (-2.0, 2.0)

DAMPING_START = 1e-3
DAMPING_DOWN = 0.5
DAMPING_UP = 4.0
MAX_REJECTIONS = 10
# a stalled run counts as converged at a stationary point or an exact fit
STALL_COSINE = 1e-6
STALL_RMS = 1e-13
_DAMPING_BOUNDS = (1e-15, 1e15)


@dataclass(frozen=True)
class FitConfig:
    n_terms: int = 2
    grid: Optional[SnrGrid] = None
    multistarts: int = 64
    max_lm_iterations: int = 2000
    gradient_tolerance: float = 1e-10
    step_tolerance: float = 1e-12
    seed: int = 1

    def __post_init__(self):
        if int(self.n_terms) != self.n_terms or self.n_terms < 1:
            raise ConfigError(f"n_terms must be a positive integer, got {self.n_terms!r}")
        if int(self.multistarts) != self.multistarts or self.multistarts < 1:
            raise ConfigError(f"multistarts must be >= 1, got {self.multistarts!r}")
        if self.max_lm_iterations < 1:
            raise ConfigError("max_lm_iterations must be >= 1")
        if not (self.gradient_tolerance > 0 and self.step_tolerance > 0):
            raise ConfigError("tolerances must be positive")
        if self.grid is not None and len(self.grid) < 2 * self.n_terms + 1:
            raise ConfigError(
                f"{len(self.grid)} grid points cannot identify {self.n_terms} terms "
                f"(need at least {2 * self.n_terms + 1})"
            )


@dataclass(frozen=True)
class FitResult:
    model: EdcfModel
    achieved_rmse: float
    iterations_used: int
    starts_evaluated: int
    converged: bool
    best_start: int = 0
    best_rmse_trace: tuple = ()

    def report(self) -> dict:
        return {
            "order": self.model.order,
            "n_terms": self.model.n_terms,
            "achieved_rmse": self.achieved_rmse,
            "iterations_used": self.iterations_used,
            "starts_evaluated": self.starts_evaluated,
            "best_start": self.best_start,
            "converged": self.converged,
        }


# -- parameterization -----------------------------------------------------------

def n_params(n_terms: int) -> int:
    return 2 * n_terms - 1


def unpack(params, n_terms: int):
    """Internal parameter vector -> (weights, decay rates)."""
    p = np.asarray(params, dtype=float)
    if p.shape != (n_params(n_terms),):
        raise DomainError(f"expected {n_params(n_terms)} parameters for N={n_terms}, got shape {p.shape}")
    logits = np.append(p[: n_terms - 1], 0.0)
    logits -= logits.max()
    w = np.exp(logits)
    with np.errstate(over="ignore"):
        b = np.exp(p[n_terms - 1:])
    return w / w.sum(), b


def pack(a, b):
    """(weights, decay rates) -> internal parameter vector."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    la = np.log(a)
    return np.concatenate([la[:-1] - la[-1], np.log(b)])


def _n_terms_from(params) -> int:
    k = len(params)
    if k % 2 == 0:
        raise DomainError(f"parameter vector length must be odd, got {k}")
    return (k + 1) // 2


def residuals_edcf(params, grid, order: int, mi) -> np.ndarray:
    """Surrogate minus reference, in bits."""
    g = _abscissae(grid)
    a, b = unpack(params, _n_terms_from(params))
    model = math.log2(order) * (1.0 - a @ np.exp(-np.multiply.outer(b, g)))
    return model - np.asarray(mi, dtype=float)


def jacobian_edcf(params, grid, order: int) -> np.ndarray:
    """Analytic Jacobian of :func:`residuals_edcf` w.r.t. internal parameters."""
    g = _abscissae(grid)
    n = _n_terms_from(params)
    a, b = unpack(params, n)
    scale = math.log2(order)
    e = np.exp(-np.multiply.outer(b, g))  # (N, J)
    jac = np.empty((len(g), n_params(n)))
    if n > 1:
        mix = a @ e
        # d a_i / d w_l = a_i (delta_il - a_l)
        jac[:, : n - 1] = (-scale * a[: n - 1, None] * (e[: n - 1] - mix)).T
    jac[:, n - 1:] = (scale * (a * b)[:, None] * g * e).T
    return jac


def _abscissae(grid) -> np.ndarray:
    if isinstance(grid, SnrGrid):
        return grid.values
    return np.asarray(grid, dtype=float).ravel()


# -- Levenberg-Marquardt ----------------------------------------------------------

def lm_step(residuals, jacobian, damping: float) -> np.ndarray:
    """Solve (J^T J + damping * diag(J^T J)) delta = -J^T r."""
    r = np.asarray(residuals, dtype=float)
    jac = np.asarray(jacobian, dtype=float).reshape(len(r), -1)
    if not damping > 0:
        raise DomainError(f"damping must be positive, got {damping!r}")
    jtj = jac.T @ jac
    grad = jac.T @ r
    if not np.any(grad):
        return np.zeros(jac.shape[1])
    lhs = jtj + damping * np.diag(np.diag(jtj))
    try:
        chol = np.linalg.cholesky(lhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"damped normal matrix is singular: {exc}") from None
    delta = -np.linalg.solve(chol.T, np.linalg.solve(chol, grad))
    if not np.all(np.isfinite(delta)):
        raise NumericalError("non-finite LM step")
    return delta


def _gradient_cosine(J, r) -> float:
    rn = np.linalg.norm(r)
    if rn == 0.0:
        return 0.0
    cn = np.linalg.norm(J, axis=0)
    cn[cn == 0.0] = 1.0
    return float(np.max(np.abs(J.T @ r) / cn) / rn)


@dataclass(frozen=True)
class LmResult:
    x: np.ndarray
    cost: float
    iterations: int
    converged: bool
    reason: str


def levenberg_marquardt(
    fun: Callable,
    jac: Callable,
    x0,
    max_iterations: int = 2000,
    gradient_tolerance: float = 1e-10,
    step_tolerance: float = 1e-12,
) -> LmResult:
    """Minimize 0.5 * |fun(x)|^2.

    Converged when the largest cosine between the residual and a Jacobian
    column drops to ``gradient_tolerance`` or a step is shorter than
    ``step_tolerance`` relative to ``|x|``. Damping starts at 1e-3, halves
    after an accepted step and quadruples after a rejected one; ten
    rejections in a row end the run; such a run still counts as converged
    when it sits at a stationary point or fits exactly.
    """
    x = np.array(x0, dtype=float)
    r = fun(x)
    cost = 0.5 * float(r @ r)
    if not math.isfinite(cost):
        return LmResult(x, math.inf, 0, False, "non-finite start")
    J = jac(x)
    lam = DAMPING_START
    rejects = 0
    for it in range(1, max_iterations + 1):
        if _gradient_cosine(J, r) <= gradient_tolerance:
            return LmResult(x, cost, it - 1, True, "gradient")
        try:
            delta = lm_step(r, J, lam)
        except NumericalError:
            delta = None
        if delta is not None:
            x_new = x + delta
            with np.errstate(over="ignore", invalid="ignore"):
                r_new = fun(x_new)
            cost_new = 0.5 * float(r_new @ r_new)
        if delta is not None and math.isfinite(cost_new) and cost_new < cost:
            x, r, cost = x_new, r_new, cost_new
            J = jac(x)
            lam = max(lam * DAMPING_DOWN, _DAMPING_BOUNDS[0])
            rejects = 0
            if np.linalg.norm(delta) <= step_tolerance * (np.linalg.norm(x) + step_tolerance):
                return LmResult(x, cost, it, True, "step")
        else:
            lam = min(lam * DAMPING_UP, _DAMPING_BOUNDS[1])
            rejects += 1
            if rejects >= MAX_REJECTIONS:
                ok = _gradient_cosine(J, r) <= STALL_COSINE or math.sqrt(2.0 * cost / len(r)) <= STALL_RMS
                return LmResult(x, cost, it, ok, "stalled")
    return LmResult(x, cost, max_iterations, False, "max iterations")


# -- multi-start ---------------------------------------------------------------

def initial_points(n_terms: int, multistarts: int, seed: int) -> np.ndarray:
    """Latin-hypercube starting points, one row per start.

    Stratum assignment comes from the master seed; the jitter inside each
    stratum from a stream keyed by (seed, start index).
    """
    d = n_params(n_terms)
    master = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    strata = np.array([master.permutation(multistarts) for _ in range(d)]).T  # (S, d)
    lo = np.array([LOGIT_RANGE[0]] * (n_terms - 1) + [LOG_B_RANGE[0]] * n_terms)
    hi = np.array([LOGIT_RANGE[1]] * (n_terms - 1) + [LOG_B_RANGE[1]] * n_terms)
    pts = np.empty((multistarts, d))
    for s in range(multistarts):
        jitter = np.random.default_rng(np.random.SeedSequence([int(seed), s])).random(d)
        pts[s] = lo + (hi - lo) * (strata[s] + jitter) / multistarts
    return pts


def _model_from(params, n_terms, order) -> Optional[EdcfModel]:
    a, b = unpack(params, n_terms)
    try:
        return EdcfModel(order, tuple(a), tuple(b))
    except DomainError:
        return None


def fit_edcf(reference: MiCurve, config: FitConfig) -> FitResult:
    """Best of ``config.multistarts`` LM runs against ``reference``."""
    n = config.n_terms
    if config.grid is not None and config.grid != reference.snr:
        raise ConfigError("reference curve is not sampled on the configured grid")
    g = reference.snr.values
    y = reference.mi
    if len(g) < 2 * n + 1:
        raise ConfigError(
            f"{len(g)} grid points cannot identify {n} terms (need at least {2 * n + 1})"
        )
    if not np.all(np.isfinite(y)):
        raise DomainError("reference MI values must be finite")
    order = reference.order

    def fun(p):
        return residuals_edcf(p, g, order, y)

    def jac(p):
        return jacobian_edcf(p, g, order)

    starts = initial_points(n, config.multistarts, config.seed)

    def run(s):
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            res = levenberg_marquardt(
                fun, jac, starts[s], config.max_lm_iterations,
                config.gradient_tolerance, config.step_tolerance,
            )
        model = _model_from(res.x, n, order) if math.isfinite(res.cost) else None
        return res, model

    workers = thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(run, range(config.multistarts)))
    else:
        runs = [run(s) for s in range(config.multistarts)]

    best = None
    trace = []
    for s, (res, model) in enumerate(runs):
        if model is not None:
            score = rmse(model, reference)
            # strict comparison keeps the lowest start index on ties
            if best is None or score < best[0]:
                best = (score, s, res, model)
        trace.append(math.inf if best is None else best[0])
    if best is None:
        raise NonConvergenceError(f"all {config.multistarts} starts diverged", best=None)
    score, s, res, model = best
    model = EdcfModel(model.order, model.a, model.b, reported_rmse=score)
    return FitResult(
        model=model,
        achieved_rmse=score,
        iterations_used=res.iterations,
        starts_evaluated=config.multistarts,
        converged=res.converged,
        best_start=s,
        best_rmse_trace=tuple(trace),
    )

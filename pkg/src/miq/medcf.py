"""Multi-exponential decay surrogate for QAM mutual information.

    I(gamma) ~= log2(M) * (1 - sum_i a_i exp(-b_i gamma))

with linear SNR ``gamma``, weights ``a_i > 0`` summing to one and decay
rates ``b_i > 0``. Coefficient sets use a small JSON format::

    {"order": M, "terms": [{"a": ..., "b": ...}, ...], "rmse": ...}

and a table is a JSON array of such objects.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Iterator, Optional

import numpy as np

from .errors import DomainError, NotFoundError, ParseError
from .exact_mi import MiCurve, SnrGrid

WEIGHT_SUM_TOL = 2e-6

# top of the canonical RMSE grid (dB); exact MI is saturated well before
CANONICAL_TOP_DB = {4: 15.0, 16: 22.0, 64: 28.0, 256: 34.0}
CANONICAL_BOTTOM_DB = -10.0
CANONICAL_STEP_DB = 0.1


@dataclass(frozen=True)
class EdcfModel:
    """A fitted surrogate; terms are kept sorted by descending decay rate."""

    order: int
    a: tuple
    b: tuple
    reported_rmse: Optional[float] = None

    def __post_init__(self):
        a = tuple(float(x) for x in self.a)
        b = tuple(float(x) for x in self.b)
        if len(a) != len(b) or not a:
            raise DomainError("need N >= 1 matching (a, b) pairs")
        if not all(math.isfinite(x) and x > 0 for x in a + b):
            raise DomainError(f"weights and decay rates must be positive, got a={a}, b={b}")
        if abs(math.fsum(a) - 1.0) > WEIGHT_SUM_TOL:
            raise DomainError(f"weights sum to {math.fsum(a)!r}, not 1")
        if int(self.order) < 2:
            raise DomainError(f"order must be >= 2, got {self.order!r}")
        if self.reported_rmse is not None and not self.reported_rmse >= 0:
            raise DomainError("reported RMSE must be nonnegative")
        perm = sorted(range(len(b)), key=lambda i: -b[i])
        object.__setattr__(self, "order", int(self.order))
        object.__setattr__(self, "a", tuple(a[i] for i in perm))
        object.__setattr__(self, "b", tuple(b[i] for i in perm))

    @property
    def n_terms(self) -> int:
        return len(self.a)

    @property
    def key(self) -> tuple:
        return (self.order, self.n_terms)

    def to_json(self) -> dict:
        out = {"order": self.order, "terms": [{"a": a, "b": b} for a, b in zip(self.a, self.b)]}
        if self.reported_rmse is not None:
            out["rmse"] = self.reported_rmse
        return out

    @classmethod
    def from_json(cls, obj) -> "EdcfModel":
        try:
            terms = obj["terms"]
            return cls(
                int(obj["order"]),
                [t["a"] for t in terms],
                [t["b"] for t in terms],
                None if obj.get("rmse") is None else float(obj["rmse"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"invalid coefficient entry {obj!r}: {exc}") from exc


def eval_edcf(model: EdcfModel, gamma):
    """Surrogate MI in bits; accepts a scalar or an array of linear SNRs."""
    g = np.asarray(gamma, dtype=float)
    if np.any(np.isnan(g)) or np.any(g < 0):
        raise DomainError(f"SNR must be >= 0, got {gamma!r}")
    a = np.asarray(model.a)
    b = np.asarray(model.b)
    tail = np.tensordot(a, np.exp(-np.multiply.outer(b, g)), axes=1)
    val = math.log2(model.order) * (1.0 - tail)
    return float(val) if val.ndim == 0 else val


class CoefficientTable:
    """Surrogate models keyed by (order, number of terms)."""

    def __init__(self, entries):
        self._entries = {}
        for m in entries:
            if m.key in self._entries:
                raise ParseError(f"duplicate coefficient entry for order {m.order}, N={m.n_terms}")
            self._entries[m.key] = m

    def lookup(self, order: int, n_terms: int) -> EdcfModel:
        try:
            return self._entries[(int(order), int(n_terms))]
        except KeyError:
            raise NotFoundError(f"no coefficients for order {order}, N={n_terms}") from None

    def for_order(self, order: int) -> list:
        return sorted((m for m in self._entries.values() if m.order == order), key=lambda m: m.n_terms)

    def orders(self) -> list:
        return sorted({k[0] for k in self._entries}, reverse=True)

    def __iter__(self) -> Iterator[EdcfModel]:
        return iter(self._entries.values())

    def __len__(self):
        return len(self._entries)

    def to_json(self) -> list:
        return [m.to_json() for m in self]

    @classmethod
    def from_json_text(cls, text: str, source: str = "<string>") -> "CoefficientTable":
        if not text.strip():
            raise ParseError(f"{source}: empty coefficient file")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            line = text.splitlines()[exc.lineno - 1] if exc.lineno - 1 < len(text.splitlines()) else ""
            raise ParseError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {line}") from exc
        if isinstance(data, dict):
            data = [data]
        if not isinstance(data, list) or not data:
            raise ParseError(f"{source}: expected a non-empty array of coefficient objects")
        return cls(EdcfModel.from_json(obj) for obj in data)


def load_table(path) -> CoefficientTable:
    with open(path, encoding="utf-8") as fh:
        return CoefficientTable.from_json_text(fh.read(), source=str(path))


def builtin_table() -> CoefficientTable:
    """The nine published coefficient sets (4/16/64/256-QAM)."""
    text = resources.files("miq").joinpath("data/published.json").read_text(encoding="utf-8")
    return CoefficientTable.from_json_text(text, source="published.json")


def best_model(table: CoefficientTable, order: int) -> EdcfModel:
    """Entry with the smallest reported RMSE for ``order``; ties go to fewer terms."""
    cands = table.for_order(order)
    if not cands:
        raise NotFoundError(f"no coefficients for order {order}")
    inf = float("inf")
    return min(cands, key=lambda m: (inf if m.reported_rmse is None else m.reported_rmse, m.n_terms))


def rmse(model: EdcfModel, reference: MiCurve, normalized: bool = True) -> float:
    """Root-mean-square residual of the surrogate against a reference curve.

    With ``normalized=True`` (the scale the published RMSE column uses)
    residuals are measured on MI / log2(M), i.e. as a fraction of the
    saturation rate; otherwise in bits.
    """
    if reference.order != model.order:
        raise DomainError(f"curve is for order {reference.order}, model for {model.order}")
    if len(reference.mi) == 0:
        raise DomainError("empty reference curve")
    resid = eval_edcf(model, reference.snr.values) - reference.mi
    if normalized:
        resid = resid / math.log2(model.order)
    return float(np.sqrt(np.mean(resid * resid)))


def canonical_grid(order: int) -> SnrGrid:
    """-10 dB to the order's saturation point in 0.1 dB steps."""
    top = CANONICAL_TOP_DB.get(order)
    if top is None:
        # 256-QAM and beyond: six more dB per extra bit pair
        k = round(math.log(order, 4))
        if 4**k != order or k < 1:
            raise DomainError(f"no canonical grid for order {order}")
        top = CANONICAL_TOP_DB[256] + 6.0 * (k - 4)
    return SnrGrid.from_db(CANONICAL_BOTTOM_DB, top, CANONICAL_STEP_DB)

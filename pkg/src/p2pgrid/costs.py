"""Quadratic cost functions and the emission-reduction benefit (ERB).

All money is in $ and all power in kW; coefficients supplied in cents are
converted once, at scenario load time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class QuadraticCost:
    """``C(p) = a p**2 + b p + c`` with ``a`` in $/kWh², ``b`` in $/kWh, ``c`` in $."""

    a: float
    b: float
    c: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.a, self.b, self.c)):
            raise ValueError("cost coefficients must be finite")
        if self.a < 0:
            raise ValueError("cost curvature a must be >= 0")

    @classmethod
    def from_cents(cls, a, b, c=0.0):
        return cls(a / 100.0, b / 100.0, c / 100.0)


@dataclass(frozen=True)
class EmissionRow:
    gas: str
    factor: float  # kg/kWh
    env_cost: float  # $/kg


@dataclass(frozen=True)
class EmissionTable:
    rows: tuple[EmissionRow, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for row in self.rows:
            if row.factor < 0 or row.env_cost < 0:
                raise ValueError(f"negative emission data for {row.gas}")


# Environmental costs of greenhouse gases used by the reference test system.
TABLE_2 = EmissionTable(
    (
        EmissionRow("SO2", 0.00993, 0.97),
        EmissionRow("NOx", 0.00646, 1.29),
        EmissionRow("CO", 0.00155, 0.16),
        EmissionRow("CO2", 1.07, 0.0037),
    )
)


def cost_eval(q: QuadraticCost, p: float) -> float:
    return q.a * p * p + q.b * p + q.c


def cost_marginal(q: QuadraticCost, p: float) -> float:
    return 2.0 * q.a * p + q.b


def best_response(q: QuadraticCost, effective_price: float, bounds) -> float:
    """Maximise ``price * p - C(p)`` over ``bounds = (lo, hi)``.

    Unbounded sides are given as ``-inf``/``inf``. A linear cost (``a == 0``)
    puts the unit at a bound, or at the midpoint of the bounds on a tie.
    """
    lo, hi = bounds
    if lo > hi:
        raise ValueError(f"invalid bounds: lower {lo} > upper {hi}")
    if q.a > 0:
        p = (effective_price - q.b) / (2.0 * q.a)
        return min(max(p, lo), hi)
    if effective_price > q.b:
        p = hi
    elif effective_price < q.b:
        p = lo
    else:
        p = 0.5 * (lo + hi) if math.isfinite(lo) and math.isfinite(hi) else min(max(0.0, lo), hi)
    if not math.isfinite(p):
        raise ValueError("linear cost with an unbounded side has no maximiser")
    return p


def erb_rate(e: EmissionTable) -> float:
    """Benefit per kWh of renewable energy, ``sum(E_i * C_i)`` in $/kWh."""
    return math.fsum(row.factor * row.env_cost for row in e.rows)


def erb_value(e: EmissionTable, renewable_total: float, grid_import: float, T: int,
              floor: bool = False) -> float:
    """``(renewable_total - grid_import) * erb_rate / T``.

    Negative when grid import exceeds renewable supply, unless ``floor`` is set.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    v = (renewable_total - grid_import) * erb_rate(e) / T
    return max(v, 0.0) if floor else v

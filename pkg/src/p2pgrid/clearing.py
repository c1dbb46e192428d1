"""Retail market clearing by dual decomposition.

Each distributed generator and the MCS answer a broadcast retail price with
their profit-maximising output; the price then moves in proportion to excess
demand (a Walrasian tatonnement) until supply meets the fixed end-user net
demand. :func:`centralized_solve` solves the same welfare problem directly
and is used as the verification oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .costs import EmissionTable, best_response, cost_eval, erb_rate, erb_value
from .scenario import AgentSpec, McsSpec, Scenario


class InfeasibleClearing(ValueError):
    """Net demand lies outside what DGs and the grid can jointly supply."""


@dataclass(frozen=True)
class ClearingState:
    lam: float
    dg_power: dict
    grid_power: float
    net_demand: float
    residual: float
    iteration: int


@dataclass(frozen=True)
class ClearingResult:
    state: ClearingState
    converged: bool
    lambda_history: tuple = field(default_factory=tuple)
    welfare: float = 0.0

    @property
    def lam(self) -> float:
        return self.state.lam


def erb_subsidy(emissions: EmissionTable, T: int) -> float:
    """ERB per kWh of renewable output in one slot of a ``T``-slot horizon."""
    return erb_rate(emissions) / T


def dg_update(spec: AgentSpec, lam: float, emissions: EmissionTable, T: int, slot=None) -> float:
    if spec.kind != "DG":
        raise ValueError(f"{spec.id} is not a DG")
    bounds = spec.dg_bounds if slot is None else spec.dg_bounds_at(slot)
    return best_response(spec.cost, lam + erb_subsidy(emissions, T), bounds)


def mcs_update(spec: McsSpec, lam: float, T: int, price_responsive: bool = True) -> float:
    """Grid import ``P_G``: earns the retail price and forfeits ERB on every imported kWh.

    With ``price_responsive=False`` the retail revenue term is dropped and the
    MCS only trades off its purchase cost against the lost ERB.
    """
    subsidy = erb_subsidy(spec.emissions, T)
    price = lam - subsidy if price_responsive else -subsidy
    return best_response(spec.cost, price, spec.grid_bounds)


def dual_update(lam: float, residual: float, rho: float) -> float:
    if rho <= 0:
        raise ValueError("rho must be > 0")
    return lam + rho * residual


def slot_welfare(s: Scenario, slot: int, dg_power: dict, grid_power: float,
                 renewable: float = 0.0) -> float:
    """Dispatchable-side welfare: ERB minus DG and grid purchase costs ($ per slot)."""
    total = -math.fsum(cost_eval(s.agent(i).cost, p) for i, p in dg_power.items())
    total -= cost_eval(s.mcs.cost, grid_power)
    total += erb_value(s.mcs.emissions, renewable + math.fsum(dg_power.values()), grid_power,
                       s.horizon_slots, floor=s.solver.erb_floor)
    return total


def run_tatonnement(s: Scenario, slot: int, net_demand: float, lam0=None,
                    renewable: float = 0.0) -> ClearingResult:
    """Iterate primal best responses and the dual price step until balance."""
    if not math.isfinite(net_demand):
        raise ValueError("net_demand must be finite")
    sp = s.solver
    T = s.horizon_slots
    dgs = sorted(s.dgs, key=lambda a: a.id)
    lam = s.mcs.initial_price if lam0 is None else lam0
    history = []
    converged = False
    for k in range(sp.max_clearing_iters + 1):
        history.append(lam)
        dg_power = {a.id: dg_update(a, lam, s.mcs.emissions, T, slot) for a in dgs}
        grid = mcs_update(s.mcs, lam, T, sp.mcs_price_responsive)
        # fixed summation order keeps runs bit-identical
        residual = net_demand - math.fsum(dg_power[a.id] for a in dgs) - grid
        if abs(residual) <= sp.price_tol:
            converged = True
            break
        if k == sp.max_clearing_iters:
            break
        lam = dual_update(lam, residual, sp.rho)
    state = ClearingState(lam, dg_power, grid, net_demand, residual, k)
    return ClearingResult(state, converged, tuple(history),
                          slot_welfare(s, slot, dg_power, grid, renewable))


# ---------------------------------------------------------------------------
# centralized oracle


@dataclass
class _Unit:
    key: object
    a: float
    b: float
    offset: float  # added to the price the unit sees
    lo: float
    hi: float

    def at(self, lam, high=False):
        if self.a > 0:
            return min(max((lam + self.offset - self.b) / (2 * self.a), self.lo), self.hi)
        edge = lam + self.offset - self.b
        if edge > 0 or (edge == 0 and high):
            return self.hi
        return self.lo

    def breakpoints(self):
        if self.a == 0:
            return [self.b - self.offset]
        out = []
        for bound in (self.lo, self.hi):
            if math.isfinite(bound):
                out.append(2 * self.a * bound + self.b - self.offset)
        return out


def _units(s: Scenario, slot: int):
    eps = erb_subsidy(s.mcs.emissions, s.horizon_slots)
    units = [
        _Unit(a.id, a.cost.a, a.cost.b, eps, *a.dg_bounds_at(slot))
        for a in sorted(s.dgs, key=lambda a: a.id)
    ]
    units.append(_Unit(None, s.mcs.cost.a, s.mcs.cost.b, -eps, *s.mcs.grid_bounds))
    return units


def _solve_price(units, demand):
    def supply(lam, high=False):
        return math.fsum(u.at(lam, high) for u in units)

    lo_cap = math.fsum(u.lo for u in units)
    hi_cap = math.fsum(u.hi for u in units)
    if not lo_cap <= demand <= hi_cap:
        raise InfeasibleClearing(f"net demand {demand} outside [{lo_cap}, {hi_cap}]")

    bps = sorted({b for u in units for b in u.breakpoints()}) or [0.0]
    first, last = bps[0], bps[-1]
    if demand < supply(first):
        slope = sum(1 / (2 * u.a) for u in units if u.a > 0 and math.isinf(u.lo))
        return first - (supply(first) - demand) / slope
    if demand > supply(last, high=True):
        slope = sum(1 / (2 * u.a) for u in units if u.a > 0 and math.isinf(u.hi))
        return last + (demand - supply(last, high=True)) / slope
    for n, lam in enumerate(bps):
        if supply(lam) <= demand <= supply(lam, high=True):
            return lam
        nxt = bps[n + 1]
        s_hi, s_next = supply(lam, high=True), supply(nxt)
        if s_hi < demand < s_next:
            # supply is affine between consecutive breakpoints
            return lam + (demand - s_hi) * (nxt - lam) / (s_next - s_hi)
    raise AssertionError("price bracket not found")  # unreachable for monotone supply


def centralized_solve(s: Scenario, slot: int, net_demand: float,
                      renewable: float = 0.0) -> ClearingResult:
    """Solve the welfare-maximising dispatch directly (equal effective marginal cost).

    The active set of the box bounds is handled exactly by walking the
    breakpoints of the piecewise-affine aggregate supply curve.
    """
    units = _units(s, slot)
    lam = _solve_price(units, net_demand)
    dispatch = [u.at(lam) for u in units]
    # linear-cost units sitting exactly at their step take the leftover
    gap = net_demand - math.fsum(dispatch)
    for n, u in enumerate(units):
        if u.a == 0 and gap > 0:
            take = min(gap, u.hi - dispatch[n])
            dispatch[n] += take
            gap -= take
    dg_power = {u.key: p for u, p in zip(units[:-1], dispatch[:-1])}
    grid = dispatch[-1]
    residual = net_demand - math.fsum(dispatch)
    state = ClearingState(lam, dg_power, grid, net_demand, residual, 0)
    return ClearingResult(state, True, (lam,), slot_welfare(s, slot, dg_power, grid, renewable))

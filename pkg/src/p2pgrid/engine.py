"""Day-level simulation: storage pre-scheduling, per-slot clearing and auction,
state-of-charge propagation, settlement and day metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .clearing import run_tatonnement
from .costs import cost_eval, erb_value
from .p2p import AuctionResult, run_auction
from .scenario import AgentSpec, Scenario, ScenarioValidationError, id_key, validate

SOC_TOL = 1e-9  # kWh; rounding noise below this is clamped silently


class PARUndefined(ValueError):
    pass


def soc_step(e: float, p_es: float, eta: float, dt: float, capacity: float = math.inf):
    """Advance stored energy by one slot; returns ``(soc, clamped)``.

    Charging (``p_es < 0``) stores ``eta * |p_es| * dt``; discharging draws
    ``p_es * dt / eta`` from the cell.
    """
    if p_es < 0:
        new = e + eta * (-p_es) * dt
    else:
        new = e - p_es * dt / eta
    clamped = new < -SOC_TOL or new > capacity + SOC_TOL
    return min(max(new, 0.0), capacity), clamped


def on_peak_slots(prices) -> np.ndarray:
    """Top-quartile price slots; a flat forecast has no peak."""
    prices = np.asarray(prices, dtype=float)
    if prices.size == 0 or np.ptp(prices) == 0:
        return np.zeros(prices.size, dtype=bool)
    return prices >= np.percentile(prices, 75)


def schedule_storage(agent: AgentSpec, price_forecast, slot_length: float = 1.0) -> tuple:
    """Rule-based day-ahead battery schedule, blind to peer-to-peer trading.

    Charge from PV surplus whenever there is headroom; discharge into the
    household deficit during top-quartile price slots. Returns ``p_es`` per slot.
    """
    st = agent.storage
    T = len(agent.demand)
    if st is None:
        return tuple([0.0] * T)
    peak = on_peak_slots(price_forecast)
    lo, hi = st.power_bounds
    dt = slot_length
    soc = st.initial_soc
    out = []
    for t in range(T):
        surplus = agent.pv[t] - agent.demand[t]
        p = 0.0
        if surplus > 0:
            p = -min(surplus, -lo, max(st.capacity - soc, 0.0) / dt)
        elif peak[t]:
            p = min(-surplus, hi, soc * st.efficiency / dt)
        soc, _ = soc_step(soc, p, st.efficiency, dt, st.capacity)
        out.append(p)
    return tuple(out)


def par(series) -> float:
    x = np.asarray(series, dtype=float)
    if x.size == 0 or not x.mean() > 0:
        raise PARUndefined("PAR undefined: series mean must be > 0")
    return float(x.max() / x.mean())


def fairness_index(unit_costs) -> float:
    """Jain's index ``(sum x)**2 / (n * sum x**2)``; all-zero input counts as fair."""
    x = np.asarray(list(unit_costs.values()) if isinstance(unit_costs, dict) else unit_costs,
                   dtype=float)
    if x.size == 0:
        raise ValueError("fairness index needs at least one agent")
    sq = float(np.sum(x * x))
    if sq == 0:
        return 1.0
    return float(np.sum(x) ** 2 / (x.size * sq))


# ---------------------------------------------------------------------------


@dataclass
class SlotRecord:
    slot: int
    lam: float
    dg_power: dict
    grid_import: float  # P_G at the PCC
    grid_power: dict  # end-user p_G
    net: dict
    p_es: dict
    soc: dict  # end-of-slot state of charge
    trades: list
    cash: dict
    clearing_iters: int
    clearing_converged: bool
    lambda_history: tuple
    auction_rounds: int = 0
    auction_converged: bool = True
    messages: list = field(default_factory=list)


@dataclass
class SimResult:
    scenario_name: str
    seed: int
    p2p_enabled: bool
    slot_length: float
    slots: list
    metrics: dict
    cash: dict  # agent id (and "MCS") -> day cash flow, $
    unit_costs: dict  # end-user id -> $/kWh consumed
    diagnostics: list
    soc_clamps: list  # (slot, agent) pairs whose SoC had to be clamped

    @property
    def horizon(self) -> int:
        return len(self.slots)

    def series(self, name) -> list:
        return [getattr(r, name) for r in self.slots]

    def trades(self) -> list:
        return [t for r in self.slots for t in r.trades]


def settlement(s: Scenario, slot: int, lam: float, grid_power: dict, dg_power: dict,
               grid_import: float, trades, net: dict) -> dict:
    """Cash flow ($) of every agent in one slot; positive means money received.

    End-users pay ``lam`` per kWh imported (are paid per kWh exported), bear
    their exchange cost ``C_i(p_G)``, settle trades at the agreed price and
    collect ERB on renewable energy they export. DGs sell at ``lam`` and collect
    ERB on their output. The MCS keeps retail revenue net of grid purchases
    and DG payments.
    """
    dt = s.slot_length
    T = s.horizon_slots
    e = s.mcs.emissions
    cash = {}
    for a in s.end_users:
        p = grid_power[a.id]
        c = -lam * p * dt - cost_eval(a.cost, p) * dt
        exported = min(a.pv[slot], max(0.0, -net[a.id])) * dt
        c += erb_value(e, exported, 0.0, T)
        cash[a.id] = c
    for t in trades:
        cash[t.buyer] -= t.price * t.quantity * dt
        cash[t.seller] += t.price * t.quantity * dt
    for a in s.dgs:
        p = dg_power[a.id]
        cash[a.id] = lam * p * dt - cost_eval(a.cost, p) * dt + erb_value(e, p * dt, 0.0, T)
    retail = math.fsum(grid_power[a.id] for a in s.end_users)
    cash["MCS"] = (lam * retail * dt - cost_eval(s.mcs.cost, grid_import) * dt
                   - lam * math.fsum(dg_power.values()) * dt)
    return cash


def price_forecast(s: Scenario) -> list:
    """Retail prices from a storage-free, trade-free clearing pass."""
    out = []
    for t in range(s.horizon_slots):
        net = math.fsum(a.demand[t] - a.pv[t] for a in s.end_users)
        out.append(run_tatonnement(s, t, net).lam)
    return out


def run_day(s: Scenario, p2p_enabled: bool = True, record: bool = False) -> SimResult:
    problems = validate(s)
    if problems:
        raise ScenarioValidationError(problems)
    dt = s.slot_length
    users = sorted(s.end_users, key=lambda a: id_key(a.id))
    forecast = price_forecast(s)
    schedule = {a.id: schedule_storage(a, forecast, dt) for a in users}
    soc = {a.id: a.storage.initial_soc for a in users if a.storage is not None}
    diagnostics, clamps, slots = [], [], []

    for t in range(s.horizon_slots):
        p_es = {a.id: schedule[a.id][t] for a in users}
        net = {a.id: a.demand[t] - a.pv[t] - p_es[a.id] for a in users}
        renewable = math.fsum(a.pv[t] for a in users)
        clearing = run_tatonnement(s, t, math.fsum(net[a.id] for a in users), renewable=renewable)
        lam = clearing.lam
        if not clearing.converged:
            diagnostics.append(f"slot {t}: clearing did not converge "
                               f"(residual {clearing.state.residual:.3g} kW)")
        if p2p_enabled:
            auction: AuctionResult = run_auction(s, t, lam, p_es, record=record)
            diagnostics.extend(auction.diagnostics)
            grid_power, trades = auction.grid_power, auction.trades
            rounds, a_conv, messages = auction.rounds, auction.converged, auction.messages
        else:
            grid_power = {a.id: min(max(net[a.id], a.grid_bounds[0]), a.grid_bounds[1]) for a in users}
            trades, rounds, a_conv, messages = [], 0, True, []

        soc_now = {}
        for a in users:
            if a.storage is None:
                continue
            st = a.storage
            soc[a.id], flagged = soc_step(soc[a.id], p_es[a.id], st.efficiency, dt, st.capacity)
            if flagged:
                clamps.append((t, a.id))
                diagnostics.append(f"slot {t}: state of charge of {a.id} clamped")
            soc_now[a.id] = soc[a.id]

        state = clearing.state
        cash = settlement(s, t, lam, grid_power, state.dg_power, state.grid_power, trades, net)
        slots.append(SlotRecord(
            slot=t, lam=lam, dg_power=dict(state.dg_power), grid_import=state.grid_power,
            grid_power=grid_power, net=net, p_es=p_es, soc=soc_now, trades=trades, cash=cash,
            clearing_iters=state.iteration, clearing_converged=clearing.converged,
            lambda_history=clearing.lambda_history, auction_rounds=rounds,
            auction_converged=a_conv, messages=messages,
        ))

    cash = {}
    for rec in slots:
        for k, v in rec.cash.items():
            cash[k] = cash.get(k, 0.0) + v
    unit_costs = {}
    for a in users:
        energy = math.fsum(a.demand) * dt
        unit_costs[a.id] = -cash[a.id] / energy if energy > 0 else 0.0
    metrics = day_metrics(s, slots, unit_costs)
    return SimResult(s.name, s.seed, p2p_enabled, dt, slots, metrics, cash, unit_costs,
                     diagnostics, clamps)


def par_series(s: Scenario, slots) -> list:
    if s.solver.par_basis == "consumption":
        return [math.fsum(max(p, 0.0) for p in r.grid_power.values()) for r in slots]
    return [max(r.grid_import, 0.0) for r in slots]


def day_metrics(s: Scenario, slots, unit_costs) -> dict:
    try:
        par_value = par(par_series(s, slots))
    except PARUndefined:
        par_value = float("nan")
    dt = s.slot_length
    total_erb = math.fsum(
        erb_value(s.mcs.emissions,
                  (math.fsum(a.pv[r.slot] for a in s.end_users) + math.fsum(r.dg_power.values())) * dt,
                  r.grid_import * dt, s.horizon_slots)
        for r in slots
    )
    return {
        "par": par_value,
        "fairness": fairness_index(unit_costs) if unit_costs else float("nan"),
        "total_erb": total_erb,
        "p2p_volume_kwh": math.fsum(t.quantity for r in slots for t in r.trades) * dt,
        "n_trades": sum(len(r.trades) for r in slots),
        "grid_import_kwh": math.fsum(max(r.grid_import, 0.0) for r in slots) * dt,
        "mean_price": math.fsum(r.lam for r in slots) / len(slots),
    }

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import household, market
from p2pgrid.clearing import run_tatonnement
from p2pgrid.costs import EmissionTable
from p2pgrid.engine import (PARUndefined, fairness_index, on_peak_slots, par, run_day,
                            schedule_storage, settlement, soc_step)
from p2pgrid.p2p import Trade
from p2pgrid.scenario import ScenarioValidationError, StorageSpec, default_paper_scenario


@pytest.fixture(scope="module")
def day0():
    return run_day(default_paper_scenario(0))


@pytest.fixture(scope="module")
def day0_off():
    return run_day(default_paper_scenario(0), p2p_enabled=False)


def test_soc_idle():
    assert soc_step(2.0, 0.0, 0.95, 1.0, 10.0) == (2.0, False)


def test_soc_charge():
    e, flag = soc_step(2.0, -1.0, 0.95, 1.0, 10.0)
    assert e == pytest.approx(2.95) and not flag


def test_soc_discharge_floor_is_flagged():
    e, flag = soc_step(0.5, 1.0, 0.95, 1.0, 10.0)
    assert e == 0.0 and flag


def test_soc_ceiling_is_flagged():
    e, flag = soc_step(9.5, -2.0, 1.0, 1.0, 10.0)
    assert e == 10.0 and flag


@given(st.floats(0, 10), st.floats(-5, 5), st.floats(0.5, 1), st.floats(0.25, 2))
def test_soc_stays_in_range(e, p, eta, dt):
    new, flag = soc_step(e, p, eta, dt, 10.0)
    assert 0.0 <= new <= 10.0
    raw = e + eta * -p * dt if p < 0 else e - p * dt / eta
    assert flag == (raw < -1e-9 or raw > 10.0 + 1e-9)


def _prosumer(demand, pv, storage):
    return household("P", demand, pv=pv, storage=storage)


def test_schedule_flat_price_no_pv():
    a = _prosumer([1.0] * 4, [0.0] * 4, StorageSpec(5.0, 2.0, (-3.0, 3.0), 0.95))
    assert schedule_storage(a, [0.04] * 4) == (0.0, 0.0, 0.0, 0.0)


def test_schedule_charges_from_surplus():
    a = _prosumer([1.0, 1.0], [3.0, 0.0], StorageSpec(6.0, 1.0, (-3.0, 3.0), 0.95))
    assert schedule_storage(a, [0.04, 0.04])[0] == pytest.approx(-2.0)


def test_schedule_charge_limited_by_headroom():
    a = _prosumer([1.0], [4.0], StorageSpec(6.0, 5.0, (-3.0, 3.0), 0.95))
    assert schedule_storage(a, [0.04])[0] == pytest.approx(-1.0)


def test_schedule_discharge_capped_by_charge():
    prices = [0.02, 0.02, 0.02, 0.09]
    lossless = _prosumer([2.0] * 4, [0.0] * 4, StorageSpec(5.0, 1.0, (-3.0, 3.0), 1.0))
    assert schedule_storage(lossless, prices) == (0.0, 0.0, 0.0, pytest.approx(1.0))
    # with losses only eta * soc can leave the cell without overdrawing it
    lossy = _prosumer([2.0] * 4, [0.0] * 4, StorageSpec(5.0, 1.0, (-3.0, 3.0), 0.95))
    assert schedule_storage(lossy, prices)[3] == pytest.approx(0.95)


def test_schedule_without_storage():
    assert schedule_storage(household("C", [1.0, 2.0]), [0.1, 0.2]) == (0.0, 0.0)


def test_on_peak_slots_top_quartile():
    assert list(on_peak_slots([1, 2, 3, 4, 5, 6, 7, 8])) == [False] * 6 + [True, True]
    assert not on_peak_slots([3, 3, 3]).any()


def test_par_examples():
    assert par([2.0, 2.0, 2.0]) == 1.0
    assert par([1, 2, 3, 2]) == 1.5
    with pytest.raises(PARUndefined, match="PAR undefined"):
        par([0.0, 0.0])


def test_fairness_examples():
    assert fairness_index({"a": 0.04, "b": 0.04}) == pytest.approx(1.0)
    assert fairness_index([1, 0]) == 0.5
    assert fairness_index([1, 1, 1, 0]) == 0.75
    assert fairness_index([0, 0]) == 1.0
    with pytest.raises(ValueError):
        fairness_index([])


@given(st.lists(st.floats(0, 10), min_size=1, max_size=20))
def test_fairness_in_unit_interval(xs):
    f = fairness_index(xs)
    assert 0 < f <= 1 + 1e-12


def _settle_market():
    return market([household("S", [0.0], pv=[2.0]), household("B", [1.0])], T=1,
                  emissions=EmissionTable(()))


def test_settlement_buyer_pays_trade_price():
    s = _settle_market()
    trade = Trade("S", "B", 1.0, 0.04, 0)
    cash = settlement(s, 0, 0.05, {"S": 0.0, "B": 0.0}, {}, 0.0, [trade], {"S": -2.0, "B": 1.0})
    assert cash["B"] == pytest.approx(-0.04)
    assert cash["S"] == pytest.approx(0.04)


def test_settlement_erb_credit_on_exported_renewables():
    s = default_paper_scenario(0)
    p = next(a for a in s.end_users if a.kind == "Prosumer")
    slot = 12
    net = {a.id: 0.0 for a in s.end_users}
    grid = dict(net)
    base = settlement(s, slot, 0.0, grid, {d.id: 0.0 for d in s.dgs}, 0.0, [], net)
    net[p.id] = -2.0
    credited = settlement(s, slot, 0.0, grid, {d.id: 0.0 for d in s.dgs}, 0.0, [], net)
    assert credited[p.id] - base[p.id] == pytest.approx(2 * 0.0221725 / 24, abs=1e-9)
    assert credited[p.id] - base[p.id] == pytest.approx(0.001848, abs=1e-6)


def test_settlement_trades_are_budget_balanced(day0):
    for rec in day0.slots:
        flows = []
        for t in rec.trades:
            flows += [t.price * t.quantity, -t.price * t.quantity]
        assert math.fsum(flows) == 0.0


def test_day_structure(day0):
    s = default_paper_scenario(0)
    assert day0.horizon == 24
    assert [r.slot for r in day0.slots] == list(range(24))
    users = {a.id for a in s.end_users}
    for rec in day0.slots:
        assert set(rec.grid_power) == users
        assert set(rec.dg_power) == {"DG1", "DG2"}
        assert rec.clearing_converged and rec.auction_converged
    assert day0.soc_clamps == []
    assert set(day0.metrics) >= {"par", "fairness", "total_erb"}


def test_soc_within_capacity(day0):
    s = default_paper_scenario(0)
    for rec in day0.slots:
        for aid, e in rec.soc.items():
            assert 0.0 <= e <= s.agent(aid).storage.capacity


def test_trades_net_to_zero(day0):
    for rec in day0.slots:
        per_agent = {}
        for t in rec.trades:
            for aid in (t.seller, t.buyer):
                per_agent[aid] = per_agent.get(aid, 0.0) + t.signed_for(aid)
        assert math.fsum(per_agent.values()) == pytest.approx(0.0, abs=1e-12)


def test_system_balance(day0):
    s = default_paper_scenario(0)
    for rec in day0.slots:
        net = math.fsum(rec.net.values())
        supply = math.fsum(rec.dg_power.values()) + rec.grid_import
        assert abs(net - supply) <= s.solver.price_tol
        # end-user grid exchange differs from net demand only by what moved peer to peer
        imbalance = math.fsum(rec.grid_power.values()) - net
        n_edges = 2 * len({(t.seller, t.buyer) for t in rec.trades})
        assert abs(imbalance) <= s.solver.eps_p * max(n_edges, 1)


def test_without_trading_matches_pure_clearing(day0_off):
    s = default_paper_scenario(0)
    for rec in day0_off.slots:
        assert rec.trades == []
        assert rec.grid_power == rec.net
        ref = run_tatonnement(s, rec.slot, math.fsum(rec.net[a.id] for a in sorted(s.end_users, key=lambda a: a.id)),
                              renewable=math.fsum(a.pv[rec.slot] for a in s.end_users))
        assert rec.lam == pytest.approx(ref.lam, abs=1e-12)


def test_run_day_is_deterministic(day0):
    again = run_day(default_paper_scenario(0))
    assert again.slots == day0.slots
    assert again.metrics == day0.metrics


def test_reference_day_claims(day0, day0_off):
    assert day0.metrics["par"] <= day0_off.metrics["par"]
    assert day0.metrics["fairness"] >= day0_off.metrics["fairness"]
    assert day0.metrics["n_trades"] > 0


def test_invalid_scenario_is_rejected():
    s = default_paper_scenario(0)
    with pytest.raises(ScenarioValidationError):
        run_day(s.with_solver(rho=-1.0))

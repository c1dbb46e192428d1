import pytest

from p2pgrid.costs import TABLE_2, EmissionTable, QuadraticCost
from p2pgrid.scenario import AgentSpec, McsSpec, Scenario, SolverParams, StorageSpec

NO_ERB = EmissionTable(())
MCS_COST = QuadraticCost(0.0012, 0.02)
DG_COST = QuadraticCost(0.0004, 0.003)


def one_dg_scenario(emissions=NO_ERB, dg_bounds=(0.0, 1e6), **solver):
    """One DG against the grid, no end-users: the closed-form clearing instance."""
    dg = AgentSpec("DG1", "DG", DG_COST, demand=(0.0,), pv=(0.0,), dg_bounds=dg_bounds)
    return Scenario(1, 1.0, (dg,), McsSpec(MCS_COST, emissions=emissions, initial_price=0.04),
                    solver=SolverParams(**solver))


def household(aid, demand, pv=None, storage=None, kind=None, **kw):
    T = len(demand)
    pv = tuple(pv) if pv is not None else tuple([0.0] * T)
    if kind is None:
        kind = "Prosumer" if any(pv) or storage is not None else "Consumer"
    return AgentSpec(aid, kind, QuadraticCost(0.0004, 0.003), grid_bounds=(-25.0, 25.0),
                     trade_bounds=kw.pop("trade_bounds", (-5.0, 5.0)), demand=tuple(demand), pv=pv,
                     storage=storage, **kw)


def market(users, T=None, dgs=(), emissions=TABLE_2, initial_price=0.04, **solver):
    T = T or len(users[0].demand)
    return Scenario(T, 1.0, tuple(dgs) + tuple(users),
                    McsSpec(MCS_COST, emissions=emissions, initial_price=initial_price),
                    solver=SolverParams(**solver), name="toy")


def pair_market(surplus=1.0, deficit=1.0, **solver):
    """One seller with ``surplus`` kW of PV left over and one buyer short of ``deficit`` kW."""
    seller = household("S", [1.0], pv=[1.0 + surplus])
    buyer = household("B", [deficit])
    return market([seller, buyer], **solver)


@pytest.fixture
def toy_pair():
    return pair_market()


@pytest.fixture
def battery():
    return StorageSpec(capacity=10.0, initial_soc=5.0, power_bounds=(-3.0, 3.0), efficiency=0.95)

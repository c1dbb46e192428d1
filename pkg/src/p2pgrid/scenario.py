"""Scenario description, validation, serialization and the reference test system.

A scenario is one simulated day: end-users (prosumers, consumers), distributed
generators, the microgrid control system (MCS), the communication-graph policy
and every solver knob. Values are immutable once built.

Sign conventions used throughout the package:

* ``p_G > 0``  end-user imports from the microgrid;
* ``p_ij > 0`` end-user ``i`` exports to peer ``j``;
* ``p_es > 0`` storage discharges into the household bus.
"""
from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .costs import TABLE_2, EmissionRow, EmissionTable, QuadraticCost

INF = math.inf
KINDS = ("DG", "Prosumer", "Consumer")


_DIGITS = re.compile(r"(\d+)")


@lru_cache(maxsize=4096)
def _natural_key(text):
    return tuple((0, int(p)) if p.isdigit() else (1, p) for p in _DIGITS.split(text) if p)


def id_key(agent_id):
    """Natural sort key: ``P2`` before ``P10``, ``3`` before ``7``."""
    return _natural_key(str(agent_id))


@dataclass(frozen=True)
class StepSchedule:
    """Positive step sequence ``min(cap, scale / (k + offset))``; its sum diverges."""

    scale: float
    offset: float
    cap: float = INF

    def __call__(self, k: int) -> float:
        return min(self.cap, self.scale / (k + self.offset))


@dataclass(frozen=True)
class StorageSpec:
    capacity: float  # kWh
    initial_soc: float  # kWh
    power_bounds: tuple[float, float]  # kW, (charge limit <= 0, discharge limit >= 0)
    efficiency: float = 0.95


@dataclass(frozen=True)
class AgentSpec:
    id: str
    kind: str
    cost: QuadraticCost
    grid_bounds: tuple[float, float] = (-INF, INF)
    trade_bounds: tuple[float, float] = (-INF, INF)
    demand: tuple[float, ...] = ()
    pv: tuple[float, ...] = ()
    dg_bounds: tuple[float, float] = (0.0, 0.0)
    # per-slot multiplier on the DG upper bound (PV plants produce nothing at night)
    availability: tuple[float, ...] | None = None
    storage: StorageSpec | None = None
    trade_coeff: float = 1.0

    @property
    def is_end_user(self) -> bool:
        return self.kind != "DG"

    def dg_bounds_at(self, slot: int) -> tuple[float, float]:
        lo, hi = self.dg_bounds
        if self.availability is None:
            return lo, hi
        return lo, max(lo, hi * self.availability[slot])


@dataclass(frozen=True)
class McsSpec:
    cost: QuadraticCost
    grid_bounds: tuple[float, float] = (-INF, INF)
    emissions: EmissionTable = TABLE_2
    initial_price: float = 0.04  # $/kWh


@dataclass(frozen=True)
class CommGraphPolicy:
    kind: str = "complete"  # or "k_neighbor"
    k: int = 2


@dataclass(frozen=True)
class SolverParams:
    # market clearing
    rho: float = 2e-4
    price_tol: float = 1e-3
    max_clearing_iters: int = 20000
    mcs_price_responsive: bool = True
    erb_floor: bool = False
    # bilateral negotiation
    mu1: StepSchedule = StepSchedule(2.0, 4.0, 0.4)
    mu2: StepSchedule = StepSchedule(1.0, 10.0)
    eps_outer: float = 1e-3
    eps_p: float = 1e-2
    eps_lambda: float = 1e-3
    delta: float = 1e-2
    dlambda_frac: float = 0.1
    alpha_clamp: tuple[float, float] = (1e-3, 0.5)
    max_rounds: int = 5000
    reciprocity_sign: str = "contract"  # "verbatim" reproduces the printed +mu1
    grid_update: str = "substitute"  # or "gradient"
    grid_step: float = 0.5
    # metrics
    par_basis: str = "grid_import"  # or "consumption"


@dataclass(frozen=True)
class Scenario:
    horizon_slots: int
    slot_length: float
    agents: tuple[AgentSpec, ...]
    mcs: McsSpec
    comm: CommGraphPolicy = CommGraphPolicy()
    solver: SolverParams = SolverParams()
    seed: int = 0
    name: str = ""

    @property
    def end_users(self) -> tuple[AgentSpec, ...]:
        return tuple(a for a in self.agents if a.is_end_user)

    @property
    def dgs(self) -> tuple[AgentSpec, ...]:
        return tuple(a for a in self.agents if a.kind == "DG")

    def agent(self, agent_id) -> AgentSpec:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    def with_solver(self, **changes) -> Scenario:
        return replace(self, solver=replace(self.solver, **changes))


@dataclass(frozen=True)
class CommGraph:
    """Bipartite seller/buyer graph for one slot. Edges are stored as (seller, buyer)."""

    sellers: tuple[str, ...]
    buyers: tuple[str, ...]
    edges: tuple[tuple[str, str], ...] = field(default_factory=tuple)

    def neighbors(self, agent_id) -> list[str]:
        out = [b for s, b in self.edges if s == agent_id]
        out += [s for s, b in self.edges if b == agent_id]
        return sorted(out, key=id_key)

    @cached_property
    def _undirected(self) -> frozenset:
        return frozenset(self.edges) | frozenset((b, s) for s, b in self.edges)

    def has_edge(self, i, j) -> bool:
        return (i, j) in self._undirected


# ---------------------------------------------------------------------------
# validation


class Violation(NamedTuple):
    path: str
    rule: str

    def __str__(self):
        return f"{self.path}: {self.rule}"


class ScenarioError(ValueError):
    pass


class ScenarioParseError(ScenarioError):
    pass


class ScenarioValidationError(ScenarioError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


def _check_interval(out, path, iv):
    lo, hi = iv
    if math.isnan(lo) or math.isnan(hi):
        out.append(Violation(path, "interval bound is NaN"))
    elif lo > hi:
        out.append(Violation(path, f"lower {lo} > upper {hi}"))


def _check_series(out, path, series, T):
    if len(series) != T:
        out.append(Violation(path, f"length {len(series)} != horizon_slots {T}"))
    elif not all(math.isfinite(v) for v in series):
        out.append(Violation(path, "non-finite entry"))


def _check_cost(out, path, q):
    if not all(math.isfinite(v) for v in (q.a, q.b, q.c)):
        out.append(Violation(path, "non-finite coefficient"))
    elif q.a < 0:
        out.append(Violation(f"{path}.a", "curvature must be >= 0"))


def validate(s: Scenario) -> list[Violation]:
    """Return every invariant violation of ``s``; an empty list means valid."""
    out: list[Violation] = []
    T = s.horizon_slots
    if T < 1:
        out.append(Violation("meta.horizon_slots", "must be >= 1"))
    if not s.slot_length > 0:
        out.append(Violation("meta.slot_length", "must be > 0"))

    seen = set()
    for n, a in enumerate(s.agents):
        p = f"agents[{n}]"
        if a.id in seen:
            out.append(Violation(f"{p}.id", f"duplicate id {a.id!r}"))
        seen.add(a.id)
        if a.kind not in KINDS:
            out.append(Violation(f"{p}.kind", f"must be one of {KINDS}"))
        _check_cost(out, f"{p}.cost", a.cost)
        _check_interval(out, f"{p}.grid_bounds", a.grid_bounds)
        _check_interval(out, f"{p}.trade_bounds", a.trade_bounds)
        _check_interval(out, f"{p}.dg_bounds", a.dg_bounds)
        if T >= 1:
            _check_series(out, f"{p}.demand", a.demand, T)
            _check_series(out, f"{p}.pv", a.pv, T)
            if a.availability is not None:
                _check_series(out, f"{p}.availability", a.availability, T)
                if any(v < 0 for v in a.availability):
                    out.append(Violation(f"{p}.availability", "must be >= 0"))
        if a.kind == "Consumer":
            if any(v != 0 for v in a.pv):
                out.append(Violation(f"{p}.pv", "consumer must have zero pv"))
            if a.storage is not None:
                out.append(Violation(f"{p}.storage", "consumer cannot have storage"))
        if a.kind == "DG" and any(v != 0 for v in a.demand):
            out.append(Violation(f"{p}.demand", "DG must have zero demand"))
        if a.storage is not None:
            st = a.storage
            sp = f"{p}.storage"
            if not st.capacity >= 0:
                out.append(Violation(f"{sp}.capacity", "must be >= 0"))
            if not 0 <= st.initial_soc <= st.capacity:
                out.append(Violation(f"{sp}.initial_soc", "must lie in [0, capacity]"))
            lo, hi = st.power_bounds
            if not (lo <= 0 <= hi):
                out.append(Violation(f"{sp}.power_bounds", "need lower <= 0 <= upper"))
            if not 0 < st.efficiency <= 1:
                out.append(Violation(f"{sp}.efficiency", "efficiency ∉ (0,1]"))

    _check_cost(out, "mcs.cost", s.mcs.cost)
    _check_interval(out, "mcs.grid_bounds", s.mcs.grid_bounds)
    if not math.isfinite(s.mcs.initial_price):
        out.append(Violation("mcs.initial_price", "must be finite"))
    for n, row in enumerate(s.mcs.emissions.rows):
        if row.factor < 0 or row.env_cost < 0:
            out.append(Violation(f"mcs.emissions[{n}]", "factors must be >= 0"))

    if s.comm.kind not in ("complete", "k_neighbor"):
        out.append(Violation("comm.policy", "must be 'complete' or 'k_neighbor'"))
    elif s.comm.kind == "k_neighbor" and s.comm.k < 1:
        out.append(Violation("comm.k", "must be >= 1"))

    sp = s.solver
    for name in ("rho", "price_tol", "eps_outer", "eps_p", "eps_lambda", "delta"):
        if not getattr(sp, name) > 0:
            out.append(Violation(f"solver.{name}", "must be > 0"))
    if sp.dlambda_frac < 0:
        out.append(Violation("solver.dlambda_frac", "must be >= 0"))
    for name in ("max_clearing_iters", "max_rounds"):
        if getattr(sp, name) < 1:
            out.append(Violation(f"solver.{name}", "must be >= 1"))
    for name in ("mu1", "mu2"):
        sch = getattr(sp, name)
        if not (sch.scale > 0 and sch.offset > 0 and sch.cap > 0):
            out.append(Violation(f"solver.{name}", "schedule must be positive"))
    _check_interval(out, "solver.alpha_clamp", sp.alpha_clamp)
    if sp.reciprocity_sign not in ("contract", "verbatim"):
        out.append(Violation("solver.reciprocity_sign", "must be 'contract' or 'verbatim'"))
    if sp.grid_update not in ("substitute", "gradient"):
        out.append(Violation("solver.grid_update", "must be 'substitute' or 'gradient'"))
    if sp.par_basis not in ("grid_import", "consumption"):
        out.append(Violation("solver.par_basis", "must be 'grid_import' or 'consumption'"))
    return out


# ---------------------------------------------------------------------------
# communication graph


def build_bipartite_graph(net_positions, policy: CommGraphPolicy = CommGraphPolicy()) -> CommGraph:
    """Partition end-users by the sign of their net position and connect sellers to buyers.

    Net position is ``demand - pv - p_es``; negative means surplus (seller).
    """
    ids = sorted(net_positions, key=id_key)
    sellers = tuple(i for i in ids if net_positions[i] < 0)
    buyers = tuple(i for i in ids if net_positions[i] >= 0)
    if not sellers or not buyers:
        return CommGraph(sellers, buyers, ())
    if policy.kind == "complete":
        edges = [(s, b) for s in sellers for b in buyers]
    elif policy.kind == "k_neighbor":
        k = min(policy.k, len(buyers))
        picked = set()
        for n, s in enumerate(sellers):
            for m in range(k):
                picked.add((s, buyers[(n + m) % len(buyers)]))
        # every buyer keeps at least one seller
        for n, b in enumerate(buyers):
            if not any(e[1] == b for e in picked):
                picked.add((sellers[n % len(sellers)], b))
        edges = sorted(picked, key=lambda e: (id_key(e[0]), id_key(e[1])))
    else:
        raise ValueError(f"unknown graph policy {policy.kind!r}")
    return CommGraph(sellers, buyers, tuple(edges))


# ---------------------------------------------------------------------------
# serialization


def _bound_out(iv):
    return [None if math.isinf(v) else v for v in iv]


def _cost_out(q):
    return {"a": q.a, "b": q.b, "c": q.c, "unit": "usd"}


def scenario_to_dict(s: Scenario) -> dict:
    sp = s.solver
    agents = []
    for a in s.agents:
        d = {
            "id": a.id,
            "kind": a.kind,
            "cost": _cost_out(a.cost),
            "grid_bounds": _bound_out(a.grid_bounds),
            "trade_bounds": _bound_out(a.trade_bounds),
            "demand": list(a.demand),
            "pv": list(a.pv),
            "trade_coeff": a.trade_coeff,
        }
        if a.kind == "DG":
            d["dg_bounds"] = _bound_out(a.dg_bounds)
            if a.availability is not None:
                d["availability"] = list(a.availability)
        if a.storage is not None:
            st = a.storage
            d["storage"] = {
                "capacity": st.capacity,
                "initial_soc": st.initial_soc,
                "power_bounds": list(st.power_bounds),
                "efficiency": st.efficiency,
            }
        agents.append(d)
    return {
        "meta": {
            "name": s.name,
            "horizon_slots": s.horizon_slots,
            "slot_length": s.slot_length,
            "seed": s.seed,
        },
        "mcs": {
            "cost": _cost_out(s.mcs.cost),
            "grid_bounds": _bound_out(s.mcs.grid_bounds),
            "initial_price": s.mcs.initial_price,
            "emissions": [
                {"gas": r.gas, "factor": r.factor, "env_cost": r.env_cost}
                for r in s.mcs.emissions.rows
            ],
        },
        "agents": agents,
        "comm": {"policy": s.comm.kind, "k": s.comm.k},
        "solver": {
            "rho": sp.rho,
            "price_tol": sp.price_tol,
            "max_clearing_iters": sp.max_clearing_iters,
            "mcs_price_responsive": sp.mcs_price_responsive,
            "erb_floor": sp.erb_floor,
            "mu1": {"scale": sp.mu1.scale, "offset": sp.mu1.offset, "cap": _bound_out([sp.mu1.cap])[0]},
            "mu2": {"scale": sp.mu2.scale, "offset": sp.mu2.offset, "cap": _bound_out([sp.mu2.cap])[0]},
            "eps_outer": sp.eps_outer,
            "eps_p": sp.eps_p,
            "eps_lambda": sp.eps_lambda,
            "delta": sp.delta,
            "dlambda_frac": sp.dlambda_frac,
            "alpha_clamp": list(sp.alpha_clamp),
            "max_rounds": sp.max_rounds,
            "reciprocity_sign": sp.reciprocity_sign,
            "grid_update": sp.grid_update,
            "grid_step": sp.grid_step,
            "par_basis": sp.par_basis,
        },
    }


def dumps_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2) + "\n"


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(dumps_scenario(s))


_MISSING = object()


class _Reader:
    """Pulls typed values out of the raw document, recording the field path on error."""

    def __init__(self, base_dir):
        self.base_dir = Path(base_dir) if base_dir is not None else None
        self._csv_cache = {}

    def get(self, d, key, path, default=_MISSING):
        if not isinstance(d, dict):
            raise ScenarioValidationError([Violation(path, "expected an object")])
        if d.get(key) is None:
            if default is _MISSING:
                raise ScenarioValidationError([Violation(f"{path}.{key}".lstrip("."), "required field missing")])
            return default
        return d[key]

    def number(self, d, key, path, default=_MISSING):
        v = self.get(d, key, path, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ScenarioValidationError([Violation(f"{path}.{key}", "expected a number")])
        return float(v)

    def interval(self, d, key, path, default=_MISSING):
        v = self.get(d, key, path, default)
        if isinstance(v, tuple):
            return v
        if not isinstance(v, list) or len(v) != 2:
            raise ScenarioValidationError([Violation(f"{path}.{key}", "expected [lower, upper]")])
        lo = -INF if v[0] is None else v[0]
        hi = INF if v[1] is None else v[1]
        if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in (lo, hi)):
            raise ScenarioValidationError([Violation(f"{path}.{key}", "bounds must be numbers or null")])
        return float(lo), float(hi)

    def cost(self, d, key, path):
        raw = self.get(d, key, path)
        p = f"{path}.{key}".lstrip(".")
        if not isinstance(raw, dict) or "a" not in raw or "b" not in raw:
            raise ScenarioValidationError([Violation(p, "cost needs coefficients a and b")])
        a, b = self.number(raw, "a", p), self.number(raw, "b", p)
        c = self.number(raw, "c", p, 0.0)
        unit = raw.get("unit", "usd")
        if unit in ("cents", "c$"):
            a, b, c = a / 100.0, b / 100.0, c / 100.0
        elif unit not in ("usd", "$"):
            raise ScenarioValidationError([Violation(f"{p}.unit", "must be 'usd' or 'cents'")])
        if a < 0 or not all(math.isfinite(x) for x in (a, b, c)):
            raise ScenarioValidationError([Violation(p, "need finite coefficients with a >= 0")])
        return QuadraticCost(a, b, c)

    def series(self, d, key, path, agent_id, T):
        v = self.get(d, key, path, None)
        if v is None:
            return tuple([0.0] * T)
        if isinstance(v, dict) and "csv" in v:
            column = v.get("column", agent_id)
            return self._csv_column(v["csv"], column, f"{path}.{key}")
        if not isinstance(v, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in v
        ):
            raise ScenarioValidationError([Violation(f"{path}.{key}", "expected a list of numbers or {csv: file}")])
        return tuple(float(x) for x in v)

    def _csv_column(self, ref, column, path):
        fname = Path(ref)
        if not fname.is_absolute():
            if self.base_dir is None:
                raise ScenarioParseError(f"{path}: relative CSV reference needs a base directory")
            fname = self.base_dir / fname
        if fname not in self._csv_cache:
            try:
                with open(fname, newline="") as fh:
                    rows = list(csv.reader(fh))
            except OSError as exc:
                raise ScenarioParseError(f"{path}: cannot read {fname}: {exc}") from exc
            if not rows or not rows[0] or rows[0][0] != "slot":
                raise ScenarioParseError(f"{path}: CSV header must start with 'slot'")
            self._csv_cache[fname] = rows
        rows = self._csv_cache[fname]
        header = rows[0]
        if column not in header:
            raise ScenarioValidationError([Violation(path, f"column {column!r} not in {fname.name}")])
        n = header.index(column)
        try:
            return tuple(float(r[n]) for r in rows[1:] if r)
        except (ValueError, IndexError) as exc:
            raise ScenarioParseError(f"{path}: bad value in {fname.name}: {exc}") from exc


def scenario_from_dict(doc: dict, base_dir=None) -> Scenario:
    r = _Reader(base_dir)
    if not isinstance(doc, dict):
        raise ScenarioParseError("scenario document must be an object")
    meta = r.get(doc, "meta", "")
    T = int(r.number(meta, "horizon_slots", "meta"))
    dt = r.number(meta, "slot_length", "meta")
    seed = int(r.number(meta, "seed", "meta", 0))
    name = str(meta.get("name", ""))

    mcs_raw = r.get(doc, "mcs", "")
    emissions_raw = r.get(mcs_raw, "emissions", "mcs", None)
    if emissions_raw is None:
        emissions = TABLE_2
    else:
        rows = []
        for n, row in enumerate(emissions_raw):
            p = f"mcs.emissions[{n}]"
            rows.append(EmissionRow(str(r.get(row, "gas", p)), r.number(row, "factor", p),
                                    r.number(row, "env_cost", p)))
        emissions = EmissionTable(tuple(rows))
    mcs = McsSpec(
        cost=r.cost(mcs_raw, "cost", "mcs"),
        grid_bounds=r.interval(mcs_raw, "grid_bounds", "mcs", (-INF, INF)),
        emissions=emissions,
        initial_price=r.number(mcs_raw, "initial_price", "mcs", 0.04),
    )

    agents = []
    agents_raw = r.get(doc, "agents", "")
    if not isinstance(agents_raw, list):
        raise ScenarioValidationError([Violation("agents", "expected a list")])
    for n, raw in enumerate(agents_raw):
        p = f"agents[{n}]"
        aid = str(r.get(raw, "id", p))
        kind = r.get(raw, "kind", p)
        storage = None
        st_raw = r.get(raw, "storage", p, None)
        if st_raw is not None:
            sp = f"{p}.storage"
            storage = StorageSpec(
                capacity=r.number(st_raw, "capacity", sp),
                initial_soc=r.number(st_raw, "initial_soc", sp),
                power_bounds=r.interval(st_raw, "power_bounds", sp),
                efficiency=r.number(st_raw, "efficiency", sp, 0.95),
            )
        avail = r.get(raw, "availability", p, None)
        agents.append(
            AgentSpec(
                id=aid,
                kind=kind,
                cost=r.cost(raw, "cost", p),
                grid_bounds=r.interval(raw, "grid_bounds", p, (-INF, INF)),
                trade_bounds=r.interval(raw, "trade_bounds", p, (-INF, INF)),
                demand=r.series(raw, "demand", p, aid, T),
                pv=r.series(raw, "pv", p, aid, T),
                dg_bounds=r.interval(raw, "dg_bounds", p, (0.0, 0.0)),
                availability=None if avail is None else r.series(raw, "availability", p, aid, T),
                storage=storage,
                trade_coeff=r.number(raw, "trade_coeff", p, 1.0),
            )
        )

    comm_raw = doc.get("comm") or {}
    comm = CommGraphPolicy(kind=str(comm_raw.get("policy", "complete")), k=int(comm_raw.get("k", 2)))

    defaults = SolverParams()
    sol = doc.get("solver") or {}
    kw = {}
    for key in ("rho", "price_tol", "eps_outer", "eps_p", "eps_lambda", "delta",
                "dlambda_frac", "grid_step"):
        if key in sol:
            kw[key] = r.number(sol, key, "solver")
    for key in ("max_clearing_iters", "max_rounds"):
        if key in sol:
            kw[key] = int(r.number(sol, key, "solver"))
    for key in ("mcs_price_responsive", "erb_floor"):
        if key in sol:
            kw[key] = bool(sol[key])
    for key in ("reciprocity_sign", "grid_update", "par_basis"):
        if key in sol:
            kw[key] = str(sol[key])
    for key in ("mu1", "mu2"):
        if key in sol:
            m = sol[key]
            cap = m.get("cap")
            kw[key] = StepSchedule(r.number(m, "scale", f"solver.{key}"),
                                   r.number(m, "offset", f"solver.{key}"),
                                   INF if cap is None else float(cap))
    if "alpha_clamp" in sol:
        kw["alpha_clamp"] = r.interval(sol, "alpha_clamp", "solver")
    solver = replace(defaults, **kw)

    s = Scenario(T, dt, tuple(agents), mcs, comm, solver, seed, name)
    problems = validate(s)
    if problems:
        raise ScenarioValidationError(problems)
    return s


def load_scenario(source: str, base_dir=None) -> Scenario:
    """Parse scenario text (JSON) into a validated :class:`Scenario`."""
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"malformed scenario text: {exc}") from exc
    return scenario_from_dict(doc, base_dir)


def read_scenario(path) -> Scenario:
    path = Path(path)
    return load_scenario(path.read_text(), base_dir=path.parent)


# ---------------------------------------------------------------------------
# reference test system


def _pv_shape(hours, start=8.0, stop=18.0):
    x = (hours - start) / (stop - start)
    return np.where((x > 0) & (x < 1), np.sin(np.pi * np.clip(x, 0, 1)), 0.0)


def _load_shape(hours, base, morning, evening):
    return (base
            + morning * np.exp(-0.5 * ((hours - 7.5) / 1.2) ** 2)
            + evening * np.exp(-0.5 * ((hours - 19.5) / 1.8) ** 2))


def _round(arr):
    # 6 decimals keeps files readable and round-trips exactly through JSON
    return tuple(float(v) for v in np.round(arr, 6))


def default_paper_scenario(seed: int = 0, horizon_slots: int = 24, slot_length: float = 1.0) -> Scenario:
    """Two 25 kW PV-plant DGs, five prosumers with PV + battery, five consumers.

    Load: a residential double peak (07:30 and 19:30). PV: a half-sine
    between 08:00 and 18:00. Every household profile carries ±10 % seeded
    multiplicative noise; cost coefficients are drawn from the published ranges.
    """
    rng = np.random.default_rng(seed)
    T, dt = horizon_slots, slot_length
    hours = (np.arange(T) + 0.5) * dt
    zeros = tuple([0.0] * T)

    def end_user_cost():
        return QuadraticCost.from_cents(round(rng.uniform(0.03, 0.05), 6), round(rng.uniform(0.2, 0.5), 6))

    agents = []
    for n in range(1, 3):
        avail = np.clip(_pv_shape(hours, 7.0, 19.0) * (1 + rng.uniform(-0.1, 0.1, T)), 0.0, 1.0)
        agents.append(AgentSpec(
            id=f"DG{n}", kind="DG", cost=end_user_cost(),
            demand=zeros, pv=zeros, dg_bounds=(0.0, 25.0), availability=_round(avail),
        ))

    def household_load():
        base, morning, evening = rng.uniform(0.9, 1.3), rng.uniform(0.8, 1.2), rng.uniform(1.5, 2.5)
        return _load_shape(hours, base, morning, evening) * (1 + rng.uniform(-0.1, 0.1, T))

    for n in range(1, 6):
        peak = round(rng.uniform(3.0, 5.0), 6)
        pv = _pv_shape(hours) * (1 + rng.uniform(-0.1, 0.1, T))
        pv = pv * (peak / pv.max()) if pv.max() > 0 else pv
        capacity = round(rng.uniform(3.0, 7.0), 6)
        agents.append(AgentSpec(
            id=f"P{n}", kind="Prosumer", cost=end_user_cost(),
            grid_bounds=(-25.0, 25.0), trade_bounds=(-5.0, 5.0),
            demand=_round(household_load()), pv=_round(np.minimum(pv, peak)),
            storage=StorageSpec(capacity, round(0.5 * capacity, 6),
                                (-round(0.5 * capacity, 6), round(0.5 * capacity, 6)), 0.95),
        ))
    for n in range(1, 6):
        agents.append(AgentSpec(
            id=f"C{n}", kind="Consumer", cost=end_user_cost(),
            grid_bounds=(-25.0, 25.0), trade_bounds=(-5.0, 5.0),
            demand=_round(household_load()), pv=zeros,
        ))

    mcs = McsSpec(QuadraticCost.from_cents(0.12, 2.0), (-INF, INF), TABLE_2, 0.04)
    return Scenario(T, dt, tuple(agents), mcs, CommGraphPolicy(), SolverParams(), seed,
                    name=f"reference-microgrid-seed{seed}")


def profiles_csv(s: Scenario, attr: str) -> str:
    """Render one profile kind (``demand``/``pv``) as a ``slot,<id>...`` CSV."""
    ids = [a.id for a in s.agents]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["slot", *ids])
    for t in range(s.horizon_slots):
        w.writerow([t, *(repr(getattr(a, attr)[t]) for a in s.agents)])
    return buf.getvalue()

"""Bilateral double-auction negotiation between end-users.

Sellers ask above the retail price, buyers bid below it, and every connected
pair iterates its quoted quantity and price towards agreement:

* quantities contract the reciprocity error ``p_ij + p_ji``;
* prices move towards the partner's quote at rate ``alpha_ij``;
* once both gaps are inside tolerance the agent freezes its quote and sends
  a ``REQ``; the partner answers ``ACK`` (trade) or ``NACK`` (resume).

Rounds are synchronous: in round ``k`` an agent only sees messages sent in
round ``k - 1`` and its own state. Agents are processed in ascending id order
and the outbox is assembled in that order, so runs are reproducible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

from .costs import EmissionTable, erb_rate, erb_value
from .scenario import AgentSpec, CommGraph, Scenario, SolverParams, build_bipartite_graph, id_key

QUOTE, REQ, ACK, NACK = "QUOTE", "REQ", "ACK", "NACK"
KIND_ORDER = {QUOTE: 0, REQ: 1, ACK: 2, NACK: 3}
MIN_TRADE = 1e-6  # kW; smaller agreements close the edge without a trade


class ProtocolViolation(RuntimeError):
    pass


class Quote(NamedTuple):
    frm: str
    to: str
    quantity: float  # kW, > 0 export from ``frm`` to ``to``
    price: float  # $/kWh
    share: float = 0.0  # pi_ij, $
    round: int = 0


class Message(NamedTuple):
    round: int
    frm: str
    to: str
    kind: str
    quantity: float
    price: float
    share: float = 0.0


@dataclass(frozen=True)
class Trade:
    seller: str
    buyer: str
    quantity: float  # kW, magnitude
    price: float  # $/kWh
    slot: int = 0

    def signed_for(self, agent_id) -> float:
        """Export-positive quantity seen from ``agent_id``."""
        return self.quantity if agent_id == self.seller else -self.quantity


@dataclass
class NegotiationState:
    id: str
    role: str  # "seller" or "buyer"
    net: float  # demand - pv - p_es, kW
    pv: float
    grid_bounds: tuple
    trade_bounds: tuple
    trade_coeff: float
    capacity: float  # |net|, the most this agent may trade in total
    grid_power: float = 0.0
    last_grid_delta: float = math.inf
    quotes: dict = field(default_factory=dict)  # neighbour -> own Quote
    echoes: dict = field(default_factory=dict)  # neighbour -> latest QUOTE message received
    frozen: dict = field(default_factory=dict)  # neighbour -> frozen Quote with a pending REQ
    matched: list = field(default_factory=list)
    closed: set = field(default_factory=set)
    neighbors: tuple = ()
    round: int = 0

    @property
    def live(self) -> list:
        return [j for j in self.neighbors if j not in self.closed]

    @property
    def committed(self) -> float:
        if not self.matched:
            return 0.0
        return math.fsum(t.quantity for t in self.matched)

    @property
    def reserved(self) -> float:
        if not self.frozen:
            return 0.0
        return math.fsum(abs(q.quantity) for q in self.frozen.values())

    @property
    def remaining(self) -> float:
        return max(0.0, self.capacity - self.committed - self.reserved)

    def traded(self) -> float:
        """Export-positive sum over matched trades and open quotes."""
        open_q = [self.quotes[j].quantity for j in self.neighbors if j not in self.closed]
        if not self.matched:
            return math.fsum(open_q)
        return math.fsum([t.signed_for(self.id) for t in self.matched] + open_q)

    def edge_bounds(self, n_open: int, remaining: float | None = None) -> tuple:
        """Per-edge quantity bounds: static trade bounds, role sign, and a fair share
        of the remaining tradable quantity so open quotes never over-commit."""
        lo, hi = self.trade_bounds
        if remaining is None:
            remaining = self.remaining
        share = remaining / max(n_open, 1)
        if self.role == "seller":
            return max(lo, 0.0), max(min(hi, share), 0.0)
        return min(max(lo, -share), 0.0), min(hi, 0.0)


# ---------------------------------------------------------------------------
# update rules


def _clamp(x, bounds):
    lo, hi = bounds
    return lo if x < lo else hi if x > hi else x


def role_of(net: float) -> str:
    return "seller" if net < 0 else "buyer"


def initial_price(lam: float, role: str, params: SolverParams) -> float:
    """Sellers ask ``lam + dl``, buyers bid ``lam - dl`` with ``dl = dlambda_frac * |lam|``."""
    dl = params.dlambda_frac * abs(lam)
    return lam + dl if role == "seller" else lam - dl


def share_coeff(agent_pv, grid_power, trade_coeff, emissions: EmissionTable, T: int) -> float:
    """Bilateral share ``pi_ij = pi'_ij * ERB(p_g, p_G)``."""
    return trade_coeff * erb_value(emissions, agent_pv, grid_power, T)


def alpha_coeff(pi_prime, erb, lam, p_ij, p_g, p_G, delta, clamp=(1e-3, 0.5)) -> float:
    """Price-concession rate of one side of a pair.

    ``pi' * erb * lam**2 * (|p_ij| + delta) / (|p_g| + |p_G| + delta)``, then
    clamped into ``clamp`` (pass ``None`` for the raw value).
    """
    if delta <= 0:
        raise ValueError("delta must be > 0")
    raw = pi_prime * erb * lam * lam * (abs(p_ij) + delta) / (abs(p_g) + abs(p_G) + delta)
    if clamp is None:
        return raw
    return _clamp(raw, clamp)


def balance_grid_power(net: float, traded: float, bounds) -> float:
    """Grid exchange closing the household balance ``net - p_G + sum(p_ij) = 0``."""
    return _clamp(net + traded, bounds)


def quantity_update(p_ij, p_ji, mu1, mu2, residual, n_open, bounds, sign="contract") -> float:
    """One quantity step on edge ``i -> j``.

    ``residual`` is the household balance error (positive = unmet deficit),
    shared evenly over the ``n_open`` edges still negotiating.
    """
    reciprocity = p_ij + p_ji
    step = mu1 * reciprocity if sign == "verbatim" else -mu1 * reciprocity
    return _clamp(p_ij + step - mu2 * residual / max(n_open, 1), bounds)


def price_update(lam_ij, lam_ji, alpha) -> float:
    return lam_ij - alpha * (lam_ij - lam_ji)


def thresholds_met(p_ij, p_ji, lam_ij, lam_ji, params: SolverParams) -> bool:
    return abs(p_ij + p_ji) <= params.eps_p and abs(lam_ij - lam_ji) <= params.eps_lambda


def settle(seller_quote: Quote, buyer_quote: Quote, slot: int) -> Trade | None:
    """Trade at the smaller frozen quantity and the midpoint of the frozen prices."""
    q = min(abs(seller_quote.quantity), abs(buyer_quote.quantity))
    if q < MIN_TRADE:
        return None
    return Trade(seller_quote.frm, buyer_quote.frm, q,
                 0.5 * (seller_quote.price + buyer_quote.price), slot)


# ---------------------------------------------------------------------------
# protocol


@dataclass(frozen=True)
class AuctionContext:
    """Read-only data every agent needs: parameters and the retail price."""

    params: SolverParams
    lam: float
    slot: int
    emissions: EmissionTable
    T: int
    graph: CommGraph

    @cached_property
    def erb_per_kw(self) -> float:
        return erb_rate(self.emissions) / self.T


def init_quotes(agent: AgentSpec, slot: int, lam: float, neighbors, params: SolverParams,
                p_es: float = 0.0, emissions: EmissionTable | None = None, T: int = 24) -> NegotiationState:
    """Initial grid power ``p_G = net`` and an even split of it over the neighbours."""
    net = agent.demand[slot] - agent.pv[slot] - p_es
    role = role_of(net)
    neighbors = tuple(sorted(neighbors, key=id_key))
    st = NegotiationState(
        id=agent.id, role=role, net=net, pv=agent.pv[slot],
        grid_bounds=agent.grid_bounds, trade_bounds=agent.trade_bounds,
        trade_coeff=agent.trade_coeff, capacity=abs(net), neighbors=neighbors,
    )
    st.grid_power = _clamp(net, agent.grid_bounds)
    if not neighbors:
        return st
    share = share_coeff(st.pv, st.grid_power, st.trade_coeff, emissions, T) if emissions else 0.0
    price = initial_price(lam, role, params)
    bounds = st.edge_bounds(len(neighbors))
    for j in neighbors:
        q = _clamp(-net / len(neighbors), bounds)
        st.quotes[j] = Quote(agent.id, j, q, price, share, 0)
    return st


def grid_power_update(st: NegotiationState, params: SolverParams, traded: float | None = None) -> float:
    """Refresh ``p_G`` for the current quotes and record ``|delta p_G|``."""
    if traded is None:
        traded = st.traded()
    target = balance_grid_power(st.net, traded, st.grid_bounds)
    if params.grid_update == "gradient":
        new = _clamp(st.grid_power + params.grid_step * (target - st.grid_power), st.grid_bounds)
    else:
        new = target
    st.last_grid_delta = abs(new - st.grid_power)
    st.grid_power = new
    return new


def balance_residual(st: NegotiationState) -> float:
    return st.net + st.traded() - st.grid_power


def try_match(st: NegotiationState, candidates, params: SolverParams):
    """Pick the lowest-id neighbour whose thresholds hold; return it or ``None``."""
    if st.frozen:
        return None  # one pending request at a time
    eligible = []
    for j in candidates:
        if j in st.closed or j in st.frozen or j not in st.echoes:
            continue
        mine, theirs = st.quotes[j], st.echoes[j]
        if thresholds_met(mine.quantity, theirs.quantity, mine.price, theirs.price, params):
            eligible.append(j)
    if not eligible:
        return None
    return min(eligible, key=id_key)


def _trade_from(st, mine: Quote, theirs: Quote, slot):
    if st.role == "seller":
        return settle(mine, theirs, slot)
    return settle(theirs, mine, slot)


def handle_req_ack(st: NegotiationState, req: Message, ctx: AuctionContext):
    """Answer a ``REQ``. Returns ``(reply_kind, trade_or_None)``; the state is updated."""
    i = req.frm
    if i not in st.neighbors:
        raise ProtocolViolation(f"{st.id}: REQ from non-neighbour {i}")
    if i in st.closed:
        return NACK, None
    theirs = Quote(i, st.id, req.quantity, req.price, req.share, req.round)
    if i in st.frozen:
        # crossing requests: both sides settle on the two frozen quotes, no reply needed
        mine = st.frozen.pop(i)
        ok = thresholds_met(mine.quantity, theirs.quantity, mine.price, theirs.price, ctx.params)
        trade = _trade_from(st, mine, theirs, ctx.slot) if ok else None
        if trade is not None:
            st.matched.append(trade)
            st.closed.add(i)
            return None, trade
        if ok:
            st.closed.add(i)
        return None, None
    mine = st.quotes[i]
    ok = thresholds_met(mine.quantity, theirs.quantity, mine.price, theirs.price, ctx.params)
    trade = _trade_from(st, mine, theirs, ctx.slot) if ok else None
    if trade is None:
        if ok:  # agreement on (almost) nothing
            st.closed.add(i)
        return NACK, None
    if st.committed + st.reserved + trade.quantity > st.capacity + ctx.params.eps_p:
        return NACK, None
    st.matched.append(trade)
    st.closed.add(i)
    return ACK, trade


def _agent_round(st: NegotiationState, inbox, ctx: AuctionContext, k: int):
    """Process one agent for round ``k``; return its outgoing messages."""
    params = ctx.params
    replies = []
    acked = {}
    reqs = []
    for m in inbox:
        if m.frm not in st.neighbors:
            raise ProtocolViolation(f"{st.id}: {m.kind} from non-neighbour {m.frm}")
        if m.kind == QUOTE:
            if m.frm in st.closed:
                continue
            st.echoes[m.frm] = m
        elif m.kind == ACK:
            if m.frm not in st.frozen:
                raise ProtocolViolation(f"{st.id}: unsolicited ACK from {m.frm}")
            acked[m.frm] = m
        elif m.kind == NACK:
            st.frozen.pop(m.frm, None)
            if m.quantity == 0.0:
                st.closed.add(m.frm)
        elif m.kind == REQ:
            reqs.append(m)
        else:
            raise ProtocolViolation(f"{st.id}: unknown message kind {m.kind}")

    for j, m in acked.items():
        mine = st.frozen.pop(j)
        theirs = Quote(j, st.id, m.quantity, m.price, m.share, m.round)
        trade = _trade_from(st, mine, theirs, ctx.slot)
        if trade is None:
            raise ProtocolViolation(f"{st.id}: ACK from {j} without a tradable quantity")
        st.matched.append(trade)
        st.closed.add(j)

    for m in sorted(reqs, key=lambda m: id_key(m.frm)):
        kind, _ = handle_req_ack(st, m, ctx)
        if kind == ACK:
            q = st.quotes[m.frm]
            replies.append(Message(k, st.id, m.frm, ACK, q.quantity, q.price, q.share))
        elif kind == NACK:
            closed = m.frm in st.closed
            replies.append(Message(k, st.id, m.frm, NACK, 0.0 if closed else st.remaining,
                                   st.quotes[m.frm].price, 0.0))

    # nothing left to trade: withdraw from every open edge
    remaining = st.remaining
    if remaining < MIN_TRADE and not st.frozen:
        for j in st.live:
            st.closed.add(j)
            replies.append(Message(k, st.id, j, NACK, 0.0, st.quotes[j].price, 0.0))

    traded = st.traded()
    grid_power_update(st, params, traded)
    residual = st.net + traded - st.grid_power
    live = st.live
    open_edges = [j for j in live if j not in st.frozen and j in st.echoes]
    bounds = st.edge_bounds(len(open_edges), remaining)
    erb = (st.pv - st.grid_power) * ctx.erb_per_kw
    share = st.trade_coeff * erb
    mu1, mu2 = params.mu1(k), params.mu2(k)
    n_open = len(open_edges)
    sign = params.reciprocity_sign
    # alpha_coeff with everything but |p_ij| fixed for this round
    delta = params.delta
    scale = st.trade_coeff * erb * ctx.lam * ctx.lam / (abs(st.pv) + abs(st.grid_power) + delta)
    a_bounds = params.alpha_clamp
    for j in open_edges:
        mine, theirs = st.quotes[j], st.echoes[j]
        q = quantity_update(mine.quantity, theirs.quantity, mu1, mu2, residual, n_open, bounds, sign)
        alpha = scale * (abs(q) + delta)
        if a_bounds is not None:
            alpha = _clamp(alpha, a_bounds)
        price = price_update(mine.price, theirs.price, alpha)
        st.quotes[j] = Quote(st.id, j, q, price, share, k)

    out = []
    target = try_match(st, open_edges, params)
    if target is not None:
        mine = st.quotes[target]
        # agreement on (almost) nothing: close instead of requesting
        if abs(mine.quantity) < MIN_TRADE and abs(st.echoes[target].quantity) < MIN_TRADE:
            st.closed.add(target)
            out.append(Message(k, st.id, target, NACK, 0.0, mine.price, 0.0))
        else:
            st.frozen[target] = mine
            out.append(Message(k, st.id, target, REQ, mine.quantity, mine.price, mine.share))

    if target is not None and target in st.closed:
        live = st.live
    for j in live:
        q = st.frozen.get(j, st.quotes[j])
        out.append(Message(k, st.id, j, QUOTE, q.quantity, q.price, q.share))
    out.extend(replies)
    st.round = k
    return out


def _order(messages):
    return sorted(messages, key=lambda m: (id_key(m.frm), id_key(m.to), KIND_ORDER[m.kind]))


def step_round(states: dict, inbox, ctx: AuctionContext, k: int):
    """Advance every agent by one synchronous round.

    ``inbox`` holds the messages sent in round ``k - 1``. Returns
    ``(states, outbox)``; ``states`` is updated in place.
    """
    by_dest = {i: [] for i in states}
    for m in inbox:
        if m.to not in states:
            raise ProtocolViolation(f"message to unknown agent {m.to}")
        if not ctx.graph.has_edge(m.frm, m.to):
            raise ProtocolViolation(f"{m.kind} on non-edge {m.frm}->{m.to}")
        by_dest[m.to].append(m)
    outbox = []
    for i in sorted(states, key=id_key):
        outbox.extend(_agent_round(states[i], by_dest[i], ctx, k))
    return states, _order(outbox)


@dataclass
class AuctionResult:
    trades: list
    grid_power: dict
    rounds: int
    converged: bool
    messages: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    graph: CommGraph | None = None
    lam: float = 0.0


def _finish(states, graph, trades, rounds, converged, messages, diagnostics, lam):
    grid = {}
    for i, st in states.items():
        traded = math.fsum(t.signed_for(i) for t in trades if i in (t.seller, t.buyer))
        grid[i] = balance_grid_power(st.net, traded, st.grid_bounds)
    return AuctionResult(trades, grid, rounds, converged, messages, diagnostics, graph, lam)


def negotiate(states: dict, ctx: AuctionContext, record: bool = False) -> AuctionResult:
    """Run rounds until no edge is open and every ``|delta p_G|`` is within ``eps_outer``."""
    params = ctx.params
    messages = []
    outbox = []
    for i in sorted(states, key=id_key):
        st = states[i]
        for j in st.live:
            q = st.quotes[j]
            outbox.append(Message(0, i, j, QUOTE, q.quantity, q.price, q.share))
    outbox = _order(outbox)
    if record:
        messages.extend(outbox)
    diagnostics = []
    converged = False
    k = 0
    try:
        while k < params.max_rounds:
            k += 1
            states, outbox = step_round(states, outbox, ctx, k)
            if record:
                messages.extend(outbox)
            pending = any(m.kind != QUOTE for m in outbox)
            open_edges = any(st.live for st in states.values())
            settled = all(st.last_grid_delta <= params.eps_outer for st in states.values())
            if not open_edges and not pending and settled:
                converged = True
                break
    except ProtocolViolation as exc:
        diagnostics.append(f"slot {ctx.slot}: protocol violation: {exc}")
        return _finish(states, ctx.graph, [], k, False, messages, diagnostics, ctx.lam)
    if not converged:
        diagnostics.append(f"slot {ctx.slot}: round limit {params.max_rounds} reached; "
                           "unmatched quantities fall back to the grid")
    seen = {}
    for i in sorted(states, key=id_key):
        for t in states[i].matched:
            seen.setdefault((t.seller, t.buyer), t)
    trades = [seen[key] for key in sorted(seen, key=lambda e: (id_key(e[0]), id_key(e[1])))]
    return _finish(states, ctx.graph, trades, k, converged, messages, diagnostics, ctx.lam)


def run_auction(s: Scenario, slot: int, lam: float, p_es=None, record: bool = False) -> AuctionResult:
    """Double-auction negotiation among the end-users of ``s`` in one slot.

    ``p_es`` maps agent id to its pre-scheduled storage power (default 0).
    Residual demand not matched peer-to-peer is served by the grid at ``lam``.
    """
    p_es = p_es or {}
    users = sorted(s.end_users, key=lambda a: id_key(a.id))
    net = {a.id: a.demand[slot] - a.pv[slot] - p_es.get(a.id, 0.0) for a in users}
    graph = build_bipartite_graph(net, s.comm)
    ctx = AuctionContext(s.solver, lam, slot, s.mcs.emissions, s.horizon_slots, graph)
    states = {
        a.id: init_quotes(a, slot, lam, graph.neighbors(a.id), s.solver,
                          p_es.get(a.id, 0.0), s.mcs.emissions, s.horizon_slots)
        for a in users
    }
    if lam <= 0 and graph.edges:
        res = _finish(states, graph, [], 0, True, [], [
            f"slot {slot}: non-positive retail price {lam:.6g}; peer-to-peer trading skipped"], lam)
        return res
    return negotiate(states, ctx, record)

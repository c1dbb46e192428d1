import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import household, market, pair_market
from p2pgrid.costs import TABLE_2
from p2pgrid.p2p import (ACK, NACK, QUOTE, REQ, AuctionContext, Message, NegotiationState,
                         ProtocolViolation, Quote, alpha_coeff, balance_grid_power,
                         grid_power_update, handle_req_ack, init_quotes, price_update,
                         quantity_update, run_auction, settle, share_coeff, step_round,
                         thresholds_met, try_match)
from p2pgrid.replay import replay_slot, rows_from_messages
from p2pgrid.scenario import CommGraph, SolverParams, build_bipartite_graph

P = SolverParams()


def _state(aid="i", role="buyer", net=0.0, neighbors=("j",), capacity=None, **kw):
    return NegotiationState(aid, role, net, kw.pop("pv", 0.0), kw.pop("grid_bounds", (-25.0, 25.0)),
                            kw.pop("trade_bounds", (-5.0, 5.0)), 1.0,
                            abs(net) if capacity is None else capacity, neighbors=tuple(neighbors), **kw)


def _ctx(edges, lam=0.04, params=P):
    sellers = tuple(sorted({s for s, _ in edges}))
    buyers = tuple(sorted({b for _, b in edges}))
    return AuctionContext(params, lam, 0, TABLE_2, 24, CommGraph(sellers, buyers, tuple(edges)))


# initial quotes ---------------------------------------------------------


def test_init_buyer_splits_deficit():
    params = SolverParams(dlambda_frac=0.1)
    st_ = init_quotes(household("B", [2.0]), 0, 0.04, ["S1", "S2"], params)
    assert st_.role == "buyer"
    assert [q.quantity for q in st_.quotes.values()] == [-1.0, -1.0]
    assert all(q.price == pytest.approx(0.036) for q in st_.quotes.values())
    assert st_.grid_power == 2.0


def test_init_seller_splits_surplus():
    st_ = init_quotes(household("S", [1.0], pv=[4.0]), 0, 0.04, ["B1", "B2", "B3"], P)
    assert st_.role == "seller"
    assert [q.quantity for q in st_.quotes.values()] == pytest.approx([1.0, 1.0, 1.0])
    assert all(q.price == pytest.approx(0.044) for q in st_.quotes.values())


def test_init_without_neighbours():
    st_ = init_quotes(household("B", [2.5], pv=[0.5], kind="Prosumer"), 0, 0.04, [], P)
    assert st_.quotes == {}
    assert st_.grid_power == 2.0


def test_init_respects_trade_bounds():
    st_ = init_quotes(household("B", [8.0], trade_bounds=(-1.5, 1.5)), 0, 0.04, ["S"], P)
    assert st_.quotes["S"].quantity == -1.5


def test_init_includes_storage_power():
    st_ = init_quotes(household("P", [2.0], pv=[1.0]), 0, 0.04, ["S"], P, p_es=3.0)
    assert st_.net == -2.0 and st_.role == "seller"


# update rules -----------------------------------------------------------


def test_grid_power_pure_residual():
    st_ = _state(net=3.0 - 1.0)
    st_.quotes["j"] = Quote("i", "j", 0.0, 0.04)
    assert grid_power_update(st_, P) == 2.0


def test_grid_power_includes_peer_imports():
    # importing 1 kW from peers leaves 1 kW for the grid: net - p_G + sum(p_ij) = 0
    st_ = _state(net=3.0 - 1.0)
    st_.quotes["j"] = Quote("i", "j", -1.0, 0.04)
    assert grid_power_update(st_, P) == 1.0
    assert st_.net - st_.grid_power + st_.traded() == 0.0


def test_grid_power_clamped_and_delta_recorded():
    st_ = _state(net=30.0, grid_bounds=(-25.0, 25.0))
    st_.quotes["j"] = Quote("i", "j", 0.0, 0.04)
    st_.grid_power = 20.0
    assert grid_power_update(st_, P) == 25.0
    assert st_.last_grid_delta == 5.0


def test_grid_power_gradient_mode_moves_part_way():
    st_ = _state(net=2.0)
    st_.quotes["j"] = Quote("i", "j", 0.0, 0.04)
    assert grid_power_update(st_, SolverParams(grid_update="gradient", grid_step=0.5)) == 1.0


def test_balance_grid_power_clamps():
    assert balance_grid_power(4.0, 1.0, (-2.0, 3.0)) == 3.0


def test_quantity_update_double_fixed_point():
    assert quantity_update(0.7, -0.7, 0.3, 0.1, 0.0, 2, (-5, 5)) == 0.7


def test_quantity_update_reciprocity_step():
    assert quantity_update(-1.0, 0.8, 0.25, 0.1, 0.0, 1, (-5, 5)) == pytest.approx(-0.95)


def test_quantity_update_balance_step():
    assert quantity_update(0.0, 0.0, 0.25, 0.1, 2.0, 1, (-5, 5)) == pytest.approx(-0.2)


def test_quantity_update_clamps():
    assert quantity_update(0.0, 0.0, 0.25, 1.0, 20.0, 1, (-5, 5)) == -5


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 0.4))
def test_contract_sign_shrinks_verbatim_grows(p, q, mu):
    free = (-math.inf, math.inf)
    e = p + q
    c = quantity_update(p, q, mu, 0.0, 0.0, 1, free) + quantity_update(q, p, mu, 0.0, 0.0, 1, free)
    v = (quantity_update(p, q, mu, 0.0, 0.0, 1, free, "verbatim")
         + quantity_update(q, p, mu, 0.0, 0.0, 1, free, "verbatim"))
    assert c == pytest.approx((1 - 2 * mu) * e, abs=1e-12)
    assert v == pytest.approx((1 + 2 * mu) * e, abs=1e-12)


def test_price_update_examples():
    assert price_update(0.04, 0.04, 0.3) == 0.04
    assert price_update(0.05, 0.04, 0.5) == pytest.approx(0.045)
    assert price_update(0.05, 0.04, 0.0) == 0.05


@given(st.floats(0, 1), st.floats(0, 1), st.floats(1e-3, 0.5), st.floats(1e-3, 0.5))
def test_price_gap_contracts(li, lj, ai, aj):
    gap = abs(li - lj)
    new = abs(price_update(li, lj, ai) - price_update(lj, li, aj))
    assert new == pytest.approx((1 - ai - aj) * gap, abs=1e-12)
    assert new <= gap + 1e-15


def test_alpha_reference_magnitude():
    share = share_coeff(3.0, 1.0, 1.0, TABLE_2, 24)
    assert share == pytest.approx(0.0018477, rel=1e-4)
    raw = alpha_coeff(1.0, share, 0.015, 0.5, 3.0, 1.0, 0.01, clamp=None)
    assert raw == pytest.approx(5.29e-8, rel=1e-3)
    assert alpha_coeff(1.0, share, 0.015, 0.5, 3.0, 1.0, 0.01) == 1e-3


def test_alpha_floor_and_consumer_denominator():
    a0 = alpha_coeff(1.0, 1.0, 1.0, 0.0, 0.0, 2.0, 0.01, clamp=None)
    assert a0 == pytest.approx(0.01 / 2.01)
    assert math.isfinite(alpha_coeff(1.0, 1.0, 1.0, 0.5, 0.0, 0.0, 0.01, clamp=None))
    with pytest.raises(ValueError):
        alpha_coeff(1.0, 1.0, 1.0, 0.5, 0.0, 0.0, 0.0)


@given(st.floats(0, 10), st.floats(0, 10))
def test_alpha_ordering_survives_clamp(p1, p2):
    lo, hi = sorted((p1, p2))
    args = dict(pi_prime=1.0, erb=50.0, lam=1.0, p_g=1.0, p_G=1.0, delta=0.01)
    assert alpha_coeff(p_ij=lo, **args) <= alpha_coeff(p_ij=hi, **args)


# matching ---------------------------------------------------------------


def _ready(st_, j, mine, theirs):
    st_.quotes[j] = Quote(st_.id, j, mine[0], mine[1])
    st_.echoes[j] = Quote(j, st_.id, theirs[0], theirs[1])


def test_thresholds_inclusive_boundary():
    assert thresholds_met(P.eps_p, 0.0, 0.04, 0.04 + 0.5 * P.eps_lambda, P)
    assert not thresholds_met(1.0, -1.0, 0.04, 0.04 + 2 * P.eps_lambda, P)


def test_try_match_lowest_id_first():
    st_ = _state(neighbors=("7", "3"))
    _ready(st_, "7", (-1.0, 0.04), (1.0, 0.04))
    _ready(st_, "3", (-1.0, 0.04), (1.0, 0.04))
    assert try_match(st_, ["7", "3"], P) == "3"


def test_try_match_price_gap_blocks():
    st_ = _state()
    _ready(st_, "j", (-1.0, 0.04), (1.0, 0.04 + 2 * P.eps_lambda))
    assert try_match(st_, ["j"], P) is None


def test_try_match_one_pending_request():
    st_ = _state(neighbors=("a", "b"))
    _ready(st_, "a", (-1.0, 0.04), (1.0, 0.04))
    _ready(st_, "b", (-1.0, 0.04), (1.0, 0.04))
    st_.frozen["a"] = st_.quotes["a"]
    assert try_match(st_, ["a", "b"], P) is None


def test_ack_records_trade_at_midpoint():
    j = _state("j", "seller", -1.0, neighbors=("i",))
    j.quotes["i"] = Quote("j", "i", 1.0, 0.0405)
    kind, trade = handle_req_ack(j, Message(3, "i", "j", REQ, -1.0, 0.0400), _ctx([("j", "i")]))
    assert kind == ACK
    assert (trade.seller, trade.buyer, trade.quantity) == ("j", "i", 1.0)
    assert trade.price == pytest.approx(0.04025)
    assert trade.signed_for("j") == -trade.signed_for("i") == 1.0
    assert "i" in j.closed


def test_nack_when_capacity_is_used_up():
    j = _state("j", "seller", -1.0, neighbors=("i", "k"))
    j.quotes["i"] = Quote("j", "i", 1.0, 0.04)
    j.matched.append(settle(Quote("j", "k", 1.0, 0.04), Quote("k", "j", -1.0, 0.04), 0))
    kind, trade = handle_req_ack(j, Message(3, "i", "j", REQ, -1.0, 0.04), _ctx([("j", "i"), ("j", "k")]))
    assert kind == NACK and trade is None


def test_crossing_requests_make_one_trade():
    i = _state("i", "buyer", 1.0, neighbors=("j",))
    j = _state("j", "seller", -1.0, neighbors=("i",))
    i.frozen["j"] = i.quotes["j"] = Quote("i", "j", -1.0, 0.04)
    j.frozen["i"] = j.quotes["i"] = Quote("j", "i", 1.0, 0.04)
    ctx = _ctx([("j", "i")])
    ki, ti = handle_req_ack(i, Message(1, "j", "i", REQ, 1.0, 0.04), ctx)
    kj, tj = handle_req_ack(j, Message(1, "i", "j", REQ, -1.0, 0.04), ctx)
    assert ki is None and kj is None
    assert ti == tj
    assert len({ti, tj}) == 1


def test_req_from_stranger_is_a_violation():
    j = _state("j", "seller", -1.0, neighbors=("i",))
    with pytest.raises(ProtocolViolation):
        handle_req_ack(j, Message(1, "x", "j", REQ, -1.0, 0.04), _ctx([("j", "i")]))


# rounds -----------------------------------------------------------------


def test_step_round_empty_graph():
    states = {"a": _state("a", neighbors=()), "b": _state("b", neighbors=())}
    states, out = step_round(states, [], _ctx([]), 1)
    assert out == []


def test_step_round_agreeing_pairs_request_at_once():
    s = market([household("S", [1.0], pv=[3.0]), household("B1", [1.0]), household("B2", [1.0])],
               dlambda_frac=0.0)
    net = {a.id: a.demand[0] - a.pv[0] for a in s.end_users}
    g = build_bipartite_graph(net)
    states = {a.id: init_quotes(a, 0, 0.04, g.neighbors(a.id), s.solver) for a in s.end_users}
    outbox = [Message(0, i, j, QUOTE, q.quantity, q.price) for i, st_ in states.items()
              for j, q in st_.quotes.items()]
    states, out = step_round(states, outbox, AuctionContext(s.solver, 0.04, 0, TABLE_2, 1, g), 1)
    reqs = {(m.frm, m.to) for m in out if m.kind == REQ}
    for s_, b in g.edges:
        assert (s_, b) in reqs or (b, s_) in reqs


def test_step_round_rejects_non_edge_messages():
    states = {"a": _state("a", neighbors=("b",)), "b": _state("b", neighbors=("a",)),
              "c": _state("c", neighbors=())}
    with pytest.raises(ProtocolViolation):
        step_round(states, [Message(0, "c", "a", QUOTE, 1.0, 0.04)], _ctx([("b", "a")]), 1)


def test_pair_trades_full_surplus():
    res = run_auction(pair_market(1.0, 1.0), 0, 0.04)
    assert res.converged
    assert len(res.trades) == 1
    t = res.trades[0]
    assert (t.seller, t.buyer) == ("S", "B")
    assert t.quantity == pytest.approx(1.0, abs=P.eps_p)
    dl = P.dlambda_frac * 0.04
    assert 0.04 - dl < t.price < 0.04 + dl
    assert res.grid_power["B"] == pytest.approx(0.0, abs=P.eps_p)


def test_pair_trade_limited_by_smaller_side():
    res = run_auction(pair_market(2.0, 0.6), 0, 0.04)
    assert len(res.trades) == 1
    assert res.trades[0].quantity == pytest.approx(0.6, abs=P.eps_p)
    assert res.grid_power["S"] == pytest.approx(-1.4, abs=P.eps_p)


def test_only_buyers_means_no_trades():
    s = market([household("B1", [1.0]), household("B2", [2.0])])
    res = run_auction(s, 0, 0.04)
    assert res.trades == [] and res.converged
    assert res.grid_power == {"B1": 1.0, "B2": 2.0}


def test_non_positive_price_skips_trading():
    res = run_auction(pair_market(), 0, -0.001)
    assert res.trades == []
    assert "skipped" in res.diagnostics[0]


def test_round_limit_is_reported():
    res = run_auction(pair_market(max_rounds=3), 0, 0.04)
    assert not res.converged
    assert "round limit" in res.diagnostics[0]
    assert res.grid_power == {"S": -1.0, "B": 1.0}


def test_auction_is_deterministic():
    s = market([household("S1", [1.0], pv=[2.5]), household("S2", [0.5], pv=[2.0]),
                household("B1", [1.2]), household("B2", [1.7])])
    a = run_auction(s, 0, 0.05, record=True)
    b = run_auction(s, 0, 0.05, record=True)
    assert a.messages == b.messages and a.trades == b.trades


def test_recorded_messages_replay_cleanly():
    s = market([household("S1", [1.0], pv=[2.5]), household("S2", [0.5], pv=[2.0]),
                household("B1", [1.2]), household("B2", [1.7])])
    res = run_auction(s, 0, 0.05, record=True)
    rep = replay_slot(rows_from_messages(res.messages, 0), 0)
    assert rep.ok, rep.violations
    assert sorted((t.seller, t.buyer) for t in rep.trades) == sorted((t.seller, t.buyer) for t in res.trades)
    for t in rep.trades:
        assert rep.monotone_gap((t.seller, t.buyer))


def test_contraction_on_two_agent_toy():
    # 1.5 kW surplus against a 0.6 kW deficit: opening quotes disagree by 0.9 kW
    res = run_auction(pair_market(1.5, 0.6), 0, 0.04, record=True)
    q = {}
    for m in res.messages:
        if m.kind == QUOTE:
            q.setdefault(m.round, {})[m.frm] = m.quantity
    errors = [abs(v["S"] + v["B"]) for k, v in sorted(q.items()) if len(v) == 2]
    assert errors[0] > 0.5
    tail = errors[3:]
    assert all(b < a for a, b in zip(tail, tail[1:]) if a > 0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3).filter(lambda x: abs(x) > 0.05), min_size=2, max_size=6),
       st.floats(0.01, 0.1))
def test_protocol_invariants(nets, lam):
    users = [household(f"U{n}", [max(x, 0.0) + 0.5], pv=[max(-x, 0.0) + 0.5], kind="Prosumer")
             for n, x in enumerate(nets)]
    s = market(users)
    res = run_auction(s, 0, lam, record=True)
    rep = replay_slot(rows_from_messages(res.messages, 0), 0)
    assert rep.ok, rep.violations
    for t in rep.trades:
        assert t.quantity_error <= P.eps_p
        assert t.price_gap <= P.eps_lambda
    ledger = {a.id: [] for a in users}
    for t in res.trades:
        ledger[t.buyer].append(-t.price * t.quantity)
        ledger[t.seller].append(t.price * t.quantity)
    assert math.fsum(x for flows in ledger.values() for x in flows) == 0.0
    deg = {a.id: max(len(res.graph.neighbors(a.id)), 1) for a in users}
    for a in users:
        net = a.demand[0] - a.pv[0]
        traded = math.fsum(t.signed_for(a.id) for t in res.trades if a.id in (t.seller, t.buyer))
        assert abs(net - res.grid_power[a.id] + traded) <= P.eps_p * deg[a.id]
        assert abs(traded) <= abs(net) + P.eps_p

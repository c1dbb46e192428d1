"""Offline replay of a recorded negotiation trace.

Reconstructs per-pair quote convergence for one slot, infers the trades, and
checks that the recorded messages obey the protocol: messages travel only on
edges announced in round 0, every ``ACK`` answers a pending ``REQ``, and a
frozen quote is repeated unchanged until the partner answers.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .p2p import ACK, MIN_TRADE, NACK, QUOTE, REQ
from .scenario import id_key

KINDS = {QUOTE, REQ, ACK, NACK}


@dataclass
class ReplayTrade:
    seller: str
    buyer: str
    round: int
    quantity: float
    price: float
    quantity_error: float = 0.0  # |p_ij + p_ji| of the two frozen quotes
    price_gap: float = 0.0  # |lambda_ij - lambda_ji| of the two frozen quotes


@dataclass
class ReplayReport:
    slot: int
    rounds: int
    edges: list
    trades: list = field(default_factory=list)
    convergence: dict = field(default_factory=dict)  # (seller, buyer) -> [(round, |q+q'|, |p-p'|)]
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def monotone_gap(self, pair) -> bool:
        gaps = [g for _, _, g in self.convergence.get(pair, [])]
        return all(b <= a for a, b in zip(gaps, gaps[1:]))


def rows_from_messages(messages, slot: int) -> list:
    """Trace rows for in-memory messages, as :func:`p2pgrid.export.read_trace` returns them."""
    return [{"slot": slot, "round": m.round, "from": m.frm, "to": m.to, "kind": m.kind,
             "quantity": m.quantity, "price": m.price, "share": m.share} for m in messages]


def _pair(a, b):
    return tuple(sorted((a, b), key=id_key))


def _trade(seller, buyer, k, x, y):
    return ReplayTrade(seller, buyer, k, min(abs(x["quantity"]), abs(y["quantity"])),
                       0.5 * (x["price"] + y["price"]), abs(x["quantity"] + y["quantity"]),
                       abs(x["price"] - y["price"]))


def replay_slot(rows, slot: int) -> ReplayReport:
    """Analyse the trace rows (see :func:`p2pgrid.export.read_trace`) of one slot."""
    msgs = [r for r in rows if r["slot"] == slot]
    msgs.sort(key=lambda r: r["round"])
    rounds = max((r["round"] for r in msgs), default=0)
    report = ReplayReport(slot, rounds, [])

    bad_kind = [r for r in msgs if r["kind"] not in KINDS]
    for r in bad_kind:
        report.violations.append(f"round {r['round']}: unknown kind {r['kind']!r}")

    # edges and roles come from the opening quotes
    edges, sign = set(), {}
    for r in msgs:
        if r["round"] == 0 and r["kind"] == QUOTE:
            edges.add(frozenset((r["from"], r["to"])))
            if r["quantity"] != 0:
                sign[r["from"]] = bool(r["quantity"] > 0)
    report.edges = sorted((_pair(*e) for e in edges), key=lambda e: (id_key(e[0]), id_key(e[1])))
    for r in msgs:
        if r["round"] > 0 and frozenset((r["from"], r["to"])) not in edges:
            report.violations.append(
                f"round {r['round']}: {r['kind']} {r['from']}->{r['to']} on a non-edge")

    def seller_first(a, b):
        if sign.get(a) is False or sign.get(b) is True:
            return b, a
        return a, b

    by_round = {}
    for r in msgs:
        by_round.setdefault(r["round"], []).append(r)

    pending = {}  # (i, j) -> REQ row from i to j awaiting j's answer
    for k in range(rounds + 1):
        batch = by_round.get(k, [])
        # a frozen quote is re-sent verbatim until the sender has seen the answer,
        # which arrives one round after it is sent
        for r in batch:
            req = pending.get((r["from"], r["to"]))
            if r["kind"] == QUOTE and req is not None:
                if (r["quantity"], r["price"], r["share"]) != (req["quantity"], req["price"], req["share"]):
                    report.violations.append(
                        f"round {k}: frozen quote {r['from']}->{r['to']} changed while REQ pending")
        # replies sent in round k answer requests sent before round k
        for r in batch:
            key = (r["to"], r["from"])
            if r["kind"] == ACK:
                req = pending.pop(key, None)
                if req is None or req["round"] >= k:
                    report.violations.append(
                        f"round {k}: ACK {r['from']}->{r['to']} without a pending REQ")
                    continue
                s, b = seller_first(r["to"], r["from"])
                report.trades.append(_trade(s, b, k, req, r))
            elif r["kind"] in (NACK, REQ) and key in pending and pending[key]["round"] < k:
                pending.pop(key)
        for r in batch:
            if r["kind"] != REQ:
                continue
            back = pending.get((r["to"], r["from"]))
            if back is not None and back["round"] == k:
                # crossing requests: a trade unless the edge stays open afterwards
                pending.pop((r["to"], r["from"]))
                later = [m for m in by_round.get(k + 1, []) if {m["from"], m["to"]} == {r["from"], r["to"]}]
                if not later and min(abs(r["quantity"]), abs(back["quantity"])) >= MIN_TRADE:
                    s, b = seller_first(r["from"], r["to"])
                    report.trades.append(_trade(s, b, k, back, r))
                continue
            pending[(r["from"], r["to"])] = r
            same = [m for m in batch if m["kind"] == QUOTE and m["from"] == r["from"] and m["to"] == r["to"]]
            for m in same:
                if (m["quantity"], m["price"], m["share"]) != (r["quantity"], r["price"], r["share"]):
                    report.violations.append(
                        f"round {k}: REQ {r['from']}->{r['to']} differs from the quote it freezes")

    quotes = {}
    for r in msgs:
        if r["kind"] == QUOTE:
            quotes[(r["round"], r["from"], r["to"])] = r
    for t in report.trades:
        series = []
        for k in range(rounds + 1):
            a, b = quotes.get((k, t.seller, t.buyer)), quotes.get((k, t.buyer, t.seller))
            if a is not None and b is not None:
                series.append((k, abs(a["quantity"] + b["quantity"]), abs(a["price"] - b["price"])))
        report.convergence[(t.seller, t.buyer)] = series
    report.trades.sort(key=lambda t: (t.round, id_key(t.seller), id_key(t.buyer)))
    return report


def format_report(rep: ReplayReport) -> str:
    lines = [f"slot {rep.slot}: {len(rep.trades)} trades, {rep.rounds} rounds, {len(rep.edges)} edges"]
    for t in rep.trades:
        pair = (t.seller, t.buyer)
        lines.append(f"{t.seller} -> {t.buyer}: {t.quantity:.6g} kW at {t.price:.6g} $/kWh (round {t.round})")
        lines.append("  round  qty_error    price_gap")
        for k, qe, gap in rep.convergence.get(pair, []):
            lines.append(f"  {k:5d}  {qe:.6e}  {gap:.6e}")
        lines.append(f"  price gap monotone: {'yes' if rep.monotone_gap(pair) else 'no'}")
    if rep.violations:
        lines.append(f"conformance: {len(rep.violations)} violation(s)")
        lines.extend(f"  {v}" for v in rep.violations)
    else:
        lines.append("conformance: ok")
    return "\n".join(lines)

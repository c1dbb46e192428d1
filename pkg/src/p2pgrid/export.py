"""Result files written by ``p2pgrid run`` and read back by ``metrics``/``auction-replay``.

File names and column orders are fixed so runs can be diffed byte-for-byte.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from .engine import SimResult
from .scenario import Scenario, id_key

SUMMARY = "summary.json"
SLOTS = "slots.csv"
PRICE_HISTORY = "price_history.csv"
POWER_BALANCE = "power_balance.csv"
TRADES = "trades.csv"
TRACE = "trace.csv"
P2P_ROUNDS = "p2p_rounds.csv"

TRACE_COLUMNS = ["slot", "round", "from", "to", "kind", "quantity", "price", "share"]


def _num(x):
    return repr(float(x))


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _writer(path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def slot_columns(s: Scenario) -> list:
    cols = ["slot", "lambda", "Pg", "par_component", "dg_total", "p2p_volume", "n_trades",
            "clearing_iters", "auction_rounds"]
    agents = sorted(s.agents, key=lambda a: id_key(a.id))
    cols += [f"p_{a.id}" for a in agents if a.kind == "DG"]
    cols += [f"pG_{a.id}" for a in agents if a.is_end_user]
    cols += [f"soc_{a.id}" for a in agents if a.storage is not None]
    return cols


def write_result(res: SimResult, s: Scenario, out_dir, formats=("csv", "json"),
                 trace: bool = False) -> list:
    """Write every requested export into ``out_dir``; returns the file names written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    agents = sorted(s.agents, key=lambda a: id_key(a.id))

    if "csv" in formats:
        from .engine import par_series

        par_parts = par_series(s, res.slots)
        fh, w = _writer(out / SLOTS)
        with fh:
            w.writerow(slot_columns(s))
            for r, pc in zip(res.slots, par_parts):
                row = [r.slot, _num(r.lam), _num(r.grid_import), _num(pc),
                       _num(math.fsum(r.dg_power.values())),
                       _num(math.fsum(t.quantity for t in r.trades)), len(r.trades),
                       r.clearing_iters, r.auction_rounds]
                row += [_num(r.dg_power[a.id]) for a in agents if a.kind == "DG"]
                row += [_num(r.grid_power[a.id]) for a in agents if a.is_end_user]
                row += [_num(r.soc[a.id]) for a in agents if a.storage is not None]
                w.writerow(row)
        written.append(SLOTS)

        fh, w = _writer(out / PRICE_HISTORY)
        with fh:
            w.writerow(["slot", "iteration", "lambda"])
            for r in res.slots:
                for n, lam in enumerate(r.lambda_history):
                    w.writerow([r.slot, n, _num(lam)])
        written.append(PRICE_HISTORY)

        fh, w = _writer(out / POWER_BALANCE)
        with fh:
            w.writerow(["slot", "agent", "demand", "pv", "p_es", "grid", "p2p_export", "soc"])
            for r in res.slots:
                for a in agents:
                    if not a.is_end_user:
                        continue
                    p2p = math.fsum(t.signed_for(a.id) for t in r.trades if a.id in (t.seller, t.buyer))
                    soc = _num(r.soc[a.id]) if a.id in r.soc else ""
                    w.writerow([r.slot, a.id, _num(a.demand[r.slot]), _num(a.pv[r.slot]),
                                _num(r.p_es[a.id]), _num(r.grid_power[a.id]), _num(p2p), soc])
        written.append(POWER_BALANCE)

        fh, w = _writer(out / TRADES)
        with fh:
            w.writerow(["slot", "seller", "buyer", "quantity", "price"])
            for t in res.trades():
                w.writerow([t.slot, t.seller, t.buyer, _num(t.quantity), _num(t.price)])
        written.append(TRADES)

        fh, w = _writer(out / P2P_ROUNDS)
        with fh:
            w.writerow(["slot", "round", "seller", "buyer", "seller_quantity", "buyer_quantity",
                        "seller_price", "buyer_price"])
            for r in res.slots:
                for row in matched_pair_rounds(r.messages, r.trades):
                    w.writerow([r.slot] + row[:3] + [_num(v) for v in row[3:]])
        written.append(P2P_ROUNDS)

    if trace:
        fh, w = _writer(out / TRACE)
        with fh:
            w.writerow(TRACE_COLUMNS)
            for r in res.slots:
                for m in r.messages:
                    w.writerow([r.slot, m.round, m.frm, m.to, m.kind, _num(m.quantity),
                                _num(m.price), _num(m.share)])
        written.append(TRACE)

    if "json" in formats:
        summary = {
            "scenario": res.scenario_name,
            "seed": res.seed,
            "p2p_enabled": res.p2p_enabled,
            "horizon_slots": res.horizon,
            "metrics": {k: _clean(v) for k, v in res.metrics.items()},
            "agents": {
                a.id: {
                    "kind": a.kind,
                    "cash": res.cash[a.id],
                    "unit_cost": res.unit_costs.get(a.id),
                }
                for a in agents
            },
            "mcs_cash": res.cash["MCS"],
            "diagnostics": res.diagnostics,
            "soc_clamps": [list(c) for c in res.soc_clamps],
            "files": sorted(written + [SUMMARY]),
        }
        (out / SUMMARY).write_text(json.dumps(summary, indent=2) + "\n")
        written.append(SUMMARY)
    return written


def matched_pair_rounds(messages, trades) -> list:
    """Per-round quotes of every pair that ended in a trade.

    Rows are ``[round, seller, buyer, q_seller, q_buyer, price_seller, price_buyer]``
    for rounds in which both sides sent a quote.
    """
    pairs = {(t.seller, t.buyer) for t in trades}
    latest = {}
    for m in messages:
        if m.kind != "QUOTE":
            continue
        if (m.frm, m.to) in pairs or (m.to, m.frm) in pairs:
            latest[(m.round, m.frm, m.to)] = m
    rows = []
    for (k, frm, to), m in sorted(latest.items(), key=lambda kv: (kv[0][0], id_key(kv[0][1]), id_key(kv[0][2]))):
        if (frm, to) not in pairs:
            continue
        other = latest.get((k, to, frm))
        if other is not None:
            rows.append([k, frm, to, m.quantity, other.quantity, m.price, other.price])
    return rows


def read_summary(result_dir) -> dict:
    path = Path(result_dir) / SUMMARY
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "metrics" not in doc or "agents" not in doc:
        raise ValueError(f"{path}: not a run summary")
    return doc


def read_trace(path) -> list:
    """Rows of a trace file as dicts with typed fields."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected trace header {reader.fieldnames}")
        for raw in reader:
            rows.append({
                "slot": int(raw["slot"]),
                "round": int(raw["round"]),
                "from": raw["from"],
                "to": raw["to"],
                "kind": raw["kind"],
                "quantity": float(raw["quantity"]),
                "price": float(raw["price"]),
                "share": float(raw["share"]),
            })
    return rows

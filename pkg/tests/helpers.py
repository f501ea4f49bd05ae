"""Shared test utilities: random instance generators and the brute-force
allocation oracle used to cross-check the branch-and-bound optimizer."""
from __future__ import annotations

from itertools import product

import numpy as np

from auctionlab.domain import (
    N_GOODS, TT0, ENT0, EVENT_TYPES,
    ClientPreferences, PriceSchedule, quantity_cost,
    inflight_good, outflight_good, hotel_good, ent_good,
)

TRIPS = [(ad, dd) for ad in range(1, 5) for dd in range(ad + 1, 6)]


def random_clients(rng, n, n_events=3):
    clients = []
    for _ in range(n):
        iad = int(rng.integers(1, 5))
        idd = int(rng.integers(iad + 1, 6))
        ev = [0.0, 0.0, 0.0]
        for e in range(n_events):
            ev[e] = float(rng.integers(0, 201))
        clients.append(ClientPreferences(iad, idd, float(rng.integers(50, 151)), tuple(ev)))
    return clients


def random_instance(rng, n_clients=None, n_events=2):
    """Small random allocation instance (integer prices, sparse holdings)."""
    c_n = int(n_clients if n_clients is not None else rng.integers(1, 4))
    clients = random_clients(rng, c_n, n_events)
    holdings = np.zeros(N_GOODS, dtype=np.int64)
    for g in range(N_GOODS):
        if ENT0 + n_events * 4 <= g < N_GOODS:
            continue  # unused event types stay empty
        if rng.random() < 0.2:
            holdings[g] = int(rng.integers(1, 3))
    prices = np.empty(N_GOODS)
    for g in range(N_GOODS):
        prices[g] = np.inf if rng.random() < 0.15 else float(rng.integers(50, 501))
    prices[ENT0 + n_events * 4:] = np.inf
    hotel_c = rng.choice([1.0, 1.35, 2.0], size=8)
    max_units = np.full(N_GOODS, 8, dtype=np.int64)
    for g in range(ENT0, ENT0 + 12):
        if rng.random() < 0.3:
            max_units[g] = int(rng.integers(0, 3))
    sched = PriceSchedule(prices=prices, hotel_c=hotel_c, max_units=max_units)
    return holdings, sched, clients


def _ticket_gain(town_days, evs, sched, holdings, n_events):
    """Exact best sum(EV) - entertainment purchase cost via a day-by-day DP
    over per-client used-event masks."""
    c_n = len(town_days)
    bits = n_events
    nstates = (1 << bits) ** c_n
    state_idx = np.arange(nstates, dtype=np.int64)
    dp = np.full(nstates, -np.inf)
    dp[0] = 0.0
    for d in range(1, 5):
        options = []
        for c in range(c_n):
            opts = [0]
            if d in town_days[c]:
                opts.extend(range(1, n_events + 1))
            options.append(opts)
        new = dp.copy()
        for choice in product(*options):
            counts = [0] * n_events
            gain = 0.0
            for c, ch in enumerate(choice):
                if ch:
                    counts[ch - 1] += 1
                    gain += evs[c][ch - 1]
            feasible = True
            for e in range(n_events):
                if not counts[e]:
                    continue
                g = ent_good(EVENT_TYPES[e], d)
                need = max(0, counts[e] - holdings[g])
                if need:
                    if not np.isfinite(sched.prices[g]) or need > sched.max_units[g]:
                        feasible = False
                        break
                    gain -= need * sched.prices[g]
            if not feasible:
                continue
            add = 0
            valid = np.ones(nstates, dtype=bool)
            for c, ch in enumerate(choice):
                if ch:
                    bit = 1 << (bits * c + ch - 1)
                    valid &= (state_idx & bit) == 0
                    add += bit
            src = state_idx[valid]
            np.maximum.at(new, src + add, dp[src] + gain)
        dp = new
    return float(dp.max())


def oracle_opt_value(holdings, sched: PriceSchedule, clients, n_events=3) -> float:
    """Brute force over all package-shell profiles with an exact ticket DP.
    Independent of the LP/branch-and-bound code path."""
    c_n = len(clients)
    shells = [None] + [(ad, dd, ht) for (ad, dd) in TRIPS for ht in ("TT", "SS")]
    ticket_cache: dict = {}
    best = 0.0
    for combo in product(range(len(shells)), repeat=c_n):
        base = 0.0
        usage = np.zeros(N_GOODS, dtype=np.int64)
        town_days = []
        evs = []
        for c, si in enumerate(combo):
            if si == 0:
                continue
            ad, dd, ht = shells[si]
            p = clients[c]
            base += 1000.0 - 100.0 * (abs(ad - p.iad) + abs(dd - p.idd))
            if ht == "TT":
                base += p.hp
            usage[inflight_good(ad)] += 1
            usage[outflight_good(dd)] += 1
            for n in range(ad, dd):
                usage[hotel_good(ht, n)] += 1
            town_days.append(frozenset(range(ad, dd)))
            evs.append(p.ev)
        feasible = True
        for g in range(ENT0):
            need = max(0, int(usage[g]) - int(holdings[g]))
            if need == 0:
                continue
            if not np.isfinite(sched.prices[g]) or need > sched.max_units[g]:
                feasible = False
                break
            if TT0 <= g < ENT0:
                base -= quantity_cost(sched.prices[g], need, sched.hotel_c[g - TT0])
            else:
                base -= need * sched.prices[g]
        if not feasible:
            continue
        key = (tuple(town_days), tuple(evs))
        if key not in ticket_cache:
            ticket_cache[key] = _ticket_gain(town_days, evs, sched, holdings, n_events)
        best = max(best, base + ticket_cache[key])
    return best

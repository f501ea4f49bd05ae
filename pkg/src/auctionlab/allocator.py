"""Allocation engine: client package utilities, the owned-goods value v,
the exact purchase optimizer, and its LP relaxation.

The core object is AllocationLp, one LP per client list. Columns are
client-package selections (20 per client: 10 trip windows x 2 hotel types),
ticket assignments (3 event types x 4 days per client) and purchase
variables (linear for flights/entertainment, per-unit with nondecreasing
marginal cost for hotels, which makes the relaxation an upper bound on the
quantity-cost model). Prices, purchase caps and holdings are mutated in
place between solves so the underlying solver can warm start; the agent
layer re-solves this LP thousands of times per game.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np

from .domain import (
    N_GOODS, N_AGENTS_MAX, TT0, SS0, ENT0, EVENT_TYPES,
    ClientPreferences, TravelPackage, PriceSchedule,
    client_utility, quantity_cost, inflight_good, outflight_good,
    hotel_good, ent_good, empty_goods,
)
from .lpsolve import LinearProgram, LpError

# all (AD, DD, hotelType) package shells, fixed order
PACKAGE_SHELLS = tuple(
    (ad, dd, ht)
    for ad in range(1, 5)
    for dd in range(ad + 1, 6)
    for ht in ("TT", "SS")
)
N_SHELLS = len(PACKAGE_SHELLS)  # 20
INT_TOL = 1e-6


@dataclass
class AllocationResult:
    packages: list  # TravelPackage or None, one per client
    purchases: np.ndarray
    objective: float
    bound_gap: float = 0.0
    nodes: int = 0


class AllocationLp:
    """Package-allocation LP for a fixed client list.

    maximize  sum(package utility * z) + sum(event value * w) - purchase cost
    s.t.      per client: sum z <= 1
              per client/day: sum_e w[c,e,d] <= in-town indicator from z
              per client/event: sum_d w[c,e,d] <= 1
              per good: usage - purchases <= holdings
    """

    def __init__(self, clients):
        self.clients = list(clients)
        c_n = len(self.clients)
        self.n_clients = c_n
        self.max_hotel_units = max(c_n, 1)
        k_h = self.max_hotel_units

        # column layout
        self.z0 = 0
        self.w0 = c_n * N_SHELLS
        self.uf0 = self.w0 + c_n * 12            # 8 flight purchase cols
        self.ue0 = self.uf0 + 8                  # 12 entertainment cols
        self.uh0 = self.ue0 + 12                 # 8 * k_h hotel unit cols
        ncol = self.uh0 + 8 * k_h

        # row layout
        self.r_client0 = 0
        self.r_day0 = c_n
        self.r_event0 = c_n + 4 * c_n
        self.r_cap0 = self.r_event0 + 3 * c_n
        nrow = self.r_cap0 + N_GOODS

        costs = np.zeros(ncol)
        col_lb = np.zeros(ncol)
        col_ub = np.ones(ncol)
        row_lb = np.full(nrow, -np.inf)
        row_ub = np.zeros(nrow)
        row_ub[self.r_client0:self.r_client0 + c_n] = 1.0
        row_ub[self.r_event0:self.r_event0 + 3 * c_n] = 1.0
        # capacity RHS = holdings, set later

        entries = [[] for _ in range(ncol)]
        for c, prefs in enumerate(self.clients):
            for s, (ad, dd, ht) in enumerate(PACKAGE_SHELLS):
                j = self.z0 + c * N_SHELLS + s
                costs[j] = client_utility(prefs, TravelPackage(ad, dd, ht))
                entries[j].append((self.r_client0 + c, 1.0))
                entries[j].append((self.r_cap0 + inflight_good(ad), 1.0))
                entries[j].append((self.r_cap0 + outflight_good(dd), 1.0))
                for n in range(ad, dd):
                    entries[j].append((self.r_cap0 + hotel_good(ht, n), 1.0))
                for d in range(ad, dd):
                    entries[j].append((self.r_day0 + c * 4 + d - 1, -1.0))
            for e, ev_type in enumerate(EVENT_TYPES):
                for d in range(1, 5):
                    j = self.w0 + c * 12 + e * 4 + (d - 1)
                    costs[j] = prefs.ev[e]
                    entries[j].append((self.r_day0 + c * 4 + d - 1, 1.0))
                    entries[j].append((self.r_event0 + c * 3 + e, 1.0))
                    entries[j].append((self.r_cap0 + ent_good(ev_type, d), 1.0))
        for g in range(8):
            entries[self.uf0 + g].append((self.r_cap0 + g, -1.0))
        for g in range(12):
            entries[self.ue0 + g].append((self.r_cap0 + ENT0 + g, -1.0))
        for g in range(8):
            for k in range(k_h):
                entries[self.uh0 + g * k_h + k].append((self.r_cap0 + TT0 + g, -1.0))

        a_start = [0]
        a_index, a_value = [], []
        for j in range(ncol):
            for (i, v) in sorted(entries[j]):
                a_index.append(i)
                a_value.append(v)
            a_start.append(len(a_index))

        self._flight_cols = np.arange(self.uf0, self.uf0 + 8, dtype=np.int32)
        self._ent_cols = np.arange(self.ue0, self.ue0 + 12, dtype=np.int32)
        self._hotel_cols = np.arange(self.uh0, self.uh0 + 8 * k_h, dtype=np.int32)
        self._binary_cols = np.arange(0, self.uf0, dtype=np.int32)
        self.lp = LinearProgram(ncol, nrow, costs, col_lb, col_ub,
                                row_lb, row_ub, a_start, a_index, a_value)
        self._holdings = empty_goods()
        self._schedule = None
        self.set_schedule(PriceSchedule.unavailable())
        self.set_holdings(self._holdings)

    # -- configuration -------------------------------------------------

    def set_schedule(self, sched: PriceSchedule) -> None:
        self._schedule = sched
        k_h = self.max_hotel_units
        prices = sched.prices
        # flights: linear price, ub = purchasable cap
        avail_f = np.isfinite(prices[:8])
        self.lp.set_costs(self._flight_cols, np.where(avail_f, -prices[:8], 0.0))
        caps_f = np.where(avail_f, np.minimum(sched.max_units[:8], N_AGENTS_MAX), 0)
        self.lp.set_col_bounds(self._flight_cols, np.zeros(8), caps_f.astype(float))
        # entertainment: linear
        pe = prices[ENT0:ENT0 + 12]
        avail_e = np.isfinite(pe)
        self.lp.set_costs(self._ent_cols, np.where(avail_e, -pe, 0.0))
        caps_e = np.where(avail_e, np.minimum(sched.max_units[ENT0:ENT0 + 12],
                                              N_AGENTS_MAX), 0)
        self.lp.set_col_bounds(self._ent_cols, np.zeros(12), caps_e.astype(float))
        # hotels: per-unit marginal costs
        ph = prices[TT0:TT0 + 8]
        hcosts = np.zeros(8 * k_h)
        hub = np.zeros(8 * k_h)
        ks = np.arange(1, k_h + 1, dtype=float)
        for g in range(8):
            if np.isfinite(ph[g]):
                c = sched.hotel_c[g]
                totals = ks * ph[g] * c ** np.maximum(0, ks - 2)
                marg = np.diff(np.concatenate([[0.0], totals]))
                hcosts[g * k_h:(g + 1) * k_h] = -marg
                cap = min(k_h, int(sched.max_units[TT0 + g]))
                hub[g * k_h:g * k_h + cap] = 1.0
        self.lp.set_costs(self._hotel_cols, hcosts)
        self.lp.set_col_bounds(self._hotel_cols, np.zeros(8 * k_h), hub)

    def set_holdings(self, holdings) -> None:
        h = np.asarray(holdings, dtype=np.int64)
        for g in range(N_GOODS):
            if h[g] != self._holdings[g]:
                self.lp.set_row_bounds(self.r_cap0 + g, -np.inf, float(h[g]))
        self._holdings = h.copy()

    def set_holding(self, good: int, value: int) -> None:
        if value != self._holdings[good]:
            self._holdings[good] = value
            self.lp.set_row_bounds(self.r_cap0 + good, -np.inf, float(value))

    def holdings(self) -> np.ndarray:
        return self._holdings.copy()

    # -- queries --------------------------------------------------------

    def value(self) -> float:
        if self.n_clients == 0:
            return 0.0
        return self.lp.objective()

    def capacity_dual(self, good: int) -> float:
        return self.lp.solve()[2][self.r_cap0 + good]

    def capacity_slack(self, good: int) -> float:
        row_val = self.lp.solve()[3][self.r_cap0 + good]
        return float(self._holdings[good]) - row_val

    def flight_purchase_level(self, flight_good: int) -> float:
        return self.lp.solve()[1][self.uf0 + flight_good]

    # -- exact optimization ----------------------------------------------

    def optimize(self, max_depth: int = 500, max_nodes: int = 50000) -> AllocationResult:
        """Branch-and-bound over the relaxation (best-bound order, binary
        branching on package/ticket selections). Returns the integer-exact
        optimum; if the node/depth budget runs out, returns the best
        incumbent with bound_gap reporting the slack."""
        if self.n_clients == 0:
            return AllocationResult([], empty_goods(), 0.0)
        incumbent = None
        inc_key = None
        inc_obj = -np.inf
        fixed: dict[int, float] = {}

        def apply_fixings(new_fixed):
            nonlocal fixed
            cols = sorted(set(fixed) | set(new_fixed))
            if cols:
                idx = np.array(cols, dtype=np.int32)
                lo = np.array([new_fixed.get(j, 0.0) for j in cols])
                hi = np.array([new_fixed.get(j, 1.0) for j in cols])
                self.lp.set_col_bounds(idx, lo, hi)
            fixed = dict(new_fixed)

        counter = itertools.count()
        heap = [(-np.inf, next(counter), {}, 0)]
        nodes = 0
        worst_open_bound = -np.inf
        while heap:
            neg_bound, _, node_fixed, depth = heapq.heappop(heap)
            if -neg_bound < inc_obj - 1e-9 and np.isfinite(neg_bound):
                continue
            nodes += 1
            if nodes > max_nodes:
                worst_open_bound = max(worst_open_bound, -neg_bound)
                for nb, _, _, _ in heap:
                    worst_open_bound = max(worst_open_bound, -nb)
                break
            apply_fixings(node_fixed)
            try:
                obj, x, _, _ = self.lp.solve()
            except LpError:
                continue  # infeasible branch
            if obj < inc_obj - 1e-9:
                continue
            frac = np.abs(x[self._binary_cols] - np.round(x[self._binary_cols]))
            j_rel = int(np.argmax(frac))
            if frac[j_rel] <= INT_TOL:
                cand = self._extract(x)
                key = (-cand.objective, int(cand.purchases.sum()),
                       tuple(cand.purchases))
                if cand.objective > inc_obj + 1e-9 or (
                        incumbent is not None
                        and abs(cand.objective - inc_obj) <= 1e-9
                        and key < inc_key):
                    incumbent, inc_key, inc_obj = cand, key, cand.objective
                elif incumbent is None:
                    incumbent, inc_key, inc_obj = cand, key, cand.objective
                continue
            if depth >= max_depth:
                worst_open_bound = max(worst_open_bound, obj)
                continue
            j = int(self._binary_cols[j_rel])
            for val in (1.0, 0.0):
                child = dict(node_fixed)
                child[j] = val
                heapq.heappush(heap, (-obj, next(counter), child, depth + 1))
        apply_fixings({})
        if incumbent is None:
            # always feasible: buy nothing, assign nothing
            incumbent = AllocationResult([None] * self.n_clients, empty_goods(), 0.0)
            inc_obj = 0.0
        incumbent.bound_gap = max(0.0, worst_open_bound - inc_obj)
        incumbent.nodes = nodes
        return incumbent

    def _extract(self, x) -> AllocationResult:
        packages = []
        usage = empty_goods()
        for c, prefs in enumerate(self.clients):
            zs = x[self.z0 + c * N_SHELLS:self.z0 + (c + 1) * N_SHELLS]
            s = int(np.argmax(zs))
            if zs[s] < 0.5:
                packages.append(None)
                continue
            ad, dd, ht = PACKAGE_SHELLS[s]
            tickets = []
            for e, ev_type in enumerate(EVENT_TYPES):
                for d in range(1, 5):
                    if x[self.w0 + c * 12 + e * 4 + (d - 1)] > 0.5:
                        tickets.append((ev_type, d))
            pkg = TravelPackage(ad, dd, ht, tuple(tickets))
            packages.append(pkg)
            usage += pkg.goods()
        purchases = np.maximum(0, usage - self._holdings)
        total = 0.0
        for prefs, pkg in zip(self.clients, packages):
            total += client_utility(prefs, pkg)
        total -= purchase_cost(purchases, self._schedule)
        return AllocationResult(packages, purchases, total)


def purchase_cost(purchases, sched: PriceSchedule) -> float:
    """Exact cost of a purchase vector: quantity-cost for hotels, linear
    for everything else."""
    purchases = np.asarray(purchases)
    cost = 0.0
    for g in range(N_GOODS):
        q = int(purchases[g])
        if q == 0:
            continue
        p = sched.prices[g]
        if not np.isfinite(p):
            return np.inf
        if TT0 <= g < ENT0:
            cost += quantity_cost(p, q, sched.hotel_c[g - TT0])
        else:
            cost += q * p
    return cost


def v(goods, clients) -> float:
    """Value of owning `goods` outright: best total client utility over all
    assignments, with nothing purchasable. Exact."""
    lp = AllocationLp(clients)
    lp.set_holdings(np.asarray(goods, dtype=np.int64))
    return lp.optimize().objective


def opt(holdings, schedule: PriceSchedule, clients,
        max_depth: int = 500, max_nodes: int = 50000) -> AllocationResult:
    """Optimal purchases and allocation given holdings and prices. Exact
    integer optimum (ties: fewest purchased units, then lexicographic)."""
    lp = AllocationLp(clients)
    lp.set_schedule(schedule)
    lp.set_holdings(np.asarray(holdings, dtype=np.int64))
    return lp.optimize(max_depth=max_depth, max_nodes=max_nodes)


def lp_relaxation_value(holdings, schedule: PriceSchedule, clients) -> float:
    """Value of the continuous relaxation; fast upper bound on opt."""
    if len(list(clients)) == 0:
        return 0.0
    lp = AllocationLp(clients)
    lp.set_schedule(schedule)
    lp.set_holdings(np.asarray(holdings, dtype=np.int64))
    return lp.value()

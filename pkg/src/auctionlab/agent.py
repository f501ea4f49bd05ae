"""Bidding policies.

AdaptiveAgent samples closing-order and price scenarios, values goods by
marginal allocation value under an LP relaxation, and turns those values
into flight purchases, hotel unit bids, and entertainment quotes.
EarlyBidder is the one-shot baseline it is measured against.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np

from .allocator import AllocationLp, opt
from .domain import (
    ENT0,
    GAME_SECONDS,
    N_GOODS,
    PriceSchedule,
    TT0,
)
from .lpsolve import LpError
from .predictors import (
    FlightPriceModel,
    HistoricalPriceTable,
    HotelModelBank,
    condl_mean,
    current_bid,
    flight_predict,
    predict_hotel,
    sample_closing_order,
    simple_mean,
)

log = logging.getLogger(__name__)

HOTEL0 = TT0
SS_START = HOTEL0 + 4
TOL = 1e-6

PREDICTOR_VARIANTS = ("learned_s", "learned_ev", "condl_s", "condl_ev",
                      "simple_s", "simple_ev", "current_bid")

# Variants whose expected-price path ignores both sampling noise and the
# closing order, so every scenario at one decision point is identical.
_ORDER_FREE_VARIANTS = frozenset({"simple_ev", "current_bid"})

# Average drift of the simulated flight quote process per squared
# normalized minute per dollar of hidden parameter; used until a fitted
# model is supplied.
DEFAULT_FLIGHT_SLOPE = 45.0 / 7.0


class AgentInvariantError(AssertionError):
    """A value-ordering invariant failed at runtime."""


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise AgentInvariantError(message)


@dataclass
class AgentConfig:
    """Tunable knobs for AdaptiveAgent."""
    predictor_variant: str = "learned_ev"
    flight_lookahead: int = 3
    scenario_budget: int = 128
    max_units: int = 8
    ent_margin_start: float = 40.0
    ent_margin_end: float = 5.0
    price_impact: bool = True
    c_early_cheap: float = 1.35
    c_early_expensive: float = 1.35
    c_late_cheap: float = 1.35
    c_late_expensive: float = 1.35
    flight_slope: float = DEFAULT_FLIGHT_SLOPE
    seed: int = 0

    def __post_init__(self):
        if self.predictor_variant not in PREDICTOR_VARIANTS:
            raise ValueError(f"unknown predictor variant "
                             f"{self.predictor_variant!r}")
        if self.flight_lookahead < 1:
            raise ValueError("flight_lookahead must be >= 1")
        if self.scenario_budget < 1:
            raise ValueError("scenario_budget must be >= 1")
        if self.max_units < 1:
            raise ValueError("max_units must be >= 1")
        if self.ent_margin_start < 0 or self.ent_margin_end < 0:
            raise ValueError("entertainment margins must be >= 0")
        for name in ("c_early_cheap", "c_early_expensive",
                     "c_late_cheap", "c_late_expensive"):
            if getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be >= 1")
        if self.flight_slope < 0:
            raise ValueError("flight_slope must be >= 0")


_BOOL_WORDS = {"on": True, "true": True, "yes": True, "1": True,
               "off": False, "false": False, "no": False, "0": False}


def parse_agent_config(text: str) -> AgentConfig:
    """Parse flat key-value lines (key = value, # comments) into a config."""
    types = {f.name: f.type for f in fields(AgentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key or not val:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        if key not in types:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        kind = types[key]
        if kind == "bool":
            if val.lower() not in _BOOL_WORDS:
                raise ValueError(f"line {lineno}: bad boolean {val!r}")
            values[key] = _BOOL_WORDS[val.lower()]
        elif kind == "int":
            values[key] = int(val)
        elif kind == "float":
            values[key] = float(val)
        else:
            values[key] = val
    return AgentConfig(**values)


def load_agent_config(path) -> AgentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_agent_config(fh.read())


def split_budget(total: int, parts: int) -> list:
    """Split total samples across parts, remainders going to the front."""
    if parts <= 0:
        return []
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def bid_set_value(bids, marginals, price_samples) -> float:
    """Mean profit of a unit-bid set over sampled clearing prices.

    At clearing price y the units bid at or above y are won and each paid
    for at y; the i-th won unit is worth the i-th marginal value (zero
    beyond the valued copies).
    """
    if not price_samples:
        return 0.0
    bids_sorted = sorted(bids, reverse=True)
    mv = list(marginals) + [0.0] * max(0, len(bids_sorted) - len(marginals))
    total = 0.0
    for y in price_samples:
        wins = sum(1 for b in bids_sorted if b >= y)
        total += sum(mv[:wins]) - wins * y
    return total / len(price_samples)


def maybe_replace_bid(existing, candidate, marginals, price_samples) -> bool:
    """True when the candidate bid set is strictly better in expectation."""
    keep = bid_set_value(existing, marginals, price_samples)
    swap = bid_set_value(candidate, marginals, price_samples)
    return swap > keep + 1e-9


@dataclass(frozen=True)
class _Scenario:
    close_minute: dict
    prices: dict


class AdaptiveAgent:
    """Scenario-sampling decision-theoretic bidder."""

    def __init__(self, config: AgentConfig, bank: HotelModelBank = None,
                 table: HistoricalPriceTable = None,
                 flight_model: FlightPriceModel = None):
        self.config = config
        self.bank = bank if bank is not None else HotelModelBank({}, {})
        self.table = table if table is not None else HistoricalPriceTable()
        self.flight_model = (flight_model if flight_model is not None
                             else FlightPriceModel(config.flight_slope))
        self.rng = np.random.default_rng(config.seed)
        self._lp = None

    # -- scheduling ------------------------------------------------------

    def act(self, view, ops, minute: int) -> None:
        if self._lp is None:
            self._lp = AllocationLp(view.clients)
        if minute in (1, 2):
            self._entertainment_pass(view, ops)
            return
        expected = self._expected_schedule(view)
        gstar = self._gstar(view, expected)
        if minute == 11:
            for f in range(8):
                qty = int(round(gstar.purchases[f]))
                if qty > 0:
                    ops.buy_flight(f, view.snapshot.flight_ask[f], qty=qty)
        else:
            self._flight_pass(view, ops, gstar)
            if 3 <= minute <= 10:
                self._hotel_pass(view, ops, expected)
        self._entertainment_pass(view, ops)

    # -- shared machinery --------------------------------------------------

    def _open_rooms(self, view) -> list:
        return [HOTEL0 + s for s in range(8)
                if not view.snapshot.hotel_closed[s]]

    def _impact_c(self, room: int, close_minute) -> float:
        cfg = self.config
        kind = "expensive" if room < SS_START else "cheap"
        if close_minute is None:
            return (getattr(cfg, f"c_early_{kind}")
                    + getattr(cfg, f"c_late_{kind}")) / 2.0
        phase = "early" if close_minute <= 7 else "late"
        return getattr(cfg, f"c_{phase}_{kind}")

    def _prediction(self, view, room: int, order: dict):
        variant = self.config.predictor_variant
        snap = view.snapshot
        if variant == "current_bid":
            return current_bid(snap, room)
        if variant.startswith("simple"):
            return simple_mean(self.table, snap, room, variant.split("_")[1])
        if variant.startswith("condl"):
            return condl_mean(self.table, snap, room, order[room],
                              variant.split("_")[1])
        return predict_hotel(self.bank, snap, room, order)

    def _scenario_price(self, view, room: int, order: dict) -> float:
        pred = self._prediction(view, room, order)
        if self.config.predictor_variant.endswith("_ev"):
            price = pred.mean()
        else:
            price = pred.sample(self.rng)
        ask = view.snapshot.hotel_ask[room - HOTEL0]
        _check(price >= ask - TOL,
               f"prediction {price} below current price {ask}")
        return price

    def _draw_scenarios(self, view, count: int) -> list:
        open_rooms = self._open_rooms(view)
        if not open_rooms or self.config.predictor_variant in _ORDER_FREE_VARIANTS:
            count = 1
        scenarios = []
        for _ in range(count):
            order = sample_closing_order(open_rooms, view.minute, self.rng)
            prices = {room: self._scenario_price(view, room, order)
                      for room in open_rooms}
            scenarios.append(_Scenario(close_minute=order, prices=prices))
        return scenarios

    def _schedule_from_prices(self, view, hotel_prices: dict,
                              close_minutes: dict) -> PriceSchedule:
        prices = np.full(N_GOODS, np.inf)
        prices[:8] = view.snapshot.flight_ask
        hotel_c = np.ones(8)
        for room, price in hotel_prices.items():
            prices[room] = price
            if self.config.price_impact:
                hotel_c[room - HOTEL0] = self._impact_c(
                    room, close_minutes.get(room))
        return PriceSchedule(prices=prices, hotel_c=hotel_c)

    def _expected_schedule(self, view) -> PriceSchedule:
        """Point-estimate prices for the exact target-allocation solve."""
        open_rooms = self._open_rooms(view)
        order = sample_closing_order(open_rooms, view.minute, self.rng)
        hotel_prices = {}
        for room in open_rooms:
            price = self._prediction(view, room, order).mean()
            ask = view.snapshot.hotel_ask[room - HOTEL0]
            _check(price >= ask - TOL,
                   f"prediction {price} below current price {ask}")
            hotel_prices[room] = price
        return self._schedule_from_prices(view, hotel_prices, order)

    def _gstar(self, view, schedule: PriceSchedule):
        self._lp.set_schedule(schedule)
        self._lp.set_holdings(np.asarray(view.holdings, dtype=np.int64))
        return self._lp.optimize()

    def _scenario_schedule(self, view, sc: _Scenario,
                           exclude=None) -> PriceSchedule:
        hotel_prices = {room: p for room, p in sc.prices.items()
                        if room != exclude}
        return self._schedule_from_prices(view, hotel_prices, sc.close_minute)

    def _committed_holdings(self, view, sc: _Scenario, target: int):
        """Treat outstanding bids above the sampled price as owned."""
        held = np.asarray(view.holdings, dtype=np.int64).copy()
        for room, bid_prices in view.own_hotel_bids.items():
            if room == target or room not in sc.prices:
                continue
            held[room] += sum(1 for b in bid_prices if b > sc.prices[room])
        return held

    # -- hotels ------------------------------------------------------------

    def _hotel_value_chain(self, room: int, base: int, n: int) -> list:
        """V_0..V_n for owning extra copies of one unbuyable room."""
        lp = self._lp
        lp.set_holding(room, base)
        values = [lp.value()]
        if lp.capacity_dual(room) <= 1e-9:
            values.extend([values[0]] * n)
        else:
            prev_diff = np.inf
            for i in range(1, n + 1):
                lp.set_holding(room, base + i)
                vi = lp.value()
                diff = vi - values[-1]
                _check(diff >= -TOL, f"hotel value chain decreased ({diff})")
                _check(diff <= prev_diff + TOL,
                       f"hotel marginal value increased ({diff} after {prev_diff})")
                values.append(vi)
                prev_diff = diff
                if diff <= 1e-9:
                    values.extend([vi] * (n - i))
                    break
        lp.set_holding(room, base)
        return values

    def _hotel_pass(self, view, ops, expected: PriceSchedule) -> None:
        open_rooms = self._open_rooms(view)
        if not open_rooms:
            return
        open_rooms.sort(key=lambda r: (expected.prices[r], r))
        budgets = split_budget(self.config.scenario_budget, len(open_rooms))
        n = self.config.max_units
        for room, budget in zip(open_rooms, budgets):
            scenarios = self._draw_scenarios(view, max(1, budget))
            sums = np.zeros(n)
            used = 0
            price_samples = []
            for sc in scenarios:
                try:
                    self._lp.set_schedule(
                        self._scenario_schedule(view, sc, exclude=room))
                    held = self._committed_holdings(view, sc, room)
                    self._lp.set_holdings(held)
                    values = self._hotel_value_chain(room, int(held[room]), n)
                except LpError as exc:
                    log.warning("scenario dropped for good %d: %s", room, exc)
                    continue
                sums += np.diff(values)
                used += 1
                price_samples.append(sc.prices[room])
            if used == 0:
                continue
            marginals = sums / used
            _check(all(marginals[i] >= marginals[i + 1] - TOL
                       for i in range(len(marginals) - 1)),
                   "hotel unit bids must be nonincreasing")
            ask = view.snapshot.hotel_ask[room - HOTEL0]
            candidate = [float(m) for m in marginals if m >= ask + 1.0]
            existing = view.own_hotel_bids.get(room)
            if existing is not None:
                if maybe_replace_bid(existing, candidate, list(marginals),
                                     price_samples) and candidate:
                    ops.bid_hotel(room, candidate)
            elif candidate:
                ops.bid_hotel(room, candidate)

    # -- flights -----------------------------------------------------------

    def _flight_value_chain(self, view, flight: int, n: int) -> list:
        """V_0..V_n when forced to buy copies of one flight now."""
        lp = self._lp
        base = int(view.holdings[flight])
        ask = view.snapshot.flight_ask[flight]
        lp.set_holding(flight, base)
        values = [lp.value()]
        free_level = lp.flight_purchase_level(flight)
        for i in range(1, n + 1):
            if free_level >= 1.0 - TOL:
                values.append(values[-1])
                free_level -= 1.0
                continue
            lp.set_holding(flight, base + i)
            vi = lp.value() - i * ask
            _check(vi <= values[-1] + TOL,
                   f"flight value chain increased ({vi} > {values[-1]})")
            values.append(vi)
            free_level = lp.flight_purchase_level(flight)
        lp.set_holding(flight, base)
        return values

    def _postpone_cost(self, view, flight: int) -> float:
        ask = view.snapshot.flight_ask[flight]
        first = (0.0, view.flight_first[flight])
        latest = (view.flight_last_change[flight], ask)
        horizon = self.config.flight_lookahead
        predicted = [
            flight_predict(self.flight_model, first, latest,
                           view.clock, min(GAME_SECONDS, view.clock + 60 * j))
            for j in range(1, horizon + 1)
        ]
        return max(0.0, float(np.mean(predicted)) - ask)

    def _flight_pass(self, view, ops, gstar) -> None:
        pending = [(f, int(round(gstar.purchases[f])))
                   for f in range(8) if gstar.purchases[f] >= 0.5]
        if not pending:
            return
        budgets = split_budget(max(1, self.config.scenario_budget // 2),
                               len(pending))
        for (flight, wanted), budget in zip(pending, budgets):
            scenarios = self._draw_scenarios(view, max(1, budget))
            sums = np.zeros(wanted)
            used = 0
            for sc in scenarios:
                try:
                    self._lp.set_schedule(self._scenario_schedule(view, sc))
                    self._lp.set_holdings(
                        np.asarray(view.holdings, dtype=np.int64))
                    values = self._flight_value_chain(view, flight, wanted)
                except LpError as exc:
                    log.warning("scenario dropped for good %d: %s",
                                flight, exc)
                    continue
                sums += -np.diff(values)
                used += 1
            if used == 0:
                continue
            benefits = sums / used
            cost = self._postpone_cost(view, flight)
            buy_now = 0
            for i in range(wanted):
                if cost >= benefits[i] - 1e-12:
                    buy_now += 1
                else:
                    break
            if buy_now > 0:
                ops.buy_flight(flight, view.snapshot.flight_ask[flight],
                               qty=buy_now)

    # -- entertainment -------------------------------------------------------

    def _ticket_margin(self, clock: int) -> float:
        cfg = self.config
        frac = clock / GAME_SECONDS
        return cfg.ent_margin_start + frac * (cfg.ent_margin_end
                                              - cfg.ent_margin_start)

    def _entertainment_pass(self, view, ops) -> None:
        for good in list(view.own_ent_orders):
            ops.withdraw_entertainment(good, "buy")
            ops.withdraw_entertainment(good, "sell")
        count = max(1, self.config.scenario_budget // 16)
        scenarios = self._draw_scenarios(view, count)
        margin = self._ticket_margin(view.clock)
        owned = np.asarray(view.holdings, dtype=np.int64).copy()
        for good in range(ENT0, ENT0 + 12):
            have = int(owned[good])
            buy_sum = 0.0
            sell_sum = 0.0
            used = 0
            for sc in scenarios:
                try:
                    self._lp.set_schedule(self._scenario_schedule(view, sc))
                    self._lp.set_holdings(owned)
                    v_n = self._lp.value()
                    self._lp.set_holding(good, have + 1)
                    v_up = self._lp.value()
                    _check(v_up >= v_n - TOL,
                           "extra ticket reduced allocation value")
                    v_down = v_n
                    if have >= 1:
                        self._lp.set_holding(good, have - 1)
                        v_down = self._lp.value()
                        _check(v_down <= v_n + TOL,
                               "losing a ticket raised allocation value")
                    self._lp.set_holding(good, have)
                except LpError as exc:
                    log.warning("scenario dropped for good %d: %s", good, exc)
                    continue
                buy_sum += v_up - v_n
                sell_sum += v_n - v_down
                used += 1
            if used == 0:
                continue
            buy_value = buy_sum / used
            sell_value = sell_sum / used
            bid = buy_value - margin
            if buy_value > TOL and bid > 0.0:
                ops.quote_entertainment(good, "buy", bid, 1)
                best_ask = view.ent_best_ask[good - ENT0]
                if best_ask is not None and bid >= best_ask:
                    owned[good] += 1
            if have >= 1:
                offer = sell_value + margin
                if offer > 0.0:
                    ops.quote_entertainment(good, "sell", offer, 1)
                    best_bid = view.ent_best_bid[good - ENT0]
                    if best_bid is not None and offer <= best_bid:
                        owned[good] -= 1


class EarlyBidder:
    """One-shot baseline: buys its target set at the opening quotes.

    Computes the optimal purchase set under mean historical hotel prices
    (current ask when no history), buys every flight in it immediately,
    bids $1001 per needed hotel unit, and then goes silent. hotel_c > 1
    applies the convex multi-unit markup to hotel costs while choosing
    the purchase set, which spreads demand across rooms; the default is
    no markup.
    """

    HOTEL_BID = 1001.0

    def __init__(self, table: HistoricalPriceTable = None,
                 hotel_c: float = 1.0):
        self.table = table if table is not None else HistoricalPriceTable()
        self.hotel_c = float(hotel_c)
        self._done = False

    def act(self, view, ops, minute: int) -> None:
        if self._done or minute != 0:
            return
        self._done = True
        prices = np.full(N_GOODS, np.inf)
        prices[:8] = view.snapshot.flight_ask
        for s in range(8):
            if not view.snapshot.hotel_closed[s]:
                room = HOTEL0 + s
                prices[room] = simple_mean(self.table, view.snapshot,
                                           room, "ev").mean()
        schedule = PriceSchedule(prices=prices,
                                 hotel_c=np.full(8, self.hotel_c))
        result = opt(np.asarray(view.holdings, dtype=np.int64),
                     schedule, view.clients)
        for f in range(8):
            qty = int(round(result.purchases[f]))
            if qty > 0:
                ops.buy_flight(f, view.snapshot.flight_ask[f], qty=qty)
        for room in range(HOTEL0, HOTEL0 + 8):
            qty = int(round(result.purchases[room]))
            if qty > 0:
                ops.bid_hotel(room, [self.HOTEL_BID] * qty)

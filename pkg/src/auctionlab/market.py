"""Travel-market game engine.

One game runs 28 auctions over a 720-second clock: 8 flight auctions with
drifting posted prices and unlimited supply, 8 ascending sixteenth-price
hotel auctions that close one per minute from minute 4 through 11, and 12
continuous double auctions for entertainment tickets. Everything random
derives from the game seed, so records replay exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .allocator import v as allocation_value
from .domain import (
    ENT0,
    GAME_MINUTES,
    GAME_SECONDS,
    N_GOODS,
    TT0,
    ClientPreferences,
)

HOTEL0 = TT0

RECORD_FORMAT_VERSION = 1
HOTEL_CAPACITY = 16
FLIGHT_MIN, FLIGHT_MAX = 150.0, 800.0
FIRST_CLOSE_MINUTE = 4


@dataclass
class FlightState:
    good: int
    hidden_y: float
    ask: float
    first_ask: float
    next_perturb: int
    last_change: int = 0


@dataclass
class HotelState:
    good: int
    close_minute: int
    ask: float = 0.0
    standing: dict = field(default_factory=dict)  # agent -> list[(price, seq, unit)]
    closed: bool = False
    close_price: float | None = None


@dataclass
class EntOrder:
    agent: str
    price: float
    qty: int
    seq: int


@dataclass
class EntState:
    good: int
    bids: list = field(default_factory=list)
    asks: list = field(default_factory=list)


@dataclass(frozen=True)
class MarketSnapshot:
    """Public market picture at a minute boundary."""
    minute: int
    flight_ask: tuple
    hotel_ask: tuple
    hotel_closed: tuple
    close_price: tuple
    close_minute: tuple
    n_agents: int
    player_bits: tuple


@dataclass(frozen=True)
class AgentView:
    """Everything one agent may legitimately observe."""
    name: str
    index: int
    minute: int
    clock: int
    n_agents: int
    clients: tuple
    holdings: tuple
    cash: float
    snapshot: MarketSnapshot
    flight_first: tuple
    flight_last_change: tuple
    own_hotel_bids: dict
    hypothetical_wins: dict
    ent_best_bid: tuple
    ent_best_ask: tuple
    own_ent_orders: dict


class MarketOps:
    """Action facade binding a game to one agent."""

    def __init__(self, game, agent):
        self._game = game
        self._agent = agent

    def buy_flight(self, good, price, qty=1):
        return self._game.submit_flight_bid(self._agent, good, price, qty)

    def bid_hotel(self, good, prices):
        return self._game.submit_hotel_bid(self._agent, good, prices)

    def quote_entertainment(self, good, side, price, qty=1):
        return self._game.submit_entertainment_order(
            self._agent, good, side, price, qty)

    def withdraw_entertainment(self, good, side):
        return self._game.withdraw_entertainment_orders(self._agent, good, side)


class Game:
    """Single seeded game instance; mutate only through its methods."""

    def __init__(self, agent_names, seed, hotel_bid_floor=1.0,
                 initial_ask_low=250.0, initial_ask_high=400.0, meta=None):
        if not 1 <= len(agent_names) <= 8:
            raise ValueError("between 1 and 8 agents")
        if len(set(agent_names)) != len(agent_names):
            raise ValueError("agent names must be unique")
        self.agent_names = list(agent_names)
        self.n_agents = len(agent_names)
        self.seed = int(seed)
        self.hotel_bid_floor = float(hotel_bid_floor)
        self.rng = np.random.default_rng(self.seed)
        self.clock = 0
        self.events = []
        self._seq = 0
        self._next_minute = 1
        self.holdings = {a: [0] * N_GOODS for a in agent_names}
        self.cash = {a: 0.0 for a in agent_names}
        self._bid_seq = 0

        self._log({"type": "game", "version": RECORD_FORMAT_VERSION,
                   "seed": self.seed, "agents": list(agent_names)})
        if meta:
            self._log({"type": "meta", **meta})

        self.clients = {}
        for a in agent_names:
            prefs = []
            for _ in range(8):
                iad = int(self.rng.integers(1, 5))
                idd = int(self.rng.integers(iad + 1, 6))
                hp = float(self.rng.uniform(50.0, 150.0))
                ev = tuple(float(self.rng.uniform(0.0, 200.0)) for _ in range(3))
                prefs.append(ClientPreferences(iad, idd, hp, ev))
            self.clients[a] = tuple(prefs)
            self._log({"type": "clients", "agent": a,
                       "prefs": [[c.iad, c.idd, c.hp, *c.ev] for c in prefs]})

        for a in agent_names:
            types = self.rng.permutation(12)[:4]
            for pos, ticket_type in enumerate(types):
                qty = 4 if pos < 2 else 2
                self.holdings[a][ENT0 + int(ticket_type)] = qty
            self._log({"type": "endow", "agent": a,
                       "tickets": [[ENT0 + int(t), 4 if p < 2 else 2]
                                   for p, t in enumerate(types)]})

        self.flights = []
        for g in range(8):
            y = float(self.rng.uniform(10.0, 90.0))
            ask = float(self.rng.uniform(initial_ask_low, initial_ask_high))
            gap = int(self.rng.integers(24, 33))
            self.flights.append(FlightState(g, y, ask, ask, gap))

        close_perm = self.rng.permutation(8)
        self.hotels = {}
        close_minutes = []
        for offset in range(8):
            good = HOTEL0 + offset
            minute = FIRST_CLOSE_MINUTE + int(np.nonzero(close_perm == offset)[0][0])
            self.hotels[good] = HotelState(good, minute)
            close_minutes.append(minute)

        self.ents = {ENT0 + i: EntState(ENT0 + i) for i in range(12)}

        self._log({"type": "hidden",
                   "flight_y": [f.hidden_y for f in self.flights],
                   "hotel_close_minutes": close_minutes})
        for f in self.flights:
            self._log({"type": "quote", "good": f.good, "ask": f.ask})
        for good in sorted(self.hotels):
            self._log({"type": "quote", "good": good, "ask": 0.0})

    # ------------------------------------------------------------- logging
    def _log(self, payload):
        event = {"seq": self._seq, "t": self.clock}
        event.update(payload)
        self.events.append(event)
        self._seq += 1
        return event

    # ---------------------------------------------------------------- time
    def step(self, until):
        """Advance the clock, processing flight perturbations, minute quote
        updates, and scheduled hotel closes in time order."""
        if until > GAME_SECONDS:
            raise ValueError("clock cannot pass the end of the game")
        if until < self.clock:
            raise ValueError("clock cannot run backwards")
        while True:
            flight_due = min(
                ((f.next_perturb, f.good) for f in self.flights),
                default=None)
            minute_due = (self._next_minute * 60
                          if self._next_minute <= GAME_MINUTES - 1 else None)
            choices = []
            if flight_due is not None and flight_due[0] <= until:
                choices.append((flight_due[0], 0, flight_due[1]))
            if minute_due is not None and minute_due <= until:
                choices.append((minute_due, 1, self._next_minute))
            if not choices:
                break
            when, kind, which = min(choices)
            self.clock = when
            if kind == 0:
                self._perturb_flight(self.flights[which])
            else:
                self._on_minute(which)
                self._next_minute += 1
        self.clock = until

    def _perturb_flight(self, flight):
        t = self.clock
        x = 10.0 + (flight.hidden_y - 10.0) * t / GAME_SECONDS
        delta = float(self.rng.uniform(-10.0, x))
        flight.ask = float(min(FLIGHT_MAX, max(FLIGHT_MIN, flight.ask + delta)))
        flight.last_change = t
        flight.next_perturb = t + int(self.rng.integers(24, 33))
        self._log({"type": "quote", "good": flight.good, "ask": flight.ask})

    def _on_minute(self, minute):
        for good in sorted(self.hotels):
            hotel = self.hotels[good]
            if hotel.closed:
                continue
            hotel.ask = self._sixteenth_price(hotel)
            self._log({"type": "quote", "good": good, "ask": hotel.ask})
        if FIRST_CLOSE_MINUTE <= minute <= GAME_MINUTES - 1:
            for good in sorted(self.hotels):
                hotel = self.hotels[good]
                if not hotel.closed and hotel.close_minute == minute:
                    self.close_hotel(good)

    # --------------------------------------------------------------- hotels
    def _all_units(self, hotel):
        units = []
        for agent, rows in hotel.standing.items():
            for price, seq, unit in rows:
                units.append((-price, seq, unit, agent))
        units.sort()
        return units

    def _sixteenth_price(self, hotel):
        units = self._all_units(hotel)
        if len(units) < HOTEL_CAPACITY:
            return 0.0
        return -units[HOTEL_CAPACITY - 1][0]

    def _wins(self, hotel, agent, standing=None):
        units = []
        table = standing if standing is not None else hotel.standing
        for who, rows in table.items():
            for price, seq, unit in rows:
                units.append((-price, seq, unit, who))
        units.sort()
        return sum(1 for u in units[:HOTEL_CAPACITY] if u[3] == agent)

    def hypothetical_wins(self, agent, good):
        return self._wins(self.hotels[good], agent)

    def submit_hotel_bid(self, agent, good, prices):
        """Replace the agent's standing unit bids.

        Accepted when every unit strictly beats the ask, or when the agent
        already has a standing bid and the replacement does not reduce the
        units it would win at a hypothetical close right now.
        """
        hotel = self.hotels[good]
        prices = [float(p) for p in prices]
        entry = {"type": "bid", "agent": agent, "auction": "hotel",
                 "good": good, "prices": prices}
        if hotel.closed:
            self._log({**entry, "ok": False, "reason": "closed"})
            return False
        if not prices:
            self._log({**entry, "ok": False, "reason": "empty"})
            return False
        if any(p < self.hotel_bid_floor for p in prices):
            self._log({**entry, "ok": False, "reason": "below-floor"})
            return False
        wins_old = self._wins(hotel, agent)
        seq = self._bid_seq
        new_rows = [(p, seq, i) for i, p in
                    enumerate(sorted(prices, reverse=True))]
        hypothetical = dict(hotel.standing)
        hypothetical[agent] = new_rows
        wins_new = self._wins(hotel, agent, hypothetical)
        beats_ask = all(p > hotel.ask for p in prices)
        has_existing = agent in hotel.standing
        if wins_new < wins_old:
            self._log({**entry, "ok": False, "reason": "would-reduce-wins"})
            return False
        if not beats_ask and not has_existing:
            self._log({**entry, "ok": False, "reason": "below-ask"})
            return False
        self._bid_seq += 1
        hotel.standing[agent] = new_rows
        self._log({**entry, "ok": True})
        return True

    def close_hotel(self, good):
        """Sell 16 units to the highest unit bids at the 16th-highest price,
        ties to the earliest arrival.

        With fewer than 16 unit bids every bid wins and the price is the
        16th-highest entry of the zero-padded book, i.e. zero, matching
        the ask convention for short books.
        """
        hotel = self.hotels[good]
        if hotel.closed:
            raise ValueError("hotel already closed")
        units = self._all_units(hotel)
        winners = units[:HOTEL_CAPACITY]
        if len(units) >= HOTEL_CAPACITY:
            price = -units[HOTEL_CAPACITY - 1][0]
        else:
            price = 0.0
        counts = {}
        for neg_price, _seq, _unit, agent in winners:
            counts[agent] = counts.get(agent, 0) + 1
        for agent, count in counts.items():
            self.holdings[agent][good] += count
            self.cash[agent] -= count * price
        hotel.closed = True
        hotel.close_price = price
        hotel.ask = price
        minute = self.clock // 60
        self._log({"type": "close", "good": good, "minute": minute,
                   "price": price,
                   "winners": [[a, counts[a]] for a in sorted(counts)]})
        return counts, price

    # -------------------------------------------------------------- flights
    def submit_flight_bid(self, agent, good, price, qty=1):
        flight = self.flights[good]
        entry = {"type": "bid", "agent": agent, "auction": "flight",
                 "good": good, "price": float(price), "qty": int(qty)}
        if qty < 1:
            self._log({**entry, "ok": False, "reason": "bad-qty"})
            return False
        if price < flight.ask:
            self._log({**entry, "ok": False, "reason": "below-ask"})
            return False
        self._log({**entry, "ok": True})
        for _ in range(int(qty)):
            self.holdings[agent][good] += 1
            self.cash[agent] -= flight.ask
            self._log({"type": "trade", "good": good, "buyer": agent,
                       "seller": None, "price": flight.ask, "qty": 1})
        return True

    # -------------------------------------------------------- entertainment
    def _offered_quantity(self, agent, good):
        return sum(o.qty for o in self.ents[good].asks if o.agent == agent)

    def submit_entertainment_order(self, agent, good, side, price, qty=1):
        """Cross against the book at the resting order's price; the residue
        rests. Sellers may never offer more tickets than they hold."""
        book = self.ents[good]
        price = float(price)
        qty = int(qty)
        entry = {"type": "bid", "agent": agent, "auction": "ent",
                 "good": good, "side": side, "price": price, "qty": qty}
        if side not in ("buy", "sell"):
            raise ValueError("side must be buy or sell")
        if qty < 1 or price <= 0:
            self._log({**entry, "ok": False, "reason": "bad-order"})
            return False
        if side == "sell":
            available = self.holdings[agent][good] - self._offered_quantity(agent, good)
            if qty > available:
                self._log({**entry, "ok": False, "reason": "short-sale"})
                return False
        self._log({**entry, "ok": True})
        remaining = qty
        opposite = book.asks if side == "buy" else book.bids
        while remaining > 0 and opposite:
            best = opposite[0]
            crosses = (best.price <= price) if side == "buy" else (best.price >= price)
            if not crosses:
                break
            traded = min(remaining, best.qty)
            trade_price = best.price
            buyer = agent if side == "buy" else best.agent
            seller = best.agent if side == "buy" else agent
            self.holdings[buyer][good] += traded
            self.holdings[seller][good] -= traded
            self.cash[buyer] -= traded * trade_price
            self.cash[seller] += traded * trade_price
            self._log({"type": "trade", "good": good, "buyer": buyer,
                       "seller": seller, "price": trade_price, "qty": traded})
            best.qty -= traded
            remaining -= traded
            if best.qty == 0:
                opposite.pop(0)
        if remaining > 0:
            order = EntOrder(agent, price, remaining, self._bid_seq)
            self._bid_seq += 1
            if side == "buy":
                book.bids.append(order)
                book.bids.sort(key=lambda o: (-o.price, o.seq))
            else:
                book.asks.append(order)
                book.asks.sort(key=lambda o: (o.price, o.seq))
        return True

    def withdraw_entertainment_orders(self, agent, good, side):
        book = self.ents[good]
        queue = book.bids if side == "buy" else book.asks
        kept = [o for o in queue if o.agent != agent]
        removed = len(queue) - len(kept)
        queue[:] = kept
        if removed:
            self._log({"type": "withdraw", "agent": agent, "good": good,
                       "side": side, "count": removed})
        return removed

    # ---------------------------------------------------------------- views
    def snapshot(self, minute=None):
        return MarketSnapshot(
            minute=self.clock // 60 if minute is None else minute,
            flight_ask=tuple(f.ask for f in self.flights),
            hotel_ask=tuple(self.hotels[g].ask for g in sorted(self.hotels)),
            hotel_closed=tuple(self.hotels[g].closed for g in sorted(self.hotels)),
            close_price=tuple(self.hotels[g].close_price for g in sorted(self.hotels)),
            close_minute=tuple(
                self.hotels[g].close_minute if self.hotels[g].closed else None
                for g in sorted(self.hotels)),
            n_agents=self.n_agents,
            player_bits=(0,) * 8,
        )

    def agent_view(self, agent):
        index = self.agent_names.index(agent)
        own_bids = {}
        hqw = {}
        for good in sorted(self.hotels):
            hotel = self.hotels[good]
            if not hotel.closed and agent in hotel.standing:
                own_bids[good] = tuple(p for p, _s, _u in hotel.standing[agent])
                hqw[good] = self._wins(hotel, agent)
        own_orders = {}
        best_bid = []
        best_ask = []
        for good in sorted(self.ents):
            book = self.ents[good]
            best_bid.append(book.bids[0].price if book.bids else None)
            best_ask.append(book.asks[0].price if book.asks else None)
            mine = ([("buy", o.price, o.qty) for o in book.bids if o.agent == agent]
                    + [("sell", o.price, o.qty) for o in book.asks if o.agent == agent])
            if mine:
                own_orders[good] = mine
        return AgentView(
            name=agent,
            index=index,
            minute=self.clock // 60,
            clock=self.clock,
            n_agents=self.n_agents,
            clients=self.clients[agent],
            holdings=tuple(self.holdings[agent]),
            cash=self.cash[agent],
            snapshot=self.snapshot(),
            flight_first=tuple(f.first_ask for f in self.flights),
            flight_last_change=tuple(f.last_change for f in self.flights),
            own_hotel_bids=own_bids,
            hypothetical_wins=hqw,
            ent_best_bid=tuple(best_bid),
            ent_best_ask=tuple(best_ask),
            own_ent_orders=own_orders,
        )

    # -------------------------------------------------------------- scoring
    def final_score(self, agent):
        utility = allocation_value(tuple(self.holdings[agent]), self.clients[agent])
        expenditure = -self.cash[agent]
        score = utility - expenditure
        return score, utility, expenditure

    def finish(self):
        results = {}
        for agent in self.agent_names:
            score, utility, expenditure = self.final_score(agent)
            results[agent] = (score, utility, expenditure)
            self._log({"type": "score", "agent": agent, "score": score,
                       "utility": utility, "expenditure": expenditure})
        return results


def new_game(agent_names, seed, **kwargs) -> Game:
    return Game(agent_names, seed, **kwargs)


def play_game(roster, seed, **kwargs):
    """Run one full game. roster is a list of (name, policy) pairs; each
    policy exposes act(view, ops, minute). Returns (game, results)."""
    names = [name for name, _ in roster]
    game = Game(names, seed, **kwargs)
    for minute in range(GAME_MINUTES):
        game.step(minute * 60)
        if minute >= 1:
            snap = game.snapshot(minute)
            game._log({"type": "snapshot", "minute": minute,
                       "flight_ask": list(snap.flight_ask),
                       "hotel_ask": list(snap.hotel_ask),
                       "hotel_closed": list(snap.hotel_closed),
                       "close_price": list(snap.close_price),
                       "close_minute": list(snap.close_minute)})
        for name, policy in roster:
            policy.act(game.agent_view(name), MarketOps(game, name), minute)
    game.step(GAME_SECONDS)
    results = game.finish()
    return game, results


def events_to_jsonl(events) -> str:
    return "".join(json.dumps(e, separators=(",", ":")) + "\n" for e in events)


def write_record(events, path) -> None:
    with open(path, "w") as handle:
        handle.write(events_to_jsonl(events))


def read_record(path):
    with open(path) as handle:
        return [json.loads(line) for line in handle if line.strip()]

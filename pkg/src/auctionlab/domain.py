"""Shared domain model for the travel-auction game.

The market trades 28 goods. Index layout (fixed, versioned with the record
schema):

    0..3    inflight, arrival day 1..4
    4..7    outflight, departure day 2..5
    8..11   TT hotel room, night 1..4   (premium hotel, carries the HP bonus)
    12..15  SS hotel room, night 1..4   (budget hotel)
    16..19  AW entertainment ticket, day 1..4
    20..23  AP entertainment ticket, day 1..4
    24..27  MU entertainment ticket, day 1..4

A client trip arrives on day AD, departs on day DD (AD < DD), needs hotel
nights AD..DD-1 of a single hotel type, and may hold at most one ticket per
event type and at most one ticket per day, only on in-town days.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

N_GOODS = 28
INFLIGHT0 = 0
OUTFLIGHT0 = 4
TT0 = 8
SS0 = 12
ENT0 = 16
HOTEL_TYPES = ("TT", "SS")
EVENT_TYPES = ("AW", "AP", "MU")
N_AGENTS_MAX = 8
GAME_SECONDS = 720
GAME_MINUTES = 12

GOOD_NAMES = tuple(
    [f"inflight_d{d}" for d in range(1, 5)]
    + [f"outflight_d{d}" for d in range(2, 6)]
    + [f"TT_n{n}" for n in range(1, 5)]
    + [f"SS_n{n}" for n in range(1, 5)]
    + [f"{e}_d{d}" for e in EVENT_TYPES for d in range(1, 5)]
)


def inflight_good(day: int) -> int:
    return INFLIGHT0 + day - 1


def outflight_good(day: int) -> int:
    return OUTFLIGHT0 + day - 2


def hotel_good(hotel_type: str, night: int) -> int:
    base = TT0 if hotel_type == "TT" else SS0
    return base + night - 1


def ent_good(event_type: str, day: int) -> int:
    return ENT0 + EVENT_TYPES.index(event_type) * 4 + day - 1


def empty_goods() -> np.ndarray:
    return np.zeros(N_GOODS, dtype=np.int64)


@dataclass(frozen=True)
class ClientPreferences:
    """One client's taste: ideal arrival/departure days, hotel premium and
    the dollar value it puts on each of the three entertainment types."""
    iad: int
    idd: int
    hp: float
    ev: tuple[float, float, float]  # (AW, AP, MU)

    def __post_init__(self):
        if not (1 <= self.iad <= 4 and 2 <= self.idd <= 5):
            raise ValueError(f"ideal days out of range: {self.iad}, {self.idd}")


@dataclass(frozen=True)
class TravelPackage:
    ad: int
    dd: int
    hotel_type: str
    tickets: tuple[tuple[str, int], ...] = ()  # (event type, day)

    def __post_init__(self):
        if not (1 <= self.ad < self.dd <= 5):
            raise ValueError(f"infeasible trip days {self.ad}..{self.dd}")
        if self.hotel_type not in HOTEL_TYPES:
            raise ValueError(f"unknown hotel type {self.hotel_type}")
        types = [t for t, _ in self.tickets]
        days = [d for _, d in self.tickets]
        if len(set(types)) != len(types) or len(set(days)) != len(days):
            raise ValueError("at most one ticket per type and per day")
        for t, d in self.tickets:
            if t not in EVENT_TYPES:
                raise ValueError(f"unknown event type {t}")
            if not (self.ad <= d < self.dd):
                raise ValueError(f"ticket day {d} outside stay")

    def nights(self) -> range:
        return range(self.ad, self.dd)

    def goods(self) -> np.ndarray:
        g = empty_goods()
        g[inflight_good(self.ad)] += 1
        g[outflight_good(self.dd)] += 1
        for n in self.nights():
            g[hotel_good(self.hotel_type, n)] += 1
        for t, d in self.tickets:
            g[ent_good(t, d)] += 1
        return g


def client_utility(prefs: ClientPreferences, pkg: TravelPackage | None) -> float:
    """Utility of one client under a package, or 0 with no package."""
    if pkg is None:
        return 0.0
    travel_penalty = 100.0 * (abs(pkg.ad - prefs.iad) + abs(pkg.dd - prefs.idd))
    hotel_bonus = prefs.hp if pkg.hotel_type == "TT" else 0.0
    fun_bonus = sum(prefs.ev[EVENT_TYPES.index(t)] for t, _ in pkg.tickets)
    return 1000.0 - travel_penalty + hotel_bonus + fun_bonus


def quantity_cost(p: float, q: int, c: float) -> float:
    """Cost of q units of a hotel good at base price p with impact constant c.

    The first two units cost p each; beyond that every unit is marked up by
    another factor of c, i.e. total = q * p * c^max(0, q-2).
    """
    if q <= 0:
        return 0.0
    return q * p * c ** max(0, q - 2)


@dataclass
class PriceSchedule:
    """Per-good purchase terms for the allocator.

    prices[g] = unit price, or +inf when the good cannot be bought.
    hotel_c[i] = impact constant for hotel good TT0+i (quantity_cost applies);
    flights and entertainment are priced linearly. max_units caps how many
    units of a good can be bought (entertainment books are shallow).
    """
    prices: np.ndarray
    hotel_c: np.ndarray = field(default_factory=lambda: np.ones(8))
    max_units: np.ndarray = field(
        default_factory=lambda: np.full(N_GOODS, N_AGENTS_MAX, dtype=np.int64))

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=float)
        self.hotel_c = np.asarray(self.hotel_c, dtype=float)
        self.max_units = np.asarray(self.max_units, dtype=np.int64)
        if self.prices.shape != (N_GOODS,):
            raise ValueError("prices must cover all 28 goods")
        if (self.hotel_c < 1.0).any():
            raise ValueError("impact constants must be >= 1")

    @classmethod
    def unavailable(cls) -> "PriceSchedule":
        return cls(prices=np.full(N_GOODS, np.inf))

    @classmethod
    def flat(cls, price: float) -> "PriceSchedule":
        return cls(prices=np.full(N_GOODS, float(price)))


def estimate_c(hotel_bid_logs) -> float:
    """Estimate the price-impact constant from per-auction unit-bid lists.

    For each auction with at least 18 unit bids (prices below $1 clamped up
    to $1), the 14th/18th-highest ratio estimates c^4; the geometric mean of
    those ratios, taken to the 1/4 power, is the estimate. Auctions with
    fewer than 18 bids are skipped.
    """
    log_ratios = []
    for bids in hotel_bid_logs:
        clamped = sorted((max(1.0, float(b)) for b in bids), reverse=True)
        if len(clamped) < 18:
            continue
        log_ratios.append(math.log(clamped[13] / clamped[17]))
    if not log_ratios:
        raise ValueError("no auction log with 18 or more unit bids")
    return math.exp(sum(log_ratios) / len(log_ratios)) ** 0.25

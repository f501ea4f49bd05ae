"""Price beliefs from game history.

Turns market snapshots into feature vectors (with a day-symmetry
canonicalization), trains a bank of eight boosted density models for
hotel closing prices, and provides empirical baselines plus a
quadratic-trend flight price model.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import cde
from .domain import GAME_MINUTES, GAME_SECONDS, TT0
from .market import MarketSnapshot

HOTEL0 = TT0
BANK_FORMAT_VERSION = 1

ROOM_LABELS = tuple(f"{t}{d}" for t in ("TT", "SS") for d in (1, 2, 3, 4))
FLIGHT_LABELS = tuple(f"in{d}" for d in (1, 2, 3, 4)) + tuple(
    f"out{d}" for d in (2, 3, 4, 5))

FEATURE_NAMES = (
    ("minutes_remaining",)
    + tuple(f"price_{r}" for r in ROOM_LABELS)
    + tuple(f"close_minute_{r}" for r in ROOM_LABELS)
    + tuple(f"flight_{f}" for f in FLIGHT_LABELS)
    + tuple(f"closed_price_{r}" for r in ROOM_LABELS)
    + tuple(f"open_ask_{r}" for r in ROOM_LABELS)
    + tuple(f"close_delta_{r}" for r in ROOM_LABELS)
    + tuple(f"minutes_to_close_{r}" for r in ROOM_LABELS)
    + ("player_count",)
    + tuple(f"player_bit_{i}" for i in range(8))
)
N_FEATURES = len(FEATURE_NAMES)

BANK_KEYS = tuple(f"{t}-{pos}-{phase}"
                  for t in ("TT", "SS")
                  for pos in ("outer", "inner")
                  for phase in ("first", "later"))

_HOTEL_PERM = tuple(4 * (h // 4) + (3 - h % 4) for h in range(8))
_FLIGHT_PERM = tuple(7 - i for i in range(8))


def room_day(room: int) -> int:
    return (room - HOTEL0) % 4 + 1


def room_type(room: int) -> str:
    return "TT" if room - HOTEL0 < 4 else "SS"


def is_canonical(room: int) -> bool:
    return room_day(room) in (1, 2)


def _permute(values, perm):
    return tuple(values[perm[i]] for i in range(len(perm)))


def canonicalize(snapshot: MarketSnapshot, target_room: int):
    """Map a day-3/4 target onto its mirror-image day-2/1 problem.

    Hotel slots swap day d with day 5-d within each room type, and the
    inbound flight for day d trades places with the outbound flight for
    day 6-d. Already-canonical targets pass through unchanged.
    """
    if is_canonical(target_room):
        return snapshot, target_room
    slot = target_room - HOTEL0
    mirrored = replace(
        snapshot,
        flight_ask=_permute(snapshot.flight_ask, _FLIGHT_PERM),
        hotel_ask=_permute(snapshot.hotel_ask, _HOTEL_PERM),
        hotel_closed=_permute(snapshot.hotel_closed, _HOTEL_PERM),
        close_price=_permute(snapshot.close_price, _HOTEL_PERM),
        close_minute=_permute(snapshot.close_minute, _HOTEL_PERM),
    )
    return mirrored, HOTEL0 + _HOTEL_PERM[slot]


def filled_snapshot(snapshot: MarketSnapshot, close_minutes: dict):
    """Overlay sampled close minutes for open rooms onto a snapshot."""
    full = []
    for slot in range(8):
        if snapshot.close_minute[slot] is not None:
            full.append(snapshot.close_minute[slot])
        else:
            full.append(close_minutes.get(HOTEL0 + slot))
    return replace(snapshot, close_minute=tuple(full))


def hotel_features(snapshot: MarketSnapshot, target_room: int) -> tuple:
    """Fixed 66-entry feature vector for predicting one room's price."""
    snap, target = canonicalize(snapshot, target_room)
    ts = target - HOTEL0
    minute = snap.minute
    target_close = snap.close_minute[ts]
    row: list = [float(GAME_MINUTES - minute)]
    row += [float(p) for p in snap.hotel_ask]
    row += [None if m is None else float(m) for m in snap.close_minute]
    row += [float(p) for p in snap.flight_ask]
    row += [float(snap.close_price[r]) if snap.hotel_closed[r] else None
            for r in range(8)]
    row += [None if snap.hotel_closed[r] else float(snap.hotel_ask[r])
            for r in range(8)]
    row += [None if (m is None or target_close is None)
            else float(m - target_close)
            for m in snap.close_minute]
    row += [None if m is None else float(m - minute)
            for m in snap.close_minute]
    row.append(float(snap.n_agents))
    row += [float(b) for b in snap.player_bits]
    assert len(row) == N_FEATURES
    return tuple(row)


def bank_key(target_room: int, minute: int) -> str:
    """Route a (room, minute) query to one of the eight bank models."""
    snap_day = room_day(target_room)
    day = snap_day if snap_day in (1, 2) else 5 - snap_day
    pos = "outer" if day == 1 else "inner"
    phase = "first" if minute <= 1 else "later"
    return f"{room_type(target_room)}-{pos}-{phase}"


class PricePrediction:
    """A closing-price belief: sample(rng) draws, mean() determinizes."""

    def sample(self, rng) -> float:
        raise NotImplementedError

    def mean(self) -> float:
        raise NotImplementedError


class PointPrediction(PricePrediction):
    def __init__(self, price: float):
        self.price = float(price)

    def sample(self, rng) -> float:
        return self.price

    def mean(self) -> float:
        return self.price


class EmpiricalPrediction(PricePrediction):
    """Draws from an observed price list, floored at the current price."""

    def __init__(self, floor: float, values):
        if len(values) == 0:
            raise ValueError("empty value list")
        self.floor = float(floor)
        self.values = np.asarray(values, dtype=float)

    def sample(self, rng) -> float:
        return max(self.floor, float(self.values[rng.integers(len(self.values))]))

    def mean(self) -> float:
        return max(self.floor, float(self.values.mean()))


class LearnedPrediction(PricePrediction):
    """Current price plus a nonnegative learned increase."""

    def __init__(self, floor: float, model: cde.CdeModel, features):
        self.floor = float(floor)
        self.model = model
        self.features = features

    def sample(self, rng) -> float:
        return self.floor + max(0.0, cde.sample(self.model, self.features, rng))

    def mean(self) -> float:
        return self.floor + max(0.0, cde.expected_value(self.model, self.features))


@dataclass
class HotelModelBank:
    """Eight specialized price-increase models, one per routing key."""
    models: dict
    metadata: dict

    def trained_for(self, key: str) -> bool:
        return key in self.models


def extract_training_set(records) -> dict:
    """Labeled examples per bank key from finished game records.

    Each snapshot minute contributes one example per still-open room,
    labeled with how far that room's price still had to rise. Games
    missing any close event are skipped.
    """
    datasets: dict = {key: [] for key in BANK_KEYS}
    for events in records:
        header = events[0]
        n_agents = len(header["agents"])
        closes = {e["good"]: (e["minute"], e["price"])
                  for e in events if e["type"] == "close"}
        if len(closes) != 8:
            continue
        minutes = tuple(closes[HOTEL0 + s][0] for s in range(8))
        prices = tuple(closes[HOTEL0 + s][1] for s in range(8))
        for e in events:
            if e["type"] != "snapshot":
                continue
            snap = MarketSnapshot(
                minute=e["minute"],
                flight_ask=tuple(e["flight_ask"]),
                hotel_ask=tuple(e["hotel_ask"]),
                hotel_closed=tuple(e["hotel_closed"]),
                close_price=tuple(e["close_price"]),
                close_minute=minutes,
                n_agents=n_agents,
                player_bits=(0,) * 8,
            )
            for slot in range(8):
                if snap.hotel_closed[slot]:
                    continue
                room = HOTEL0 + slot
                label = prices[slot] - snap.hotel_ask[slot]
                datasets[bank_key(room, snap.minute)].append(
                    cde.LabeledExample(hotel_features(snap, room), label))
    return datasets


def train_bank(datasets: dict, k: int = 20, rounds: int = 30,
               smoothing_eps=None, max_examples=None, rng=None) -> HotelModelBank:
    """Train one density model per key; empty keys stay untrained."""
    models = {}
    counts = {}
    for key in BANK_KEYS:
        data = list(datasets.get(key, ()))
        if not data:
            continue
        if max_examples is not None and len(data) > max_examples:
            sampler = rng if rng is not None else np.random.default_rng(0)
            idx = sampler.choice(len(data), size=max_examples, replace=False)
            data = [data[int(i)] for i in idx]
        models[key] = cde.train(data, k=k, rounds=rounds,
                                smoothing_eps=smoothing_eps)
        counts[key] = len(data)
    return HotelModelBank(models=models,
                          metadata={"k": k, "rounds": rounds,
                                    "examples": counts})


def save_bank(bank: HotelModelBank, dirpath) -> None:
    path = Path(dirpath)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {"version": BANK_FORMAT_VERSION,
                "metadata": bank.metadata, "models": {}}
    for key, model in bank.models.items():
        filename = f"{key}.json"
        cde.save_model(model, path / filename)
        manifest["models"][key] = filename
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_bank(dirpath) -> HotelModelBank:
    path = Path(dirpath)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest["version"] != BANK_FORMAT_VERSION:
        raise ValueError(f"unsupported bank version {manifest['version']}")
    models = {key: cde.load_model(path / filename)
              for key, filename in manifest["models"].items()}
    return HotelModelBank(models=models, metadata=manifest.get("metadata", {}))


def sample_closing_order(open_rooms, current_minute, rng) -> dict:
    """Assign the remaining close minutes to open rooms uniformly.

    Closes run one per minute through minute 11, so n open rooms fill
    minutes 12-n through 11; any bijection is equally likely.
    """
    rooms = list(open_rooms)
    slots = np.arange(GAME_MINUTES - len(rooms), GAME_MINUTES)
    order = rng.permutation(len(rooms))
    return {room: int(slots[order[i]]) for i, room in enumerate(rooms)}


def predict_hotel(bank: HotelModelBank, snapshot: MarketSnapshot,
                  room: int, sampled_close_times: dict) -> PricePrediction:
    """Learned prediction for an open room given sampled close times."""
    slot = room - HOTEL0
    current = snapshot.hotel_ask[slot]
    key = bank_key(room, snapshot.minute)
    if not bank.trained_for(key):
        warnings.warn(f"no trained model for {key}; using current price",
                      RuntimeWarning, stacklevel=2)
        return PointPrediction(current)
    full = filled_snapshot(snapshot, sampled_close_times)
    features = hotel_features(full, room)
    return LearnedPrediction(current, bank.models[key], features)


class HistoricalPriceTable:
    """Closing prices and minutes per room from logged games."""

    def __init__(self):
        self.entries = {HOTEL0 + s: [] for s in range(8)}

    @classmethod
    def from_records(cls, records) -> "HistoricalPriceTable":
        table = cls()
        for events in records:
            table.add_game(events)
        return table

    def add_game(self, events) -> None:
        for e in events:
            if e["type"] == "close":
                self.entries[e["good"]].append((e["price"], e["minute"]))

    def prices(self, room: int, close_minute=None) -> list:
        rows = self.entries[room]
        if close_minute is not None:
            rows = [r for r in rows if r[1] == close_minute]
        return [p for p, _m in rows]

    def __len__(self) -> int:
        return sum(len(rows) for rows in self.entries.values())


def _empirical(values, current: float, variant: str) -> PricePrediction:
    if not values:
        return PointPrediction(current)
    if variant == "ev":
        return PointPrediction(max(current, float(np.mean(values))))
    if variant == "s":
        return EmpiricalPrediction(current, values)
    raise ValueError(f"unknown variant {variant!r}")


def current_bid(snapshot: MarketSnapshot, room: int) -> PricePrediction:
    """Predicts the room closes exactly at its current price."""
    return PointPrediction(snapshot.hotel_ask[room - HOTEL0])


def simple_mean(table: HistoricalPriceTable, snapshot: MarketSnapshot,
                room: int, variant: str) -> PricePrediction:
    """Empirical prices for this room regardless of closing time."""
    current = snapshot.hotel_ask[room - HOTEL0]
    return _empirical(table.prices(room), current, variant)


def condl_mean(table: HistoricalPriceTable, snapshot: MarketSnapshot,
               room: int, close_minute: int, variant: str) -> PricePrediction:
    """Empirical prices for this room at one closing minute.

    An empty conditioning cell falls back to the unconditioned list.
    """
    current = snapshot.hotel_ask[room - HOTEL0]
    values = table.prices(room, close_minute)
    if not values:
        values = table.prices(room)
    return _empirical(values, current, variant)


@dataclass(frozen=True)
class FlightPriceModel:
    """Quadratic-in-time flight trend: increase = slope*(T^2-t^2)*(y-10)."""
    slope: float

    def __post_init__(self):
        if self.slope < 0:
            raise ValueError("slope must be nonnegative")


def _tau(seconds: float) -> float:
    return seconds / GAME_SECONDS


def flight_fit(records) -> FlightPriceModel:
    """Least-squares slope from quote-to-quote increases in training logs.

    Uses the hidden trajectory parameter y recorded for each flight, so
    it applies only to logs the simulator owner generated.
    """
    num = 0.0
    den = 0.0
    for events in records:
        hidden = next((e for e in events if e["type"] == "hidden"), None)
        if hidden is None:
            continue
        y = hidden["flight_y"]
        quotes: dict = {g: [] for g in range(8)}
        for e in events:
            if e["type"] == "quote" and e["good"] < 8:
                quotes[e["good"]].append((e["t"], e["ask"]))
        for good, series in quotes.items():
            series.sort()
            for (t1, p1), (t2, p2) in zip(series, series[1:]):
                x = (_tau(t2) ** 2 - _tau(t1) ** 2) * (y[good] - 10.0)
                num += x * (p2 - p1)
                den += x * x
    slope = num / den if den > 0 else 0.0
    return FlightPriceModel(slope=max(0.0, slope))


def flight_predict(model: FlightPriceModel, first_obs, latest_obs,
                   t: float, T: float) -> float:
    """Extrapolate a flight's ask from t to T via the fitted trend.

    Inverts the trend on (first_obs, latest_obs) to estimate the hidden
    parameter, clamps it to [10, 90], then applies the trend forward.
    Degenerate inputs predict no change.
    """
    t0, p0 = first_obs
    t1, p1 = latest_obs
    base = _tau(t1) ** 2 - _tau(t0) ** 2
    if model.slope <= 0.0 or base <= 0.0:
        return float(p1)
    y_hat = 10.0 + (p1 - p0) / (model.slope * base)
    y_hat = min(90.0, max(10.0, y_hat))
    increase = model.slope * (_tau(T) ** 2 - _tau(t) ** 2) * (y_hat - 10.0)
    return float(p1 + max(0.0, increase))

"""Tests for feature extraction, the hotel model bank, and baselines."""
import numpy as np
import pytest
from scipy import stats

from auctionlab import cde, predictors
from auctionlab.domain import GAME_MINUTES
from auctionlab.market import MarketSnapshot, play_game
from auctionlab.predictors import (
    BANK_KEYS,
    FEATURE_NAMES,
    HOTEL0,
    FlightPriceModel,
    HistoricalPriceTable,
    HotelModelBank,
    PointPrediction,
    bank_key,
    canonicalize,
    condl_mean,
    current_bid,
    extract_training_set,
    filled_snapshot,
    flight_fit,
    flight_predict,
    hotel_features,
    load_bank,
    predict_hotel,
    sample_closing_order,
    save_bank,
    simple_mean,
    train_bank,
)


def make_snapshot(minute=5, **overrides):
    fields = dict(
        minute=minute,
        flight_ask=tuple(300.0 + i for i in range(8)),
        hotel_ask=tuple(100.0 + 10.0 * s for s in range(8)),
        hotel_closed=(True,) + (False,) * 7,
        close_price=(110.0,) + (None,) * 7,
        close_minute=(4,) + (None,) * 7,
        n_agents=8,
        player_bits=(0,) * 8,
    )
    fields.update(overrides)
    return MarketSnapshot(**fields)


class BidderPolicy:
    """Drives hotel prices up so training labels are informative."""

    def __init__(self, level):
        self.level = level

    def act(self, view, ops, minute):
        if minute == 0:
            for f in range(8):
                ops.buy_flight(f, 900.0)
        if 1 <= minute <= 10:
            for h in range(8, 16):
                if not view.snapshot.hotel_closed[h - 8]:
                    ask = view.snapshot.hotel_ask[h - 8]
                    bid = max(ask + 1.0 + minute * self.level, self.level)
                    ops.bid_hotel(h, [bid, bid])


def price_corpus(n_games, base_seed=500):
    records = []
    for g in range(n_games):
        roster = [(f"p{i}", BidderPolicy(5.0 + 3.0 * i)) for i in range(8)]
        game, _ = play_game(roster, seed=base_seed + g)
        records.append(game.events)
    return records


class TestCanonicalize:
    def test_day4_target_maps_to_day1(self):
        snap = make_snapshot()
        out, room = canonicalize(snap, HOTEL0 + 3)
        assert room == HOTEL0
        assert out.hotel_ask == tuple(
            snap.hotel_ask[4 * (s // 4) + 3 - s % 4] for s in range(8))
        assert out.flight_ask == tuple(reversed(snap.flight_ask))
        assert out.hotel_closed[3] is True
        assert out.close_price[3] == 110.0

    def test_day2_target_unchanged(self):
        snap = make_snapshot()
        out, room = canonicalize(snap, HOTEL0 + 5)
        assert out is snap
        assert room == HOTEL0 + 5

    def test_idempotent(self):
        snap = make_snapshot()
        once = canonicalize(snap, HOTEL0 + 6)
        twice = canonicalize(*once)
        assert twice == once

    def test_mirror_is_involution_on_slots(self):
        snap = make_snapshot()
        mirrored, room = canonicalize(snap, HOTEL0 + 2)
        assert room == HOTEL0 + 1
        back, _ = canonicalize(mirrored, HOTEL0 + 3)
        assert back.hotel_ask == snap.hotel_ask
        assert back.flight_ask == snap.flight_ask


class TestFeatures:
    def test_layout_and_values(self):
        minutes = (4, 5, 6, 7, 8, 9, 10, 11)
        snap = make_snapshot(minute=5, close_minute=minutes)
        row = hotel_features(snap, HOTEL0 + 1)
        assert len(row) == len(FEATURE_NAMES) == 66
        named = dict(zip(FEATURE_NAMES, row))
        assert named["minutes_remaining"] == GAME_MINUTES - 5
        assert named["price_TT2"] == 110.0
        assert named["close_minute_SS3"] == 10.0
        assert named["flight_in1"] == 300.0
        assert named["closed_price_TT1"] == 110.0
        assert named["closed_price_TT2"] is None
        assert named["open_ask_TT1"] is None
        assert named["open_ask_TT2"] == 110.0
        assert named["close_delta_TT1"] == 4 - 5
        assert named["close_delta_TT2"] == 0.0
        assert named["minutes_to_close_SS4"] == 11 - 5
        assert named["player_count"] == 8.0

    def test_unknown_close_times_propagate(self):
        snap = make_snapshot()
        row = dict(zip(FEATURE_NAMES, hotel_features(snap, HOTEL0 + 1)))
        assert row["close_minute_TT2"] is None
        assert row["close_delta_TT1"] is None
        assert row["minutes_to_close_TT2"] is None

    def test_target_day3_routes_through_mirror(self):
        minutes = (4, 5, 6, 7, 8, 9, 10, 11)
        snap = make_snapshot(close_minute=minutes)
        direct = hotel_features(snap, HOTEL0 + 2)
        mirrored_snap, room = canonicalize(snap, HOTEL0 + 2)
        assert direct == hotel_features(mirrored_snap, room)


class TestBankRouting:
    def test_partition_total(self):
        seen = set()
        for room in range(HOTEL0, HOTEL0 + 8):
            for minute in range(0, GAME_MINUTES):
                key = bank_key(room, minute)
                assert key in BANK_KEYS
                seen.add(key)
        assert seen == set(BANK_KEYS)

    def test_first_minute_and_symmetry(self):
        assert bank_key(HOTEL0, 1) == "TT-outer-first"
        assert bank_key(HOTEL0 + 3, 1) == "TT-outer-first"
        assert bank_key(HOTEL0 + 5, 7) == "SS-inner-later"
        assert bank_key(HOTEL0 + 6, 7) == "SS-inner-later"


class TestExtraction:
    def test_counts_on_generated_games(self):
        records = price_corpus(2)
        datasets = extract_training_set(records)
        first = sum(len(datasets[k]) for k in BANK_KEYS if "first" in k)
        assert first == 8 * len(records)
        for events in records:
            closes = {e["good"]: e["minute"] for e in events
                      if e["type"] == "close"}
            open_rows = 0
            for e in events:
                if e["type"] == "snapshot":
                    open_rows += sum(1 for c in e["hotel_closed"] if not c)
            assert open_rows == sum(closes[g] - 1 for g in closes)
        total = sum(len(v) for v in datasets.values())
        expected = 0
        for events in records:
            closes = {e["good"]: e["minute"] for e in events
                      if e["type"] == "close"}
            expected += sum(m - 1 for m in closes.values())
        assert total == expected

    def test_labels_match_close_minus_ask_and_nonnegative(self):
        records = price_corpus(3)
        datasets = extract_training_set(records)
        labels = [ex.label for k in BANK_KEYS for ex in datasets[k]]
        assert labels
        assert min(labels) >= 0.0
        assert max(labels) > 0.0

    def test_incomplete_game_skipped(self):
        records = price_corpus(1)
        truncated = [e for e in records[0] if e["type"] != "close"]
        datasets = extract_training_set([truncated])
        assert all(len(v) == 0 for v in datasets.values())


class TestClosingOrder:
    def test_single_room_deterministic(self):
        rng = np.random.default_rng(0)
        assert sample_closing_order([HOTEL0 + 4], 10, rng) == {HOTEL0 + 4: 11}

    def test_first_slot_marginal_uniform(self):
        rng = np.random.default_rng(1)
        rooms = list(range(HOTEL0, HOTEL0 + 8))
        counts = {r: 0 for r in rooms}
        draws = 20000
        for _ in range(draws):
            assignment = sample_closing_order(rooms, 3, rng)
            first = min(assignment, key=assignment.get)
            counts[first] += 1
        observed = np.array([counts[r] for r in rooms])
        _, p = stats.chisquare(observed)
        assert p > 0.001

    def test_fixed_seed_reproducible(self):
        rooms = [HOTEL0 + 1, HOTEL0 + 5, HOTEL0 + 7]
        a = sample_closing_order(rooms, 8, np.random.default_rng(9))
        b = sample_closing_order(rooms, 8, np.random.default_rng(9))
        assert a == b
        assert sorted(a.values()) == [9, 10, 11]


def trained_fixture_bank(records=None):
    datasets = extract_training_set(records or price_corpus(4))
    return train_bank(datasets, k=8, rounds=10)


class TestPredictHotel:
    def test_untrained_bank_warns_and_uses_current(self):
        bank = HotelModelBank(models={}, metadata={})
        snap = make_snapshot()
        times = {HOTEL0 + s: 4 + s for s in range(1, 8)}
        with pytest.warns(RuntimeWarning):
            pred = predict_hotel(bank, snap, HOTEL0 + 1, times)
        assert pred.mean() == snap.hotel_ask[1]

    def test_zero_increase_model_predicts_current(self):
        data = [cde.LabeledExample((float(i),), 0.0) for i in range(40)]
        model = cde.train(data, k=3, rounds=2)
        bank = HotelModelBank(models={k: model for k in BANK_KEYS},
                              metadata={})
        snap = make_snapshot()
        times = {HOTEL0 + s: 4 + s for s in range(1, 8)}
        pred = predict_hotel(bank, snap, HOTEL0 + 2, times)
        rng = np.random.default_rng(0)
        assert pred.mean() == snap.hotel_ask[2]
        assert all(pred.sample(rng) == snap.hotel_ask[2] for _ in range(20))

    def test_samples_floored_and_reproducible(self):
        bank = trained_fixture_bank()
        snap = make_snapshot(minute=5)
        rng = np.random.default_rng(3)
        times = sample_closing_order(
            [HOTEL0 + s for s in range(1, 8)], 5, rng)
        pred = predict_hotel(bank, snap, HOTEL0 + 4, times)
        current = snap.hotel_ask[4]
        draws1 = [pred.sample(np.random.default_rng(s)) for s in range(50)]
        draws2 = [pred.sample(np.random.default_rng(s)) for s in range(50)]
        assert draws1 == draws2
        assert all(d >= current for d in draws1)
        assert pred.mean() >= current


class TestBaselines:
    def table_fixture(self):
        table = HistoricalPriceTable()
        table.entries[HOTEL0 + 2] = [(100.0, 5), (200.0, 9)]
        table.entries[HOTEL0 + 3] = [(400.0, 4)]
        return table

    def test_current_bid_point(self):
        snap = make_snapshot(hotel_ask=(0.0, 240.0) + (0.0,) * 6)
        pred = current_bid(snap, HOTEL0 + 1)
        assert pred.mean() == 240.0
        assert pred.sample(np.random.default_rng(0)) == 240.0

    def test_simple_mean_ev_and_floor(self):
        table = self.table_fixture()
        low = make_snapshot(hotel_ask=(0.0, 0.0, 50.0) + (0.0,) * 5)
        high = make_snapshot(hotel_ask=(0.0, 0.0, 180.0) + (0.0,) * 5)
        assert simple_mean(table, low, HOTEL0 + 2, "ev").mean() == 150.0
        assert simple_mean(table, high, HOTEL0 + 2, "ev").mean() == 180.0

    def test_simple_mean_s_samples_empirical(self):
        table = self.table_fixture()
        snap = make_snapshot(hotel_ask=(0.0, 0.0, 120.0) + (0.0,) * 5)
        pred = simple_mean(table, snap, HOTEL0 + 2, "s")
        rng = np.random.default_rng(0)
        draws = {pred.sample(rng) for _ in range(100)}
        assert draws == {120.0, 200.0}

    def test_condl_mean_conditions_on_minute(self):
        table = self.table_fixture()
        snap = make_snapshot(hotel_ask=(0.0,) * 8)
        assert condl_mean(table, snap, HOTEL0 + 2, 5, "ev").mean() == 100.0
        assert condl_mean(table, snap, HOTEL0 + 2, 9, "ev").mean() == 200.0

    def test_condl_mean_empty_cell_falls_back(self):
        table = self.table_fixture()
        snap = make_snapshot(hotel_ask=(0.0,) * 8)
        assert condl_mean(table, snap, HOTEL0 + 2, 11, "ev").mean() == 150.0

    def test_empty_table_falls_back_to_current(self):
        table = HistoricalPriceTable()
        snap = make_snapshot(hotel_ask=(0.0, 75.0) + (0.0,) * 6)
        pred = simple_mean(table, snap, HOTEL0 + 1, "ev")
        assert isinstance(pred, PointPrediction)
        assert pred.mean() == 75.0

    def test_table_from_records(self):
        records = price_corpus(2)
        table = HistoricalPriceTable.from_records(records)
        assert len(table) == 16
        for room in range(HOTEL0, HOTEL0 + 8):
            assert len(table.entries[room]) == 2
            assert all(4 <= m <= 11 for _p, m in table.entries[room])

    def test_unknown_variant_rejected(self):
        table = self.table_fixture()
        snap = make_snapshot()
        with pytest.raises(ValueError):
            simple_mean(table, snap, HOTEL0 + 2, "median")


class TestBankSerialization:
    def test_roundtrip(self, tmp_path):
        bank = trained_fixture_bank()
        save_bank(bank, tmp_path / "bank")
        loaded = load_bank(tmp_path / "bank")
        assert set(loaded.models) == set(bank.models)
        snap = make_snapshot(minute=6)
        times = {HOTEL0 + s: 5 + s for s in range(1, 8)}
        for room in (HOTEL0 + 1, HOTEL0 + 5):
            a = predict_hotel(bank, snap, room, times)
            b = predict_hotel(loaded, snap, room, times)
            assert a.mean() == b.mean()
            assert (a.sample(np.random.default_rng(7))
                    == b.sample(np.random.default_rng(7)))

    def test_version_check(self, tmp_path):
        bank = trained_fixture_bank()
        save_bank(bank, tmp_path / "bank")
        manifest = tmp_path / "bank" / "manifest.json"
        doc = manifest.read_text().replace('"version": 1', '"version": 99')
        manifest.write_text(doc)
        with pytest.raises(ValueError):
            load_bank(tmp_path / "bank")

    def test_csv_export_uses_feature_names(self, tmp_path):
        datasets = extract_training_set(price_corpus(1))
        key = next(k for k in BANK_KEYS if datasets[k])
        path = tmp_path / "rows.csv"
        cde.write_dataset_csv(datasets[key], path, FEATURE_NAMES)
        header = path.read_text().splitlines()[0]
        assert header.startswith("minutes_remaining,")
        assert header.endswith(",label")


class TestLearnedBeatsCurrentBid:
    def test_rmse_direction_on_deterministic_labels(self):
        rng = np.random.default_rng(11)
        snapshots = []
        for _ in range(300):
            minute = int(rng.integers(2, 11))
            asks = tuple(float(rng.uniform(50, 250)) for _ in range(8))
            minutes = tuple(int(m) for m in
                            4 + rng.permutation(8))
            snapshots.append(make_snapshot(
                minute=minute, hotel_ask=asks,
                hotel_closed=(False,) * 8,
                close_price=(None,) * 8, close_minute=minutes))
        room = HOTEL0 + 1

        def true_increase(snap):
            return 12.0 * (GAME_MINUTES - snap.minute)

        data = [cde.LabeledExample(hotel_features(s, room), true_increase(s))
                for s in snapshots[:200]]
        model = cde.train(data, k=10, rounds=40)
        errs_learned = []
        errs_current = []
        for s in snapshots[200:]:
            truth = s.hotel_ask[1] + true_increase(s)
            feat = hotel_features(s, room)
            guess = s.hotel_ask[1] + max(0.0, cde.expected_value(model, feat))
            errs_learned.append((guess - truth) ** 2)
            errs_current.append((s.hotel_ask[1] - truth) ** 2)
        assert np.sqrt(np.mean(errs_learned)) < np.sqrt(np.mean(errs_current))


class TestFlightModel:
    def synthetic_records(self, m, ys, n_quotes=20):
        events = [{"type": "game", "agents": ["a"], "seed": 0, "version": 1}]
        events.append({"type": "hidden", "flight_y": list(ys),
                       "hotel_close_minutes": list(range(4, 12))})
        for good, y in enumerate(ys):
            times = np.linspace(0, 720, n_quotes)
            for t in times:
                tau = t / 720.0
                price = 300.0 + m * (tau ** 2) * (y - 10.0)
                events.append({"type": "quote", "good": good,
                               "t": float(t), "ask": price})
        return [events]

    def test_fit_recovers_slope_exactly_without_noise(self):
        records = self.synthetic_records(6.5, [20.0 + 7 * i for i in range(8)])
        model = flight_fit(records)
        assert model.slope == pytest.approx(6.5, abs=1e-9)

    def test_predict_exact_on_noiseless_trajectory(self):
        m, y = 6.5, 55.0
        model = FlightPriceModel(slope=m)

        def price(t):
            return 300.0 + m * ((t / 720.0) ** 2) * (y - 10.0)

        first = (0.0, price(0.0))
        latest = (360.0, price(360.0))
        for T in (420.0, 540.0, 720.0):
            assert flight_predict(model, first, latest, 360.0, T) == \
                pytest.approx(price(T), abs=1e-6)

    def test_zero_slope_predicts_latest(self):
        model = FlightPriceModel(slope=0.0)
        assert flight_predict(model, (0.0, 310.0), (300.0, 355.0),
                              300.0, 600.0) == 355.0

    def test_flat_history_predicts_no_increase(self):
        model = FlightPriceModel(slope=5.0)
        assert flight_predict(model, (0.0, 300.0), (300.0, 300.0),
                              300.0, 700.0) == 300.0

    def test_zero_elapsed_predicts_no_change(self):
        model = FlightPriceModel(slope=5.0)
        assert flight_predict(model, (120.0, 300.0), (120.0, 300.0),
                              120.0, 700.0) == 300.0

    def test_negative_slope_rejected(self):
        with pytest.raises(ValueError):
            FlightPriceModel(slope=-1.0)

    def test_fit_on_engine_games_nonnegative(self):
        records = price_corpus(2)
        model = flight_fit(records)
        assert model.slope >= 0.0

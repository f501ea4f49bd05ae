"""Tests for the tournament harness: configs, reports, retraining,
predictor evaluation, and record replay."""
import csv
import json

import numpy as np
import pytest

import auctionlab.harness as harness
from auctionlab.agent import AgentConfig
from auctionlab.harness import (
    AgentSpec,
    ReplayVerdict,
    TournamentConfig,
    build_policies,
    collect_record_paths,
    default_roster,
    eval_predictor_rmse,
    evaluate_point_variant,
    make_point_predictor,
    parse_agent_spec,
    parse_tournament_config,
    prediction_events,
    replay,
    replay_record,
    run_tournament,
    score_report,
)
from auctionlab.market import events_to_jsonl, play_game, write_record


class InertPolicy:
    def act(self, view, ops, minute):
        pass


def fake_game(agents, scores):
    """Minimal record carrying only what score_report reads."""
    events = [{"seq": 0, "t": 0, "type": "game", "version": 1,
               "seed": 0, "agents": list(agents)}]
    for name, (score, utility) in zip(agents, scores):
        events.append({"seq": 99, "t": 720, "type": "score", "agent": name,
                       "score": score, "utility": utility,
                       "expenditure": utility - score})
    return events


class TestAgentSpec:
    def test_early_bidder_line(self):
        spec = parse_agent_spec("eb early_bidder")
        assert spec.kind == "early_bidder"
        assert spec.config is None

    def test_adaptive_with_overrides(self):
        spec = parse_agent_spec(
            "ada predictor_variant=simple_s scenario_budget=32 seed=7")
        assert spec.kind == "adaptive"
        assert spec.config.predictor_variant == "simple_s"
        assert spec.config.scenario_budget == 32
        assert spec.config.seed == 7

    def test_bare_name_gets_default_config(self):
        spec = parse_agent_spec("plain")
        assert spec.config == AgentConfig()

    def test_bad_tokens_rejected(self):
        with pytest.raises(ValueError):
            parse_agent_spec("x telepathy=9")
        with pytest.raises(ValueError):
            parse_agent_spec("x scenario_budget")
        with pytest.raises(ValueError):
            parse_agent_spec("")


class TestTournamentConfigParse:
    def test_full_file(self):
        cfg = parse_tournament_config("""
        # two-phase experiment
        game_count = 10
        master_seed = 99
        retrain_every = 5
        training_window = all
        parallelism = 2
        boost_k = 12
        boost_rounds = 8
        max_examples = 500
        agent = ada predictor_variant=learned_ev seed=1
        agent = eb0 early_bidder
        """)
        assert cfg.game_count == 10
        assert cfg.master_seed == 99
        assert cfg.retrain_every == 5
        assert cfg.training_window is None
        assert cfg.parallelism == 2
        assert cfg.max_examples == 500
        assert [s.name for s in cfg.roster] == ["ada", "eb0"]

    def test_never_disables_retraining(self):
        cfg = parse_tournament_config(
            "retrain_every = never\nagent = a early_bidder")
        assert cfg.retrain_every is None

    def test_window_as_game_count(self):
        cfg = parse_tournament_config(
            "training_window = 40\nagent = a early_bidder")
        assert cfg.training_window == 40

    def test_seed_logs_key(self):
        cfg = parse_tournament_config(
            "seed_logs = runs/phase1\nagent = a early_bidder")
        assert cfg.seed_logs == "runs/phase1"

    def test_errors_carry_line_numbers(self):
        with pytest.raises(ValueError, match="line 2"):
            parse_tournament_config("agent = a early_bidder\nwat = 1")
        with pytest.raises(ValueError, match="no agents"):
            parse_tournament_config("game_count = 3")
        with pytest.raises(ValueError):
            parse_tournament_config(
                "game_count = 0\nagent = a early_bidder")
        with pytest.raises(ValueError):
            parse_tournament_config(
                "agent = a early_bidder\nagent = a early_bidder")

    def test_roster_size_limit(self):
        roster = [AgentSpec(name=f"a{i}", kind="early_bidder")
                  for i in range(9)]
        with pytest.raises(ValueError):
            TournamentConfig(roster=roster)


class TestScoreReport:
    def test_two_agent_relative_scores(self):
        records = [fake_game(["a", "b"], [(100.0, 1100.0), (-100.0, 900.0)])]
        report = score_report(records)
        by_name = {a.name: a for a in report.agents}
        assert by_name["a"].mean_relative_score == pytest.approx(100.0)
        assert by_name["b"].mean_relative_score == pytest.approx(-100.0)
        assert by_name["a"].mean_score == pytest.approx(100.0)
        assert report.games == 1

    def test_accounting_identity(self):
        records = [fake_game(["a", "b"], [(250.0, 1250.0), (-50.0, 700.0)])]
        report = score_report(records)
        for a in report.agents:
            assert a.mean_utility - a.mean_score == pytest.approx(
                a.mean_expenditure)

    def test_standard_error_formula(self):
        scores = [10.0, 30.0, 50.0, 70.0]
        records = [fake_game(["a"], [(s, s)]) for s in scores]
        report = score_report(records)
        expected = np.std(scores, ddof=1) / np.sqrt(len(scores))
        assert report.agents[0].se_score == pytest.approx(expected)

    def test_pair_confidence_interval(self):
        rows = [(10.0, -5.0), (20.0, 5.0), (30.0, -15.0)]
        records = [fake_game(["a", "b"], [(x, x), (y, y)]) for x, y in rows]
        report = score_report(records)
        pair = report.pairs[0]
        diffs = [x - y for x, y in rows]
        from scipy import stats
        se = np.std(diffs, ddof=1) / np.sqrt(3)
        half = stats.t.ppf(0.975, 2) * se
        assert pair.mean_diff == pytest.approx(np.mean(diffs))
        assert pair.ci_low == pytest.approx(np.mean(diffs) - half)
        assert pair.ci_high == pytest.approx(np.mean(diffs) + half)

    def test_intervals_shrink_with_game_count(self):
        rng = np.random.default_rng(1)

        def synthetic(n):
            return [fake_game(["a", "b"],
                              [(float(rng.normal(0, 50)), 1000.0),
                               (float(rng.normal(0, 50)), 1000.0)])
                    for _ in range(n)]

        small = score_report(synthetic(64)).pairs[0]
        large = score_report(synthetic(256)).pairs[0]
        width_small = small.ci_high - small.ci_low
        width_large = large.ci_high - large.ci_low
        assert width_large < width_small
        assert width_large / width_small == pytest.approx(0.5, abs=0.2)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            score_report([])


class TestRunTournament:
    def eb_config(self, n_games=3, **kw):
        roster = [AgentSpec(name=f"e{i}", kind="early_bidder")
                  for i in range(3)]
        return TournamentConfig(roster=roster, game_count=n_games,
                                master_seed=11, retrain_every=None, **kw)

    def test_deterministic_and_seeded(self, tmp_path):
        records1, report1, manifest1 = run_tournament(self.eb_config())
        records2, _report2, _ = run_tournament(self.eb_config())
        assert [events_to_jsonl(r) for r in records1] == \
            [events_to_jsonl(r) for r in records2]
        for g, events in enumerate(records1):
            assert events[0]["seed"] == 11 + g
            assert events[1]["type"] == "meta"
            assert events[1]["model_version"] == 0
        assert report1.games == 3
        assert [m["voided"] for m in manifest1] == [False] * 3

    def test_output_files(self, tmp_path):
        out = tmp_path / "run"
        run_tournament(self.eb_config(), out_dir=out)
        names = sorted(p.name for p in out.iterdir())
        assert names == ["game_0000.jsonl", "game_0001.jsonl",
                         "game_0002.jsonl", "games.csv", "pairs.csv",
                         "scores.csv"]
        with open(out / "scores.csv") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == harness.SCORE_COLUMNS
        assert len(rows) == 4
        with open(out / "games.csv") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == harness.MANIFEST_COLUMNS
        assert [r[0] for r in rows[1:]] == ["0", "1", "2"]

    def test_relative_scores_zero_sum(self):
        records, report, _ = run_tournament(self.eb_config())
        total = sum(a.mean_relative_score * a.games for a in report.agents)
        assert total == pytest.approx(0.0, abs=1e-6)

    def test_retraining_bumps_model_version(self):
        roster = [
            AgentSpec(name="ada", config=AgentConfig(
                predictor_variant="learned_ev", scenario_budget=8, seed=2)),
            AgentSpec(name="eb", kind="early_bidder"),
        ]
        config = TournamentConfig(roster=roster, game_count=4,
                                  master_seed=5, retrain_every=2,
                                  boost_k=6, boost_rounds=4)
        records, report, manifest = run_tournament(config)
        versions = [events[1]["model_version"] for events in records]
        assert versions == [0, 0, 1, 1]
        assert report.voided == 0

    def test_voided_game_excluded(self, monkeypatch):
        real_play_game = harness.play_game
        config = self.eb_config(n_games=3)

        def flaky(roster, seed, **kwargs):
            if seed == config.master_seed + 1:
                raise RuntimeError("policy crashed")
            return real_play_game(roster, seed, **kwargs)

        monkeypatch.setattr(harness, "play_game", flaky)
        records, report, manifest = run_tournament(config)
        assert len(records) == 2
        assert report.voided == 1
        assert report.games == 2
        flags = {m["game"]: m["voided"] for m in manifest}
        assert flags == {0: False, 1: True, 2: False}
        assert "policy crashed" in manifest[1]["error"]

    def test_learned_without_bank_falls_back(self):
        spec = AgentSpec(name="x", config=AgentConfig(
            predictor_variant="learned_s", scenario_budget=4))
        policies = build_policies([spec], bank=None)
        assert policies[0][1].config.predictor_variant == "current_bid"
        policies = build_policies([spec], bank="sentinel")
        assert policies[0][1].config.predictor_variant == "learned_s"

    def test_default_roster_shape(self):
        roster = default_roster()
        assert len(roster) == 8
        assert all(s.kind == "early_bidder" for s in roster)

    def test_seed_records_warm_start(self):
        corpus = inert_corpus(3)
        config = self.eb_config(n_games=2)
        records, _report, manifest = run_tournament(
            config, seed_records=corpus)
        assert [events[1]["model_version"] for events in records] == [1, 1]
        assert [m["model_version"] for m in manifest] == [1, 1]
        again, _, _ = run_tournament(config, seed_records=corpus)
        assert [events_to_jsonl(r) for r in records] == \
            [events_to_jsonl(r) for r in again]

    def test_seed_logs_path_loads_corpus(self, tmp_path):
        first = tmp_path / "phase1"
        run_tournament(self.eb_config(), out_dir=first)
        config = self.eb_config(n_games=2, seed_logs=str(first))
        records, _, _ = run_tournament(config)
        assert [events[1]["model_version"] for events in records] == [1, 1]

    def test_seed_records_feed_later_retrains(self):
        corpus = inert_corpus(2)
        roster = [AgentSpec(name=f"e{i}", kind="early_bidder")
                  for i in range(3)]
        config = TournamentConfig(roster=roster, game_count=4,
                                  master_seed=11, retrain_every=2)
        records, _, _ = run_tournament(config, seed_records=corpus)
        assert [e[1]["model_version"] for e in records] == [1, 1, 2, 2]


def inert_corpus(n_games, seed0=31):
    records = []
    for g in range(n_games):
        game, _ = play_game([("idle", InertPolicy())], seed=seed0 + g)
        records.append(game.events)
    return records


class TestPredictorEval:
    def test_current_bid_zero_on_quiet_corpus(self):
        # with no bids, every hotel closes at its never-moving ask
        records = inert_corpus(2)
        fn = make_point_predictor("current_bid")
        assert eval_predictor_rmse(records, fn) == pytest.approx(0.0)

    def test_perfect_oracle_zero(self):
        game, _ = play_game([("e", harness.EarlyBidder())], seed=3)
        records = [game.events]
        closes = {e["good"]: e["price"] for e in game.events
                  if e["type"] == "close"}

        def oracle(snap, room, close_minute):
            return closes[room]

        assert eval_predictor_rmse(records, oracle) == pytest.approx(0.0)

    def test_event_count(self):
        records = inert_corpus(1)
        closes = {e["good"]: e["minute"] for e in records[0]
                  if e["type"] == "close"}
        expected = sum(m - 1 for m in closes.values())
        assert len(list(prediction_events(records))) == expected

    def test_split_evaluation_variants(self, tmp_path):
        records = []
        for g in range(4):
            game, _ = play_game(
                [("e0", harness.EarlyBidder()),
                 ("e1", harness.EarlyBidder())], seed=50 + g)
            records.append(game.events)
        for variant in ("current_bid", "simple_ev", "condl_ev"):
            result = evaluate_point_variant(records, variant,
                                            train_fraction=0.5)
            assert result["train_games"] == 2
            assert result["eval_games"] == 2
            assert np.isfinite(result["rmse"])
        learned = evaluate_point_variant(records, "learned_ev",
                                         train_fraction=0.5, k=6, rounds=4)
        assert learned["events"] > 0

    def test_bad_fraction_rejected(self):
        with pytest.raises(ValueError):
            evaluate_point_variant(inert_corpus(1), "current_bid",
                                   train_fraction=1.0)

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            make_point_predictor("learned_s")


class TestReplay:
    def mixed_records(self, tmp_path, n_games=2):
        roster = [
            AgentSpec(name="cur", config=AgentConfig(
                predictor_variant="current_bid", scenario_budget=8, seed=4)),
            AgentSpec(name="eb", kind="early_bidder"),
        ]
        config = TournamentConfig(roster=roster, game_count=n_games,
                                  master_seed=70, retrain_every=None)
        out = tmp_path / "games"
        run_tournament(config, out_dir=out)
        return sorted(out.glob("game_*.jsonl"))

    def test_tournament_records_replay_byte_identically(self, tmp_path):
        for path in self.mixed_records(tmp_path):
            verdict = replay_record(path)
            assert verdict.ok, verdict.report()
            assert "ok" in verdict.report()

    def test_tampered_record_fails_with_located_diff(self, tmp_path):
        path = self.mixed_records(tmp_path, n_games=1)[0]
        lines = path.read_text().splitlines(keepends=True)
        target = None
        for i, line in enumerate(lines):
            if '"type":"trade"' in line:
                target = i
                break
        event = json.loads(lines[target])
        event["price"] = event["price"] + 1.0
        lines[target] = json.dumps(event, separators=(",", ":")) + "\n"
        path.write_text("".join(lines))
        verdict = replay_record(path)
        assert not verdict.ok
        assert verdict.first_diff == target + 1
        assert "mismatch" in verdict.report()

    def test_plain_game_without_meta(self):
        game, _ = play_game([("idle", InertPolicy())], seed=8)
        verdict = replay(game.events)
        assert verdict.ok

    def test_unsupported_version_rejected(self, tmp_path):
        path = self.mixed_records(tmp_path, n_games=1)[0]
        lines = path.read_text().splitlines(keepends=True)
        header = json.loads(lines[0])
        header["version"] = 999
        lines[0] = json.dumps(header, separators=(",", ":")) + "\n"
        path.write_text("".join(lines))
        with pytest.raises(ValueError):
            replay_record(path)

    def test_collect_record_paths(self, tmp_path):
        game, _ = play_game([("idle", InertPolicy())], seed=8)
        write_record(game.events, tmp_path / "game_0000.jsonl")
        write_record(game.events, tmp_path / "game_0001.jsonl")
        found = collect_record_paths(tmp_path)
        assert [p.rsplit("/", 1)[-1] for p in found] == \
            ["game_0000.jsonl", "game_0001.jsonl"]
        single = collect_record_paths(tmp_path / "game_0000.jsonl")
        assert len(single) == 1

"""Experiment engine: seeded tournaments with phased retraining, score
reports, point-predictor evaluation, and byte-exact record replay."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .agent import AdaptiveAgent, AgentConfig, EarlyBidder, _BOOL_WORDS
from .market import (
    RECORD_FORMAT_VERSION,
    MarketSnapshot,
    events_to_jsonl,
    play_game,
    read_record,
    write_record,
)
from .predictors import (
    HOTEL0,
    HistoricalPriceTable,
    condl_mean,
    current_bid,
    extract_training_set,
    flight_fit,
    predict_hotel,
    simple_mean,
    train_bank,
)

log = logging.getLogger(__name__)

AGENT_KINDS = ("adaptive", "early_bidder")

SCORE_COLUMNS = ("agent", "games", "mean_score", "se_score",
                 "mean_relative_score", "se_relative_score",
                 "mean_utility", "mean_expenditure")
PAIR_COLUMNS = ("agent_a", "agent_b", "games", "mean_diff",
                "ci_low", "ci_high")
MANIFEST_COLUMNS = ("game", "seed", "model_version", "voided", "error")

# Offsets mixed into per-game derived seeds so the agent sampling stream,
# the game RNG, and the retraining subsampler never collide.
_AGENT_SEED_STRIDE = 9973
_RETRAIN_SEED_BASE = 10_000_019


@dataclass(frozen=True)
class AgentSpec:
    """One roster slot: an adaptive bidder config or a baseline."""
    name: str
    kind: str = "adaptive"
    config: AgentConfig = None

    def __post_init__(self):
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"unknown agent kind {self.kind!r}")
        if self.kind == "adaptive" and self.config is None:
            object.__setattr__(self, "config", AgentConfig())


@dataclass
class TournamentConfig:
    roster: list
    game_count: int = 1
    master_seed: int = 0
    retrain_every: int = 25  # games between retrains; None disables
    training_window: int = None  # last N games; None means all past games
    parallelism: int = 1
    boost_k: int = 20
    boost_rounds: int = 30
    max_examples: int = 4000
    seed_logs: str = None  # warm-start corpus trained before game 0

    def __post_init__(self):
        if not 1 <= len(self.roster) <= 8:
            raise ValueError("roster must hold between 1 and 8 agents")
        names = [spec.name for spec in self.roster]
        if len(set(names)) != len(names):
            raise ValueError("agent names must be unique")
        if self.game_count < 1:
            raise ValueError("game_count must be >= 1")
        if self.retrain_every is not None and self.retrain_every < 1:
            raise ValueError("retrain_every must be >= 1 or never")
        if self.training_window is not None and self.training_window < 1:
            raise ValueError("training_window must be >= 1 or all")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")


def _convert_field(key: str, val: str):
    kinds = {f.name: f.type for f in fields(AgentConfig)}
    if key not in kinds:
        raise ValueError(f"unknown agent option {key!r}")
    kind = kinds[key]
    if kind == "bool":
        if val.lower() not in _BOOL_WORDS:
            raise ValueError(f"bad boolean {val!r}")
        return _BOOL_WORDS[val.lower()]
    if kind == "int":
        return int(val)
    if kind == "float":
        return float(val)
    return val


def parse_agent_spec(text: str) -> AgentSpec:
    """Parse 'name early_bidder' or 'name [key=value ...]' into a spec."""
    tokens = text.split()
    if not tokens:
        raise ValueError("empty agent line")
    name = tokens[0]
    if tokens[1:] == ["early_bidder"]:
        return AgentSpec(name=name, kind="early_bidder")
    overrides = {}
    for token in tokens[1:]:
        key, sep, val = token.partition("=")
        if not sep or not key or not val:
            raise ValueError(f"expected key=value, got {token!r}")
        overrides[key] = _convert_field(key, val)
    return AgentSpec(name=name, kind="adaptive", config=AgentConfig(**overrides))


def parse_tournament_config(text: str) -> TournamentConfig:
    """Parse flat key-value lines; repeated 'agent =' lines build the roster."""
    roster = []
    values = {}
    int_keys = {"game_count", "master_seed", "parallelism",
                "boost_k", "boost_rounds"}
    optional_int_keys = {"retrain_every": "never",
                         "training_window": "all",
                         "max_examples": "all"}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key or not val:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        try:
            if key == "agent":
                roster.append(parse_agent_spec(val))
            elif key in int_keys:
                values[key] = int(val)
            elif key in optional_int_keys:
                values[key] = (None if val == optional_int_keys[key]
                               else int(val))
            elif key == "seed_logs":
                values[key] = val
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    if not roster:
        raise ValueError("config declares no agents")
    return TournamentConfig(roster=roster, **values)


def load_tournament_config(path) -> TournamentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_tournament_config(fh.read())


def default_roster() -> list:
    return [AgentSpec(name=f"eb{i}", kind="early_bidder") for i in range(8)]


def build_policies(roster, bank=None, table=None, flight_model=None,
                   game_index: int = 0) -> list:
    """Fresh per-game policies with the current models hot-swapped in.

    Until a first trained bank exists, learned variants run as current_bid
    so the bootstrap phase still produces sensible training games.
    """
    shared_table = table if table is not None else HistoricalPriceTable()
    out = []
    for spec in roster:
        if spec.kind == "early_bidder":
            out.append((spec.name, EarlyBidder(shared_table)))
            continue
        cfg = spec.config
        if bank is None and cfg.predictor_variant.startswith("learned"):
            cfg = replace(cfg, predictor_variant="current_bid")
        cfg = replace(cfg, seed=cfg.seed + _AGENT_SEED_STRIDE * game_index)
        out.append((spec.name, AdaptiveAgent(
            cfg, bank=bank, table=shared_table, flight_model=flight_model)))
    return out


# ---------------------------------------------------------------- reports

@dataclass(frozen=True)
class AgentReport:
    name: str
    games: int
    mean_score: float
    se_score: float
    mean_relative_score: float
    se_relative_score: float
    mean_utility: float
    mean_expenditure: float


@dataclass(frozen=True)
class PairReport:
    agent_a: str
    agent_b: str
    games: int
    mean_diff: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class MetricsReport:
    agents: list
    pairs: list
    games: int
    voided: int


def game_scores(events) -> dict:
    """Score rows of one record: name -> (score, utility, expenditure)."""
    return {e["agent"]: (e["score"], e["utility"], e["expenditure"])
            for e in events if e["type"] == "score"}


def _mean_se(values) -> tuple:
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    if len(arr) < 2:
        return mean, 0.0
    return mean, float(arr.std(ddof=1) / math.sqrt(len(arr)))


def _t_quantile(prob: float, dof: int) -> float:
    from scipy import stats
    return float(stats.t.ppf(prob, dof))


def score_report(records, voided: int = 0) -> MetricsReport:
    """Per-agent means with standard errors and pairwise score CIs."""
    if not records:
        raise ValueError("no completed games to report on")
    per_agent = {}
    per_game = []
    for events in records:
        rows = game_scores(events)
        game_mean = np.mean([s for s, _u, _x in rows.values()])
        per_game.append(rows)
        for name, (score, utility, expenditure) in rows.items():
            slot = per_agent.setdefault(name, {"score": [], "rel": [],
                                               "util": [], "spend": []})
            slot["score"].append(score)
            slot["rel"].append(score - game_mean)
            slot["util"].append(utility)
            slot["spend"].append(expenditure)
    agents = []
    for name, slot in per_agent.items():
        mean_score, se_score = _mean_se(slot["score"])
        mean_rel, se_rel = _mean_se(slot["rel"])
        agents.append(AgentReport(
            name=name, games=len(slot["score"]),
            mean_score=mean_score, se_score=se_score,
            mean_relative_score=mean_rel, se_relative_score=se_rel,
            mean_utility=float(np.mean(slot["util"])),
            mean_expenditure=float(np.mean(slot["spend"]))))
    names = list(per_agent)
    pairs = []
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            diffs = [rows[a][0] - rows[b][0] for rows in per_game
                     if a in rows and b in rows]
            if not diffs:
                continue
            mean_diff, se_diff = _mean_se(diffs)
            if len(diffs) >= 2 and se_diff > 0:
                half = _t_quantile(0.975, len(diffs) - 1) * se_diff
            else:
                half = 0.0
            pairs.append(PairReport(agent_a=a, agent_b=b, games=len(diffs),
                                    mean_diff=mean_diff,
                                    ci_low=mean_diff - half,
                                    ci_high=mean_diff + half))
    return MetricsReport(agents=agents, pairs=pairs,
                         games=len(records), voided=voided)


def write_score_csv(report: MetricsReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_COLUMNS)
        for a in report.agents:
            writer.writerow([a.name, a.games, a.mean_score, a.se_score,
                             a.mean_relative_score, a.se_relative_score,
                             a.mean_utility, a.mean_expenditure])


def write_pairs_csv(report: MetricsReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PAIR_COLUMNS)
        for p in report.pairs:
            writer.writerow([p.agent_a, p.agent_b, p.games, p.mean_diff,
                             p.ci_low, p.ci_high])


# ------------------------------------------------------------- tournament

def _select_window(completed, training_window):
    if training_window is None:
        return list(completed)
    return list(completed[-training_window:])


def _fit_models(window, config: TournamentConfig, needs_bank: bool,
                version: int):
    """Train the price table, flight model, and (if used) model bank."""
    table = HistoricalPriceTable.from_records(window)
    flight_model = flight_fit(window)
    bank = None
    if needs_bank:
        datasets = extract_training_set(window)
        bank = train_bank(datasets, k=config.boost_k,
                          rounds=config.boost_rounds,
                          max_examples=config.max_examples,
                          rng=np.random.default_rng(
                              _RETRAIN_SEED_BASE + config.master_seed
                              + version))
    return table, flight_model, bank


def run_tournament(config: TournamentConfig, out_dir=None, seed_records=None):
    """Play the configured games sequentially with phased retraining.

    Returns (records, report, manifest): the completed event logs, the
    metrics report, and one manifest row per scheduled game. Games where
    a policy raises are voided: logged, skipped in every statistic, and
    never fed to retraining. Per-game seeds are master_seed + game index,
    so results do not depend on the execution order or parallelism.

    seed_records (or config.seed_logs, a path to earlier records) warm
    start the models: they are trained once before game 0 and count as
    model version 1. With retrain_every = never this pins every game to
    those fixed models; otherwise later retrains fold the seed corpus
    into the training window ahead of the new games.
    """
    needs_bank = any(spec.kind == "adaptive"
                     and spec.config.predictor_variant.startswith("learned")
                     for spec in config.roster)
    if seed_records is None and config.seed_logs is not None:
        seed_records = load_records(collect_record_paths(config.seed_logs))
    history = list(seed_records) if seed_records else []
    bank = None
    table = None
    flight_model = None
    version = 0
    if history:
        window = _select_window(history, config.training_window)
        table, flight_model, bank = _fit_models(window, config, needs_bank,
                                                version)
        version = 1
        log.info("warm started models from %d seed games (version 1)",
                 len(window))
    completed = []
    manifest = []
    voided = 0
    out_path = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
    for g in range(config.game_count):
        if (config.retrain_every is not None and g > 0
                and g % config.retrain_every == 0):
            window = _select_window(history, config.training_window)
            if window:
                table, flight_model, bank = _fit_models(
                    window, config, needs_bank, version)
                version += 1
                log.info("retrained models at game %d (version %d, "
                         "window %d games)", g, version, len(window))
        roster = build_policies(config.roster, bank=bank, table=table,
                                flight_model=flight_model, game_index=g)
        seed = config.master_seed + g
        meta = {"game": g, "model_version": version}
        try:
            game, _results = play_game(roster, seed=seed, meta=meta)
        except Exception as exc:
            voided += 1
            log.warning("game %d voided: %r", g, exc)
            manifest.append({"game": g, "seed": seed,
                             "model_version": version,
                             "voided": True, "error": repr(exc)})
            continue
        completed.append(game.events)
        history.append(game.events)
        manifest.append({"game": g, "seed": seed, "model_version": version,
                         "voided": False, "error": ""})
        if out_path is not None:
            write_record(game.events, out_path / f"game_{g:04d}.jsonl")
        log.info("game %d/%d done", g + 1, config.game_count)
    report = score_report(completed, voided=voided) if completed else \
        MetricsReport(agents=[], pairs=[], games=0, voided=voided)
    if out_path is not None:
        write_score_csv(report, out_path / "scores.csv")
        write_pairs_csv(report, out_path / "pairs.csv")
        with open(out_path / "games.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(MANIFEST_COLUMNS)
            for row in manifest:
                writer.writerow([row[c] for c in MANIFEST_COLUMNS])
    return completed, report, manifest


# ------------------------------------------------------- predictor eval

POINT_VARIANTS = ("current_bid", "simple_ev", "condl_ev", "learned_ev")


def make_point_predictor(variant: str, bank=None, table=None):
    """Point prediction fn(snapshot, room, close_minute) for _ev variants.

    learned_ev leaves open rooms' close times unknown; condl_ev conditions
    on the realized close minute supplied by the evaluation loop.
    """
    if variant not in POINT_VARIANTS:
        raise ValueError(f"not a point predictor variant: {variant!r}")
    if variant == "current_bid":
        return lambda snap, room, cm: current_bid(snap, room).mean()
    if variant == "simple_ev":
        return lambda snap, room, cm: simple_mean(table, snap, room,
                                                  "ev").mean()
    if variant == "condl_ev":
        return lambda snap, room, cm: condl_mean(table, snap, room, cm,
                                                 "ev").mean()
    return lambda snap, room, cm: predict_hotel(bank, snap, room, {}).mean()


def prediction_events(records):
    """Yield (snapshot, room, close_price, close_minute) for every minute
    at which a later-closing room was still open. Incomplete games skip."""
    for events in records:
        header = events[0]
        n_agents = len(header["agents"])
        closes = {e["good"]: (e["minute"], e["price"])
                  for e in events if e["type"] == "close"}
        if len(closes) != 8:
            continue
        for e in events:
            if e["type"] != "snapshot":
                continue
            snap = MarketSnapshot(
                minute=e["minute"],
                flight_ask=tuple(e["flight_ask"]),
                hotel_ask=tuple(e["hotel_ask"]),
                hotel_closed=tuple(e["hotel_closed"]),
                close_price=tuple(e["close_price"]),
                close_minute=tuple(e["close_minute"]),
                n_agents=n_agents,
                player_bits=(0,) * 8,
            )
            for slot in range(8):
                if snap.hotel_closed[slot]:
                    continue
                room = HOTEL0 + slot
                minute, price = closes[room]
                yield snap, room, price, minute


def prediction_errors(records, predict_fn) -> np.ndarray:
    """Squared error per prediction event."""
    errors = []
    for snap, room, price, minute in prediction_events(records):
        predicted = float(predict_fn(snap, room, minute))
        errors.append((predicted - price) ** 2)
    return np.asarray(errors, dtype=float)


def eval_predictor_rmse(records, predict_fn) -> float:
    errors = prediction_errors(records, predict_fn)
    if len(errors) == 0:
        raise ValueError("no prediction events in the given records")
    return float(np.sqrt(errors.mean()))


def evaluate_point_variant(records, variant: str, bank=None,
                           train_fraction: float = 0.5, k: int = 20,
                           rounds: int = 30, max_examples=None,
                           seed: int = 0) -> dict:
    """Train-on-early, evaluate-on-late RMSE for one point predictor.

    The first train_fraction of the records builds the price table (and
    the model bank for learned_ev unless one is supplied); the rest is
    the evaluation corpus. current_bid needs no training but is measured
    on the same evaluation split so numbers stay comparable.
    """
    if not 0.0 <= train_fraction < 1.0:
        raise ValueError("train_fraction must be in [0, 1)")
    split = int(round(train_fraction * len(records)))
    train, evaluation = records[:split], records[split:]
    if not evaluation:
        raise ValueError("no evaluation games after the training split")
    table = HistoricalPriceTable.from_records(train)
    if variant == "learned_ev" and bank is None:
        if not train:
            raise ValueError("learned_ev needs training games or a bank")
        bank = train_bank(extract_training_set(train), k=k, rounds=rounds,
                          max_examples=max_examples,
                          rng=np.random.default_rng(seed))
    predict_fn = make_point_predictor(variant, bank=bank, table=table)
    errors = prediction_errors(evaluation, predict_fn)
    if len(errors) == 0:
        raise ValueError("no prediction events in the evaluation games")
    return {"variant": variant, "rmse": float(np.sqrt(errors.mean())),
            "events": int(len(errors)), "train_games": len(train),
            "eval_games": len(evaluation)}


# ----------------------------------------------------------------- replay

@dataclass(frozen=True)
class ReplayVerdict:
    ok: bool
    lines: int
    first_diff: int = None
    expected: str = None
    actual: str = None

    def report(self) -> str:
        if self.ok:
            return f"replay ok: {self.lines} lines match"
        return (f"replay mismatch at line {self.first_diff}:\n"
                f"  recorded:    {self.expected}\n"
                f"  regenerated: {self.actual}")


class ReplayPolicy:
    """Re-submits the logged actions of one agent, minute by minute."""

    def __init__(self, actions_by_minute: dict):
        self.actions = actions_by_minute

    def act(self, view, ops, minute: int) -> None:
        for e in self.actions.get(minute, ()):
            if e["type"] == "withdraw":
                ops.withdraw_entertainment(e["good"], e["side"])
            elif e["auction"] == "flight":
                ops.buy_flight(e["good"], e["price"], qty=e["qty"])
            elif e["auction"] == "hotel":
                ops.bid_hotel(e["good"], list(e["prices"]))
            else:
                ops.quote_entertainment(e["good"], e["side"], e["price"],
                                        qty=e["qty"])


def replay(events, original_text: str = None) -> ReplayVerdict:
    """Re-simulate a record from its seed and logged actions.

    The verdict is byte equality between the regenerated event stream and
    original_text (the reserialized events when no raw text is given).
    """
    header = events[0]
    if header.get("type") != "game":
        raise ValueError("record does not start with a game header")
    if header.get("version") != RECORD_FORMAT_VERSION:
        raise ValueError(f"unsupported record version {header.get('version')}")
    meta = None
    if len(events) > 1 and events[1].get("type") == "meta":
        meta = {k: v for k, v in events[1].items()
                if k not in ("seq", "t", "type")}
    by_agent = {name: {} for name in header["agents"]}
    for e in events:
        if e.get("type") not in ("bid", "withdraw"):
            continue
        minute = e["t"] // 60
        by_agent[e["agent"]].setdefault(minute, []).append(e)
    roster = [(name, ReplayPolicy(by_agent[name]))
              for name in header["agents"]]
    game, _results = play_game(roster, seed=header["seed"], meta=meta)
    regenerated = events_to_jsonl(game.events)
    original = (original_text if original_text is not None
                else events_to_jsonl(events))
    if regenerated == original:
        return ReplayVerdict(ok=True, lines=len(game.events))
    old_lines = original.splitlines()
    new_lines = regenerated.splitlines()
    for i in range(max(len(old_lines), len(new_lines))):
        old = old_lines[i] if i < len(old_lines) else "<missing>"
        new = new_lines[i] if i < len(new_lines) else "<missing>"
        if old != new:
            return ReplayVerdict(ok=False, lines=len(new_lines),
                                 first_diff=i + 1, expected=old, actual=new)
    return ReplayVerdict(ok=False, lines=len(new_lines),
                         first_diff=len(new_lines), expected="", actual="")


def replay_record(path) -> ReplayVerdict:
    """Replay a JSONL record file against its exact on-disk bytes."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return replay(read_record(path), original_text=text)


def load_records(paths) -> list:
    """Read many JSONL record files, sorted for reproducibility."""
    return [read_record(p) for p in sorted(Path(p) for p in paths)]


def collect_record_paths(logs) -> list:
    """Expand a directory, or pass through an explicit list of files."""
    path = Path(logs)
    if path.is_dir():
        found = sorted(path.glob("game_*.jsonl")) or sorted(
            path.glob("*.jsonl"))
        return [str(p) for p in found]
    return [str(path)]

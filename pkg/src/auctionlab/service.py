"""HTTP service exposing game simulation, tournaments, predictor training
and evaluation, feature extraction, and record replay."""
from __future__ import annotations

from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .agent import AgentConfig
from .harness import (
    AgentSpec,
    TournamentConfig,
    build_policies,
    collect_record_paths,
    default_roster,
    evaluate_point_variant,
    load_records,
    replay_record,
    run_tournament,
)
from .cde import write_dataset_csv
from .market import events_to_jsonl, play_game
from .predictors import (
    FEATURE_NAMES,
    extract_training_set,
    load_bank,
    save_bank,
    train_bank,
)

app = FastAPI(title="auctionlab", version=__version__)


class AgentSpecModel(BaseModel):
    name: str
    kind: str = "adaptive"
    options: dict = Field(default_factory=dict)

    def to_spec(self) -> AgentSpec:
        config = None
        if self.kind == "adaptive":
            config = AgentConfig(**self.options)
        return AgentSpec(name=self.name, kind=self.kind, config=config)


class ScoreRow(BaseModel):
    agent: str
    score: float
    utility: float
    expenditure: float


class SimulateRequest(BaseModel):
    seed: int = 0
    roster: list[AgentSpecModel] = Field(default_factory=list)


class SimulateResponse(BaseModel):
    seed: int
    events: int
    scores: list[ScoreRow]
    record_jsonl: str


class AgentReportModel(BaseModel):
    name: str
    games: int
    mean_score: float
    se_score: float
    mean_relative_score: float
    se_relative_score: float
    mean_utility: float
    mean_expenditure: float


class PairReportModel(BaseModel):
    agent_a: str
    agent_b: str
    games: int
    mean_diff: float
    ci_low: float
    ci_high: float


class TournamentRequest(BaseModel):
    roster: list[AgentSpecModel]
    game_count: int = 1
    master_seed: int = 0
    retrain_every: Optional[int] = 25
    training_window: Optional[int] = None
    parallelism: int = 1
    boost_k: int = 20
    boost_rounds: int = 30
    max_examples: Optional[int] = 4000
    seed_logs: Optional[str] = None
    out_dir: Optional[str] = None


class TournamentResponse(BaseModel):
    games: int
    voided: int
    agents: list[AgentReportModel]
    pairs: list[PairReportModel]
    out_dir: Optional[str] = None


class TrainRequest(BaseModel):
    logs: str
    out: str
    k: int = 20
    rounds: int = 30
    max_examples: Optional[int] = None
    seed: int = 0


class TrainResponse(BaseModel):
    games: int
    examples: dict[str, int]
    out: str


class EvalPredictorRequest(BaseModel):
    logs: str
    variant: str
    bank: Optional[str] = None
    train_fraction: float = 0.5
    k: int = 20
    rounds: int = 30
    max_examples: Optional[int] = None
    seed: int = 0


class EvalPredictorResponse(BaseModel):
    variant: str
    rmse: float
    events: int
    train_games: int
    eval_games: int


class ExtractFeaturesRequest(BaseModel):
    logs: str
    out: str


class ExtractFeaturesResponse(BaseModel):
    rows: dict[str, int]
    files: list[str]


class ReplayRequest(BaseModel):
    record: str


class ReplayResponse(BaseModel):
    ok: bool
    lines: int
    first_diff: Optional[int] = None
    expected: Optional[str] = None
    actual: Optional[str] = None


def _bad_request(exc: Exception):
    return HTTPException(status_code=400, detail=str(exc))


def _records_or_400(logs: str):
    paths = collect_record_paths(logs)
    if not paths:
        raise HTTPException(status_code=400,
                            detail=f"no JSONL records under {logs!r}")
    try:
        return load_records(paths)
    except (OSError, ValueError) as exc:
        raise _bad_request(exc) from None


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/simulate", response_model=SimulateResponse)
def simulate(req: SimulateRequest) -> SimulateResponse:
    try:
        specs = [m.to_spec() for m in req.roster] or default_roster()
        names = [s.name for s in specs]
        if len(set(names)) != len(names) or not 1 <= len(specs) <= 8:
            raise ValueError("roster needs 1-8 uniquely named agents")
        roster = build_policies(specs)
        game, results = play_game(roster, seed=req.seed)
    except (ValueError, TypeError) as exc:
        raise _bad_request(exc) from None
    scores = [ScoreRow(agent=name, score=s, utility=u, expenditure=x)
              for name, (s, u, x) in results.items()]
    return SimulateResponse(seed=req.seed, events=len(game.events),
                            scores=scores,
                            record_jsonl=events_to_jsonl(game.events))


@app.post("/tournament", response_model=TournamentResponse)
def tournament(req: TournamentRequest) -> TournamentResponse:
    try:
        config = TournamentConfig(
            roster=[m.to_spec() for m in req.roster],
            game_count=req.game_count, master_seed=req.master_seed,
            retrain_every=req.retrain_every,
            training_window=req.training_window,
            parallelism=req.parallelism, boost_k=req.boost_k,
            boost_rounds=req.boost_rounds, max_examples=req.max_examples,
            seed_logs=req.seed_logs)
    except (ValueError, TypeError) as exc:
        raise _bad_request(exc) from None
    try:
        _records, report, _manifest = run_tournament(config,
                                                     out_dir=req.out_dir)
    except FileNotFoundError as exc:
        raise _bad_request(exc) from None
    return TournamentResponse(
        games=report.games, voided=report.voided,
        agents=[AgentReportModel(**asdict(a)) for a in report.agents],
        pairs=[PairReportModel(**asdict(p)) for p in report.pairs],
        out_dir=req.out_dir)


@app.post("/train", response_model=TrainResponse)
def train(req: TrainRequest) -> TrainResponse:
    records = _records_or_400(req.logs)
    try:
        datasets = extract_training_set(records)
        bank = train_bank(datasets, k=req.k, rounds=req.rounds,
                          max_examples=req.max_examples,
                          rng=np.random.default_rng(req.seed))
        save_bank(bank, req.out)
    except (ValueError, OSError) as exc:
        raise _bad_request(exc) from None
    return TrainResponse(games=len(records),
                         examples=bank.metadata.get("examples", {}),
                         out=req.out)


@app.post("/eval-predictor", response_model=EvalPredictorResponse)
def eval_predictor(req: EvalPredictorRequest) -> EvalPredictorResponse:
    records = _records_or_400(req.logs)
    try:
        bank = load_bank(req.bank) if req.bank else None
        result = evaluate_point_variant(
            records, req.variant, bank=bank,
            train_fraction=req.train_fraction, k=req.k, rounds=req.rounds,
            max_examples=req.max_examples, seed=req.seed)
    except (ValueError, OSError) as exc:
        raise _bad_request(exc) from None
    return EvalPredictorResponse(**result)


@app.post("/extract-features", response_model=ExtractFeaturesResponse)
def extract_features(req: ExtractFeaturesRequest) -> ExtractFeaturesResponse:
    records = _records_or_400(req.logs)
    try:
        datasets = extract_training_set(records)
        out = Path(req.out)
        out.mkdir(parents=True, exist_ok=True)
        rows = {}
        files = []
        for key, examples in datasets.items():
            if not examples:
                continue
            path = out / f"{key}.csv"
            write_dataset_csv(examples, path, FEATURE_NAMES)
            rows[key] = len(examples)
            files.append(str(path))
    except (ValueError, OSError) as exc:
        raise _bad_request(exc) from None
    return ExtractFeaturesResponse(rows=rows, files=sorted(files))


@app.post("/replay", response_model=ReplayResponse)
def replay_endpoint(req: ReplayRequest) -> ReplayResponse:
    try:
        verdict = replay_record(req.record)
    except (ValueError, OSError, KeyError) as exc:
        raise _bad_request(exc) from None
    return ReplayResponse(ok=verdict.ok, lines=verdict.lines,
                          first_diff=verdict.first_diff,
                          expected=verdict.expected, actual=verdict.actual)

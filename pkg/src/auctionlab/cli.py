"""Command-line client for the auction laboratory service.

Every subcommand talks to the HTTP API: in-process by default, or to a
remote server started with `auctionlab serve` when --server is given.
Exit codes: 0 success, 1 invalid config or input, 2 verification failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

import httpx

from .harness import load_tournament_config
from .service import app

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_VERIFY_FAILED = 2


def make_client(server: str) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    return TestClient(app, raise_server_exceptions=False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="auctionlab",
        description="Travel-auction bidding laboratory: simulate games, "
                    "run tournaments, train and evaluate price predictors, "
                    "and verify records by replay.")
    parser.add_argument("--server", default=None,
                        help="service URL; default runs the service "
                             "in this process")
    parser.add_argument("--verbose", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="play one seeded game")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--roster",
                     help="file with 'agent = name ...' lines; default "
                          "is eight early bidders")
    sim.add_argument("--out", help="write the JSONL game record here")

    tour = sub.add_parser("tournament", help="run a seeded tournament")
    tour.add_argument("--config", required=True,
                      help="flat key-value tournament config file")
    tour.add_argument("--out-dir", required=True,
                      help="directory for game records and CSV reports")

    train = sub.add_parser("train", help="train hotel price models")
    train.add_argument("--logs", required=True,
                       help="record file or directory of game_*.jsonl")
    train.add_argument("--k", type=int, default=20)
    train.add_argument("--rounds", type=int, default=30)
    train.add_argument("--max-examples", type=int, default=None)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--out", required=True, help="model bank directory")

    evalp = sub.add_parser("eval-predictor",
                           help="RMSE of a point predictor on logged games")
    evalp.add_argument("--logs", required=True)
    evalp.add_argument("--variant", required=True,
                       choices=("current_bid", "simple_ev", "condl_ev",
                                "learned_ev"))
    evalp.add_argument("--bank", help="pre-trained bank directory")
    evalp.add_argument("--train-fraction", type=float, default=0.5)
    evalp.add_argument("--k", type=int, default=20)
    evalp.add_argument("--rounds", type=int, default=30)
    evalp.add_argument("--max-examples", type=int, default=None)
    evalp.add_argument("--seed", type=int, default=0)

    extract = sub.add_parser("extract-features",
                             help="dump per-model training CSVs")
    extract.add_argument("--logs", required=True)
    extract.add_argument("--out", required=True, help="CSV directory")

    rep = sub.add_parser("replay", help="verify a record by re-simulation")
    rep.add_argument("--record", required=True)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _roster_payload(path) -> list:
    if path is None:
        return []
    config = load_tournament_config(path)
    payload = []
    for spec in config.roster:
        options = dataclasses.asdict(spec.config) if spec.config else {}
        payload.append({"name": spec.name, "kind": spec.kind,
                        "options": options})
    return payload


def _post(client: httpx.Client, path: str, payload: dict):
    response = client.post(path, json=payload)
    if response.status_code == 400 or response.status_code == 422:
        detail = response.json().get("detail", response.text)
        print(f"error: {detail}", file=sys.stderr)
        return None
    response.raise_for_status()
    return response.json()


def _print_score_table(rows) -> None:
    width = max((len(r["agent"]) for r in rows), default=5)
    print(f"{'agent':<{width}}  {'score':>10}  {'utility':>10}  "
          f"{'spent':>10}")
    for r in rows:
        print(f"{r['agent']:<{width}}  {r['score']:>10.1f}  "
              f"{r['utility']:>10.1f}  {r['expenditure']:>10.1f}")


def cmd_simulate(client, args) -> int:
    try:
        roster = _roster_payload(args.roster)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    body = _post(client, "/simulate", {"seed": args.seed, "roster": roster})
    if body is None:
        return EXIT_INVALID
    _print_score_table(body["scores"])
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(body["record_jsonl"])
        print(f"record written to {args.out} ({body['events']} events)")
    return EXIT_OK


def cmd_tournament(client, args) -> int:
    try:
        config = load_tournament_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    payload = {
        "roster": [{"name": s.name, "kind": s.kind,
                    "options": dataclasses.asdict(s.config) if s.config
                    else {}} for s in config.roster],
        "game_count": config.game_count,
        "master_seed": config.master_seed,
        "retrain_every": config.retrain_every,
        "training_window": config.training_window,
        "parallelism": config.parallelism,
        "boost_k": config.boost_k,
        "boost_rounds": config.boost_rounds,
        "max_examples": config.max_examples,
        "seed_logs": config.seed_logs,
        "out_dir": args.out_dir,
    }
    body = _post(client, "/tournament", payload)
    if body is None:
        return EXIT_INVALID
    print(f"{body['games']} games completed, {body['voided']} voided")
    width = max((len(a["name"]) for a in body["agents"]), default=5)
    print(f"{'agent':<{width}}  {'mean score':>11}  {'rel score':>10}  "
          f"{'se':>8}  {'utility':>9}  {'spent':>9}")
    for a in body["agents"]:
        print(f"{a['name']:<{width}}  {a['mean_score']:>11.1f}  "
              f"{a['mean_relative_score']:>10.1f}  {a['se_score']:>8.1f}  "
              f"{a['mean_utility']:>9.1f}  {a['mean_expenditure']:>9.1f}")
    print(f"records and CSV reports in {body['out_dir']}")
    return EXIT_OK


def cmd_train(client, args) -> int:
    body = _post(client, "/train", {
        "logs": args.logs, "out": args.out, "k": args.k,
        "rounds": args.rounds, "max_examples": args.max_examples,
        "seed": args.seed})
    if body is None:
        return EXIT_INVALID
    total = sum(body["examples"].values())
    print(f"trained {len(body['examples'])} models on {total} examples "
          f"from {body['games']} games")
    for key in sorted(body["examples"]):
        print(f"  {key}: {body['examples'][key]} examples")
    print(f"bank written to {body['out']}")
    return EXIT_OK


def cmd_eval_predictor(client, args) -> int:
    body = _post(client, "/eval-predictor", {
        "logs": args.logs, "variant": args.variant, "bank": args.bank,
        "train_fraction": args.train_fraction, "k": args.k,
        "rounds": args.rounds, "max_examples": args.max_examples,
        "seed": args.seed})
    if body is None:
        return EXIT_INVALID
    print(f"{body['variant']}: rmse {body['rmse']:.2f} over "
          f"{body['events']} predictions "
          f"({body['train_games']} training games, "
          f"{body['eval_games']} evaluation games)")
    return EXIT_OK


def cmd_extract_features(client, args) -> int:
    body = _post(client, "/extract-features",
                 {"logs": args.logs, "out": args.out})
    if body is None:
        return EXIT_INVALID
    for key in sorted(body["rows"]):
        print(f"  {key}: {body['rows'][key]} rows")
    print(f"{len(body['files'])} CSV files in {args.out}")
    return EXIT_OK


def cmd_replay(client, args) -> int:
    body = _post(client, "/replay", {"record": args.record})
    if body is None:
        return EXIT_INVALID
    if body["ok"]:
        print(f"replay ok: {body['lines']} lines match")
        return EXIT_OK
    print(f"replay mismatch at line {body['first_diff']}:")
    print(f"  recorded:    {body['expected']}")
    print(f"  regenerated: {body['actual']}")
    return EXIT_VERIFY_FAILED


def cmd_serve(_client, args) -> int:
    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


HANDLERS = {
    "simulate": cmd_simulate,
    "tournament": cmd_tournament,
    "train": cmd_train,
    "eval-predictor": cmd_eval_predictor,
    "extract-features": cmd_extract_features,
    "replay": cmd_replay,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s")
    handler = HANDLERS[args.command]
    if args.command == "serve":
        return handler(None, args)
    try:
        with make_client(args.server) as client:
            return handler(client, args)
    except httpx.HTTPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

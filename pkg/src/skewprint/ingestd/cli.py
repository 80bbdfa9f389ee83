"""``skewprint`` command line.

Every verb reads the shared JSON config (``--config``) and applies flag
overrides on top.  Sessions and models live in the registry rooted at
``--home``, ``$SKEWPRINT_HOME`` or ``~/.skewprint``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

from ..featurizer import WindowConfig, featurize_session, split_sessions, write_feature_csv
from ..identifier import decide_identity, evaluate_fleet
from ..learners import AlgorithmSpec, ModelArtifact, expand_grid, grid_search_cv, train_model
from ..pipeline import DEFAULT_FLEET, DEFAULT_RAMP_START, simulate_fleet_sessions
from ..simulator import SessionConfig, make_device_fleet
from .codec import session_from_jsonl, session_to_jsonl
from .registry import Registry

log = logging.getLogger("skewprint")

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "fleet": DEFAULT_FLEET,
    "session": {},
    "n_sessions": 10,
    "train_count": 6,
    "ramp_start_range": list(DEFAULT_RAMP_START),
    "window": {},
    "scaler": "minmax",
    "k_sigma": 3.0,
    "algorithm": "rforest",
    "hyperparameters": {},
    "grid": None,
    "cv_folds": 6,
    "threshold": 0.5,
    "lof_cutoff": 1.5,
    "listen": "127.0.0.1:7878",
    "token": None,
    "host": {"n_measurements": 400, "sleep_seconds": 120.0},
}


def load_config(args) -> dict[str, Any]:
    cfg = json.loads(json.dumps(DEFAULTS))
    if args.config:
        with open(args.config) as fh:
            cfg.update(json.load(fh))
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.temperature:
        cfg["window"] = {**cfg.get("window", {}), "include_temperature": True}
    for key in ("threshold", "algorithm", "listen"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _registry(args) -> Registry:
    return Registry(args.home) if args.home else Registry()


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _window(cfg) -> WindowConfig:
    return WindowConfig.from_dict(cfg.get("window") or {})


def _collection_key(s):
    return (s.config_echo.seed, int(s.extra.get("collected_at_ns", 0)), s.session_id)


def _sessions_by_device(reg: Registry) -> dict[str, list]:
    """Stored sessions per device in collection order.

    Order key: config seed, then the collector timestamp if present, then id.
    """
    devices = sorted({e["device_id"] for e in reg.index()["sessions"].values()})
    out = {}
    for dev in devices:
        sessions = reg.sessions_for(dev)
        out[dev] = sorted(sessions, key=_collection_key)
    return out


def _dataset(cfg, reg: Registry):
    return split_sessions(
        _sessions_by_device(reg), int(cfg["train_count"]), _window(cfg), cfg["scaler"],
        k_sigma=cfg["k_sigma"],
    )


def _load_models(reg: Registry, ids: list[str]):
    models = [reg.get_model(i) for i in ids]
    if len(models) == 1 and not models[0].is_anomaly_model:
        return models[0]
    if not all(m.is_anomaly_model for m in models):
        raise SystemExit("several model ids are only allowed for per-device LOF models")
    return {m.metadata["device_id"]: m for m in models}


def _model_ids(args) -> list[str]:
    if not args.model_id:
        raise SystemExit("--model-id is required")
    return [i for chunk in args.model_id for i in chunk.split(",") if i]


# -- verbs ------------------------------------------------------------------

def cmd_simulate(args, cfg) -> int:
    reg = _registry(args)
    fleet = make_device_fleet(dict(cfg["fleet"]))
    base = SessionConfig.from_dict(cfg.get("session") or {})
    ramp = cfg.get("ramp_start_range")
    sessions = simulate_fleet_sessions(
        fleet, int(cfg["n_sessions"]), base, int(cfg["seed"]), tuple(ramp) if ramp else None
    )
    for per_device in sessions.values():
        for s in per_device:
            reg.put_session(s)
    out = _out_dir(args)
    (out / "fleet.json").write_text(json.dumps([p.to_dict() for p in fleet], indent=2) + "\n")
    _emit({"devices": len(fleet), "sessions": sum(map(len, sessions.values())),
           "registry": str(reg.root)})
    return 0


def cmd_featurize(args, cfg) -> int:
    ds = _dataset(cfg, _registry(args))
    out = _out_dir(args)
    write_feature_csv(out / "train.csv", ds.train_vectors)
    write_feature_csv(out / "eval.csv", ds.eval_vectors)
    _emit({"train_vectors": len(ds.train_vectors), "eval_vectors": len(ds.eval_vectors),
           "dimension": len(ds.feature_names), "devices": len(ds.label_map)})
    return 0


def cmd_train(args, cfg) -> int:
    reg = _registry(args)
    ds = _dataset(cfg, reg)
    name = cfg["algorithm"]
    seed = int(cfg["seed"])
    summary: dict[str, Any] = {"algorithm": name}
    if name == "lof":
        spec = AlgorithmSpec("lof", cfg.get("hyperparameters") or {})
        devices = [args.device_id] if args.device_id else ds.classes
        ids = {}
        for dev in devices:
            ids[dev] = reg.put_model(train_model(spec, ds, seed, device_id=dev, k_sigma=cfg["k_sigma"]))
        summary["model_ids"] = ids
    else:
        grid = (cfg.get("grid") or {}).get(name) if isinstance(cfg.get("grid"), dict) else None
        if grid:
            report = grid_search_cv(expand_grid(name, **grid), ds, int(cfg["cv_folds"]),
                                    cfg["scaler"], seed)
            spec = report.best
            summary["cv"] = report.summary()
        else:
            spec = AlgorithmSpec(name, cfg.get("hyperparameters") or {})
        model = train_model(spec, ds, seed, k_sigma=cfg["k_sigma"])
        summary["model_id"] = reg.put_model(model)
        summary["spec"] = spec.to_dict()
    out = _out_dir(args)
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _emit(summary)
    return 0


def cmd_evaluate(args, cfg) -> int:
    reg = _registry(args)
    model = _load_models(reg, _model_ids(args))
    first = model if isinstance(model, ModelArtifact) else next(iter(model.values()))
    window = WindowConfig.from_dict(first.metadata["window_cfg"])
    ds = split_sessions(_sessions_by_device(reg), int(cfg["train_count"]), window, cfg["scaler"],
                        k_sigma=first.metadata.get("k_sigma", cfg["k_sigma"]))
    result = evaluate_fleet(model, ds.eval_sessions(raw=True), float(cfg["threshold"]),
                            float(cfg["lof_cutoff"]))
    out = _out_dir(args)
    result.write_decisions_jsonl(out / "decisions.jsonl")
    summary = {
        "sessions": len(result.sessions),
        "true_claims_accepted": result.true_claims_accepted,
        "cross_acceptance_count": result.cross_acceptance_count,
    }
    if result.metrics is not None:
        result.metrics.to_csv(out / "metrics.csv")
        result.matrix.to_csv(out / "confusion.csv")
        summary["macro_tpr"] = result.metrics.macro_tpr
        summary["macro_f1"] = result.metrics.macro_f1
    if result.inlier_rate:
        summary["inlier_rate"] = result.inlier_rate
    _emit(summary)
    return 0


def cmd_identify(args, cfg) -> int:
    reg = _registry(args)
    model = _load_models(reg, _model_ids(args))
    if not args.device_id:
        raise SystemExit("--device-id (the claimed identity) is required")
    if args.session:
        if len(args.session) > 1:
            raise SystemExit("identify takes a single --session")
        session = session_from_jsonl(Path(args.session[0]).read_bytes())
    elif args.session_id:
        session = reg.get_session(args.session_id)
    else:
        raise SystemExit("give --session PATH or --session-id ID")
    first = model if isinstance(model, ModelArtifact) else model.get(args.device_id)
    if first is None:
        raise SystemExit(f"unknown device {args.device_id!r}")
    vectors = featurize_session(session, WindowConfig.from_dict(first.metadata["window_cfg"]),
                                k_sigma=first.metadata.get("k_sigma", 3.0))
    decision = decide_identity(model, vectors, args.device_id, float(cfg["threshold"]),
                               float(cfg["lof_cutoff"]))
    _emit(decision.to_dict())
    return 0 if decision.accepted else 1


def cmd_serve(args, cfg) -> int:
    from .service import IngestServer, parse_address

    reg = _registry(args)
    server = IngestServer(parse_address(cfg["listen"]), reg, window_cfg=_window(cfg),
                          k_sigma=cfg["k_sigma"], token=cfg.get("token"))
    host, port = server.server_address[:2]
    log.info("listening on %s:%d, registry %s", host, port, reg.root)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_submit(args, cfg) -> int:
    from .service import Client

    if not args.session:
        raise SystemExit("--session PATH is required")
    failed = 0
    with Client(cfg["listen"], token=cfg.get("token")) as client:
        for path in args.session:
            reply = client.submit(session_from_jsonl(Path(path).read_bytes()))
            _emit(reply.to_obj())
            failed += reply.type == "error"
            if args.model_id and args.device_id and reply.type == "ack":
                dec = client.identify(args.device_id, _model_ids(args)[0],
                                      session_id=reply.payload["session_id"],
                                      threshold=float(cfg["threshold"]))
                _emit(dec.to_obj())
    return 1 if failed else 0


def cmd_collect(args, cfg) -> int:
    from .collector import collect_session

    session = collect_session(cfg.get("host"), device_id=args.device_id)
    data = session_to_jsonl(session)
    if args.out:
        path = _out_dir(args) / f"{session.session_id}.jsonl"
        path.write_bytes(data)
        _emit({"session_id": session.session_id, "path": str(path)})
    else:
        sys.stdout.write(data.decode("utf-8"))
    return 0


VERBS = {
    "simulate": (cmd_simulate, "simulate a fleet and store its sessions"),
    "featurize": (cmd_featurize, "export train/eval feature matrices as CSV"),
    "train": (cmd_train, "train (optionally grid-search) a model"),
    "evaluate": (cmd_evaluate, "evaluate a model on the held-out sessions"),
    "identify": (cmd_identify, "decide one session against a claimed device"),
    "serve": (cmd_serve, "run the ingestion/identification service"),
    "submit": (cmd_submit, "send sessions to a running service"),
    "collect": (cmd_collect, "collect a best-effort session on this host"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="shared JSON config")
    common.add_argument("--seed", type=int, metavar="N")
    common.add_argument("--out", metavar="DIR", help="directory for reports and exports")
    common.add_argument("--home", metavar="DIR", help="registry root (default $SKEWPRINT_HOME)")
    common.add_argument("--model-id", action="append", metavar="ID",
                        help="model id; repeat or comma-separate for per-device LOF models")
    common.add_argument("--threshold", type=float, metavar="F")
    common.add_argument("--device-id", metavar="ID")
    common.add_argument("--listen", metavar="HOST:PORT")
    common.add_argument("--temperature", action="store_true", help="add the temperature channel")
    common.add_argument("--algorithm", metavar="NAME",
                        choices=["gnb", "knn", "dtree", "rforest", "gboost", "lof"])
    common.add_argument("--session", action="append", metavar="PATH", help="session JSONL file")
    common.add_argument("--session-id", metavar="ID")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="skewprint", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, (_, help_text) in VERBS.items():
        sub.add_parser(verb, parents=[common], help=help_text)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = load_config(args)
    return VERBS[args.verb][0](args, cfg)


if __name__ == "__main__":
    sys.exit(main())

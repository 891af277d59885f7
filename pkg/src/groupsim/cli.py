"""Command-line interface.

Subcommands::

    synth-gen  --out DIR [--seed N] [--merchants N] [--users N] [--trajectories N] [--duality]
    mine       --input trajectories.jsonl --config mining.json --out registry.json --report report.json
    train      --input trajectories.jsonl --registry registry.json --config config.json --out model.json
    simulate   --registry registry.json --model model.json --config config.json
               --merchant ID [--edit PATH=VALUE ...] [--lambda F] [--n N] [--seed N]
    evaluate   --config config.json
    ablate     --config config.json
    serve      --config config.json [--host H] [--port P]

Exit code 0 on success; failures print a {code, stage, message} JSON object
to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import GroupSimError, StageError


def _load_json(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _cmd_synth_gen(args) -> int:
    from .synthworld import WorldConfig, duality_config, generate, save_world

    if args.duality:
        cfg = duality_config(seed=args.seed)
    else:
        cfg = WorldConfig(
            merchants=args.merchants,
            users=args.users,
            trajectories=args.trajectories,
            seed=args.seed,
        )
    world = generate(cfg)
    paths = save_world(world, args.out)
    print(json.dumps({"written": paths, "merchants": len(world.scenes)}, indent=1))
    return 0


def _cmd_mine(args) -> int:
    from .backends import BackendConfig
    from .domain import read_trajectories, select_high_intent
    from .mining import MiningConfig, mine

    config = _load_json(args.config) if args.config else {}
    mining_cfg = MiningConfig.from_dict(config.get("mining", config))
    backend = BackendConfig.from_dict(config.get("backend", {})).build()
    trajectories = select_high_intent(
        read_trajectories(args.input),
        int(config.get("evaluation", {}).get("min_compared", 2)),
    )
    registry, report = mine(trajectories, mining_cfg, backend)
    registry.save(args.out)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, sort_keys=True, indent=1)
    print(json.dumps({"policies": len(registry), "report": report.to_dict()}, indent=1))
    return 0


def _cmd_train(args) -> int:
    from .domain import PolicyRegistry, read_trajectories, select_high_intent
    from .pipeline import ExperimentRunner, _Prepared, chrono_split

    config = _load_json(args.config)
    runner = ExperimentRunner(config)
    registry = PolicyRegistry.load(args.registry)
    raw = read_trajectories(args.input)
    filtered = select_high_intent(raw, runner.min_compared)
    mining_set, test_set = chrono_split(filtered, runner.split_fraction)
    profiles = {}
    for t in raw:
        profiles.setdefault(t.user.user_id, t.user)
    prepared = _Prepared(
        mining_set=mining_set, test_set=test_set, visitor_logs={}, profiles=profiles, truth=None
    )
    model = runner.train_model(prepared, registry)
    model.save(args.out)
    print(json.dumps({"rounds": model.rounds, "train_loss_final": model.train_loss[-1]}, indent=1))
    return 0


def _cmd_simulate(args) -> int:
    from .aggregate import estimate_mixture, simulate
    from .domain import Intervention, PolicyRegistry, read_trajectories
    from .fitting import BoostedModel
    from .pipeline import ExperimentRunner

    config = _load_json(args.config)
    runner = ExperimentRunner(config)
    registry = PolicyRegistry.load(args.registry)
    model = BoostedModel.load(args.model)

    data = config.get("data", {})
    trajectories = read_trajectories(data["trajectories"])
    scene = None
    for t in trajectories:
        if t.scene.merchant_id == args.merchant:
            scene = t.scene
            break
    if scene is None:
        raise GroupSimError(f"merchant {args.merchant!r} not found", stage="load-data")

    visitors_path = data.get("visitor_logs")
    if visitors_path:
        logs = _load_json(visitors_path)
        visitor_ids = logs.get(args.merchant, [])
    else:
        visitor_ids = []
        seen = set()
        for t in trajectories:
            if t.scene.merchant_id == args.merchant and t.user.user_id not in seen:
                seen.add(t.user.user_id)
                visitor_ids.append(t.user.user_id)
    profiles = {}
    for t in trajectories:
        profiles.setdefault(t.user.user_id, t.user)
    visitors = [profiles[u] for u in visitor_ids if u in profiles]

    edits = []
    for spec in args.edit or []:
        path, _, value = spec.partition("=")
        try:
            parsed: object = float(value)
        except ValueError:
            parsed = value
        edits.append((path, parsed))
    intervention = Intervention(edits=tuple(edits), label=args.label) if edits else None

    mixture = estimate_mixture(registry, visitors, args.merchant, runner.encoder_cfg)
    estimate = simulate(
        registry=registry,
        mixture=mixture,
        scene=scene,
        intervention=intervention,
        model=model,
        backend=runner.backend,
        n_draws=args.n or runner.n_draws,
        lam=args.lam if args.lam is not None else runner.lam,
        seed=args.seed if args.seed is not None else runner.agg_seed,
        fcfg=runner.fcfg,
    )
    print(json.dumps(estimate.to_dict(), indent=1))
    return 0


def _cmd_evaluate(args) -> int:
    from .pipeline import run_experiment

    report = run_experiment(_load_json(args.config))
    print(
        json.dumps(
            {
                "gse": report["gse"],
                "gse_sd": report["gse_sd"],
                "branch_gse": report["branch_gse"],
                "merchants": len(report["merchants"]),
                "output_dir": _load_json(args.config).get("data", {}).get("output_dir"),
            },
            indent=1,
        )
    )
    return 0


def _cmd_ablate(args) -> int:
    from .pipeline import ablate

    table = ablate(_load_json(args.config))
    print(json.dumps({"rows": table["rows"]}, indent=1))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app_from_config

    app = build_app_from_config(_load_json(args.config))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="groupsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="generate a synthetic world")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--merchants", type=int, default=20)
    p.add_argument("--users", type=int, default=2000)
    p.add_argument("--trajectories", type=int, default=20000)
    p.add_argument("--duality", action="store_true")
    p.set_defaults(fn=_cmd_synth_gen)

    p = sub.add_parser("mine", help="mine a policy registry from trajectories")
    p.add_argument("--input", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(fn=_cmd_mine)

    p = sub.add_parser("train", help="train the fitting-branch model")
    p.add_argument("--input", required=True)
    p.add_argument("--registry", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("simulate", help="simulate one merchant, optionally intervened")
    p.add_argument("--registry", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--merchant", required=True)
    p.add_argument("--edit", action="append", metavar="PATH=VALUE")
    p.add_argument("--label", default="cli")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("evaluate", help="run the full experiment pipeline")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("ablate", help="run the ablation grid")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("serve", help="start the diagnosis HTTP service")
    p.add_argument("--config", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.set_defaults(fn=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except GroupSimError as exc:
        print(json.dumps(exc.payload()), file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(
            json.dumps({"code": "missing_file", "stage": "load", "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())

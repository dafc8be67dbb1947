"""Command-line front end.

Subcommands: gen-data (materialize a synthetic federation manifest), simulate
(run either protocol over a manifest or fresh synthetic data), select-bench
(sweep the selection strategies over fuzz instances), timecost (evaluate the
analytic time model).  Every artifact-producing run writes a RunManifest next
to its main output recording the resolved configuration and its hash.

Exit codes: 0 success, 1 a typed runtime failure (for example a federation
running out of eligible devices), 2 bad usage, configuration, or an
unreadable/unwritable file.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass

from . import __version__
from .core import FederationTopology
from .datagen import SynthConfig, generate_federation, load_manifest, save_manifest
from .errors import FedgsError, InvalidConfigError
from .learn import ModelSpec, save_params
from .rng import substream
from .samplers import (
    BRUTE_DEFAULT_CAP,
    DEFAULT_BENCH_SAMPLERS,
    bench_samplers,
    planted_problem,
    random_problem,
    write_bench_csv,
)
from .selection import load_problem
from .sim import SELECTORS, SimConfig, run_fedavg, run_fedgs, write_metrics_jsonl, write_summary_csv
from .timecost import CostParams, cost_report


@dataclass(eq=False)
class RunManifest:
    command: str
    seed: int
    seed_source: str  # "cli" | "env" | "default"
    config: dict
    outputs: dict

    def to_dict(self) -> dict:
        canonical = json.dumps(self.config, sort_keys=True, separators=(",", ":"))
        return {
            "command": self.command,
            "version": __version__,
            "seed": self.seed,
            "seed_source": self.seed_source,
            "config": self.config,
            "config_sha256": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
            "outputs": self.outputs,
        }


def _write_manifest(manifest: RunManifest, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve_seed(args) -> tuple:
    if getattr(args, "seed", None) is not None:
        return int(args.seed), "cli"
    env = os.environ.get("FEDGS_SEED")
    if env is not None:
        try:
            return int(env), "env"
        except ValueError:
            raise InvalidConfigError(f"FEDGS_SEED must be an integer, got {env!r}")
    return 0, "default"


def _cap(value: int):
    return None if value <= 0 else int(value)


# ---------------------------------------------------------------------------
# gen-data


def _cmd_gen_data(args) -> int:
    seed, source = _resolve_seed(args)
    config = SynthConfig(
        groups=args.groups,
        devices_per_group=args.devices_per_group,
        classes=args.classes,
        feature_dim=args.feature_dim,
        batch_size=args.batch_size,
        batches_per_device=args.batches_per_device,
        concentration=args.concentration,
        sep=args.sep,
        noise=args.noise,
        test_samples=args.test_samples,
    )
    fed = generate_federation(config, seed)
    save_manifest(fed, args.out)
    manifest = RunManifest(
        command="gen-data",
        seed=seed,
        seed_source=source,
        config={k: getattr(config, k) for k in vars(config)},
        outputs={"manifest": args.out},
    )
    _write_manifest(manifest, args.out + ".run.json")
    total = sum(s.initial_counts.total for s in fed.streams)
    print(f"wrote {args.out}: {len(fed.streams)} devices, {total} samples, {config.classes} classes")
    return 0


# ---------------------------------------------------------------------------
# simulate


def _load_cost(path):
    if path is None:
        return None
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidConfigError(f"cost config is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise InvalidConfigError("cost config must be a JSON object")
    try:
        return CostParams(**payload)
    except TypeError as exc:
        raise InvalidConfigError(f"bad cost config: {exc}") from exc


def _cmd_simulate(args) -> int:
    seed, source = _resolve_seed(args)
    if args.data is not None:
        fed = load_manifest(args.data)
        data_desc = {"source": args.data}
    else:
        synth = SynthConfig(
            groups=args.groups,
            devices_per_group=args.devices_per_group,
            classes=args.classes,
            feature_dim=args.feature_dim,
            batch_size=args.batch_size,
            batches_per_device=args.batches_per_device,
            concentration=args.concentration,
            sep=args.sep,
            noise=args.noise,
            test_samples=args.test_samples,
            regenerate=args.regenerate,
        )
        fed = generate_federation(synth, seed)
        data_desc = {"source": "synthetic", **{k: getattr(synth, k) for k in vars(synth)}}

    group_sizes = [0] * (max(s.group for s in fed.streams) + 1)
    for s in fed.streams:
        group_sizes[s.group] += 1
    presampled = args.presampled
    topo = FederationTopology(
        groups=len(group_sizes),
        group_sizes=group_sizes,
        selected_per_group=args.selected,
        presampled_per_group=presampled,
        optimized_per_group=args.selected - presampled,
        classes=fed.classes,
        iterations_per_round=args.iters_per_round,
        rounds=args.rounds,
        batch_size=fed.batch_size,
        learning_rate=args.lr,
    )
    model = ModelSpec(kind=args.model, in_dim=fed.feature_dim, classes=fed.classes, hidden=args.hidden)
    config = SimConfig(
        topology=topo,
        model=model,
        seed=seed,
        selector=args.selector,
        cost=_load_cost(args.cost),
        mc_trials=args.mc_trials,
        brute_cap=_cap(args.brute_cap),
        workers=args.workers,
    )
    run = run_fedgs(fed, config) if args.algo == "fedgs" else run_fedavg(fed, config)

    outputs = {}
    if args.metrics:
        write_metrics_jsonl(run.metrics, args.metrics)
        outputs["metrics"] = args.metrics
    if args.summary:
        write_summary_csv([run.summary], args.summary)
        outputs["summary"] = args.summary
    if args.checkpoint:
        save_params(run.params, args.checkpoint)
        outputs["checkpoint"] = args.checkpoint

    resolved = {
        "algo": args.algo,
        "selector": args.selector,
        "data": data_desc,
        "topology": {
            "groups": topo.groups,
            "group_sizes": topo.group_sizes,
            "selected_per_group": topo.selected_per_group,
            "presampled_per_group": topo.presampled_per_group,
            "optimized_per_group": topo.optimized_per_group,
            "iterations_per_round": topo.iterations_per_round,
            "rounds": topo.rounds,
            "batch_size": topo.batch_size,
            "learning_rate": topo.learning_rate,
        },
        "model": {"kind": model.kind, "in_dim": model.in_dim, "classes": model.classes, "hidden": model.hidden},
        "workers": args.workers,
        "mc_trials": args.mc_trials,
        "brute_cap": _cap(args.brute_cap),
        "cost": args.cost,
    }
    manifest = RunManifest(
        command="simulate", seed=seed, seed_source=source, config=resolved, outputs=outputs
    )
    manifest_path = args.manifest or (args.metrics + ".run.json" if args.metrics else None)
    if manifest_path:
        _write_manifest(manifest, manifest_path)
    final = run.summary["final_accuracy"]
    acc = "n/a" if final is None else f"{final:.4f}"
    print(f"{args.algo}: {run.summary['rounds']} rounds, final accuracy {acc}")
    return 0


# ---------------------------------------------------------------------------
# select-bench


def _cmd_select_bench(args) -> int:
    seed, source = _resolve_seed(args)
    if args.instance:
        problems = [load_problem(p) for p in args.instance]
        desc = {"instances": list(args.instance)}
    else:
        problems = []
        for i in range(args.instances):
            rng = substream(seed, "instance", i)
            if args.family == "planted":
                problems.append(
                    planted_problem(
                        rng,
                        F=args.classes,
                        alpha=args.alpha,
                        L_sel=args.l_sel,
                        n=args.batch_size,
                        concentration=args.concentration,
                        noise=args.noise,
                    )
                )
            else:
                problems.append(
                    random_problem(
                        rng,
                        F=args.classes,
                        alpha=args.alpha,
                        L_sel=args.l_sel,
                        n=args.batch_size,
                        L_rnd=args.l_rnd,
                        concentration=args.concentration,
                    )
                )
        desc = {
            "instances": args.instances,
            "family": args.family,
            "classes": args.classes,
            "alpha": args.alpha,
            "L_sel": args.l_sel,
            "L_rnd": args.l_rnd,
            "batch_size": args.batch_size,
            "concentration": args.concentration,
            "noise": args.noise,
        }
    samplers = tuple(s.strip() for s in args.samplers.split(",") if s.strip())
    unknown = [s for s in samplers if s not in DEFAULT_BENCH_SAMPLERS]
    if unknown:
        raise InvalidConfigError(f"unknown samplers: {unknown}; choose from {DEFAULT_BENCH_SAMPLERS}")
    rows = bench_samplers(
        problems, seed, samplers=samplers, brute_cap=_cap(args.brute_cap), mc_trials=args.mc_trials
    )
    write_bench_csv(rows, args.out)
    manifest = RunManifest(
        command="select-bench",
        seed=seed,
        seed_source=source,
        config={**desc, "samplers": list(samplers), "brute_cap": _cap(args.brute_cap), "mc_trials": args.mc_trials},
        outputs={"csv": args.out},
    )
    _write_manifest(manifest, args.out + ".run.json")
    errors = sum(1 for r in rows if r["status"] != "ok")
    print(f"wrote {args.out}: {len(rows)} rows ({errors} errors)")
    return 0


# ---------------------------------------------------------------------------
# timecost


def _cmd_timecost(args) -> int:
    params = _load_cost(args.config) or CostParams()
    report = cost_report(params, rounds=args.rounds)
    payload = report.to_dict()
    if args.json:
        print(json.dumps(payload, sort_keys=True))
        return 0
    print(f"external exchange: {report.comm_ext:.6g} s")
    print(f"internal exchange: {report.comm_int:.6g} s")
    print(f"grouped round:     {report.fedgs_round:.6g} s")
    print(f"flat round:        {report.fedavg_round:.6g} s")
    print(f"grouped total ({args.rounds} rounds): {report.fedgs_total:.6g} s")
    print(f"flat total    ({args.rounds} rounds): {report.fedavg_total:.6g} s")
    if report.efficiency is not None:
        e = report.efficiency
        verdict = "grouped wins" if e.fedgs_faster else "flat wins"
        print(f"condition: {e.lhs:.4f} < {e.rhs:.4f} -> {verdict}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_synth_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--groups", type=int, default=10)
    p.add_argument("--devices-per-group", type=int, default=35)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--batches-per-device", type=int, default=50)
    p.add_argument("--concentration", type=float, default=0.5)
    p.add_argument("--sep", type=float, default=3.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--test-samples", type=int, default=5000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedgs",
        description="Group-synchronized federated learning simulator with distribution-aligned selection.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic federation manifest")
    _add_synth_flags(g)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen_data)

    s = sub.add_parser("simulate", help="run one protocol end to end")
    s.add_argument("--algo", choices=("fedgs", "fedavg"), default="fedgs")
    s.add_argument("--data", default=None, help="dataset manifest; omit to synthesize")
    _add_synth_flags(s)
    s.add_argument("--regenerate", action="store_true", help="streams refill deterministically")
    s.add_argument("--selector", choices=SELECTORS, default="gbp_mpinv")
    s.add_argument("--selected", type=int, default=10, help="devices per group per iteration (L)")
    s.add_argument("--presampled", type=int, default=2, help="uniformly pre-sampled share (L_rnd)")
    s.add_argument("--iters-per-round", type=int, default=50)
    s.add_argument("--rounds", type=int, default=10)
    s.add_argument("--lr", type=float, default=0.01)
    s.add_argument("--model", choices=("softmax", "mlp"), default="softmax")
    s.add_argument("--hidden", type=int, default=0)
    s.add_argument("--mc-trials", type=int, default=1000)
    s.add_argument("--brute-cap", type=int, default=BRUTE_DEFAULT_CAP, help="<=0 lifts the cap")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--cost", default=None, help="JSON file of time-model parameters")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--metrics", default=None, help="per-round JSON-lines output")
    s.add_argument("--summary", default=None, help="one-row summary CSV")
    s.add_argument("--checkpoint", default=None, help="final model checkpoint")
    s.add_argument("--manifest", default=None, help="run manifest path (default: <metrics>.run.json)")
    s.set_defaults(func=_cmd_simulate)

    b = sub.add_parser("select-bench", help="sweep selection strategies over instances")
    b.add_argument("--instances", type=int, default=20)
    b.add_argument("--instance", action="append", default=None, help="instance JSON file (repeatable)")
    b.add_argument("--family", choices=("stream", "planted"), default="stream")
    b.add_argument("--classes", type=int, default=10)
    b.add_argument("--alpha", type=int, default=20)
    b.add_argument("--l-sel", type=int, default=5)
    b.add_argument("--l-rnd", type=int, default=8, help="pre-sampled cohort size (stream family)")
    b.add_argument("--batch-size", type=int, default=32)
    b.add_argument("--concentration", type=float, default=0.5)
    b.add_argument("--noise", type=float, default=0.5, help="target jitter (planted family)")
    b.add_argument("--samplers", default=",".join(DEFAULT_BENCH_SAMPLERS))
    b.add_argument("--mc-trials", type=int, default=1000)
    b.add_argument("--brute-cap", type=int, default=BRUTE_DEFAULT_CAP, help="<=0 lifts the cap")
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--out", required=True)
    b.set_defaults(func=_cmd_select_bench)

    t = sub.add_parser("timecost", help="evaluate the analytic time model")
    t.add_argument("--config", default=None, help="JSON file of time-model parameters")
    t.add_argument("--rounds", type=int, default=1)
    t.add_argument("--json", action="store_true")
    t.set_defaults(func=_cmd_timecost)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvalidConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return 2
    except FedgsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

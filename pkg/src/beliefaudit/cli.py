"""Command-line entry point: simulate, audit, elicit, power-study."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

import jsonschema
from threadpoolctl import threadpool_limits

from . import agents, runner
from .audits import LieTriple
from .core import Dataset, RecordError, dump_records, load_records, validate_dataset

FORMATS = ("json", "csv", "md")
AGENT_PRESETS = {
    "truthful": agents.truthful_logit,
    "constant": agents.constant_reporter,
    "theta_leaky": agents.theta_leaky,
    "rank_flip": agents.rank_flipper,
}
# subcommands whose output depends on the seed
STOCHASTIC = {"simulate", "audit", "elicit", "power-study"}


class CliError(Exception):
    """Operational failure: bad paths, unreadable configs, schema errors."""


def _add_global(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="master seed (required)")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--format", nargs="+", choices=FORMATS, default=list(FORMATS),
                   help="report formats to write")
    p.add_argument("--config", help="JSON file of option defaults; explicit flags take precedence")


def _add_test_flags(p: argparse.ArgumentParser) -> None:
    d = runner.AuditConfig()
    p.add_argument("--tests", nargs="+", choices=runner.TESTS, default=list(runner.TESTS))
    p.add_argument("--k", type=int, default=d.k)
    p.add_argument("--bootstraps", type=int, default=d.bootstraps)
    p.add_argument("--n-perm", type=int, default=d.n_perm)
    p.add_argument("--bins", type=int, default=d.bins)
    p.add_argument("--alpha", type=float, default=d.alpha)
    p.add_argument("--folds", type=int, default=d.folds)
    p.add_argument("--depth", type=int, default=d.depth)
    p.add_argument("--iterations", type=int, default=d.iterations)
    p.add_argument("--pair", nargs=2, action="append", metavar=("A", "B"),
                   help="action pair for the monotone test; repeatable (default: all three)")
    p.add_argument("--variant", choices=("raw", "isotonic"), default=d.variant)
    p.add_argument("--conditioning", choices=tuple(runner.CONDITIONING_FLAGS),
                   help="predictive-test conditioning (default: both)")
    p.add_argument("--exact", choices=("fisher", "binomial"), default=d.exact)
    p.add_argument("--prompt", default=d.prompt, help="prompt id audited by the sufficiency tests")
    p.add_argument("--lie-triples", help="JSONL of LIE triples")
    p.add_argument("--lie-baseline", action="store_true",
                   help="also fit the predictive baseline for the LIE ratio")
    p.add_argument("--label", default="run", help="row label in the report tables")
    p.add_argument("--jobs", type=int, default=1, help="tests run concurrently")
    p.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP threads per process")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beliefaudit",
                                     description="Audit elicited beliefs against revealed choices.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate an agent on a Bayesian network")
    _add_global(p)
    p.add_argument("--net", required=False, help="network JSON file")
    p.add_argument("--agent", required=False,
                   help=f"agent JSON file or preset ({', '.join(AGENT_PRESETS)})")
    p.add_argument("--n", type=int, default=200, help="contexts")
    p.add_argument("--reps", type=int, default=5, help="repetitions per context")
    p.add_argument("--strata", type=int, default=20, help="equal-width posterior strata")
    p.add_argument("--prompt", default="std")

    p = sub.add_parser("audit", help="run the audit tests on a records file")
    _add_global(p)
    p.add_argument("records", help="records file (.jsonl or .csv)")
    _add_test_flags(p)

    p = sub.add_parser("elicit", help="collect beliefs and decisions from a chat endpoint")
    _add_global(p)
    p.add_argument("--campaign", help="campaign JSON file")
    p.add_argument("--endpoint", help="endpoint JSON file")
    p.add_argument("--resume", action="store_true", help="continue a partial run in --out")

    p = sub.add_parser("power-study", help="rejection rates of the tests on simulated agents")
    _add_global(p)
    p.add_argument("--grid", help="study grid JSON file")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    return parser


def _read_json(path, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"{what} not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{what} {path} is not valid JSON: {exc}") from None


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    """Parse flags; values from --config fill anything not given on the command line."""
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if args.config:
        try:
            conf = _read_json(args.config, "config file")
        except CliError as exc:
            parser.error(str(exc))
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(k for k in (c.replace("-", "_") for c in conf) if k not in known)
        if unknown:
            parser.error(f"unknown keys in config {args.config}: {unknown}")
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in conf.items()})
        args = parser.parse_args(argv)
    if args.command in STOCHASTIC and args.seed is None:
        parser.error(f"{args.command} requires --seed")
    needed = {"simulate": ("net", "agent", "out"), "audit": ("out",),
              "elicit": ("campaign", "endpoint", "out"), "power-study": ("grid", "out")}
    for name in needed[args.command]:
        if getattr(args, name) in (None, ""):
            parser.error(f"{args.command} requires --{name.replace('_', '-')}")
    return args


# --------------------------------------------------------------------------- subcommands


def _agent(spec: str) -> agents.AgentSpec:
    if spec in AGENT_PRESETS:
        return AGENT_PRESETS[spec]()
    if not Path(spec).exists():
        raise CliError(f"agent file not found: {spec}")
    try:
        return agents.AgentSpec.load(spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"invalid agent file {spec}: {exc}") from None


def _net(path: str):
    if not Path(path).exists():
        raise CliError(f"network file not found: {path}")
    try:
        return runner.load_net(path)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"invalid network file {path}: {exc}") from None


def cmd_simulate(args) -> int:
    net, spec = _net(args.net), _agent(args.agent)
    d = agents.run_episode(net, spec, args.n, args.reps, args.seed, bins=args.strata, prompt_id=args.prompt)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_records(d, out)
    counts = {a: sum(r.action.value == a for r in d.records) for a in ("Yes", "No", "Defer")}
    contexts = len({r.context_id for r in d.records})
    print(f"wrote {len(d.records)} records ({contexts} contexts) to {out}; actions {counts}")
    return 0


def _load_dataset(path: str) -> Dataset:
    if not Path(path).exists():
        raise CliError(f"records file not found: {path}")
    try:
        return load_records(path)
    except RecordError as exc:
        raise CliError(f"invalid records file {path}: {exc}") from None


def _load_triples(path: str) -> list[LieTriple]:
    if not Path(path).exists():
        raise CliError(f"LIE triples file not found: {path}")
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return [LieTriple.from_json(json.loads(x)) for x in lines if x.strip()]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(f"invalid LIE triples file {path}: {exc}") from None


def audit_config(args) -> runner.AuditConfig:
    pairs = tuple(tuple(p) for p in args.pair) if args.pair else runner.DEFAULT_PAIRS
    cond = runner.CONDITIONING_FLAGS[args.conditioning] if args.conditioning else None
    try:
        return runner.AuditConfig(tests=tuple(args.tests), k=args.k, bootstraps=args.bootstraps,
                                  n_perm=args.n_perm, bins=args.bins, alpha=args.alpha, folds=args.folds,
                                  depth=args.depth, iterations=args.iterations, pairs=pairs,
                                  variant=args.variant, conditioning=cond, prompt=args.prompt,
                                  exact=args.exact, lie_baseline=args.lie_baseline, seed=args.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def cmd_audit(args) -> int:
    if Path(args.out).resolve() == Path(args.records).resolve():
        raise CliError("--out must differ from the records path")
    cfg = audit_config(args)
    d = _load_dataset(args.records)
    triples = _load_triples(args.lie_triples) if args.lie_triples else None
    with threadpool_limits(limits=args.threads):
        results = runner.run_audit(d, cfg, triples, jobs=args.jobs)
    runner.write_bundle(results, cfg, args.out, args.format, args.label)
    for name, res in results.items():
        status = res["error"] if isinstance(res, dict) else "ok"
        print(f"{name}: {status}")
    return 0


def cmd_elicit(args) -> int:
    from .elicit import Campaign, EndpointConfig, EndpointError, run_elicitation

    campaign_path = Path(args.campaign)
    campaign = Campaign.from_json(_read_json(campaign_path, "campaign file"), campaign_path.parent)
    endpoint = EndpointConfig.from_json(_read_json(args.endpoint, "endpoint file"))
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.resume:
        raise CliError(f"{out} already holds a campaign; pass --resume to continue it")
    try:
        result = run_elicitation(campaign, endpoint, out, args.seed, progress=print)
    except EndpointError as exc:
        raise CliError(str(exc)) from None
    report = validate_dataset(result.dataset)
    print(f"records {len(result.dataset.records)} (new {result.new_records}), "
          f"decisions new {result.new_decisions}, quarantined {result.quarantined}, "
          f"validation flags {len(report.flags)}")
    return 0


def cmd_power_study(args) -> int:
    conf = _read_json(args.grid, "grid file")
    conf.setdefault("first_seed", args.seed)
    try:
        grid = runner.PowerStudyConfig.from_json(conf, Path(args.grid).parent)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"invalid grid file {args.grid}: {exc}") from None
    study = runner.power_study(grid, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if "json" in args.format:
        (out / "study.json").write_text(json.dumps(study, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    if "md" in args.format:
        (out / "study.md").write_text(runner.power_study_markdown(study), encoding="utf-8")
    if "csv" in args.format:
        (out / "study.csv").write_text(runner.power_study_csv(study), encoding="utf-8")
    print(runner.power_study_markdown(study), end="")
    return 0


COMMANDS = {"simulate": cmd_simulate, "audit": cmd_audit, "elicit": cmd_elicit,
            "power-study": cmd_power_study}


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (CliError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except jsonschema.ValidationError as exc:
        print(f"error: output failed schema validation: {exc.message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

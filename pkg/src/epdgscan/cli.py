"""``epdgscan`` command line.

Exit codes: 0 success, 1 partial campaign or simulator mismatch, 2 invalid input.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import tempfile
from pathlib import Path

import yaml

from . import plmn

log = logging.getLogger("epdgscan")

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Bad input detected after argument parsing (unreadable config, bad scenario...)."""


def _common(defaults: bool) -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand; the copy on the
    # subcommand must not reset what was given before it
    kw = {} if defaults else {"default": argparse.SUPPRESS}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="campaign config (YAML or JSON)", **kw)
    common.add_argument("--out", metavar="DIR", help="log and report directory (default: ./out)", **kw)
    common.add_argument("--seed", type=int, metavar="N", **kw)
    common.add_argument("--rate", type=float, metavar="N", help="IKE probes per second per vantage", **kw)
    common.add_argument("--parallel", type=int, metavar="N", help="vantages measured concurrently", **kw)
    common.add_argument("-v", "--verbose", action="count", **({"default": 0} if defaults else kw))
    return common


def _parser() -> argparse.ArgumentParser:
    common = _common(False)
    p = argparse.ArgumentParser(prog="epdgscan", description="ePDG discovery and geoblocking measurement", parents=[_common(True)])
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("gen", parents=[common], help="emit the standardized ePDG domain list")
    g.add_argument("--variant", choices=("standard", "sos", "both"), default="standard")
    g.add_argument("--count-only", action="store_true", help="print the number of names instead of the names")

    sub.add_parser("discover", parents=[common], help="DNS discovery and pool enumeration from every vantage")
    sub.add_parser("probe", parents=[common], help="IKE_SA_INIT probing of discovered addresses")
    sub.add_parser("locate", parents=[common], help="print each vantage's public address and geolocation")

    for name, text in (("classify", "verdicts from the logs in --out"), ("report", "summary tables and exports")):
        c = sub.add_parser(name, parents=[common], help=text)
        c.add_argument("--ratio", type=float, default=0.10, help="blocking threshold relative to the home baseline")
        c.add_argument("--mcc-table", metavar="PATH", help="MCC to country CSV (default: bundled table)")

    s = sub.add_parser("sim", parents=[common], help="run the pipeline on a simulated network and check it")
    s.add_argument("--scenario", required=True, metavar="PATH")
    s.add_argument("--ratio", type=float, default=0.10)

    sub.add_parser("worker", help=argparse.SUPPRESS)
    return p


def _config(args) -> dict:
    if not args.config:
        return {}
    try:
        data = yaml.safe_load(Path(args.config).read_text("utf-8"))
    except (OSError, yaml.YAMLError) as e:
        raise UsageError(f"cannot read config {args.config}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError(f"{args.config}: expected a mapping")
    return data


def _out_dir(args, config: dict) -> Path:
    if args.out:
        return Path(args.out)
    campaign = config.get("campaign", config)
    return Path(campaign.get("out", "out")) if isinstance(campaign, dict) else Path("out")


def _mcc_table(args, config: dict):
    path = getattr(args, "mcc_table", None) or config.get("mcc_table")
    try:
        return plmn.MccCountryTable.load(path) if path else plmn.default_mcc_table()
    except (OSError, ValueError) as e:
        raise UsageError(f"cannot load MCC table {path}: {e}") from e


def _plan(args, config: dict, phases):
    from .vantage import PlanError, plan_from_dict

    if not args.config:
        raise UsageError(f"{args.command} needs --config")
    campaign = config.get("campaign", config)
    overrides = {"out_dir": _out_dir(args, config), "seed": args.seed, "rate": args.rate,
                 "vantage_parallelism": args.parallel, "phases": phases}
    try:
        return plan_from_dict(campaign, Path(args.config).parent, **overrides)
    except PlanError as e:
        raise UsageError(f"invalid config: {e}") from e


# -- commands ----------------------------------------------------------------


def cmd_gen(args, config) -> int:
    variants = {"standard": [plmn.Variant.STANDARD], "sos": [plmn.Variant.SOS], "both": list(plmn.Variant)}[args.variant]
    if args.count_only:
        print(plmn.count_all() * len(variants))
        return EXIT_OK
    out = sys.stdout
    for variant in variants:
        chunk = []
        for _, name in plmn.enumerate_all(variant):
            chunk.append(name)
            if len(chunk) >= 10000:
                out.write("\n".join(chunk) + "\n")
                chunk.clear()
        if chunk:
            out.write("\n".join(chunk) + "\n")
    return EXIT_OK


def _campaign(args, config, phases) -> int:
    from .vantage import CampaignError, run_campaign

    plan = _plan(args, config, phases)
    try:
        result = run_campaign(plan)
    except CampaignError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARTIAL
    for note in result.notes:
        log.info("%s", note)
    print(f"{result.units_run} units run, {result.units_skipped} already done or skipped; logs in {plan.out_dir}")
    if result.partial:
        failed = sorted({vid for (_, vid), ok in result.usable.items() if not ok})
        print(f"partial: unusable vantages {', '.join(failed)}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_discover(args, config) -> int:
    from .resolver import RecordType
    from .vantage import Phase, PhaseKind

    phases = tuple(Phase(kind, rt) for kind in (PhaseKind.DNS_DISCOVERY, PhaseKind.POOL_ENUMERATION) for rt in RecordType)
    return _campaign(args, config, phases)


def cmd_probe(args, config) -> int:
    from .vantage import Phase, PhaseKind

    return _campaign(args, config, (Phase(PhaseKind.IKE_PROBING),))


def cmd_locate(args, config) -> int:
    from .geoloc import GeoDatabase
    from .vantage import VantageUnusable, make_driver, self_locate

    plan = _plan(args, config, None)
    geodb = GeoDatabase(plan.geodb) if plan.geodb else None
    code = EXIT_OK
    for v in plan.vantages:
        try:
            loc = self_locate(v, make_driver(v), geodb)
        except VantageUnusable as e:
            print(f"{v.id}\tunusable\t{e}")
            code = EXIT_PARTIAL
            continue
        print(f"{v.id}\t{loc.public_ip}\tgeolocated={loc.geolocated_country or '?'}\tdeclared={loc.declared_country or '?'}")
    return code


def cmd_classify(args, config) -> int:
    from . import logs
    from .classify import classify_logs
    from .report import verdict_csv

    out = _out_dir(args, config)
    cls = classify_logs(
        logs.read_dns_log(out / logs.DNS_LOG), logs.read_probe_log(out / logs.PROBE_LOG), _mcc_table(args, config), args.ratio
    )
    out.mkdir(parents=True, exist_ok=True)
    (out / "verdicts.csv").write_text(verdict_csv(cls), "utf-8")
    blocked = sum(v.scope.blocking for v in cls.verdicts.values())
    print(f"{len(cls.verdicts)} verdicts ({blocked} geoblocking), {len(cls.behaviors)} DNS behaviors; wrote {out / 'verdicts.csv'}")
    return EXIT_OK


def cmd_report(args, config) -> int:
    from .report import build_report, render_text, write_report

    out = _out_dir(args, config)
    bundle = build_report(out, _mcc_table(args, config), args.ratio, config_path=args.config)
    write_report(bundle, out)
    sys.stdout.write(render_text(bundle))
    return EXIT_OK


def cmd_sim(args, config) -> int:
    from . import logs
    from .report import build_report, render_text, write_report
    from .simnet import load_scenario, spawn
    from .simnet.truth import diff, ground_truth
    from .vantage import PlanError, run_campaign, simulated_plan

    try:
        scenario = load_scenario(args.scenario)
        if args.seed is not None:
            scenario = dataclasses.replace(scenario, seed=args.seed)
        table = _mcc_table(args, config)
        truth = ground_truth(scenario, table)
    except (OSError, ValueError, KeyError, TypeError, yaml.YAMLError) as e:
        raise UsageError(f"bad scenario {args.scenario}: {e}") from e

    with tempfile.TemporaryDirectory(prefix="epdgscan-sim-") as tmp:
        out = Path(args.out) if args.out else Path(tmp)
        if (out / logs.PROGRESS_LOG).exists():
            raise UsageError(f"{out} already holds campaign logs; pick an empty --out")
        overrides = {k: v for k, v in (("rate", args.rate), ("vantage_parallelism", args.parallel)) if v is not None}
        try:
            plan = simulated_plan(scenario, out, **overrides)
        except PlanError as e:
            raise UsageError(f"bad scenario settings: {e}") from e
        with spawn(scenario) as net:
            run_campaign(plan, net=net)
        bundle = build_report(out, table, args.ratio)
        if args.out:
            write_report(bundle, out)
        sys.stdout.write(render_text(bundle))

    problems = diff(truth, bundle.classification)
    if problems:
        print(f"MISMATCH: {len(problems)} differences from the scenario's ground truth", file=sys.stderr)
        for line in problems:
            print(f"  {line}", file=sys.stderr)
        return EXIT_PARTIAL
    print(f"ok: pipeline matches ground truth for scenario {scenario.name or args.scenario}")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "discover": cmd_discover,
    "probe": cmd_probe,
    "locate": cmd_locate,
    "classify": cmd_classify,
    "report": cmd_report,
    "sim": cmd_sim,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    if argv[:1] == ["worker"]:
        from .vantage import worker_main

        return worker_main()
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, _config(args))
    except UsageError as e:
        print(f"epdgscan: {e}", file=sys.stderr)
        return EXIT_USAGE
    except BrokenPipeError:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

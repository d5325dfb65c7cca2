"""Command-line entry point: ``campusepi {run,sweep,stagger-opt,validate-map}``.

Errors go to stderr as one JSON object per line, for example::

    {"error": "config", "field": "infection.beta", "line": 7, "message": "..."}

Exit codes: 0 success, 1 unexpected failure, 2 bad scenario or arguments,
3 invalid map, 4 file-system error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path


from .control import StaggerSchedule, congestion
from .engine import export_results, optimize_schedule, run_replicated
from .graph import MapError, load_map
from .scenario import ScenarioError, load_scenario

log = logging.getLogger("campusepi")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_MAP, EXIT_IO = 0, 1, 2, 3, 4

# sweepable shorthand -> dotted scenario path
SWEEP_PARAMS = {
    "population": "population.total",
    "beta": "infection.beta",
    "asymptomatic_prob": "infection.asymptomatic_prob",
    "initial_infected": "simulation.initial_infected",
}


def _error(kind: str, message: str, **extra) -> None:
    rec = {"error": kind, **{k: v for k, v in extra.items() if v is not None}, "message": message}
    print(json.dumps(rec), file=sys.stderr)


def _overrides(args) -> list[str]:
    out = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        out.append(f"simulation.seed={args.seed}")
    if getattr(args, "replications", None) is not None:
        out.append(f"simulation.replications={args.replications}")
    return out


def _load(args, extra=()):
    source = args.from_manifest if getattr(args, "from_manifest", None) else args.scenario
    if source is None:
        raise ScenarioError("", "either --scenario or --from-manifest is required")
    return load_scenario(source, [*_overrides(args), *extra])


def _summary(res) -> str:
    rate = res.mean["infection_rate"]
    sd = res.std["infection_rate"]
    return f"day {len(rate)}: cumulative infection rate {rate[-1]:.4f} (sd {sd[-1]:.4f}, {len(res.runs)} replications)"


def cmd_run(args) -> int:
    cfg = _load(args)
    res = run_replicated(cfg, workers=args.workers)
    paths = export_results(res, args.out, cfg)
    print(_summary(res))
    for name, p in paths.items():
        print(f"{name}: {p}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.param not in SWEEP_PARAMS:
        raise ScenarioError("", f"cannot sweep {args.param!r}; choose one of {', '.join(sorted(SWEEP_PARAMS))}")
    path = SWEEP_PARAMS[args.param]
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ScenarioError("", "--values needs at least one value")
    out = Path(args.out)
    rows = []
    for v in values:
        cfg = _load(args, [f"{path}={v}"])
        res = run_replicated(cfg, workers=args.workers)
        export_results(res, out / f"{args.param}={v}", cfg, {"sweep": {"param": path, "value": v}})
        final = res.final("infection_rate")
        rows.append((v, float(final.mean()), float(final.std()), float(res.mean["cumulative_infected"][-1])))
        print(f"{args.param}={v}: {_summary(res)}")
    with open(out / "sweep_summary.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow([args.param, "rate", "rate_std", "cumulative"])
        for v, m, s, c in rows:
            wr.writerow([v, format(m, ".10g"), format(s, ".10g"), format(c, ".10g")])
    return EXIT_OK


def cmd_stagger_opt(args) -> int:
    cfg = _load(args)
    schedule, results, (home_model, class_model) = optimize_schedule(cfg)
    ref = StaggerSchedule.reference()
    if args.json:
        print(json.dumps({
            "departure": schedule.departure, "after_class": schedule.after_class,
            "congestion": {k: r.congestion for k, r in results.items()},
            "synchronized": {k: r.baseline for k, r in results.items()},
        }, indent=2, sort_keys=True))
        return EXIT_OK
    width = max(len(n) for n, _ in schedule.table()) if schedule.table() else 8
    width = max(width, len("Building"))
    print(f"{'Building':<{width}}  Start Time (s)")
    for name, off in schedule.table():
        print(f"{name:<{width}}  {off:g}")
    print()
    for key, model, ref_off in (
        ("departure", home_model, ref.home_offsets()),
        ("after_class", class_model, ref.after_class),
    ):
        r = results[key]
        ref_c = congestion(model, {g: o for g, o in ref_off.items() if g in model.groups})
        print(f"{key}: C optimized={r.congestion:.6g} synchronized={r.baseline:.6g} "
              f"reference={ref_c:.6g} method={r.method}")
    return EXIT_OK


def cmd_validate_map(args) -> int:
    net = load_map(args.map)
    print(f"ok: {len(net.nodes)} nodes, {len(net.edges)} edges, {len(net.locations)} locations")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="campusepi", description="Agent-based campus epidemic simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--scenario", help="scenario JSON file (bundled names such as campus.json work too)")
        sp.add_argument("--seed", type=int, help="base seed; replication k uses seed + k")
        sp.add_argument("--replications", type=int)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a scenario field (repeatable)")
        if out:
            sp.add_argument("--out", required=True, help="output directory")
            sp.add_argument("--workers", type=int, default=None, help="worker processes for replications")

    r = sub.add_parser("run", help="run replications and write curves, heat map and manifest")
    common(r)
    r.add_argument("--from-manifest", help="repeat the run recorded in a manifest.json")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run one parameter over a list of values")
    common(s)
    s.add_argument("--param", required=True, help=f"one of {', '.join(sorted(SWEEP_PARAMS))}")
    s.add_argument("--values", required=True, help="comma-separated values")
    s.set_defaults(func=cmd_sweep)

    o = sub.add_parser("stagger-opt", help="optimise departure offsets and print the schedule")
    common(o, out=False)
    o.add_argument("--json", action="store_true", help="print machine-readable output")
    o.set_defaults(func=cmd_stagger_opt)

    v = sub.add_parser("validate-map", help="check a map file")
    v.add_argument("map")
    v.set_defaults(func=cmd_validate_map)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MapError as exc:
        _error("map", exc.detail, file=exc.source, line=exc.line)
        return EXIT_MAP
    except ScenarioError as exc:
        _error("config", exc.detail, field=exc.field or None, file=exc.source, line=exc.line)
        return EXIT_CONFIG
    except OSError as exc:
        _error("io", str(exc))
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        _error("config", str(exc.args[0] if exc.args else exc))
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("unexpected failure", exc_info=True)
        _error("internal", f"{type(exc).__name__}: {exc}")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

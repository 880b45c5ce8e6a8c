"""Command-line entry point.

Exit codes: 0 success, 1 validation failure, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import LayoutViolation, MalformedArchive, PaasError, ScenarioInvalid, TraceCorrupt
from .market import load_catalog, load_template, match_offer
from .monitoring import detect_idle, detect_overload, load_stream
from .repository import validate_archive
from .system import StateDir

OK, INVALID, FAILED = 0, 1, 2


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def cmd_validate_archive(args):
    try:
        cls = validate_archive(Path(args.path).read_bytes())
    except (MalformedArchive, LayoutViolation) as exc:
        print(f"invalid: {exc}")
        return INVALID
    if not cls.ok:
        print("invalid:")
        for v in cls.violations:
            print(f"  - {v}")
        return INVALID
    print(f"{cls.kind}\t{cls.root}")
    return OK


def cmd_match(args):
    ranked = match_offer(load_template(args.template), load_catalog(args.catalog))
    print(f"{'rank':>4}  {'offer':<16}{'distance':>10}{'price/h':>10}  label")
    for i, (offer, dist) in enumerate(ranked, start=1):
        print(f"{i:>4}  {offer.offer_id:<16}{dist:>10.4f}{offer.price_per_hour:>10.3f}  {offer.label}")
    return OK


def _metrics_table(metrics):
    rows = [f"{'service':<20}{'done':>7}{'rejected':>9}{'thru/s':>9}"
            f"{'p50 s':>9}{'p95 s':>9}{'SLA viol':>9}"]
    for name, m in metrics["services"].items():
        p50 = "-" if m["p50_latency"] is None else f"{m['p50_latency']:.4f}"
        p95 = "-" if m["p95_latency"] is None else f"{m['p95_latency']:.4f}"
        rows.append(f"{name:<20}{m['completed']:>7}{m['rejected']:>9}{m['throughput']:>9.3f}"
                    f"{p50:>9}{p95:>9}{m['sla_violations']:>9}")
    rows.append(f"scaling actions: up={metrics['scale_up']} down={metrics['scale_down']} "
                f"aborted={metrics['scale_up_aborted']}")
    return "\n".join(rows)


def cmd_run(args):
    from .sim.runner import Run
    from .sim.scenario import load_scenario

    scenario = load_scenario(args.scenario)
    out = Path(args.out) if args.out else Path("runs") / scenario.name
    result = Run(scenario, out).execute()
    print(_metrics_table(result.metrics))
    print(f"trace: {out / 'trace.jsonl'} sha256={result.trace_hash}")
    return OK


def cmd_replay(args):
    from .sim.trace import replay

    report = replay(args.trace)
    for w in report.warnings:
        print(f"warning: {w}")
    if report.identical:
        print(f"identical: {report.matched} lines")
        return OK
    for line, recorded, replayed in report.diffs:
        print(f"line {line}:\n  recorded: {recorded}\n  replayed: {replayed}")
    return INVALID


def cmd_replay_stream(args):
    hosts = [t for t in load_stream(args.dump) if t.kind == "host"]
    events = (detect_overload(hosts, args.overload, args.overload_sustain)
              + detect_idle(hosts, args.idle, args.idle_sustain))
    events.sort(key=lambda e: (e.timestamp, e.subject, e.kind))
    for e in events:
        print(f"{e.timestamp:.3f}\t{e.kind}\t{e.subject}\t[{e.window_start:.3f}, {e.window_end:.3f}]")
    print(f"{len(events)} events from {len(hosts)} host samples")
    return OK


def cmd_init(args):
    StateDir(args.state).init(args.catalog)
    print(f"initialised {args.state}")
    return OK


def _state_cmd(args, command):
    _, result = StateDir(args.state).execute(command)
    return result


def cmd_upload(args):
    cid = _state_cmd(args, {"op": "upload", "provider": args.provider,
                            "archive": str(Path(args.archive).resolve())})
    print(cid)
    return OK


def cmd_subscribe(args):
    doc = load_template(args.template)
    template = {k: getattr(doc, k) for k in ("cpu_ghz", "cpu_cores", "memory_gb", "disk_gb",
                                              "os", "db")}
    template["weights"] = list(doc.weights)
    host = _state_cmd(args, {"op": "subscribe", "kind": args.kind, "template": template,
                             "provider": args.provider})
    print(f"{host.instance_id}\t{host.offer_id}\t{host.state}")
    return OK


def cmd_publish(args):
    inst = _state_cmd(args, {"op": "publish", "component": args.component, "host": args.host})
    print(f"{inst.service_id.name}\t{inst.instance_url}")
    return OK


def cmd_bind(args):
    rec = _state_cmd(args, {"op": "bind", "software": args.software, "data": args.data})
    print(rec.name)
    return OK


def build_parser():
    p = argparse.ArgumentParser(prog="paas", description="PaaS control-plane simulator")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", help="execute a scenario file")
    s.add_argument("scenario")
    s.add_argument("--out", help="output directory (default runs/<name>)")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("replay", help="re-run a trace and diff it")
    s.add_argument("trace")
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("validate-archive", help="classify a component archive")
    s.add_argument("path")
    s.set_defaults(func=cmd_validate_archive)

    s = sub.add_parser("match", help="rank catalog offers against a template")
    s.add_argument("--template", required=True)
    s.add_argument("--catalog", required=True)
    s.set_defaults(func=cmd_match)

    s = sub.add_parser("replay-stream", help="run event detection over a stream dump")
    s.add_argument("dump")
    s.add_argument("--overload", type=float, default=85.0)
    s.add_argument("--overload-sustain", type=float, default=180.0)
    s.add_argument("--idle", type=float, default=20.0)
    s.add_argument("--idle-sustain", type=float, default=600.0)
    s.set_defaults(func=cmd_replay_stream)

    s = sub.add_parser("init", help="create a state directory")
    s.add_argument("--state", required=True)
    s.add_argument("--catalog", required=True)
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("upload", help="upload a component archive")
    s.add_argument("--state", required=True)
    s.add_argument("--provider", required=True)
    s.add_argument("archive")
    s.set_defaults(func=cmd_upload)

    s = sub.add_parser("subscribe", help="subscribe a resource instance for a component kind")
    s.add_argument("--state", required=True)
    s.add_argument("--template", required=True)
    s.add_argument("--kind", choices=("software", "data"), required=True)
    s.add_argument("--provider")
    s.set_defaults(func=cmd_subscribe)

    s = sub.add_parser("publish", help="deploy a component onto a host")
    s.add_argument("--state", required=True)
    s.add_argument("--component", required=True)
    s.add_argument("--host", required=True)
    s.set_defaults(func=cmd_publish)

    s = sub.add_parser("bind", help="bind a software service to a data service")
    s.add_argument("--state", required=True)
    s.add_argument("--software", required=True)
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_bind)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioInvalid as exc:
        for e in exc.errors:
            _err(e)
        return INVALID
    except TraceCorrupt as exc:
        _err(f"corrupt trace: {exc}")
        return INVALID
    except (PaasError, OSError, ValueError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return FAILED


if __name__ == "__main__":
    sys.exit(main())

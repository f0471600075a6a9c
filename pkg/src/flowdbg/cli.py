"""flowdbg command line: bus gateway, agent, debug client, scenario runner."""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
import time

from .agent import AgentConfig, run_agent
from .bus import WsBusClient, serve_gateway
from .client import ClientConfig, DebugClient, FrontendServer
from .runtime import RealScheduler
from .simkit import ScenarioError, run_scenario, run_suite
from .workflow import load_workflow

log = logging.getLogger(__name__)


def _wait_forever() -> None:
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    stop.wait()


def _cmd_bus_serve(args) -> int:
    gateway = serve_gateway(args.listen)
    print(f"bus gateway on {gateway.address}", file=sys.stderr)
    try:
        _wait_forever()
    finally:
        gateway.close()
    return 0


def _cmd_agent_run(args) -> int:
    config = AgentConfig(
        workflows=[load_workflow(path) for path in args.workflow],
        aci_id=args.aci_id,
        sweep_interval=args.sweep_interval / 1000.0,
        session_expiry=args.session_expiry / 1000.0,
    )
    agent = run_agent(config, args.bus)
    print(f"agent {agent.aci_id} running workflows {agent.workflow_ids}", file=sys.stderr)
    try:
        _wait_forever()
    finally:
        agent.stop()
    return 0


def _cmd_client_run(args) -> int:
    scheduler = RealScheduler("client-scheduler")
    workflows = {}
    for path in args.workflow:
        defn = load_workflow(path)
        workflows[defn.workflow_id] = defn
    config = ClientConfig(mes_id=args.mes_id, workflows=workflows)
    bus = WsBusClient.connect(args.bus, scheduler, name=f"mes-{args.mes_id}")
    client = DebugClient(bus, scheduler, config).start()
    host, _, port = args.frontend.rpartition(":")
    frontend = FrontendServer(client, host or "127.0.0.1", int(port))
    print(f"debug client {args.mes_id}; frontend API on {frontend.address}", file=sys.stderr)
    try:
        _wait_forever()
    finally:
        frontend.close()
        client.stop()
        scheduler.stop()
    return 0


def _cmd_client_script(args) -> int:
    from .simkit import _get_path  # shared dotted-path helper

    with open(args.script, "r", encoding="utf-8") as fh:
        script = json.load(fh)
    bus_address = args.bus or script.get("busAddress")
    if not bus_address:
        print("no bus address (use --bus or busAddress in the script)", file=sys.stderr)
        return 2
    workflows = {}
    for ref in script.get("workflows", []):
        defn = load_workflow(ref) if isinstance(ref, str) else None
        if defn is None:
            from .workflow import parse_workflow

            defn = parse_workflow(ref)
        workflows[defn.workflow_id] = defn
    scheduler = RealScheduler("client-script")
    timer_keys = {
        "aciRequestInterval": "aci_request_interval",
        "commAttemptInterval": "comm_attempt_interval",
        "autoSelectWindow": "auto_select_window",
        "aciEntryExpiry": "aci_entry_expiry",
        "requestTimeout": "request_timeout",
    }
    timers = {
        timer_keys[k]: float(v)
        for k, v in script.get("timers", {}).items()
        if k in timer_keys
    }
    config = ClientConfig(mes_id=script["mesId"], workflows=workflows, **timers)
    bus = WsBusClient.connect(bus_address, scheduler, name=f"mes-{script['mesId']}")
    client = DebugClient(bus, scheduler, config).start()
    failures = 0
    try:
        for step in script.get("steps", []):
            if "cmd" in step:
                client.handle_command(step)
            elif "waitMs" in step:
                time.sleep(step["waitMs"] / 1000.0)
            elif "expectState" in step:
                exp = step["expectState"]
                deadline = time.monotonic() + exp.get("withinMs", 2000) / 1000.0
                ok = False
                while time.monotonic() < deadline:
                    if _get_path(client.snapshot(), exp["path"]) == exp.get("equals"):
                        ok = True
                        break
                    time.sleep(0.01)
                status = "PASS" if ok else "FAIL"
                print(f"{status} {exp['path']} == {exp.get('equals')!r}")
                failures += 0 if ok else 1
            else:
                print(f"unknown step {step!r}", file=sys.stderr)
                failures += 1
    finally:
        client.stop()
        scheduler.stop()
    return 1 if failures else 0


def _cmd_scenario_run(args) -> int:
    try:
        report = run_scenario(args.script, timer_profile=args.timer_profile)
    except ScenarioError as exc:
        print(f"scenario setup failed: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(report.to_json(), indent=2))
    return 0 if report.passed else 1


def _cmd_scenario_suite(args) -> int:
    ok, reports = run_suite(timer_profile=args.timer_profile)
    print(json.dumps({"passed": ok, "scenarios": [r.to_json() for r in reports]}, indent=2))
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}", file=sys.stderr)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowdbg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="group", required=True)

    bus = sub.add_parser("bus", help="message bus gateway").add_subparsers(
        dest="action", required=True
    )
    serve = bus.add_parser("serve", help="run the WebSocket gateway")
    serve.add_argument("--listen", default="127.0.0.1:7750", help="host:port to bind")
    serve.set_defaults(fn=_cmd_bus_serve)

    agent = sub.add_parser("agent", help="IoMT agent").add_subparsers(
        dest="action", required=True
    )
    arun = agent.add_parser("run", help="host workflows for remote debugging")
    arun.add_argument("--bus", required=True, help="bus address (host:port or ws:// URL)")
    arun.add_argument("--workflow", action="append", required=True, help="workflow JSON file")
    arun.add_argument("--aci-id", default=None, help="fixed controller instance id")
    arun.add_argument("--sweep-interval", type=float, default=30_000.0, metavar="MS")
    arun.add_argument("--session-expiry", type=float, default=35_000.0, metavar="MS")
    arun.set_defaults(fn=_cmd_agent_run)

    client = sub.add_parser("client", help="MES-side debug client").add_subparsers(
        dest="action", required=True
    )
    crun = client.add_parser("run", help="serve the frontend API for the browser UI")
    crun.add_argument("--bus", required=True)
    crun.add_argument("--mes-id", required=True)
    crun.add_argument("--frontend", default="127.0.0.1:7760", help="host:port for the UI")
    crun.add_argument("--workflow", action="append", required=True)
    crun.set_defaults(fn=_cmd_client_run)
    cscript = client.add_parser("script", help="drive a headless client from a JSON script")
    cscript.add_argument("script")
    cscript.add_argument("--bus", default=None)
    cscript.set_defaults(fn=_cmd_client_script)

    scenario = sub.add_parser("scenario", help="end-to-end scenario harness").add_subparsers(
        dest="action", required=True
    )
    srun = scenario.add_parser("run", help="run one scenario script")
    srun.add_argument("script")
    srun.add_argument("--timer-profile", choices=("fast", "paper"), default=None)
    srun.set_defaults(fn=_cmd_scenario_run)
    ssuite = scenario.add_parser("suite", help="run the built-in validation suite")
    ssuite.add_argument("--timer-profile", choices=("fast", "paper"), default=None)
    ssuite.set_defaults(fn=_cmd_scenario_suite)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

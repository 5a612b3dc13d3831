"""Command-line front end: run a JSON scenario, emit trace and report files.

A scenario file looks like:

    {
      "horizon": 1000,
      "seed": 0,
      "schedulers": [
        {"name": "edf0", "policy": "EDF_RESERVATION", "request": "RESBH[30,100]"}
      ],
      "timeline": [
        {"tick": 0, "action": "deploy", "app": "a1", "class": "control",
         "request": "RESBH[10,100]", "scheduler": "edf0",
         "workload": {"kind": "PERIODIC", "period": 100, "wcet": 10}}
      ]
    }

Timeline ticks must be non-decreasing, every referenced scheduler must be
declared, undeploys must name an app deployed earlier, and the horizon must
lie strictly past the last timeline tick. Deploy entries may pin a parent
scheduler by name with "parent"; otherwise new schedulers load at the root.

Exit status: 0 when the run is clean, 1 when the verifier found violations
or any deployment was rejected (suppress the latter with --allow-reject),
2 for unusable input.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, replace

from .contracts import ContractError, parse_contract
from .deployment import DeploymentRequest, Outcome
from .engine import EngineError, Workload, WorkloadKind, run_scenario
from .hierarchy import POLICY_PROVIDES, HierarchyError, PolicyKind, SchedulerSpec
from .verify import build_report


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class TimelineEntry:
    tick: int
    action: str  # "deploy" | "undeploy"
    app_id: str
    request: DeploymentRequest | None = None
    workload: Workload | None = None


@dataclass(frozen=True)
class Scenario:
    horizon: int
    seed: int
    schedulers: dict  # name -> SchedulerSpec
    timeline: tuple


def _need(obj, key, kind, where, minimum=None):
    if key not in obj:
        raise ScenarioError(f"{where}: missing {key!r}")
    val = obj[key]
    if not isinstance(val, kind) or isinstance(val, bool):
        raise ScenarioError(f"{where}.{key}: expected {kind.__name__}")
    if minimum is not None and val < minimum:
        raise ScenarioError(f"{where}.{key}: must be >= {minimum}")
    return val


def _opt_int(obj, key, where, default, minimum=None):
    if key not in obj:
        return default
    return _need(obj, key, int, where, minimum=minimum)


def _contract(obj, key, where):
    text = _need(obj, key, str, where)
    try:
        return parse_contract(text)
    except ContractError as e:
        raise ScenarioError(f"{where}.{key}: {e}") from e


def _scheduler(item, i):
    where = f"schedulers[{i}]"
    if not isinstance(item, dict):
        raise ScenarioError(f"{where}: expected object")
    name = _need(item, "name", str, where)
    policy_name = _need(item, "policy", str, where)
    try:
        policy = PolicyKind[policy_name]
    except KeyError:
        raise ScenarioError(f"{where}.policy: unknown policy {policy_name!r}")
    request = _contract(item, "request", where)
    quantum = _opt_int(item, "quantum", where, 10, minimum=1)
    provides = frozenset(POLICY_PROVIDES[policy])
    try:
        return SchedulerSpec(
            name=name, policy=policy, provides=provides,
            parent_request=request, quantum=quantum,
        )
    except HierarchyError as e:
        raise ScenarioError(f"{where}: {e}") from e


def _workload(obj, where):
    spec = _need(obj, "workload", dict, where)
    kind_name = _need(spec, "kind", str, f"{where}.workload")
    try:
        kind = WorkloadKind[kind_name]
    except KeyError:
        raise ScenarioError(
            f"{where}.workload.kind: unknown kind {kind_name!r}"
        )
    try:
        if kind is WorkloadKind.PERIODIC:
            return Workload(
                kind,
                period=_need(spec, "period", int, f"{where}.workload", minimum=1),
                wcet=_need(spec, "wcet", int, f"{where}.workload", minimum=1),
                offset=_opt_int(spec, "offset", f"{where}.workload", 0, minimum=0),
            )
        if kind is WorkloadKind.BURSTY:
            return Workload(
                kind,
                on=_need(spec, "on", int, f"{where}.workload", minimum=1),
                off=_need(spec, "off", int, f"{where}.workload", minimum=1),
            )
        return Workload(kind)
    except EngineError as e:
        raise ScenarioError(f"{where}.workload: {e}") from e


def parse_scenario(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(
            f"invalid JSON: {e.msg} (line {e.lineno}, column {e.colno})"
        ) from e
    if not isinstance(doc, dict):
        raise ScenarioError("scenario: expected a JSON object")
    horizon = _need(doc, "horizon", int, "scenario", minimum=1)
    seed = _opt_int(doc, "seed", "scenario", 0)

    schedulers: dict = {}
    for i, item in enumerate(doc.get("schedulers", [])):
        spec = _scheduler(item, i)
        if spec.name in schedulers:
            raise ScenarioError(
                f"schedulers[{i}].name: duplicate name {spec.name!r}"
            )
        schedulers[spec.name] = spec

    entries = []
    deployed: set = set()
    last_tick = -1
    for i, item in enumerate(doc.get("timeline", [])):
        where = f"timeline[{i}]"
        if not isinstance(item, dict):
            raise ScenarioError(f"{where}: expected object")
        tick = _need(item, "tick", int, where, minimum=0)
        if tick < last_tick:
            raise ScenarioError(
                f"{where}.tick: ticks must be non-decreasing "
                f"({tick} after {last_tick})"
            )
        last_tick = tick
        action = _need(item, "action", str, where)
        app_id = _need(item, "app", str, where)
        if action == "deploy":
            app_class = item.get("class", "")
            if not isinstance(app_class, str):
                raise ScenarioError(f"{where}.class: expected str")
            request = _contract(item, "request", where)
            workload = _workload(item, where)
            sched_spec = None
            if "scheduler" in item:
                sched_name = _need(item, "scheduler", str, where)
                if sched_name not in schedulers:
                    raise ScenarioError(
                        f"{where}.scheduler: undeclared scheduler {sched_name!r}"
                    )
                sched_spec = schedulers[sched_name]
            parent = None
            if "parent" in item:
                parent = _need(item, "parent", str, where)
                if parent not in schedulers:
                    raise ScenarioError(
                        f"{where}.parent: undeclared scheduler {parent!r}"
                    )
            entries.append(TimelineEntry(
                tick=tick, action="deploy", app_id=app_id,
                request=DeploymentRequest(
                    app_id=app_id, app_class=app_class, request=request,
                    scheduler=sched_spec, target_parent=parent,
                ),
                workload=workload,
            ))
            deployed.add(app_id)
        elif action == "undeploy":
            if app_id not in deployed:
                raise ScenarioError(
                    f"{where}.app: undeploy of app {app_id!r} "
                    "never deployed earlier in the timeline"
                )
            entries.append(TimelineEntry(tick=tick, action="undeploy", app_id=app_id))
        else:
            raise ScenarioError(f"{where}.action: unknown action {action!r}")

    if entries and horizon <= entries[-1].tick:
        raise ScenarioError(
            f"scenario.horizon: must exceed the last timeline tick "
            f"({entries[-1].tick})"
        )
    return Scenario(
        horizon=horizon, seed=seed, schedulers=schedulers,
        timeline=tuple(entries),
    )


def _decision_lines(trace) -> list:
    return [
        f"deploy tick={tick} app={app} {decision.record()}"
        for tick, app, decision in trace.decisions
    ]


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hiersched",
        description="Run a scheduler scenario and verify its guarantees.",
    )
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--trace-out", help="write the event trace CSV here")
    p.add_argument("--report-out", help="write the decision+guarantee report here")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--horizon", type=int, help="override the scenario horizon")
    p.add_argument(
        "--allow-reject", action="store_true",
        help="rejected deployments do not fail the run",
    )
    return p


def run(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        with open(args.scenario, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        print(f"error: cannot read scenario: {e}", file=sys.stderr)
        return 2

    try:
        scenario = parse_scenario(text)
        if args.seed is not None:
            scenario = replace(scenario, seed=args.seed)
        if args.horizon is not None:
            if scenario.timeline and args.horizon <= scenario.timeline[-1].tick:
                raise ScenarioError(
                    "scenario.horizon: override must exceed the last timeline tick"
                )
            scenario = replace(scenario, horizon=args.horizon)
        trace = run_scenario(scenario)
    except (ScenarioError, EngineError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    grants = {app: info.awarded for app, info in trace.app_info.items()}
    report = build_report(trace, grants)
    report_text = "\n".join(_decision_lines(trace) + [report.to_text()])

    try:
        if args.trace_out:
            with open(args.trace_out, "w", encoding="utf-8", newline="") as f:
                f.write(trace.to_csv())
        if args.report_out:
            with open(args.report_out, "w", encoding="utf-8", newline="") as f:
                f.write(report_text)
    except OSError as e:
        print(f"error: cannot write output: {e}", file=sys.stderr)
        return 2

    print(report_text, end="")
    rejected = any(
        d.outcome is Outcome.REJECTED for _, _, d in trace.decisions
    )
    if report.ok and (args.allow_reject or not rejected):
        return 0
    return 1


def main():
    raise SystemExit(run())

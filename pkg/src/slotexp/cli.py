"""Command-line entry point.

    slotexp run     --config exp.json [--seed N] [--slots N] [--out DIR]
    slotexp probe   --config exp.json [--seed N] [--slots N] [--out DIR]
    slotexp analyze --trace DIR/trace.jsonl --log DIR/experiment_log.jsonl [--out DIR]

Exit codes: 0 ok, 2 configuration error, 3 invariant breach, 4 no safe skip period.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from .analysis import analyze_run
from .conditions import ConditionEnvelope
from .demo import ScenarioConfig, build_pipeline
from .errors import ConfigError, InvariantError
from .experimenter import ExperimentPlan, run_id_for, start_experiment
from .probe import probe_skip_period
from .runtime import QueuePolicy
from .strategies import parse_strategy

log = logging.getLogger("slotexp")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_NO_SAFE_PERIOD = 4

TRACE_FILE = "trace.jsonl"
LOG_FILE = "experiment_log.jsonl"
REPORT_FILE = "report.json"
PROBE_REPORT_FILE = "probe_report.json"
ENVELOPE_FILE = "envelope.json"
COMPARABILITY_FILE = "comparability.json"

_PLAN_KEYS = {
    "strategy",
    "duration_slots",
    "switches",
    "envelope",
    "experimental_queue",
    "production_queue",
    "lanes",
    "seed",
}
_PROBE_KEYS = {"k_range", "threshold", "metric", "n_slots"}


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig
    plan: Mapping[str, Any]
    probe: Optional[Mapping[str, Any]]
    output: Path
    envelope: Optional[ConditionEnvelope]

    def resolved(self) -> dict[str, Any]:
        """Everything that determines the outputs. The output directory is excluded."""
        return {
            "scenario": self.scenario.to_dict(),
            "plan": {
                **{k: v for k, v in self.plan.items() if k != "envelope"},
                "envelope": None if self.envelope is None else self.envelope.to_dict(),
            },
        }


def load_config(
    path: Path,
    *,
    seed: Optional[int] = None,
    slots: Optional[int] = None,
    out: Optional[Path] = None,
) -> RunConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - {"scenario", "plan", "probe", "output"}
    if unknown:
        raise ConfigError(f"unknown top-level config keys {sorted(unknown)}")

    scenario_raw = dict(raw.get("scenario", {}))
    if seed is not None:
        scenario_raw["seed"] = seed
    if slots is not None:
        scenario_raw["n_slots"] = slots
    scenario = ScenarioConfig.from_dict(scenario_raw)

    plan_raw = dict(raw.get("plan", {}))
    bad = set(plan_raw) - _PLAN_KEYS
    if bad:
        raise ConfigError(f"unknown plan keys {sorted(bad)}")
    plan = {
        "strategy": str(parse_strategy(plan_raw.get("strategy", "serial"))),
        "duration_slots": int(plan_raw.get("duration_slots") or scenario.n_slots),
        "switches": [
            {"at_slot": int(s["at_slot"]), "strategy": str(parse_strategy(s["strategy"]))}
            for s in plan_raw.get("switches", [])
        ],
        "experimental_queue": QueuePolicy(plan_raw.get("experimental_queue", "latest")).value,
        "production_queue": QueuePolicy(plan_raw.get("production_queue", "all")).value,
        "lanes": int(plan_raw.get("lanes", 2)),
        "seed": scenario.seed if seed is not None else int(plan_raw.get("seed", scenario.seed)),
        "envelope": plan_raw.get("envelope"),
    }
    if slots is not None:
        plan["duration_slots"] = slots

    envelope = None
    if plan["envelope"]:
        envelope_path = Path(plan["envelope"])
        if not envelope_path.is_absolute():
            envelope_path = path.parent / envelope_path
        envelope = ConditionEnvelope.load(envelope_path)

    probe = raw.get("probe")
    if probe is not None:
        bad = set(probe) - _PROBE_KEYS
        if bad:
            raise ConfigError(f"unknown probe keys {sorted(bad)}")

    output = Path(out) if out is not None else Path(raw.get("output", "out"))
    if not output.is_absolute() and out is None:
        output = path.parent / output
    return RunConfig(scenario, plan, probe, output, envelope)


def build_plan(config: RunConfig) -> ExperimentPlan:
    p = config.plan
    return ExperimentPlan(
        production_id="perception",
        experimental_id="perception_exp",
        strategy=p["strategy"],
        duration_slots=p["duration_slots"],
        strategy_switches=tuple((s["at_slot"], s["strategy"]) for s in p["switches"]),
        condition_envelope=config.envelope,
        seed=p["seed"],
        lanes=p["lanes"],
    )


def _write_json(path: Path, document: Any) -> None:
    path.write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")


def cmd_run(config_path: Path, *, seed=None, slots=None, out=None) -> int:
    try:
        config = load_config(config_path, seed=seed, slots=slots, out=out)
        plan = build_plan(config)
        pipeline = build_pipeline(
            config.scenario,
            experimental_queue=config.plan["experimental_queue"],
            production_queue=config.plan["production_queue"],
        )
        resolved = config.resolved()
        run_id = run_id_for(resolved)
        config.output.mkdir(parents=True, exist_ok=True)
        experiment = start_experiment(
            plan,
            pipeline.runtime,
            pipeline.bus,
            conditions=pipeline.conditions_at,
            run_id=run_id,
            trace_path=config.output / TRACE_FILE,
            log_path=config.output / LOG_FILE,
            config=resolved,
        )
    except (ConfigError, ValueError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    try:
        experiment.run()
        report = experiment.finalize()
    except InvariantError as exc:
        log.error("invariant breach: %s", exc)
        return EXIT_INVARIANT
    _write_json(config.output / REPORT_FILE, report.to_dict())
    log.info(
        "run %s: %d slots, %d production activations, %d experimental completions, %d gated",
        run_id,
        report.duration_slots,
        report.production_activations,
        report.experimental_completions,
        report.gated,
    )
    return EXIT_OK


def cmd_probe(config_path: Path, *, seed=None, slots=None, out=None) -> int:
    try:
        config = load_config(config_path, seed=seed, slots=slots, out=out)
        if config.probe is None:
            raise ConfigError("config has no 'probe' section")
        probe = config.probe
        k_range = tuple(int(k) for k in probe.get("k_range", (2, 10)))
        if len(k_range) != 2:
            raise ConfigError(f"k_range must have two entries, got {list(k_range)}")
        if "threshold" not in probe:
            raise ConfigError("probe section needs a threshold")
        n_slots = int(slots if slots is not None else probe.get("n_slots", config.scenario.n_slots))
        report = probe_skip_period(
            config.scenario,
            probe.get("metric", "max_abs"),
            float(probe["threshold"]),
            k_range,
            n_slots,
        )
    except (ConfigError, ValueError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    config.output.mkdir(parents=True, exist_ok=True)
    _write_json(config.output / PROBE_REPORT_FILE, report.to_dict())
    _write_json(config.output / ENVELOPE_FILE, report.envelope.to_dict())
    if report.min_safe_period is None:
        log.warning("no safe skip period in k_range %s at threshold %s", list(k_range), report.threshold)
        return EXIT_NO_SAFE_PERIOD
    log.info("minimum safe skip period: %d", report.min_safe_period)
    return EXIT_OK


def cmd_analyze(trace_path: Path, log_path: Path, *, out: Optional[Path] = None) -> int:
    try:
        report = analyze_run(Path(trace_path), Path(log_path))
    except (ConfigError, FileNotFoundError, KeyError, ValueError) as exc:
        log.error("cannot analyze: %s", exc)
        return EXIT_CONFIG
    out_dir = Path(out) if out is not None else Path(trace_path).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / COMPARABILITY_FILE, report.to_dict())
    log.info("coverage %.3f over %d production outputs", report.coverage_ratio, report.production_outputs)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slotexp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "execute an experiment plan"),
        ("probe", "find the minimum safe downsampling period"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--slots", type=int)
        p.add_argument("--out", type=Path)
    p = sub.add_parser("analyze", help="A/B comparability of a run's trace and experiment log")
    p.add_argument("--trace", type=Path, required=True)
    p.add_argument("--log", type=Path, required=True)
    p.add_argument("--out", type=Path)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "run":
        return cmd_run(args.config, seed=args.seed, slots=args.slots, out=args.out)
    if args.command == "probe":
        return cmd_probe(args.config, seed=args.seed, slots=args.slots, out=args.out)
    return cmd_analyze(args.trace, args.log, out=args.out)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``cubeshap {attribute,rank,experiment}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import experiments as ex
from .errors import ConfigError, NumericalError, UnknownExperiment, ValidationError
from .gam import ENGINES, SCOPES, EngineConfig
from .runconfig import (
    FORMATS,
    contribution_csv,
    dumps_json,
    load_config,
    render_attribution,
    render_rank,
    run_attribution,
)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
EXPERIMENTS = ("rq1", "rq2", "berkeley")


def _engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--engine", choices=ENGINES)
    p.add_argument("--samples", type=int)
    p.add_argument("--riemann-steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--scope", choices=SCOPES)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cubeshap", description="Attribute changes of aggregated measures.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("attribute", "write a contribution matrix"), ("rank", "rank sub-cubes by total contribution")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--input", help="override the config's input CSV")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--format", choices=FORMATS)
        _engine_flags(p)
    p = sub.add_parser("experiment", help="run a seeded reproduction")
    p.add_argument("name", help="one of: " + ", ".join(EXPERIMENTS))
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field (JSON value)")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    return parser


class _Stage:
    """Remembers which step was running when an error escaped."""

    name = "setup"

    def __call__(self, name: str) -> None:
        self.name = name


def _write(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True)
    path.write_text(text, encoding="utf-8")


def _run_config_command(args, stage: _Stage) -> int:
    stage("config")
    cfg = load_config(args.config)
    cfg = cfg.with_overrides(
        input=args.input, out=args.out, format=args.format, engine=args.engine, samples=args.samples,
        riemann_steps=args.riemann_steps, seed=args.seed, threads=args.threads, scope=args.scope,
    )
    cfg.spec()
    stage("attribute")
    c = run_attribution(cfg)
    stage("write")
    render = render_attribution if args.command == "attribute" else render_rank
    _write(render(cfg, c, cfg.format), cfg.out)
    return EXIT_OK


def parse_overrides(pairs, config_cls):
    fields = {f.name: f for f in dataclasses.fields(config_cls)}
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not KEY=VALUE")
        key, raw = (s.strip() for s in pair.split("=", 1))
        if key not in fields:
            raise ConfigError(f"unknown field {key!r} for {config_cls.__name__}; known: {sorted(fields)}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if isinstance(value, list):
            value = tuple(value)
        out[key] = value
    return out


def _experiment_config(name: str, overrides, seed, threads):
    cls = {"rq1": ex.LinearSimConfig, "rq2": ex.DauSimConfig, "berkeley": EngineConfig}[name]
    kw = parse_overrides(overrides, cls)
    if seed is not None:
        kw["seed"] = seed
    if threads is not None:
        kw["threads"] = threads
    if name == "berkeley":
        kw.setdefault("engine", "aumann-ratio-closed")
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _run_experiment(args, stage: _Stage) -> int:
    stage("config")
    if args.name not in EXPERIMENTS:
        raise UnknownExperiment(f"unknown experiment {args.name!r}; expected one of {EXPERIMENTS}")
    config = _experiment_config(args.name, args.overrides, args.seed, args.threads)
    stage("experiment")
    out = Path(args.out)
    if args.name == "berkeley":
        c = ex.run_berkeley(config)
        payload = {"kind": "experiment", "name": "berkeley", "seed": config.seed,
                   "config": dataclasses.asdict(config), "contribution": c.to_dict()}
        csv_text, summary = contribution_csv(c), ex.contribution_table(c, as_percent=True)
    else:
        report = ex.run_linear_sim(config) if args.name == "rq1" else ex.run_dau_sim(config)
        payload = {"kind": "experiment", "name": args.name, **report.to_dict()}
        csv_text, summary = report.to_csv(), report.summary(percent=args.name == "rq1")
    stage("write")
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{args.name}.json").write_text(dumps_json(payload), encoding="utf-8")
    (out / f"{args.name}.csv").write_text(csv_text, encoding="utf-8")
    print(summary)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    stage = _Stage()
    try:
        if args.command == "experiment":
            return _run_experiment(args, stage)
        return _run_config_command(args, stage)
    except (ValidationError, NumericalError, OSError) as exc:
        if isinstance(exc, ValidationError):
            code = EXIT_VALIDATION
        elif isinstance(exc, NumericalError):
            code = EXIT_NUMERICAL
        else:
            code = EXIT_IO
        print(f"cubeshap: error during {stage.name}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())

"""Run configuration files and report serialisation.

A config file holds one setting per line::

    # comments and blank lines are ignored
    input = "requests.csv"
    timestep_column = "minute"
    explicand = "10:01"
    reference = "10:00"            # or a list for expected mode
    attributes = ["data_center", "os_version"]
    drill = ["data_center"]
    where = "os_version=v1"        # optional parent sub-cube
    submeasure succ = sum(is_success)
    submeasure total = count(request_id)
    measure = "succ / total"
    engine = "auto"

Values are JSON; anything that is not valid JSON is taken as a bare string.
Relative ``input`` paths resolve against the config file's directory.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from .cube import AggregatorKind, build_observation_matrix, partition_store, read_csv
from .errors import ConfigError, ValidationError
from .expr import MeasureSpec
from .gam import EngineConfig, ReferenceSpec, attribute
from .model import ContributionMatrix, CubePredicate, rank_subcubes
from .nongam import NonGamGame, attribute_nongam

FORMATS = ("json", "csv", "table")
_SUBMEASURE_RE = re.compile(r"^submeasure\s+([A-Za-z_]\w*)\s*=\s*(.+)$")
_KEY_RE = re.compile(r"^([A-Za-z_]\w*)\s*=\s*(.*)$")
_ENGINE_KEYS = ("engine", "samples", "riemann_steps", "riemann_rule", "seed", "scope", "threads")
_RUN_KEYS = (
    "input", "timestep_column", "explicand", "reference", "attributes", "drill",
    "where", "measure", "timestep_prefix", "out", "format",
)


@dataclass(frozen=True)
class RunConfig:
    input: str
    timestep_column: str
    explicand: str
    references: tuple[str, ...]
    attributes: tuple[str, ...]
    drill: tuple[str, ...]
    submeasures: dict[str, str]
    measure: str
    where: str = ""
    timestep_prefix: int | None = None
    engine: EngineConfig = field(default_factory=EngineConfig)
    out: str | None = None
    format: str = "json"

    def __post_init__(self):
        if not self.references:
            raise ConfigError("at least one reference label is required")
        if self.explicand in self.references:
            raise ConfigError(f"explicand {self.explicand!r} is also listed as a reference")
        extra = [d for d in self.drill if d not in self.attributes]
        if extra:
            raise ConfigError(f"drill dimension(s) {extra} are not attribute columns")
        if not self.drill:
            raise ConfigError("at least one drill dimension is required")
        if not self.submeasures:
            raise ConfigError("no sub-measures declared")
        if self.format not in FORMATS:
            raise ConfigError(f"unknown format {self.format!r}; expected one of {FORMATS}")

    @property
    def expected_mode(self) -> bool:
        return len(self.references) > 1

    def spec(self) -> MeasureSpec:
        return MeasureSpec.from_text(self.measure, self.submeasures)

    def with_overrides(self, **overrides) -> RunConfig:
        engine_kw = {k: overrides.pop(k) for k in _ENGINE_KEYS if overrides.get(k) is not None}
        run_kw = {k: v for k, v in overrides.items() if v is not None}
        engine = replace(self.engine, **engine_kw) if engine_kw else self.engine
        return replace(self, engine=engine, **run_kw)

    def describe(self) -> dict:
        """JSON-ready echo of the settings that determine the result."""
        return {
            "input": Path(self.input).name,
            "timestep_column": self.timestep_column,
            "explicand": self.explicand,
            "references": list(self.references),
            "attributes": list(self.attributes),
            "drill": list(self.drill),
            "where": self.where,
            "submeasures": dict(self.submeasures),
            "measure": self.measure,
            "engine": self.engine.engine,
            "samples": self.engine.samples,
            "riemann_steps": self.engine.riemann_steps,
            "riemann_rule": self.engine.riemann_rule,
            "scope": self.engine.scope,
            "seed": self.engine.seed,
        }


def _value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config_text(text: str, base_dir: Path | str = ".") -> RunConfig:
    settings: dict = {}
    submeasures: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _SUBMEASURE_RE.match(line)
        if m:
            name, agg = m.group(1), m.group(2).strip()
            AggregatorKind.parse(agg)
            if name in submeasures:
                raise ConfigError(f"line {lineno}: sub-measure {name!r} declared twice")
            submeasures[name] = agg
            continue
        m = _KEY_RE.match(line)
        if not m:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = m.group(1), _value(m.group(2))
        if key not in _RUN_KEYS and key not in _ENGINE_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        settings[key] = value
    return build_config(settings, submeasures, base_dir)


def build_config(settings: Mapping, submeasures: Mapping[str, str], base_dir: Path | str = ".") -> RunConfig:
    required = ("input", "timestep_column", "explicand", "reference", "attributes", "drill", "measure")
    missing = [k for k in required if k not in settings]
    if missing:
        raise ConfigError(f"missing setting(s): {', '.join(missing)}")
    refs = settings["reference"]
    refs = (refs,) if isinstance(refs, str) else tuple(map(str, refs))
    path = Path(str(settings["input"]))
    if not path.is_absolute():
        path = Path(base_dir) / path
    engine = EngineConfig(**{k: settings[k] for k in _ENGINE_KEYS if k in settings})
    as_tuple = lambda v: (v,) if isinstance(v, str) else tuple(map(str, v))  # noqa: E731
    return RunConfig(
        input=str(path),
        timestep_column=str(settings["timestep_column"]),
        explicand=str(settings["explicand"]),
        references=refs,
        attributes=as_tuple(settings["attributes"]),
        drill=as_tuple(settings["drill"]),
        submeasures=dict(submeasures),
        measure=str(settings["measure"]),
        where=str(settings.get("where", "")),
        timestep_prefix=settings.get("timestep_prefix"),
        engine=engine,
        out=settings.get("out"),
        format=str(settings.get("format", "json")),
    )


def load_config(path: Path | str) -> RunConfig:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), path.parent)


# -- running --------------------------------------------------------------

def run_attribution(cfg: RunConfig) -> ContributionMatrix:
    """Load the records and attribute the change.  GAM engines are used when every
    aggregator is additive, otherwise raw records are re-aggregated."""
    spec = cfg.spec()
    columns = sorted({agg.column for agg in spec.aggregators})
    store = read_csv(cfg.input, cfg.timestep_column, cfg.attributes, columns, cfg.timestep_prefix)
    if len(store) == 0:
        raise ValidationError(f"no records in {cfg.input}")
    labels = set(store.timestep_labels())
    absent = [t for t in (cfg.explicand, *cfg.references) if t not in labels]
    if absent:
        raise ValidationError(f"time step(s) {absent} have no records")
    parent = CubePredicate.parse(cfg.where, cfg.attributes)
    part = partition_store(store, parent, cfg.drill, (cfg.explicand, *cfg.references))
    if spec.additive:
        xt = build_observation_matrix(store, part, spec, cfg.explicand)
        xrs = [build_observation_matrix(store, part, spec, r) for r in cfg.references]
        ref = ReferenceSpec.expected(xrs) if cfg.expected_mode else ReferenceSpec.baseline(xrs[0])
        return attribute(spec, xt, ref, cfg.engine)
    game = NonGamGame(store, part, spec, cfg.explicand, cfg.references[0])
    if cfg.expected_mode:
        ref = ReferenceSpec.expected(cfg.references)
    else:
        ref = ReferenceSpec.baseline(cfg.references[0])
    return attribute_nongam(game, cfg.engine, ref)


# -- reports ----------------------------------------------------------------

def attribution_report(cfg: RunConfig, c: ContributionMatrix) -> dict:
    return {"kind": "attribution", "seed": cfg.engine.seed, "config": cfg.describe(), "contribution": c.to_dict()}


def rank_report(cfg: RunConfig, c: ContributionMatrix) -> dict:
    return {
        "kind": "rank",
        "seed": cfg.engine.seed,
        "config": cfg.describe(),
        "ranking": [{"subcube": label, "total": total} for label, total in rank_subcubes(c)],
    }


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def contribution_csv(c: ContributionMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subcube", *c.cols, "total"])
    for label, row, total in zip(c.rows, c.values.tolist(), c.row_totals.tolist()):
        w.writerow([label, *map(repr, row), repr(total)])
    w.writerow(["*", *map(repr, c.col_totals.tolist()), repr(c.total)])
    return buf.getvalue()


def render_attribution(cfg: RunConfig, c: ContributionMatrix, fmt: str) -> str:
    from .experiments import contribution_table

    if fmt == "json":
        return dumps_json(attribution_report(cfg, c))
    if fmt == "csv":
        return contribution_csv(c)
    head = f"method={c.method} delta_y={c.delta_y:+.6g} residual={c.residual:.3g} seed={cfg.engine.seed}"
    return head + "\n" + contribution_table(c, as_percent=False) + "\n"


def render_rank(cfg: RunConfig, c: ContributionMatrix, fmt: str) -> str:
    ranking = rank_subcubes(c)
    if fmt == "json":
        return dumps_json(rank_report(cfg, c))
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank", "subcube", "total"])
        for i, (label, total) in enumerate(ranking, 1):
            w.writerow([i, label, repr(total)])
        return buf.getvalue()
    width = max([len(label) for label, _ in ranking] + [7])
    lines = [f"{'rank':>4}  {'subcube':<{width}}  total"]
    lines += [f"{i:>4}  {label:<{width}}  {total:+.6g}" for i, (label, total) in enumerate(ranking, 1)]
    return "\n".join(lines) + "\n"


def ranking_from_report(report: Mapping) -> list[tuple[str, float]]:
    """Re-derive the sub-cube ranking from a saved attribution report."""
    return rank_subcubes(ContributionMatrix.from_dict(report["contribution"]))

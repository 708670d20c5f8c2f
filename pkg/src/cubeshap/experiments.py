"""Seeded simulation harnesses and the admissions case study.

The linear harness measures MASE against reference sample size.  The
distinct-count harness measures how often the faulty pages rank on top.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .cube import AggregatorKind, MeasureColumn, RecordStore, build_observation_matrix, partition_store
from .errors import ZeroDenominator
from .expr import MeasureSpec
from .gam import EngineConfig, ReferenceSpec, attribute
from .games import rng_for
from .model import ContributionMatrix, CubePredicate, ObservationMatrix, partition
from .nongam import NonGamGame, attribute_nongam


@dataclass(frozen=True)
class MetricReport:
    name: str
    x_label: str
    x: tuple[float, ...]
    mean: tuple[float, ...]
    stderr: tuple[float, ...]
    repetitions: int
    seed: int
    config: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, name, x_label, x, samples, seed, config) -> MetricReport:
        samples = [np.asarray(s, dtype=float) for s in samples]
        reps = len(samples[0])
        mean = tuple(float(s.mean()) for s in samples)
        err = tuple(float(s.std(ddof=1) / np.sqrt(len(s))) if len(s) > 1 else 0.0 for s in samples)
        return cls(name, x_label, tuple(x), mean, err, reps, seed, config)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_csv(self) -> str:
        lines = ["x,mean,stderr"]
        lines += [f"{float(x)!r},{m!r},{e!r}" for x, m, e in zip(self.x, self.mean, self.stderr)]
        return "\n".join(lines) + "\n"

    def summary(self, percent: bool = False) -> str:
        scale, unit = (100.0, "%") if percent else (1.0, "")
        head = f"{self.x_label:>10}  {'mean' + unit:>12}  {'stderr' + unit:>12}"
        rows = [f"{x:>10g}  {m * scale:>12.4f}  {e * scale:>12.4f}" for x, m, e in zip(self.x, self.mean, self.stderr)]
        return "\n".join([f"{self.name} (repetitions={self.repetitions}, seed={self.seed})", head, *rows])


def mase(c_hat: ContributionMatrix | np.ndarray, truth: np.ndarray) -> float:
    """Total absolute attribution error scaled by total absolute truth."""
    est = c_hat.values if isinstance(c_hat, ContributionMatrix) else np.asarray(c_hat, dtype=float)
    truth = np.asarray(truth, dtype=float)
    denom = np.abs(truth).sum()
    if denom == 0:
        raise ZeroDenominator("ground truth has no nonzero contribution")
    return float(np.abs(est - truth).sum() / denom)


# -- linear simulation --------------------------------------------------------

@dataclass(frozen=True)
class LinearSimConfig:
    q_choices: tuple[int, ...] = (1, 2, 3, 4, 5)
    p_range: tuple[int, int] = (10, 100)
    mean_high: float = 10.0
    fault_prob: float = 0.5
    fault_high: float = 10.0
    noise_sd: float = 1.0
    sample_sizes: tuple[int, ...] = tuple(range(100, 1001, 100))
    repetitions: int = 100
    seed: int = 42
    threads: int = 1


def linear_sim_run(config: LinearSimConfig, n_refs: int, rng: np.random.Generator) -> tuple[float, ContributionMatrix, float]:
    """One repetition; returns (MASE, contribution matrix, expected change)."""
    q = int(rng.choice(config.q_choices))
    p = int(rng.integers(config.p_range[0], config.p_range[1], endpoint=True))
    mu = rng.uniform(0, config.mean_high, size=(p, q))
    beta = rng.random((p, q)) < config.fault_prob
    while not beta.any():
        beta = rng.random((p, q)) < config.fault_prob
    lam = rng.uniform(0, config.fault_high, size=(p, q))
    truth = beta * lam
    refs = mu + config.noise_sd * rng.standard_normal((n_refs, p, q))
    rows = tuple(f"c{u:03d}" for u in range(p))
    cols = tuple(f"m{v + 1}" for v in range(q))
    spec = MeasureSpec.from_text(" + ".join(cols), cols)
    xt = ObservationMatrix(rows, cols, mu + truth, "anomaly")
    ref = ReferenceSpec.expected(ObservationMatrix(rows, cols, r, f"ref{k}") for k, r in enumerate(refs))
    c = attribute(spec, xt, ref, EngineConfig(engine="linear"))
    expected_change = float((mu + truth).sum() - refs.sum(axis=(1, 2)).mean())
    return mase(c, truth), c, expected_change


def run_linear_sim(config: LinearSimConfig = LinearSimConfig()) -> MetricReport:
    def one(args):
        i, n_refs, rep = args
        return linear_sim_run(config, n_refs, rng_for(config.seed, i, rep))[0]

    jobs = [(i, n, rep) for i, n in enumerate(config.sample_sizes) for rep in range(config.repetitions)]
    results = _map(one, jobs, config.threads)
    per_n = [results[i * config.repetitions:(i + 1) * config.repetitions] for i in range(len(config.sample_sizes))]
    return MetricReport.from_samples("linear-mase", "N", config.sample_sizes, per_n, config.seed, asdict(config))


# -- distinct-count simulation ------------------------------------------------

@dataclass(frozen=True)
class DauSimConfig:
    pages: int = 5
    users: int = 10000
    base_prob: float = 0.05
    decays: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    faulty_choices: tuple[int, ...] = (1, 2, 3)
    reference_samples: int = 10
    repetitions: int = 20
    seed: int = 42
    threads: int = 1


def page_labels(n: int) -> tuple[str, ...]:
    width = len(str(n))
    return tuple(f"p{i + 1:0{width}d}" for i in range(n))


def _views_to_columns(views: np.ndarray, label: str, pages: tuple[str, ...]):
    users, cols = np.nonzero(views)
    return np.full(len(users), label), np.asarray(pages)[cols], users


def top_contributors(c: ContributionMatrix, k: int) -> list[str]:
    """The ``k`` sub-cubes with the most negative totals; ties by label."""
    ranked = sorted(zip(c.rows, c.row_totals.tolist()), key=lambda item: (item[1], item[0]))
    return [label for label, _ in ranked[:k]]


def dau_sim_run(config: DauSimConfig, decay: float, rng: np.random.Generator, n_faulty: int | None = None):
    """One repetition; returns (accuracy, contribution matrix, faulty pages).

    Faulty pages keep a fraction ``1 - decay`` of their view probability.
    """
    pages = page_labels(config.pages)
    w_f = int(rng.choice(config.faulty_choices)) if n_faulty is None else n_faulty
    faulty = sorted(rng.choice(config.pages, size=w_f, replace=False).tolist())
    prob = np.full((config.users, config.pages), config.base_prob)
    prob_f = prob.copy()
    prob_f[:, faulty] *= 1.0 - decay
    parts = [_views_to_columns(rng.random(prob.shape) < prob_f, "target", pages)]
    ref_labels = [f"ref{k:02d}" for k in range(config.reference_samples)]
    for label in ref_labels:
        parts.append(_views_to_columns(rng.random(prob.shape) < prob, label, pages))
    ts, page, user = (np.concatenate(cols) for cols in zip(*parts))
    store = RecordStore(ts, {"page": page}, {"user_id": MeasureColumn.from_codes("user_id", user)})
    part = partition(CubePredicate.wildcard(["page"]), ["page"], {"page": pages})
    spec = MeasureSpec.from_text("dau", {"dau": AggregatorKind("count_distinct", "user_id")})
    game = NonGamGame(store, part, spec, "target", ref_labels[0])
    c = attribute_nongam(game, EngineConfig(engine="exact"), ReferenceSpec.expected(ref_labels))
    truth = {pages[i] for i in faulty}
    hits = len(truth & set(top_contributors(c, w_f)))
    return hits / w_f, c, sorted(truth)


def run_dau_sim(config: DauSimConfig = DauSimConfig()) -> MetricReport:
    def one(args):
        i, decay, rep = args
        return dau_sim_run(config, decay, rng_for(config.seed, i, rep))[0]

    jobs = [(i, d, rep) for i, d in enumerate(config.decays) for rep in range(config.repetitions)]
    results = _map(one, jobs, config.threads)
    per = [results[i * config.repetitions:(i + 1) * config.repetitions] for i in range(len(config.decays))]
    return MetricReport.from_samples("dau-accuracy", "lambda", config.decays, per, config.seed, asdict(config))


# -- Berkeley admissions ------------------------------------------------------

BERKELEY = {
    # department: (male applicants, male admitted, female applicants, female admitted)
    "A": (825, 512, 108, 89),
    "B": (560, 353, 25, 17),
    "C": (325, 120, 593, 201),
    "D": (417, 138, 375, 131),
    "E": (191, 53, 393, 94),
    "F": (373, 22, 341, 25),
}


def berkeley_store() -> RecordStore:
    """One pre-aggregated record per (department, gender); gender is the
    time-step axis."""
    records = []
    for dept, (m_app, m_adm, f_app, f_adm) in BERKELEY.items():
        records.append({"gender": "male", "department": dept, "applicants": m_app, "admitted": m_adm})
        records.append({"gender": "female", "department": dept, "applicants": f_app, "admitted": f_adm})
    return RecordStore.from_records(records, "gender", ["department"], ["applicants", "admitted"])


def berkeley_spec() -> MeasureSpec:
    return MeasureSpec.from_text(
        "admitted / applicants", {"applicants": "sum(applicants)", "admitted": "sum(admitted)"}
    )


def run_berkeley(config: EngineConfig = EngineConfig(engine="aumann-ratio-closed")) -> ContributionMatrix:
    store = berkeley_store()
    spec = berkeley_spec()
    part = partition_store(store, CubePredicate.wildcard(["department"]), ["department"])
    xt = build_observation_matrix(store, part, spec, "female")
    xr = build_observation_matrix(store, part, spec, "male")
    return attribute(spec, xt, xr, config)


def percent(value: float, digits: int = 2) -> str:
    """Signed percentage, rounded half away from zero."""
    q = Decimal(repr(float(value) * 100)).quantize(Decimal(1).scaleb(-digits), rounding=ROUND_HALF_UP)
    return f"{'+' if q > 0 else ''}{q}%"


def contribution_table(c: ContributionMatrix, as_percent: bool = True, order=None) -> str:
    """Aligned text table with row and column totals."""
    fmt = percent if as_percent else (lambda v: f"{v + 0.0:+.6g}")
    rows = list(range(len(c.rows))) if order is None else [c.rows.index(r) for r in order]
    header = ["", *c.cols, "Total"]
    body = [[c.rows[u], *(fmt(v) for v in c.values[u]), fmt(c.row_totals[u])] for u in rows]
    body.append(["Total", *(fmt(v) for v in c.col_totals), fmt(c.total)])
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in [header, *body]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    lines.insert(len(lines) - 1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _map(func, jobs, threads):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(func, jobs))
    return [func(j) for j in jobs]

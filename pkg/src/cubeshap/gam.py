"""Contribution matrices for generalized additive measures.

The measure is a function of the column sums of a p x q observation matrix,
so every engine works on pre-aggregated explicand/reference matrices.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import games
from .errors import (
    DivisionByZero,
    EngineMismatch,
    PathSingularity,
    UndefinedMeasure,
    ValidationError,
)
from .expr import DIFFERENTIABLE, LINEAR, OPAQUE, RATIO, BinOp, Div, Expr, MeasureSpec, Neg, evaluate
from .model import CoalitionMask, ContributionMatrix, ObservationMatrix, validate_pair

ENGINES = ("auto", "exact", "permutation", "kernel", "aumann-riemann", "aumann-ratio-closed", "linear")
SCOPES = ("cells", "rows-only", "cols-only")
RIEMANN_RULES = ("midpoint", "right")
RATIO_DEGENERACY_EPS = 1e-9
DEFAULT_PERMUTATIONS = 2000
ALL = "*"


@dataclass(frozen=True)
class EngineConfig:
    engine: str = "auto"
    samples: int | None = None
    riemann_steps: int = 1000
    riemann_rule: str = "midpoint"
    seed: int = 42
    scope: str = "cells"
    threads: int = 1

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ValidationError(f"unknown engine {self.engine!r}; expected one of {ENGINES}")
        if self.scope not in SCOPES:
            raise ValidationError(f"unknown scope {self.scope!r}; expected one of {SCOPES}")
        if self.samples is not None and self.samples < 1:
            raise ValidationError("samples must be >= 1")
        if self.riemann_rule not in RIEMANN_RULES:
            raise ValidationError(f"unknown riemann rule {self.riemann_rule!r}; expected one of {RIEMANN_RULES}")
        if self.riemann_steps < 1:
            raise ValidationError("riemann_steps must be >= 1")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")


@dataclass(frozen=True)
class ReferenceSpec:
    """A single baseline reference or a sample of references to average over.

    Items are observation matrices for GAM attribution or time-step labels
    for raw-record attribution.
    """

    mode: str
    references: tuple

    def __post_init__(self):
        if self.mode not in ("baseline", "expected"):
            raise ValidationError(f"unknown reference mode {self.mode!r}")
        object.__setattr__(self, "references", tuple(self.references))
        if not self.references:
            raise ValidationError("at least one reference is required")
        if self.mode == "baseline" and len(self.references) != 1:
            raise ValidationError("baseline mode takes exactly one reference")

    @classmethod
    def baseline(cls, reference) -> ReferenceSpec:
        return cls("baseline", (reference,))

    @classmethod
    def expected(cls, references) -> ReferenceSpec:
        return cls("expected", tuple(references))


class GamGame:
    """Coalition game over the cells of aligned explicand/reference matrices.

    A coalition mask picks explicand values for its cells and reference
    values elsewhere; its worth is the measure change relative to the
    reference.
    """

    def __init__(self, xt: ObservationMatrix, xr: ObservationMatrix, spec: MeasureSpec):
        if set(xt.cols) != set(spec.submeasures):
            raise ValidationError(f"matrix columns {xt.cols} do not match sub-measures {spec.submeasures}")
        xt, xr = validate_pair(xt, xr)
        if xt.cols != spec.submeasures:
            xt, xr = xt.reindex(xt.rows, spec.submeasures), xr.reindex(xr.rows, spec.submeasures)
        self.xt, self.xr, self.spec = xt, xr, spec
        self.g_ref = self.g(xr.values)
        self.delta_y = self.g(xt.values) - self.g_ref

    def g(self, x: np.ndarray) -> float:
        return float(self.spec(np.asarray(x).sum(axis=0)))

    @property
    def shape(self):
        return self.xt.shape

    def players(self, scope: str = "cells") -> _GamPlayers:
        dx = self.xt.values - self.xr.values
        p, q = dx.shape
        if scope == "cells":
            deltas = np.zeros((p * q, q))
            deltas[np.arange(p * q), np.tile(np.arange(q), p)] = dx.ravel()
        elif scope == "rows-only":
            deltas = dx.copy()
        elif scope == "cols-only":
            deltas = np.diag(dx.sum(axis=0))
        else:
            raise ValidationError(f"unknown scope {scope!r}")
        return _GamPlayers(self, self.xr.column_sums(), deltas)


class _GamPlayers:
    """Batched value function over players; each player shifts the column
    sums by a fixed vector when present."""

    def __init__(self, game: GamGame, base: np.ndarray, deltas: np.ndarray):
        self.game = game
        self.base = base
        self.deltas = deltas
        self.n_players = len(deltas)

    def values(self, masks):
        masks = np.asarray(masks, dtype=bool)
        sums = np.broadcast_to(self.base, (len(masks), len(self.base))).copy()
        # sequential accumulation keeps absent/zero-delta players bit-exact
        for i in range(self.n_players):
            sums += masks[:, i:i + 1] * self.deltas[i]
        worth = np.broadcast_to(np.asarray(self.game.spec(sums), dtype=float), (len(masks),))
        return worth - self.game.g_ref


def set_function(game: GamGame, z: CoalitionMask | np.ndarray) -> float:
    """Worth of coalition ``z``: g(Xt*Z + Xr*(1-Z)) - g(Xr)."""
    z = z.values if isinstance(z, CoalitionMask) else np.asarray(z, dtype=bool)
    if z.shape != game.shape:
        raise ValidationError(f"mask shape {z.shape} does not match game shape {game.shape}")
    mixed = np.where(z, game.xt.values, game.xr.values)
    return game.g(mixed) - game.g_ref


def _scoped_matrix(game: GamGame, phi: np.ndarray, scope: str, method: str) -> ContributionMatrix:
    p, q = game.shape
    if scope == "cells":
        return ContributionMatrix(game.xt.rows, game.xt.cols, phi.reshape(p, q), game.delta_y, method)
    if scope == "rows-only":
        return ContributionMatrix(game.xt.rows, (ALL,), phi.reshape(p, 1), game.delta_y, method)
    return ContributionMatrix((ALL,), game.xt.cols, phi.reshape(1, q), game.delta_y, method)


def shapley_exact(game: GamGame, config: EngineConfig = EngineConfig()) -> ContributionMatrix:
    phi = games.exact_shapley(game.players(config.scope))
    return _scoped_matrix(game, phi, config.scope, "exact")


def shapley_permutation(game: GamGame, config: EngineConfig = EngineConfig(), key: Sequence[int] = ()) -> ContributionMatrix:
    k = config.samples or DEFAULT_PERMUTATIONS
    phi = games.permutation_shapley(game.players(config.scope), k, config.seed, key)
    return _scoped_matrix(game, phi, config.scope, "permutation")


def shapley_kernel(game: GamGame, config: EngineConfig = EngineConfig(), key: Sequence[int] = ()) -> ContributionMatrix:
    players = game.players(config.scope)
    k = config.samples or games.default_kernel_samples(players.n_players)
    phi = games.kernel_shapley(players, k, config.seed, key)
    return _scoped_matrix(game, phi, config.scope, "kernel")


def attribute_linear(xt: ObservationMatrix, xr: ObservationMatrix, w0: float, w) -> ContributionMatrix:
    """c_uv = w_v * (xt_uv - xr_uv)."""
    xt, xr = validate_pair(xt, xr)
    w = np.asarray(w, dtype=float)
    if w.shape != (xt.shape[1],):
        raise ValidationError(f"expected {xt.shape[1]} weights, got {w.shape}")
    values = w * (xt.values - xr.values)
    delta_y = (w0 + xt.column_sums() @ w) - (w0 + xr.column_sums() @ w)
    return ContributionMatrix(xt.rows, xt.cols, values, delta_y, "linear")


def riemann_nodes(m: int, rule: str = "midpoint") -> np.ndarray:
    """Quadrature nodes on (0, 1]: cell midpoints or right endpoints."""
    if rule == "midpoint":
        return (np.arange(m) + 0.5) / m
    if rule == "right":
        return np.arange(1, m + 1) / m
    raise ValidationError(f"unknown riemann rule {rule!r}")


def _check_denominators(expr: Expr, env_at, alphas: np.ndarray) -> None:
    """Raise PathSingularity where any divisor vanishes or changes sign
    between consecutive nodes (endpoints included)."""
    grid = np.concatenate([[0.0], alphas, [1.0]])
    env = env_at(grid)
    for den in _divisors(expr):
        try:
            vals = np.broadcast_to(np.asarray(evaluate(den, env), dtype=float), grid.shape)
        except DivisionByZero as exc:
            raise PathSingularity("measure undefined on the path", float(grid[exc.index or 0])) from None
        zero = np.flatnonzero(vals == 0)
        flips = np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)
        if len(zero) or len(flips):
            if len(flips) and (not len(zero) or flips[0] < zero[0]):
                i = flips[0]
                alpha = grid[i] - vals[i] * (grid[i + 1] - grid[i]) / (vals[i + 1] - vals[i])
            else:
                alpha = grid[zero[0]]
            raise PathSingularity(f"a divisor of the measure vanishes on the path at alpha={alpha:g}", float(alpha))


def _divisors(expr: Expr):
    if isinstance(expr, BinOp):
        if isinstance(expr, Div):
            yield expr.right
        yield from _divisors(expr.left)
        yield from _divisors(expr.right)
    elif isinstance(expr, Neg):
        yield from _divisors(expr.operand)


def attribute_aumann_riemann(game: GamGame, m: int = 1000, rule: str = "midpoint") -> ContributionMatrix:
    """Riemann sum of the gradient along the straight path from reference
    to explicand column sums.  ``rule="right"`` uses the right endpoint of
    each of the m cells; the default midpoint rule has O(1/m**2) error."""
    if m < 1:
        raise ValidationError("riemann steps must be >= 1")
    spec = game.spec
    if spec.expr is None:
        raise EngineMismatch("Riemann integration needs a symbolic (non-opaque) measure")
    st, sr = game.xt.column_sums(), game.xr.column_sums()
    alphas = riemann_nodes(m, rule)

    def env_at(a):
        path = sr[None, :] + a[:, None] * (st - sr)[None, :]
        return {name: path[:, v] for v, name in enumerate(spec.submeasures)}

    _check_denominators(spec.expr, env_at, alphas)
    env = env_at(alphas)
    mean_grad = np.empty(spec.q)
    for v, dexpr in enumerate(spec.gradient_exprs()):
        try:
            grad = evaluate(dexpr, env)
        except DivisionByZero as exc:
            alpha = alphas[exc.index] if exc.index is not None else float("nan")
            raise PathSingularity(f"measure gradient undefined on the path at alpha={alpha:g}", alpha) from None
        mean_grad[v] = np.mean(np.broadcast_to(grad, alphas.shape))
    values = (game.xt.values - game.xr.values) * mean_grad
    return ContributionMatrix(game.xt.rows, game.xt.cols, values, game.delta_y, "aumann-riemann")


def _log1p_over(e: float) -> float:
    """log(1+e)/e, continuous at 0."""
    return 1.0 if e == 0 else math.log1p(e) / e


def _ratio_curvature(e: float) -> float:
    """(log(1+e) - e/(1+e)) / e**2 without cancellation for small e."""
    if abs(e) < 1e-3:
        return sum((-1) ** k * (k - 1) / k * e ** (k - 2) for k in range(2, 10))
    return (math.log1p(e) - e / (1 + e)) / (e * e)


def ratio_coefficients(x1t: float, x2t: float, x1r: float, x2r: float) -> tuple[float, float]:
    """Path-averaged partial derivatives of m1/m2 along the straight line.

    Returns ``(a, b)`` so that numerator cells get ``a * dx`` and denominator
    cells ``b * dx``.
    """
    if x2t == 0 or x2r == 0:
        raise UndefinedMeasure("ratio denominator sums to zero; the measure is not defined")
    if (x2t > 0) != (x2r > 0):
        raise UndefinedMeasure("ratio denominator changes sign along the path")
    delta = x2t - x2r
    if abs(delta) <= RATIO_DEGENERACY_EPS * max(abs(x2t), abs(x2r)):
        # limits of the closed form; exactly complete for any x2t ~ x2r
        return 0.5 * (1 / x2r + 1 / x2t), -(x1t + x1r) / (2 * x2r * x2t)
    e = delta / x2r
    a = _log1p_over(e) / x2r
    b = -x1r / (x2r * x2t) - (x1t - x1r) / (x2r * x2r) * _ratio_curvature(e)
    return a, b


def attribute_aumann_ratio(
    xt: ObservationMatrix,
    xr: ObservationMatrix,
    numerator: int | str = 0,
    denominator: int | str = 1,
) -> ContributionMatrix:
    """Closed-form Aumann-Shapley contributions for m_num / m_den."""
    xt, xr = validate_pair(xt, xr)
    num = xt.cols.index(numerator) if isinstance(numerator, str) else numerator
    den = xt.cols.index(denominator) if isinstance(denominator, str) else denominator
    st, sr = xt.column_sums(), xr.column_sums()
    a, b = ratio_coefficients(st[num], st[den], sr[num], sr[den])
    dx = xt.values - xr.values
    values = np.zeros_like(dx)
    values[:, num] = dx[:, num] * a
    values[:, den] = dx[:, den] * b
    delta_y = st[num] / st[den] - sr[num] / sr[den]
    return ContributionMatrix(xt.rows, xt.cols, values, delta_y, "aumann-ratio-closed")


def route_engine(class_tag: str, n_players: int) -> str:
    """Engine picked for ``engine="auto"``; depends only on structure."""
    if class_tag == LINEAR:
        return "linear"
    if class_tag == RATIO:
        return "aumann-ratio-closed"
    if class_tag == DIFFERENTIABLE:
        return "aumann-riemann"
    return "exact" if n_players <= games.MAX_EXACT_PLAYERS else "permutation"


_COMPATIBLE = {
    "linear": {LINEAR},
    "aumann-ratio-closed": {RATIO},
    "aumann-riemann": {LINEAR, RATIO, DIFFERENTIABLE},
    "exact": {LINEAR, RATIO, DIFFERENTIABLE, OPAQUE},
    "permutation": {LINEAR, RATIO, DIFFERENTIABLE, OPAQUE},
    "kernel": {LINEAR, RATIO, DIFFERENTIABLE, OPAQUE},
}


def resolve_engine(spec: MeasureSpec, config: EngineConfig, n_players: int) -> str:
    engine = config.engine
    if engine == "auto":
        engine = route_engine(spec.class_tag, n_players)
    if spec.class_tag not in _COMPATIBLE[engine]:
        raise EngineMismatch(f"engine {engine!r} cannot attribute a {spec.class_tag} measure")
    return engine


def _apply_scope(c: ContributionMatrix, scope: str) -> ContributionMatrix:
    if scope == "cells":
        return c
    if scope == "rows-only":
        return ContributionMatrix(c.rows, (ALL,), c.row_totals[:, None], c.delta_y, c.method)
    return ContributionMatrix((ALL,), c.cols, c.col_totals[None, :], c.delta_y, c.method)


def _run_one(engine: str, spec: MeasureSpec, xt, xr, config: EngineConfig, key) -> ContributionMatrix:
    if engine == "linear":
        w0, w = spec.linear_weights()
        xt_, xr_ = _spec_order(xt, xr, spec)
        return _apply_scope(attribute_linear(xt_, xr_, w0, w), config.scope)
    if engine == "aumann-ratio-closed":
        num, den = spec.ratio_columns()
        xt_, xr_ = _spec_order(xt, xr, spec)
        return _apply_scope(attribute_aumann_ratio(xt_, xr_, num, den), config.scope)
    game = GamGame(xt, xr, spec)
    if engine == "aumann-riemann":
        return _apply_scope(attribute_aumann_riemann(game, config.riemann_steps, config.riemann_rule), config.scope)
    if engine == "exact":
        return shapley_exact(game, config)
    if engine == "permutation":
        return shapley_permutation(game, config, key)
    return shapley_kernel(game, config, key)


def _spec_order(xt, xr, spec):
    xt, xr = validate_pair(xt, xr)
    if set(xt.cols) != set(spec.submeasures):
        raise ValidationError(f"matrix columns {xt.cols} do not match sub-measures {spec.submeasures}")
    if xt.cols != spec.submeasures:
        xt, xr = xt.reindex(xt.rows, spec.submeasures), xr.reindex(xr.rows, spec.submeasures)
    return xt, xr


def _align_all(xt: ObservationMatrix, refs: Sequence[ObservationMatrix]):
    rows = list(xt.rows)
    seen = set(rows)
    for r in refs:
        if set(r.cols) != set(xt.cols):
            validate_pair(xt, r)  # raises ColumnMismatch
        for label in r.rows:
            if label not in seen:
                seen.add(label)
                rows.append(label)
    if len(rows) == len(xt.rows) and all(r.rows == xt.rows and r.cols == xt.cols for r in refs):
        return xt, list(refs)
    return xt.reindex(rows, xt.cols), [r.reindex(rows, xt.cols) for r in refs]


def _linear_expected(spec, xt, refs, scope) -> ContributionMatrix:
    """Batched form of averaging per-reference linear attributions."""
    w0, w = spec.linear_weights()
    xt = _spec_order(xt, xt, spec)[0]
    stack = np.stack([_spec_order(xt, r, spec)[1].values for r in refs])
    per_ref = w * (xt.values[None] - stack)
    deltas = (w0 + xt.column_sums() @ w) - (w0 + stack.sum(axis=1) @ w)
    c = ContributionMatrix(xt.rows, xt.cols, per_ref.mean(axis=0), float(deltas.mean()), "linear")
    return _apply_scope(c, scope)


def average(results: Sequence[ContributionMatrix], method: str | None = None) -> ContributionMatrix:
    """Element-wise mean of attributions against several references."""
    first = results[0]
    if len(results) == 1:
        return first
    values = np.mean([r.values for r in results], axis=0)
    delta_y = float(np.mean([r.delta_y for r in results]))
    return ContributionMatrix(first.rows, first.cols, values, delta_y, method or first.method)


def attribute(
    spec: MeasureSpec,
    xt: ObservationMatrix,
    ref: ReferenceSpec | ObservationMatrix,
    config: EngineConfig = EngineConfig(),
) -> ContributionMatrix:
    """Attribute g(Xt) - g(reference) with the configured engine.

    Expected mode averages the per-reference attributions element-wise;
    its residual is measured against the mean measure change.
    """
    if isinstance(ref, ObservationMatrix):
        ref = ReferenceSpec.baseline(ref)
    refs = list(ref.references)
    if not all(isinstance(r, ObservationMatrix) for r in refs):
        raise ValidationError("GAM attribution needs observation-matrix references")
    xt, refs = _align_all(xt, refs)
    p, q = xt.shape
    n_players = {"cells": p * q, "rows-only": p, "cols-only": q}[config.scope]
    engine = resolve_engine(spec, config, n_players)

    if engine == "linear" and len(refs) > 1:
        return _linear_expected(spec, xt, refs, config.scope)

    def run(item):
        idx, xr = item
        return _run_one(engine, spec, xt, xr, config, (idx,))

    items = list(enumerate(refs))
    if config.threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(run, items))
    else:
        results = [run(item) for item in items]
    return average(results)

"""Derived-measure expressions: parsing, evaluation, symbolic partial
derivatives and structural classification.

Grammar: identifiers, decimal literals, ``+ - * /``, unary minus and
parentheses with the usual precedence.  ``avg(col)`` is rewritten at parse
time to ``sum_col / count_col``.  The Python tokenizer/parser (``ast``) does
the lexing; anything outside the grammar is rejected.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .cube import AggregatorKind
from .errors import DivisionByZero, MeasureSyntaxError, UnknownSubMeasure, ValidationError

LINEAR = "linear"
RATIO = "ratio"
DIFFERENTIABLE = "differentiable"
OPAQUE = "opaque"


class Expr:
    """Base class for expression nodes."""

    precedence = 4

    def __str__(self) -> str:
        return to_text(self)

    def refs(self) -> set[str]:
        return set()


@dataclass(frozen=True, repr=False)
class Num(Expr):
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))

    def __repr__(self):
        return f"Num({self.value!r})"


@dataclass(frozen=True, repr=False)
class Ref(Expr):
    name: str

    def refs(self):
        return {self.name}

    def __repr__(self):
        return f"Ref({self.name})"


@dataclass(frozen=True, repr=False)
class Neg(Expr):
    operand: Expr
    precedence = 3

    def refs(self):
        return self.operand.refs()

    def __repr__(self):
        return f"Neg({self.operand!r})"


@dataclass(frozen=True, repr=False)
class BinOp(Expr):
    left: Expr
    right: Expr
    symbol = "?"

    def refs(self):
        return self.left.refs() | self.right.refs()

    def __repr__(self):
        return f"{type(self).__name__}({self.left!r}, {self.right!r})"


class Add(BinOp):
    symbol, precedence = "+", 1


class Sub(BinOp):
    symbol, precedence = "-", 1


class Mul(BinOp):
    symbol, precedence = "*", 2


class Div(BinOp):
    symbol, precedence = "/", 2


# -- parsing ------------------------------------------------------------------

_BINOPS = {ast.Add: Add, ast.Sub: Sub, ast.Mult: Mul, ast.Div: Div}


class _Converter:
    def __init__(self, text: str):
        self.text = text
        self.avg_columns: list[str] = []

    def fail(self, node, message):
        raise MeasureSyntaxError(message, self.text, getattr(node, "col_offset", 0))

    def convert(self, node) -> Expr:
        if isinstance(node, ast.Expression):
            return self.convert(node.body)
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                self.fail(node, f"unsupported literal {node.value!r}")
            return Num(node.value)
        if isinstance(node, ast.Name):
            return Ref(node.id)
        if isinstance(node, ast.UnaryOp):
            if isinstance(node.op, ast.USub):
                return Neg(self.convert(node.operand))
            if isinstance(node.op, ast.UAdd):
                return self.convert(node.operand)
            self.fail(node, "unsupported unary operator")
        if isinstance(node, ast.BinOp):
            op = _BINOPS.get(type(node.op))
            if op is None:
                self.fail(node, f"unsupported operator {type(node.op).__name__}")
            return op(self.convert(node.left), self.convert(node.right))
        if isinstance(node, ast.Call):
            if (
                isinstance(node.func, ast.Name)
                and node.func.id == "avg"
                and len(node.args) == 1
                and not node.keywords
                and isinstance(node.args[0], ast.Name)
            ):
                col = node.args[0].id
                if col not in self.avg_columns:
                    self.avg_columns.append(col)
                return Div(Ref(f"sum_{col}"), Ref(f"count_{col}"))
            self.fail(node, "only avg(<column>) calls are supported")
        self.fail(node, f"unsupported syntax {type(node).__name__}")


def _parse(text: str) -> tuple[Expr, list[str]]:
    if not text or not text.strip():
        raise MeasureSyntaxError("empty measure expression", text or "", 0)
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise MeasureSyntaxError(exc.msg or "invalid syntax", text, max((exc.offset or 1) - 1, 0)) from None
    conv = _Converter(text)
    return conv.convert(tree), conv.avg_columns


def avg_declarations(column: str) -> dict[str, AggregatorKind]:
    """Sub-measures introduced by ``avg(column)``."""
    return {
        f"sum_{column}": AggregatorKind("sum", column),
        f"count_{column}": AggregatorKind("count_nonnull", column),
    }


def parse_measure(text: str, declared: Iterable[str]) -> Expr:
    """Parse ``text``; every identifier must be in ``declared`` (names created
    by ``avg(.)`` rewriting are exempt)."""
    expr, avg_cols = _parse(text)
    allowed = set(declared)
    for col in avg_cols:
        allowed |= set(avg_declarations(col))
    unknown = sorted(expr.refs() - allowed)
    if unknown:
        raise UnknownSubMeasure(f"undeclared sub-measure(s): {', '.join(unknown)}")
    return expr


def to_text(expr: Expr) -> str:
    """Render with the minimum parentheses needed to re-parse to the same tree."""
    if isinstance(expr, Num):
        v = expr.value
        text = str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)
        return text if v >= 0 else f"({text})"
    if isinstance(expr, Ref):
        return expr.name
    if isinstance(expr, Neg):
        inner = to_text(expr.operand)
        if expr.operand.precedence < Neg.precedence:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(expr, BinOp):
        left, right = to_text(expr.left), to_text(expr.right)
        if expr.left.precedence < expr.precedence:
            left = f"({left})"
        if expr.right.precedence <= expr.precedence:
            right = f"({right})"
        return f"{left} {expr.symbol} {right}"
    raise TypeError(f"not an expression: {expr!r}")


# -- evaluation ---------------------------------------------------------------

def _divide(num, den):
    if np.ndim(den) == 0 and np.ndim(num) == 0:
        if den == 0:
            raise DivisionByZero("denominator evaluates to zero")
        return num / den
    den = np.asarray(den, dtype=float)
    zero = den == 0
    if zero.any():
        raise DivisionByZero("denominator evaluates to zero", index=int(np.flatnonzero(zero.ravel())[0]))
    return np.divide(num, den)


def evaluate(expr: Expr, env: Mapping[str, float | np.ndarray]):
    """Evaluate with scalars or broadcastable numpy arrays bound in ``env``."""
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Ref):
        try:
            return env[expr.name]
        except KeyError:
            raise UnknownSubMeasure(f"no value bound for {expr.name!r}") from None
    if isinstance(expr, Neg):
        return -evaluate(expr.operand, env)
    left = evaluate(expr.left, env)
    right = evaluate(expr.right, env)
    if isinstance(expr, Add):
        return left + right
    if isinstance(expr, Sub):
        return left - right
    if isinstance(expr, Mul):
        return left * right
    if isinstance(expr, Div):
        return _divide(left, right)
    raise TypeError(f"not an expression: {expr!r}")


# -- differentiation ----------------------------------------------------------

ZERO, ONE = Num(0.0), Num(1.0)


def _is(expr, value):
    return isinstance(expr, Num) and expr.value == value


def _neg(a):
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.operand
    return Neg(a)


def _add(a, b):
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    return Add(a, b)


def _sub(a, b):
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    if _is(b, 0):
        return a
    if _is(a, 0):
        return _neg(b)
    return Sub(a, b)


def _mul(a, b):
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    if _is(a, 0) or _is(b, 0):
        return ZERO
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    return Mul(a, b)


def _div(a, b):
    if isinstance(a, Num) and isinstance(b, Num) and b.value != 0:
        return Num(a.value / b.value)
    if _is(a, 0):
        return ZERO
    if _is(b, 1):
        return a
    return Div(a, b)


def differentiate(expr: Expr, wrt: str) -> Expr:
    if isinstance(expr, Num):
        return ZERO
    if isinstance(expr, Ref):
        return ONE if expr.name == wrt else ZERO
    if isinstance(expr, Neg):
        return _neg(differentiate(expr.operand, wrt))
    a, b = expr.left, expr.right
    da, db = differentiate(a, wrt), differentiate(b, wrt)
    if isinstance(expr, Add):
        return _add(da, db)
    if isinstance(expr, Sub):
        return _sub(da, db)
    if isinstance(expr, Mul):
        return _add(_mul(da, b), _mul(a, db))
    if isinstance(expr, Div):
        return _sub(_div(da, b), _div(_mul(a, db), _mul(b, b)))
    raise TypeError(f"not an expression: {expr!r}")


# -- structure ----------------------------------------------------------------

def linear_form(expr: Expr) -> tuple[float, dict[str, float]] | None:
    """``(w0, {name: w})`` if ``expr`` is affine in its references, else None."""
    if isinstance(expr, Num):
        return expr.value, {}
    if isinstance(expr, Ref):
        return 0.0, {expr.name: 1.0}
    if isinstance(expr, Neg):
        inner = linear_form(expr.operand)
        if inner is None:
            return None
        return -inner[0], {k: -w for k, w in inner[1].items()}
    left, right = linear_form(expr.left), linear_form(expr.right)
    if left is None or right is None:
        return None
    (c1, w1), (c2, w2) = left, right
    if isinstance(expr, (Add, Sub)):
        sign = 1.0 if isinstance(expr, Add) else -1.0
        weights = dict(w1)
        for k, w in w2.items():
            weights[k] = weights.get(k, 0.0) + sign * w
        return c1 + sign * c2, weights
    if isinstance(expr, Mul):
        if not w1:
            return c1 * c2, {k: c1 * w for k, w in w2.items()}
        if not w2:
            return c1 * c2, {k: c2 * w for k, w in w1.items()}
        return None
    if isinstance(expr, Div):
        if w2 or c2 == 0:
            return None
        return c1 / c2, {k: w / c2 for k, w in w1.items()}
    return None


def ratio_parts(expr: Expr) -> tuple[str, str] | None:
    """``(numerator, denominator)`` names if ``expr`` is exactly ``a / b``."""
    if isinstance(expr, Div) and isinstance(expr.left, Ref) and isinstance(expr.right, Ref):
        if expr.left.name != expr.right.name:
            return expr.left.name, expr.right.name
    return None


@dataclass(frozen=True, eq=False)
class MeasureSpec:
    """A derived measure over ordered, named sub-measures.

    ``aggregators`` may be empty when observation matrices are supplied
    directly.  ``func`` marks an opaque measure: a callable taking a mapping
    of sub-measure name to value (floats or equally-shaped arrays).
    """

    expr: Expr | None
    submeasures: tuple[str, ...]
    aggregators: tuple[AggregatorKind | None, ...] = ()
    func: Callable[[Mapping], object] | None = None
    text: str = ""
    class_tag: str = field(init=False)

    def __post_init__(self):
        subs = tuple(self.submeasures)
        if len(set(subs)) != len(subs) or not subs:
            raise ValidationError(f"sub-measure names must be non-empty and unique: {subs}")
        aggs = tuple(self.aggregators) or (None,) * len(subs)
        if len(aggs) != len(subs):
            raise ValidationError("one aggregator per sub-measure is required")
        if (self.expr is None) == (self.func is None):
            raise ValidationError("exactly one of expr or func must be given")
        if self.expr is not None:
            unknown = self.expr.refs() - set(subs)
            if unknown:
                raise UnknownSubMeasure(f"undeclared sub-measure(s): {', '.join(sorted(unknown))}")
        object.__setattr__(self, "submeasures", subs)
        object.__setattr__(self, "aggregators", aggs)
        object.__setattr__(self, "class_tag", classify(self))

    @classmethod
    def from_text(
        cls,
        text: str,
        submeasures: Sequence[str] | Mapping[str, AggregatorKind | str | None],
    ) -> MeasureSpec:
        """Build from expression text.

        ``submeasures`` is either a list of names or a mapping of name to
        aggregator (``AggregatorKind`` or text such as ``"sum(col)"``).
        ``avg(col)`` terms append their two generated sub-measures.
        """
        if isinstance(submeasures, Mapping):
            decl = {
                k: AggregatorKind.parse(v) if isinstance(v, str) else v for k, v in submeasures.items()
            }
        else:
            decl = {k: None for k in submeasures}
        expr, avg_cols = _parse(text)
        for col in avg_cols:
            for name, agg in avg_declarations(col).items():
                decl.setdefault(name, agg)
        unknown = sorted(expr.refs() - set(decl))
        if unknown:
            raise UnknownSubMeasure(f"undeclared sub-measure(s): {', '.join(unknown)}")
        return cls(expr, tuple(decl), tuple(decl.values()), text=text)

    @classmethod
    def opaque(cls, func, submeasures: Mapping[str, AggregatorKind | str | None] | Sequence[str], text="opaque"):
        if isinstance(submeasures, Mapping):
            names = tuple(submeasures)
            aggs = tuple(AggregatorKind.parse(v) if isinstance(v, str) else v for v in submeasures.values())
        else:
            names, aggs = tuple(submeasures), ()
        return cls(None, names, aggs, func=func, text=text)

    @property
    def q(self) -> int:
        return len(self.submeasures)

    def __call__(self, values):
        """Evaluate on sub-measure values: a length-q vector or an array whose
        last axis has length q."""
        values = np.asarray(values, dtype=float)
        env = {name: values[..., i] for i, name in enumerate(self.submeasures)}
        if values.ndim == 1:
            env = {k: float(v) for k, v in env.items()}
        if self.func is not None:
            return self.func(env)
        return evaluate(self.expr, env)

    def gradient_exprs(self) -> tuple[Expr, ...]:
        if self.expr is None:
            raise ValidationError("opaque measures have no symbolic gradient")
        return tuple(differentiate(self.expr, name) for name in self.submeasures)

    def linear_weights(self) -> tuple[float, np.ndarray]:
        form = linear_form(self.expr) if self.expr is not None else None
        if form is None:
            raise ValidationError("measure is not linear")
        w0, w = form
        return w0, np.array([w.get(name, 0.0) for name in self.submeasures])

    def ratio_columns(self) -> tuple[int, int]:
        parts = ratio_parts(self.expr) if self.expr is not None else None
        if parts is None:
            raise ValidationError("measure is not a plain ratio")
        return self.submeasures.index(parts[0]), self.submeasures.index(parts[1])

    @property
    def additive(self) -> bool:
        return all(a is None or a.additive for a in self.aggregators)

    def __repr__(self):
        body = self.text or (to_text(self.expr) if self.expr is not None else "opaque")
        return f"MeasureSpec({body!r}, submeasures={self.submeasures}, class={self.class_tag})"


def classify(spec: MeasureSpec) -> str:
    if spec.func is not None:
        return OPAQUE
    if linear_form(spec.expr) is not None:
        return LINEAR
    if ratio_parts(spec.expr) is not None:
        return RATIO
    return DIFFERENTIABLE

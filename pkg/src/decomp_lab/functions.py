"""Evaluable real-valued models of the covariates.

Three model kinds share one interface:

* expression models: parsed from a small arithmetic language over the
  variables ``x1..xd`` with exact symbolic partial derivatives,
* linear models: intercept plus coefficients,
* tabulated models: values on a tensor grid (no symbolic derivative;
  callers fall back to finite differences).

Grammar (standard precedence, parentheses allowed)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom (('^' | '**') unary)?      # exponent must be constant
    atom   := NUMBER | 'x'INT | NAME '(' expr ')' | '(' expr ')'

Unary function names: ``exp``, ``log``, ``sin``, ``cos``, ``neg``.
The power exponent is restricted to constants so differentiation stays
closed-form.  Models are immutable and evaluation is pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .measures import Grid

__all__ = [
    "FunctionModel",
    "ExpressionModel",
    "LinearModel",
    "TabulatedModel",
    "ParseError",
    "EvaluationError",
    "parse_expression",
    "evaluate",
    "evaluate_on_grid",
    "differentiate",
    "tabulated_model",
    "fit_linear",
    "format_expression",
]


class ParseError(ValueError):
    """Malformed expression text; ``offset`` is the byte offset of the error."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class EvaluationError(ValueError):
    """A model could not be evaluated at a point (domain error or off-grid)."""

    def __init__(self, message: str, point=None):
        if point is not None:
            message = f"{message} at point {tuple(point)}"
        super().__init__(message)
        self.point = point


# ---------------------------------------------------------------------------
# Expression trees


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based, matching the name x<index>


@dataclass(frozen=True)
class BinOp:
    op: str  # '+', '-', '*', '/', '^'
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    fn: str  # 'exp', 'log', 'sin', 'cos', 'neg'
    arg: "Node"


Node = Union[Const, Var, BinOp, Call]

_FUNCTIONS = {
    "exp": np.exp,
    "log": np.log,
    "sin": np.sin,
    "cos": np.cos,
    "neg": np.negative,
}


def _eval_node(node: Node, coords: tuple):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return coords[node.index - 1]
    if isinstance(node, Call):
        return _FUNCTIONS[node.fn](_eval_node(node.arg, coords))
    left = _eval_node(node.left, coords)
    right = _eval_node(node.right, coords)
    if node.op == "+":
        return np.add(left, right)
    if node.op == "-":
        return np.subtract(left, right)
    if node.op == "*":
        return np.multiply(left, right)
    if node.op == "/":
        return np.divide(left, right)
    if node.op == "^":
        return np.power(left, right)
    raise AssertionError(f"unknown operator {node.op!r}")


def _max_var(node: Node) -> int:
    if isinstance(node, Var):
        return node.index
    if isinstance(node, Call):
        return _max_var(node.arg)
    if isinstance(node, BinOp):
        return max(_max_var(node.left), _max_var(node.right))
    return 0


def _simplify(node: Node) -> Node:
    """Constant folding and identity elimination; keeps derivatives readable."""
    if isinstance(node, (Const, Var)):
        return node
    if isinstance(node, Call):
        arg = _simplify(node.arg)
        if isinstance(arg, Const):
            value = float(_FUNCTIONS[node.fn](arg.value))
            if np.isfinite(value):
                return Const(value)
        if node.fn == "neg" and isinstance(arg, Call) and arg.fn == "neg":
            return arg.arg
        return Call(node.fn, arg)
    left = _simplify(node.left)
    right = _simplify(node.right)
    if isinstance(left, Const) and isinstance(right, Const):
        with np.errstate(all="ignore"):
            value = float(_eval_node(BinOp(node.op, left, right), ()))
        if np.isfinite(value):
            return Const(value)
    if node.op == "+":
        if _is_const(left, 0.0):
            return right
        if _is_const(right, 0.0):
            return left
    elif node.op == "-":
        if _is_const(right, 0.0):
            return left
        if _is_const(left, 0.0):
            return Call("neg", right)
    elif node.op == "*":
        if _is_const(left, 0.0) or _is_const(right, 0.0):
            return Const(0.0)
        if _is_const(left, 1.0):
            return right
        if _is_const(right, 1.0):
            return left
    elif node.op == "/":
        if _is_const(left, 0.0):
            return Const(0.0)
        if _is_const(right, 1.0):
            return left
    elif node.op == "^":
        if _is_const(right, 1.0):
            return left
        if _is_const(right, 0.0):
            return Const(1.0)
    return BinOp(node.op, left, right)


def _is_const(node: Node, value: float) -> bool:
    return isinstance(node, Const) and node.value == value


def _diff_node(node: Node, dim: int) -> Node:
    if isinstance(node, Const):
        return Const(0.0)
    if isinstance(node, Var):
        return Const(1.0 if node.index == dim else 0.0)
    if isinstance(node, Call):
        inner = _diff_node(node.arg, dim)
        if node.fn == "exp":
            outer = Call("exp", node.arg)
        elif node.fn == "log":
            outer = BinOp("/", Const(1.0), node.arg)
        elif node.fn == "sin":
            outer = Call("cos", node.arg)
        elif node.fn == "cos":
            outer = Call("neg", Call("sin", node.arg))
        else:  # neg
            return Call("neg", inner)
        return BinOp("*", outer, inner)
    du = _diff_node(node.left, dim)
    dv = _diff_node(node.right, dim)
    u, v = node.left, node.right
    if node.op == "+":
        return BinOp("+", du, dv)
    if node.op == "-":
        return BinOp("-", du, dv)
    if node.op == "*":
        return BinOp("+", BinOp("*", du, v), BinOp("*", u, dv))
    if node.op == "/":
        num = BinOp("-", BinOp("*", du, v), BinOp("*", u, dv))
        return BinOp("/", num, BinOp("^", v, Const(2.0)))
    # power with constant exponent: c * u^(c-1) * u'
    c = v.value  # guaranteed Const by the parser
    return BinOp("*", BinOp("*", Const(c), BinOp("^", u, Const(c - 1.0))), du)


_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _format_node(node: Node, parent_prec: int = 0) -> str:
    if isinstance(node, Const):
        return repr(node.value) if node.value >= 0 else f"({node.value!r})"
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Call):
        if node.fn == "neg":
            inner = _format_node(node.arg, 3)
            return f"-{inner}" if parent_prec < 3 else f"(-{inner})"
        return f"{node.fn}({_format_node(node.arg)})"
    prec = _PRECEDENCE[node.op]
    left = _format_node(node.left, prec)
    # right operand of - and / needs parens at equal precedence
    right = _format_node(node.right, prec + (node.op in "-/^"))
    text = f"{left} {node.op} {right}" if node.op != "^" else f"{left}^{right}"
    return f"({text})" if prec < parent_prec else text


# ---------------------------------------------------------------------------
# Tokenizer / recursive-descent parser


@dataclass(frozen=True)
class _Token:
    kind: str  # 'num', 'name', 'var', 'op', 'lparen', 'rparen', 'end'
    text: str
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch.isdigit() or ch == ".":
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            word = text[i:j]
            try:
                float(word)
            except ValueError:
                raise ParseError(f"malformed number {word!r}", i) from None
            tokens.append(_Token("num", word, i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("name", text[i:j], i))
            i = j
            continue
        if text.startswith("**", i):
            tokens.append(_Token("op", "^", i))
            i += 2
            continue
        if ch in "+-*/^":
            tokens.append(_Token("op", ch, i))
            i += 1
            continue
        if ch == "(":
            tokens.append(_Token("lparen", ch, i))
            i += 1
            continue
        if ch == ")":
            tokens.append(_Token("rparen", ch, i))
            i += 1
            continue
        raise ParseError(f"unexpected character {ch!r}", i)
    tokens.append(_Token("end", "", n))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token], arity: int):
        self.tokens = tokens
        self.pos = 0
        self.arity = arity

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            raise ParseError(
                f"expected {kind}, found {tok.text!r}" if tok.text else f"expected {kind}, found end of input",
                tok.offset,
            )
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ParseError(f"unexpected trailing {tok.text!r}", tok.offset)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.advance()
            return Call("neg", self.unary())
        if tok.kind == "op" and tok.text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        tok = self.peek()
        if tok.kind == "op" and tok.text == "^":
            self.advance()
            exponent = _simplify(self.unary())
            if not isinstance(exponent, Const):
                raise ParseError("power exponent must be a constant", tok.offset)
            return BinOp("^", base, exponent)
        return base

    def atom(self) -> Node:
        tok = self.peek()
        if tok.kind == "num":
            self.advance()
            return Const(float(tok.text))
        if tok.kind == "name":
            self.advance()
            name = tok.text
            if name[0] == "x" and name[1:].isdigit():
                index = int(name[1:])
                if not 1 <= index <= self.arity:
                    raise ParseError(
                        f"variable {name} exceeds arity {self.arity}", tok.offset
                    )
                return Var(index)
            if name in _FUNCTIONS:
                self.expect("lparen")
                arg = self.expr()
                self.expect("rparen")
                return Call(name, arg)
            raise ParseError(f"unknown function or variable {name!r}", tok.offset)
        if tok.kind == "lparen":
            self.advance()
            node = self.expr()
            self.expect("rparen")
            return node
        raise ParseError(
            f"expected a value, found {tok.text!r}" if tok.text else "unexpected end of input",
            tok.offset,
        )


# ---------------------------------------------------------------------------
# Model classes


class FunctionModel:
    """Common interface: ``arity`` and evaluation at points or grids."""

    kind: str
    arity: int

    def __call__(self, x) -> float:
        return evaluate(self, x)


@dataclass(frozen=True)
class ExpressionModel(FunctionModel):
    root: Node
    arity: int
    kind: str = "expression"

    def __post_init__(self):
        used = _max_var(self.root)
        if used > self.arity:
            raise ValueError(f"expression uses x{used} but arity is {self.arity}")

    def __str__(self) -> str:
        return format_expression(self)


@dataclass(frozen=True)
class LinearModel(FunctionModel):
    """Affine model ``intercept + sum_j coefficients[j] * x_j``."""

    intercept: float
    coefficients: tuple[float, ...]
    kind: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "intercept", float(self.intercept))
        object.__setattr__(
            self, "coefficients", tuple(float(c) for c in self.coefficients)
        )
        if len(self.coefficients) == 0:
            raise ValueError("linear model needs at least one coefficient")

    @property
    def arity(self) -> int:
        return len(self.coefficients)


@dataclass(frozen=True)
class TabulatedModel(FunctionModel):
    """Values on a tensor grid; evaluation off the grid is an error."""

    grid: Grid
    values: np.ndarray
    kind: str = "tabulated"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(
                f"values shape {v.shape} does not cover the grid {self.grid.shape}"
            )
        v = np.array(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def arity(self) -> int:
        return self.grid.dims


def parse_expression(text: str, arity: int) -> ExpressionModel:
    """Parse arithmetic text over ``x1..x<arity>`` into an expression model.

    Raises ParseError (with byte offset) for syntax errors, references to
    variables beyond ``arity``, and unknown function names.
    """
    if not text or not text.strip():
        raise ParseError("empty expression", 0)
    if arity < 1:
        raise ValueError("arity must be >= 1")
    root = _Parser(_tokenize(text), arity).parse()
    return ExpressionModel(root, arity)


def evaluate(model: FunctionModel, x) -> float:
    """Evaluate a model at a single point.

    Raises EvaluationError for domain errors (log of a nonpositive value,
    division by zero) and for off-grid points of tabulated models.
    """
    point = np.asarray(x, dtype=float).reshape(-1)
    if point.size != model.arity:
        raise ValueError(
            f"point has dimension {point.size}, model arity is {model.arity}"
        )
    if isinstance(model, LinearModel):
        return float(model.intercept + np.dot(model.coefficients, point))
    if isinstance(model, TabulatedModel):
        idx = []
        for a, ax in enumerate(model.grid.axes):
            hits = np.flatnonzero(np.isclose(ax, point[a], rtol=0.0, atol=1e-12))
            if hits.size == 0:
                raise EvaluationError("tabulated model queried off its grid", point)
            idx.append(int(hits[0]))
        return float(model.values[tuple(idx)])
    with np.errstate(all="ignore"):
        value = _eval_node(model.root, tuple(point))
    value = float(value)
    if not np.isfinite(value):
        raise EvaluationError("expression evaluation left the real domain", point)
    return value


def evaluate_on_grid(model, grid: Grid) -> np.ndarray:
    """Evaluate a model (or plain callable) at every grid point.

    Returns an array of shape ``grid.shape``.  Evaluation failures report
    the first offending grid point.
    """
    if isinstance(model, TabulatedModel):
        if model.grid != grid:
            raise EvaluationError("tabulated model lives on a different grid")
        return model.values
    if isinstance(model, FunctionModel) and model.arity != grid.dims:
        raise ValueError(
            f"model arity {model.arity} does not match grid dimension {grid.dims}"
        )
    mesh = grid.meshgrid()
    if isinstance(model, LinearModel):
        out = np.full(grid.shape, model.intercept)
        for c, m in zip(model.coefficients, mesh):
            out = out + c * m
        return out
    if isinstance(model, ExpressionModel):
        with np.errstate(all="ignore"):
            out = np.broadcast_to(np.asarray(_eval_node(model.root, mesh), dtype=float), grid.shape)
        bad = ~np.isfinite(out)
        if np.any(bad):
            where = np.argwhere(bad)[0]
            point = tuple(float(grid.axes[a][i]) for a, i in enumerate(where))
            raise EvaluationError("expression evaluation left the real domain", point)
        return out
    # plain callable fallback, used by tests and oracles
    out = np.empty(grid.shape)
    for idx in np.ndindex(grid.shape):
        point = tuple(float(grid.axes[a][i]) for a, i in enumerate(idx))
        out[idx] = model(point)
    return out


def differentiate(model: FunctionModel, dim: int) -> ExpressionModel:
    """Exact symbolic partial derivative with respect to ``x<dim>``.

    Tabulated models are rejected; callers use finite differences instead
    (see the ALE module).
    """
    if not 1 <= dim <= model.arity:
        raise ValueError(f"dim must be in 1..{model.arity}, got {dim}")
    if isinstance(model, TabulatedModel):
        raise TypeError(
            "tabulated models have no symbolic derivative; use finite differences"
        )
    if isinstance(model, LinearModel):
        return ExpressionModel(Const(model.coefficients[dim - 1]), model.arity)
    return ExpressionModel(_simplify(_diff_node(model.root, dim)), model.arity)


def tabulated_model(grid: Grid, values) -> TabulatedModel:
    """Tabulated model from a full table of grid values."""
    v = np.asarray(values, dtype=float)
    if v.size != grid.size:
        raise ValueError(
            f"values cover {v.size} points but the grid has {grid.size}"
        )
    return TabulatedModel(grid, v.reshape(grid.shape))


def fit_linear(xs: np.ndarray, ys: np.ndarray) -> LinearModel:
    """Ordinary least squares with intercept.

    Requires at least ``d + 1`` rows and a full-column-rank design;
    collinear covariates are rejected.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float).reshape(-1)
    if x.ndim != 2:
        raise ValueError("xs must be a (n, d) matrix")
    n, d = x.shape
    if y.size != n:
        raise ValueError(f"ys has {y.size} entries for {n} rows")
    if n < d + 1:
        raise ValueError(f"need at least {d + 1} rows to fit {d} coefficients")
    design = np.column_stack([np.ones(n), x])
    if np.linalg.matrix_rank(design) < d + 1:
        raise ValueError("design matrix is rank deficient (collinear covariates)")
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return LinearModel(float(coef[0]), tuple(coef[1:]))


def format_expression(model: ExpressionModel) -> str:
    """Render an expression model; reparsing yields identical evaluations."""
    return _format_node(model.root)

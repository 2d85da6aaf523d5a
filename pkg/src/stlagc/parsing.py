"""Recursive-descent parser for the ASCII task grammar.

::

    PHI   := ('G'|'F') '[' NUM ',' NUM ']' BODY
           | 'F' '[' NUM ',' NUM ']' 'G' '[' NUM ',' NUM ']' BODY
    BODY  := '(' LIT ('and' LIT)* ')'
    LIT   := ['not'] ATOM
    ATOM  := 'norm2' '(' EXPR (',' EXPR)* ')' '<=' NUM
           | EXPR '<=' NUM
           | EXPR '>=' NUM
    EXPR  := ['-'] TERM (('+'|'-') TERM)*
    TERM  := NUM '*' SYM | SYM '*' NUM | SYM | NUM

State symbols are ``x<agent>`` (the whole agent state) or
``x<agent>_<index>`` (one component).  Whitespace is insignificant.
``norm2`` accepts either a single expression (vector-valued when whole-agent
symbols are used) or a comma-separated list of scalar component
expressions, which is how a norm over a position sub-vector of a larger
state is written.

Whole-agent symbols need the agent dimensions to expand into components;
pass them via ``dims``.  Without ``dims`` every agent defaults to one
dimension, so ``x3`` means ``x3_0``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .stl_core import (
    BooleanFormula,
    Literal,
    PredicateFamily,
    PredicateSpec,
    TemporalFormula,
    TemporalOp,
)

__all__ = ["parse_formula", "FormulaSyntaxError", "FormulaSemanticError"]


class FormulaSyntaxError(ValueError):
    """Raised on malformed input; carries the character position."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


class FormulaSemanticError(ValueError):
    """Well-formed text that falls outside the fragment."""


_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<sym>x\d+(?:_\d+)?)"
    r"|(?P<name>[A-Za-z][A-Za-z0-9]*)"
    r"|(?P<op><=|>=|[\[\](),+\-*])"
    r")"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # num | sym | name | op | end
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    i = 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if m is None or m.lastgroup is None:
            stripped = text[i:].lstrip()
            if not stripped:
                break
            raise FormulaSyntaxError(
                f"unexpected character {stripped[0]!r}", len(text) - len(stripped)
            )
        tokens.append(_Token(m.lastgroup, m.group(m.lastgroup), m.start(m.lastgroup)))
        i = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Affine:
    """Affine expression: coefficient per state symbol plus a constant."""

    def __init__(self):
        self.coeffs: dict[tuple[int, int], float] = {}
        self.vector_agents: dict[int, float] = {}
        self.const = 0.0

    def add_scalar(self, agent: int, index: int, coef: float):
        key = (agent, index)
        self.coeffs[key] = self.coeffs.get(key, 0.0) + coef

    def add_vector(self, agent: int, coef: float):
        self.vector_agents[agent] = self.vector_agents.get(agent, 0.0) + coef


class _Parser:
    def __init__(self, text: str, dims: Mapping[int, int] | None):
        self.text = text
        self.tokens = _tokenize(text)
        self.k = 0
        self.dims = dict(dims) if dims else {}

    # -- token helpers ------------------------------------------------

    def peek(self) -> _Token:
        return self.tokens[self.k]

    def next(self) -> _Token:
        tok = self.tokens[self.k]
        self.k += 1
        return tok

    def expect(self, kind: str, text: str | None = None) -> _Token:
        tok = self.next()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text if text is not None else kind
            raise FormulaSyntaxError(f"expected {want!r}, found {tok.text!r}", tok.pos)
        return tok

    # -- grammar ------------------------------------------------------

    def parse(self) -> TemporalFormula:
        op_tok = self.expect("name")
        if op_tok.text not in ("G", "F"):
            raise FormulaSyntaxError(
                f"formula must start with 'G' or 'F', found {op_tok.text!r}", op_tok.pos
            )
        first = self.interval()
        if op_tok.text == "F" and self.peek().kind == "name" and self.peek().text == "G":
            self.next()
            inner = self.interval()
            body = self.body()
            phi = self._build(TemporalOp.EVENTUALLY_ALWAYS, first, body, inner)
        else:
            if self.peek().kind == "name" and self.peek().text in ("G", "F"):
                raise FormulaSemanticError(
                    "temporal nesting outside the fragment: only F[..]G[..] is allowed"
                )
            body = self.body()
            op = TemporalOp.ALWAYS if op_tok.text == "G" else TemporalOp.EVENTUALLY
            phi = self._build(op, first, body)
        tail = self.peek()
        if tail.kind != "end":
            raise FormulaSyntaxError(f"trailing input {tail.text!r}", tail.pos)
        return phi

    @staticmethod
    def _build(op, interval, body, inner=None) -> TemporalFormula:
        try:
            return TemporalFormula(op, interval, body, inner)
        except ValueError as exc:
            raise FormulaSemanticError(str(exc)) from exc

    def interval(self) -> tuple[float, float]:
        self.expect("op", "[")
        a = self.signed_number()
        self.expect("op", ",")
        b = self.signed_number()
        self.expect("op", "]")
        return a, b

    def signed_number(self) -> float:
        sign = 1.0
        if self.peek().kind == "op" and self.peek().text == "-":
            self.next()
            sign = -1.0
        tok = self.expect("num")
        return sign * float(tok.text)

    def body(self) -> BooleanFormula:
        self.expect("op", "(")
        literals = [self.literal()]
        while self.peek().kind == "name" and self.peek().text == "and":
            self.next()
            literals.append(self.literal())
        self.expect("op", ")")
        return BooleanFormula(tuple(literals))

    def literal(self) -> Literal:
        negated = False
        if self.peek().kind == "name" and self.peek().text == "not":
            self.next()
            negated = True
        return Literal(self.atom(), negated)

    def atom(self) -> PredicateSpec:
        tok = self.peek()
        if tok.kind == "name" and tok.text == "norm2":
            self.next()
            self.expect("op", "(")
            components = [self.expr()]
            while self.peek().kind == "op" and self.peek().text == ",":
                self.next()
                components.append(self.expr())
            self.expect("op", ")")
            self.expect("op", "<=")
            bound = self.signed_number()
            return self._norm_ball(components, bound)
        expr = self.expr()
        cmp_tok = self.next()
        if cmp_tok.kind != "op" or cmp_tok.text not in ("<=", ">="):
            raise FormulaSyntaxError(
                f"expected '<=' or '>=', found {cmp_tok.text!r}", cmp_tok.pos
            )
        bound = self.signed_number()
        return self._linear(expr, bound, flipped=cmp_tok.text == "<=")

    def expr(self) -> _Affine:
        acc = _Affine()
        sign = 1.0
        if self.peek().kind == "op" and self.peek().text in ("+", "-"):
            sign = -1.0 if self.next().text == "-" else 1.0
        self.term(acc, sign)
        while self.peek().kind == "op" and self.peek().text in ("+", "-"):
            sign = -1.0 if self.next().text == "-" else 1.0
            self.term(acc, sign)
        return acc

    def term(self, acc: _Affine, sign: float):
        tok = self.next()
        if tok.kind == "num":
            coef = sign * float(tok.text)
            if self.peek().kind == "op" and self.peek().text == "*":
                self.next()
                sym = self.expect("sym")
                self._add_symbol(acc, sym, coef)
            else:
                acc.const += coef
        elif tok.kind == "sym":
            coef = sign
            if self.peek().kind == "op" and self.peek().text == "*":
                self.next()
                num = self.expect("num")
                coef = sign * float(num.text)
            self._add_symbol(acc, tok, coef)
        else:
            raise FormulaSyntaxError(
                f"expected a number or state symbol, found {tok.text!r}", tok.pos
            )

    def _add_symbol(self, acc: _Affine, tok: _Token, coef: float):
        text = tok.text[1:]
        if "_" in text:
            agent_s, idx_s = text.split("_")
            agent, idx = int(agent_s), int(idx_s)
            dim = self.dims.get(agent)
            if dim is not None and idx >= dim:
                raise FormulaSemanticError(
                    f"component x{agent}_{idx} out of range: agent {agent} has dim {dim}"
                )
            acc.add_scalar(agent, idx, coef)
        else:
            agent = int(text)
            if self.dims.get(agent, 1) == 1:
                acc.add_scalar(agent, 0, coef)
            else:
                acc.add_vector(agent, coef)

    # -- predicate construction ----------------------------------------

    def _expand_rows(self, components: list[_Affine]) -> list[_Affine]:
        """Turn vector-valued expressions into one scalar row per dimension."""
        if len(components) == 1 and components[0].vector_agents:
            e = components[0]
            if e.coeffs:
                raise FormulaSemanticError(
                    "cannot mix whole-agent and component symbols in one expression"
                )
            agent_dims = {a: self.dims.get(a, 1) for a in e.vector_agents}
            dims = set(agent_dims.values())
            if len(dims) != 1:
                raise FormulaSemanticError(
                    f"agents of different dimensions in one norm: {agent_dims}"
                )
            rows = []
            for i in range(dims.pop()):
                row = _Affine()
                for agent, coef in e.vector_agents.items():
                    row.add_scalar(agent, i, coef)
                row.const = e.const
                rows.append(row)
            return rows
        for e in components:
            if e.vector_agents:
                raise FormulaSemanticError(
                    "whole-agent symbols are not allowed in multi-component norms"
                )
        return components

    def _norm_ball(self, components: list[_Affine], bound: float) -> PredicateSpec:
        rows = self._expand_rows(components)
        selector = sorted({key for row in rows for key in row.coeffs})
        if not selector:
            raise FormulaSemanticError("norm argument reads no state symbol")
        col = {key: j for j, key in enumerate(selector)}
        S = np.zeros((len(rows), len(selector)))
        c = np.zeros(len(rows))
        for i, row in enumerate(rows):
            for key, coef in row.coeffs.items():
                S[i, col[key]] = coef
            c[i] = -row.const
        return PredicateSpec(
            PredicateFamily.NORM_BALL, tuple(selector), c=c, d=bound, S=S
        )

    def _linear(self, expr: _Affine, bound: float, flipped: bool) -> PredicateSpec:
        if expr.vector_agents:
            agents = sorted(expr.vector_agents)
            raise FormulaSemanticError(
                f"comparison needs a scalar expression; agents {agents} are "
                "vector-valued here (use x<agent>_<index>)"
            )
        if not expr.coeffs:
            raise FormulaSemanticError("comparison reads no state symbol")
        selector = sorted(expr.coeffs)
        coeffs = np.array([expr.coeffs[key] for key in selector])
        if flipped:  # expr <= bound  ->  rho = bound - expr
            return PredicateSpec(
                PredicateFamily.LINEAR, tuple(selector), c=-coeffs, d=bound - expr.const
            )
        return PredicateSpec(
            PredicateFamily.LINEAR, tuple(selector), c=coeffs, d=expr.const - bound
        )


def parse_formula(text: str, dims: Mapping[int, int] | None = None) -> TemporalFormula:
    """Parse one task of the fragment.

    Parameters
    ----------
    text : str
        Formula in the grammar above, e.g. ``"G[0,10] (norm2(x1 - x2) <= 3)"``.
    dims : mapping, optional
        Agent id -> state dimension, needed to expand whole-agent symbols
        like ``x2`` in multi-dimensional scenarios.
    """
    return _Parser(text, dims).parse()

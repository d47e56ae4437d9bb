"""Small analytic-expression language for desired states, sources and curves.

Grammar (highest precedence last)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := primary ("^" unary)?          right-associative
    primary := NUMBER | NAME | NAME "(" expr ")" | "(" expr ")"

Evaluation is vectorised over numpy arrays and never raises on finite
inputs: division by zero and domain errors produce inf/nan.
"""

import math
import re
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np

from .exceptions import ExpressionSyntaxError, UnknownIdentifier

DEFAULT_VARIABLES = ("t", "x", "y")

CONSTANTS: Dict[str, float] = {"pi": math.pi}

FUNCTIONS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
}

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


@dataclass(frozen=True)
class Token:
    kind: str  # number | name | op | eof
    text: str
    offset: int


def tokenize(src: str) -> List[Token]:
    tokens: List[Token] = []
    pos = 0
    while True:
        while pos < len(src) and src[pos].isspace():
            pos += 1
        if pos == len(src):
            tokens.append(Token("eof", "", pos))
            return tokens
        match = _TOKEN_RE.match(src, pos)
        if match is None or match.end() == pos:
            raise ExpressionSyntaxError(f"unexpected character {src[pos]!r}", pos)
        kind = match.lastgroup
        tokens.append(Token(kind, match.group(kind), match.start(kind)))
        pos = match.end()


Env = Mapping[str, Union[float, np.ndarray]]


@dataclass(frozen=True)
class Number:
    value: float

    def evaluate(self, env: Env):
        return self.value

    def to_text(self) -> str:
        return repr(self.value)


@dataclass(frozen=True)
class Name:
    name: str

    def evaluate(self, env: Env):
        if self.name in CONSTANTS:
            return CONSTANTS[self.name]
        return env[self.name]

    def to_text(self) -> str:
        return self.name


@dataclass(frozen=True)
class Negate:
    operand: "Node"

    def evaluate(self, env: Env):
        return -self.operand.evaluate(env)

    def to_text(self) -> str:
        return f"(-{self.operand.to_text()})"


_BINARY: Dict[str, Callable] = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.true_divide,
    "^": np.power,
}


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"

    def evaluate(self, env: Env):
        lhs = np.asarray(self.left.evaluate(env), dtype=float)
        rhs = np.asarray(self.right.evaluate(env), dtype=float)
        return _BINARY[self.op](lhs, rhs)

    def to_text(self) -> str:
        return f"({self.left.to_text()} {self.op} {self.right.to_text()})"


@dataclass(frozen=True)
class Call:
    function: str
    argument: "Node"

    def evaluate(self, env: Env):
        return FUNCTIONS[self.function](np.asarray(self.argument.evaluate(env), dtype=float))

    def to_text(self) -> str:
        return f"{self.function}({self.argument.to_text()})"


Node = Union[Number, Name, Negate, Binary, Call]


class _Parser:
    def __init__(self, src: str, variables: Sequence[str]) -> None:
        self.tokens = tokenize(src)
        self.pos = 0
        self.variables = set(variables)

    @property
    def current(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def expect(self, text: str) -> Token:
        if self.current.text != text or self.current.kind != "op":
            found = self.current.text or "end of input"
            raise ExpressionSyntaxError(f"expected {text!r}, found {found!r}", self.current.offset)
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        if self.current.kind != "eof":
            raise ExpressionSyntaxError(
                f"unexpected {self.current.text!r}", self.current.offset
            )
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.current.kind == "op" and self.current.text in "+-":
            op = self.advance().text
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.current.kind == "op" and self.current.text in "*/":
            op = self.advance().text
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.current.kind == "op" and self.current.text == "-":
            self.advance()
            return Negate(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.primary()
        if self.current.kind == "op" and self.current.text == "^":
            self.advance()
            return Binary("^", base, self.unary())
        return base

    def primary(self) -> Node:
        token = self.current
        if token.kind == "number":
            value = float(token.text)
            if not math.isfinite(value):
                raise ExpressionSyntaxError("numeric literal out of range", token.offset)
            self.advance()
            return Number(value)
        if token.kind == "name":
            self.advance()
            if token.text in FUNCTIONS:
                self.expect("(")
                argument = self.expr()
                self.expect(")")
                return Call(token.text, argument)
            if token.text in CONSTANTS or token.text in self.variables:
                return Name(token.text)
            raise UnknownIdentifier(token.text, token.offset)
        if token.kind == "op" and token.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        found = token.text or "end of input"
        raise ExpressionSyntaxError(f"unexpected {found!r}", token.offset)


@dataclass(frozen=True)
class Expression:
    """Parsed expression over a fixed set of variables."""

    source: str
    root: Node
    variables: Tuple[str, ...] = DEFAULT_VARIABLES

    def evaluate(self, **env) -> np.ndarray:
        missing = [v for v in self.variables if v not in env and self.uses(v)]
        if missing:
            raise KeyError(f"missing values for {missing}")
        with np.errstate(all="ignore"):
            value = np.asarray(self.root.evaluate(env), dtype=float)
        shapes = [np.shape(env[v]) for v in self.variables if v in env]
        return np.broadcast_to(value, np.broadcast_shapes(value.shape, *shapes)).copy()

    def __call__(self, t, x, y) -> np.ndarray:
        """Space-time field interface f(t, x, y)."""
        return self.evaluate(t=t, x=x, y=y)

    def at_time(self, t: float) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
        """The space field (x, y) -> f(t, x, y)."""
        return lambda x, y: self.evaluate(t=t, x=x, y=y)

    def uses(self, name: str) -> bool:
        return re.search(rf"\b{re.escape(name)}\b", self.to_text()) is not None

    def to_text(self) -> str:
        """Fully parenthesised normal form; parsing it gives the same tree."""
        return self.root.to_text()


def parse_expression(src: str, variables: Sequence[str] = DEFAULT_VARIABLES) -> Expression:
    """Parse src, reporting syntax errors with their byte offset.

    Raises:
        ExpressionSyntaxError: malformed input
        UnknownIdentifier: a name that is neither a variable, constant nor function
    """
    root = _Parser(src, variables).parse()
    return Expression(source=src, root=root, variables=tuple(variables))

"""Independent reference implementations used only by the tests.

Nothing here calls the code under test except to build Expr values through
the public constructors.
"""
from __future__ import annotations

import math
import re

import numpy as np

from snc.expr import FuncCall, Number, Power, Product, Sum, Symbol, combine, num, sym

# -- direct tree evaluation ---------------------------------------------------------


def _c_pow(b, e):
    try:
        return math.pow(b, e)
    except ValueError:
        return math.nan
    except OverflowError:
        return math.inf


_FN = {
    "sin": math.sin, "cos": math.cos, "tan": math.tan, "exp": math.exp, "log": math.log,
    "sqrt": math.sqrt, "abs": abs,
}


def tree_eval(e, env: dict) -> float:
    """Evaluate an Expr by walking the tree with Python floats."""
    if isinstance(e, Number):
        return float(e.value)
    if isinstance(e, Symbol):
        return float(env[e.name])
    if isinstance(e, Sum):
        return math.fsum(tree_eval(t, env) for t in e.terms)
    if isinstance(e, Product):
        return math.prod(tree_eval(f, env) for f in e.factors)
    if isinstance(e, Power):
        return _c_pow(tree_eval(e.base, env), tree_eval(e.exponent, env))
    if isinstance(e, FuncCall):
        return _FN[e.fname](tree_eval(e.arg, env))
    raise TypeError(e)


def central_diff(f, x: float, h: float | None = None) -> float:
    h = 1e-6 * max(1.0, abs(x)) if h is None else h
    return (f(x + h) - f(x - h)) / (2 * h)


# -- recursive-descent parser for the script expression grammar ---------------------
#
#   expr   := term (('+' | '-') term)*
#   term   := unary (('*' | '/') unary)*
#   unary  := '-' unary | '+' unary | power
#   power  := atom ('^' unary_pow)?        right associative
#   unary_pow := '-' unary_pow | '+' unary_pow | power
#   atom   := number | ident | ident '(' expr ')' | '(' expr ')'

_TOK = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(.))")


class RDParser:
    def __init__(self, text: str):
        self.toks = []
        for m in _TOK.finditer(text):
            if m.group(1):
                self.toks.append(("num", m.group(1)))
            elif m.group(2):
                self.toks.append(("id", m.group(2)))
            elif m.group(3) and not m.group(3).isspace():
                self.toks.append(("op", m.group(3)))
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, kind=None, val=None):
        k, v = self.peek()
        if (kind and k != kind) or (val and v != val):
            raise SyntaxError(f"expected {val or kind}, got {v!r}")
        self.i += 1
        return v

    def parse(self):
        e = self.expr()
        if self.i != len(self.toks):
            raise SyntaxError("trailing input")
        return e

    def expr(self):
        e = self.term()
        while self.peek() in (("op", "+"), ("op", "-")):
            op = self.take()
            e = combine("add" if op == "+" else "sub", [e, self.term()])
        return e

    def term(self):
        e = self.unary()
        while self.peek() in (("op", "*"), ("op", "/")):
            op = self.take()
            e = combine("mul" if op == "*" else "div", [e, self.unary()])
        return e

    def unary(self):
        if self.peek() == ("op", "-"):
            self.take()
            return combine("neg", [self.unary()])
        if self.peek() == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            return combine("pow", [base, self.unary_pow()])
        return base

    def unary_pow(self):
        if self.peek() == ("op", "-"):
            self.take()
            return combine("neg", [self.unary_pow()])
        if self.peek() == ("op", "+"):
            self.take()
            return self.unary_pow()
        return self.power()

    def atom(self):
        k, v = self.peek()
        if k == "num":
            self.take()
            return num(float(v))
        if k == "id":
            self.take()
            if self.peek() == ("op", "("):
                self.take()
                arg = self.expr()
                self.take("op", ")")
                return combine(v, [arg])
            return sym(v)
        if (k, v) == ("op", "("):
            self.take()
            e = self.expr()
            self.take("op", ")")
            return e
        raise SyntaxError(f"unexpected {v!r}")


def rd_parse(text: str):
    return RDParser(text).parse()


# -- random generators ------------------------------------------------------------------

NAMES = ("a", "b", "x", "y", "z")
SAFE_FUNCS = ("sin", "cos", "exp", "log", "sqrt", "tan", "abs")


def random_expr(rng: np.random.Generator, depth: int = 8, names=NAMES, dyadic: bool = True,
                allow_abs: bool = True):
    """Random Expr with domain-safe function arguments.

    log and sqrt arguments are shifted to stay above 0.1 for arguments in
    [-2, 2]; exp arguments are squashed through sin. ``dyadic`` keeps float
    constants exact in binary so folding order cannot matter.
    """
    def leaf():
        if rng.random() < 0.6:
            return sym(str(rng.choice(names)))
        if dyadic:
            return num(float(rng.integers(-16, 17)) / 4.0)
        return num(float(np.round(rng.uniform(-3, 3), 3)))

    def go(d):
        if d <= 0 or rng.random() < 0.25:
            return leaf()
        r = rng.random()
        if r < 0.3:
            return combine("add", [go(d - 1), go(d - 1)])
        if r < 0.5:
            return combine("mul", [go(d - 1), go(d - 1)])
        if r < 0.6:
            return combine("sub", [go(d - 1), go(d - 1)])
        if r < 0.68:
            den = go(d - 1)
            return combine("div", [go(d - 1), combine("add", [combine("mul", [den, den]), num(1)])])
        if r < 0.78:
            return combine("pow", [go(d - 1), num(int(rng.integers(-3, 5)))])
        if r < 0.82:
            u = go(d - 1)
            if allow_abs:
                base = combine("add", [combine("func:abs", [combine("mul", [u, go(d - 1)])]), num(1)])
            else:
                base = combine("add", [combine("mul", [u, u]), num(1)])
            return combine("pow", [base, num(float(rng.choice([0.5, 1.5, -0.5])))])
        f = str(rng.choice(SAFE_FUNCS if allow_abs else SAFE_FUNCS[:-1]))
        inner = go(d - 1)
        if f in ("log", "sqrt"):
            inner = combine("add", [combine("mul", [inner, inner]), num(0.25)])
        elif f in ("exp", "tan"):
            inner = combine("func:sin", [inner])
        return combine(f, [inner])

    return go(depth)


def random_expr_text(rng: np.random.Generator, depth: int = 5) -> str:
    """Random infix source text for the parser corpus."""
    def go(d):
        if d <= 0 or rng.random() < 0.25:
            r = rng.random()
            if r < 0.55:
                return str(rng.choice(NAMES))
            if r < 0.8:
                return str(int(rng.integers(0, 10)))
            return f"{rng.uniform(0, 10):.3f}"
        r = rng.random()
        if r < 0.55:
            op = str(rng.choice(["+", "-", "*", "/", "^"]))
            return f"{go(d - 1)}{op}{go(d - 1)}"
        if r < 0.7:
            return f"({go(d - 1)})"
        if r < 0.8:
            return f"-{go(d - 1)}"
        return f"{rng.choice(['sin', 'cos', 'exp', 'sqrt', 'log'])}({go(d - 1)})"

    return go(depth)


MESSAGE_KINDS = ("D", "F", "Q", "R", "P")


def random_message(rng: np.random.Generator, kind: str | None = None):
    """Random valid message of ``kind`` (one of MESSAGE_KINDS, random if None)."""
    from snc.protocol import (
        CloudFuncRequest, CloudQueryRequest, CloudSDRequest, PEHello, QType, Response,
    )

    def name():
        n = int(rng.integers(1, 12))
        return "".join(rng.choice(list("abcXYZ_019\u00e9")) for _ in range(n))

    kind = kind or MESSAGE_KINDS[int(rng.integers(0, len(MESSAGE_KINDS)))]
    if kind == "D":
        vals = rng.standard_normal(int(rng.integers(0, 20))) * 10 ** rng.uniform(-300, 300)
        return CloudSDRequest(name(), vals)
    if kind == "F":
        return CloudFuncRequest(name(), rng.bytes(int(rng.integers(0, 64))))
    if kind == "Q":
        q = int(rng.integers(0, 4))
        ret = name() if q == QType.EVALUATE or rng.random() < 0.5 else ""
        return CloudQueryRequest(q, name(), ret, tuple(name() for _ in range(rng.integers(0, 5))))
    if kind == "R":
        return Response(int(rng.integers(1, 4)), int(rng.integers(0, 6)),
                        name() if rng.random() < 0.8 else "", rng.bytes(int(rng.integers(0, 40))))
    return PEHello(name(), "cpus=4")


def rel_close(a: float, b: float, rtol: float) -> bool:
    if math.isnan(a) or math.isnan(b):
        return math.isnan(a) and math.isnan(b)
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= rtol * max(abs(a), abs(b)) or a == b


# -- hand-encoded frames (big-endian, one field per line) ---------------------------------

SD_IN_ONE = bytes.fromhex(
    "44"                 # 'D'
    "00000002"           # name length
    "00000000"           # data type: float64 array
    "00000008"           # data length in bytes
    "696e"               # "in"
    "3ff0000000000000"   # 1.0
)

RESP_IN_OK = bytes.fromhex(
    "52"                 # 'R'
    "00000001"           # rtype: CloudSD response
    "00000000"           # status OK
    "00000002"           # name length
    "00000002"           # message length
    "696e"               # "in"
    "4f4b"               # "OK"
)

IR_OF_X = bytes.fromhex(
    "534e4349"           # "SNCI"
    "01"                 # version
    "00000001"           # arity
    "00000000"           # vec_len
    "00000001"           # instruction count
    "00" "00000000"      # LoadArg 0
)

# closed form of d/dy [0.127 - 0.194 x / (y + 0.194)] at (0.362, 0.556)
HALF_CELL_VALUE = 0.194 * 0.362 / (0.556 + 0.194) ** 2


def shape_key(e):
    """Structure of an Expr with every number read as a float.

    Rendering drops the exact/float distinction of constants, so a render
    round trip is compared on this key.
    """
    if isinstance(e, Number):
        return ("n", float(e.value))
    if isinstance(e, Symbol):
        return ("s", e.name)
    if isinstance(e, Sum):
        return ("+",) + tuple(shape_key(t) for t in e.terms)
    if isinstance(e, Product):
        return ("*",) + tuple(shape_key(f) for f in e.factors)
    if isinstance(e, Power):
        return ("^", shape_key(e.base), shape_key(e.exponent))
    return (e.fname, shape_key(e.arg))

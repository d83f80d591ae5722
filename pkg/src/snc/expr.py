"""Immutable symbolic expression trees.

Every public constructor returns a normalized tree: sums and products are
flattened, numeric terms are folded into a single leading coefficient,
like terms are collected and operands are sorted by a fixed total order
(numbers < symbols < products < powers < sums < function calls).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence, Union

__all__ = [
    "Expr", "Symbol", "Number", "Sum", "Product", "Power", "FuncCall",
    "SymbolTable", "ExprError", "UnsupportedDerivative", "FUNCTIONS",
    "sym", "symbols", "num", "combine", "normalize", "diff", "substitute",
    "free_symbols", "postorder", "from_postorder", "render", "node_count",
    "sin", "cos", "tan", "exp", "log", "sqrt",
]

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "abs")

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_EXACT_LIMIT = 2 ** 53


class ExprError(ValueError):
    pass


class UnsupportedDerivative(ExprError):
    pass


class Expr:
    """Base class for expression nodes; arithmetic operators normalize."""

    __slots__ = ()

    def __add__(self, other):
        return _add([self, _coerce(other)])

    def __radd__(self, other):
        return _add([_coerce(other), self])

    def __sub__(self, other):
        return combine("sub", [self, _coerce(other)])

    def __rsub__(self, other):
        return combine("sub", [_coerce(other), self])

    def __mul__(self, other):
        return _mul([self, _coerce(other)])

    def __rmul__(self, other):
        return _mul([_coerce(other), self])

    def __truediv__(self, other):
        return combine("div", [self, _coerce(other)])

    def __rtruediv__(self, other):
        return combine("div", [_coerce(other), self])

    def __pow__(self, other):
        return _pow(self, _coerce(other))

    def __rpow__(self, other):
        return _pow(_coerce(other), self)

    def __neg__(self):
        return _mul([Number(-1), self])

    def __pos__(self):
        return self

    def __abs__(self):
        return FuncCall("abs", self)

    def __str__(self):
        return render(self)

    def diff(self, s: "Symbol") -> "Expr":
        return diff(self, s)

    def subs(self, bindings: Mapping["Symbol", "Expr"]) -> "Expr":
        return substitute(self, bindings)

    @property
    def free_symbols(self) -> "SymbolTable":
        return free_symbols(self)


@dataclass(frozen=True, eq=False)
class Number(Expr):
    value: Union[int, float]

    @property
    def exact(self) -> bool:
        return type(self.value) is int

    def __eq__(self, other):
        return (isinstance(other, Number)
                and type(self.value) is type(other.value)
                and self.value == other.value)

    def __hash__(self):
        return hash((Number, type(self.value), self.value))

    def __repr__(self):
        return f"Number({self.value!r})"

    @cached_property
    def sort_key(self):
        return (0, float(self.value), 0 if self.exact else 1)


@dataclass(frozen=True)
class Symbol(Expr):
    name: str

    def __repr__(self):
        return f"Symbol({self.name!r})"

    @cached_property
    def sort_key(self):
        return (1, self.name)


@dataclass(frozen=True)
class Power(Expr):
    base: Expr
    exponent: Expr

    @cached_property
    def sort_key(self):
        return (3, self.base.sort_key, self.exponent.sort_key)


@dataclass(frozen=True)
class Product(Expr):
    factors: tuple

    @cached_property
    def sort_key(self):
        return (2, tuple(f.sort_key for f in self.factors))


@dataclass(frozen=True)
class Sum(Expr):
    terms: tuple

    @cached_property
    def sort_key(self):
        return (4, tuple(t.sort_key for t in self.terms))


@dataclass(frozen=True)
class FuncCall(Expr):
    fname: str
    arg: Expr

    @cached_property
    def sort_key(self):
        return (5, self.fname, self.arg.sort_key)


class SymbolTable(tuple):
    """Ordered, duplicate-free argument list; position is the argument index."""

    def __new__(cls, items: Iterable[Union[Symbol, str]] = ()):
        syms = tuple(s if isinstance(s, Symbol) else sym(s) for s in items)
        if len({s.name for s in syms}) != len(syms):
            raise ExprError(f"duplicate symbol in argument list: {[s.name for s in syms]}")
        return super().__new__(cls, syms)

    @cached_property
    def _index(self):
        return {s: i for i, s in enumerate(self)}

    def index_of(self, s: Symbol) -> int:
        return self._index[s]

    def __contains__(self, s) -> bool:
        return s in self._index

    @property
    def names(self) -> list[str]:
        return [s.name for s in self]

    def __repr__(self):
        return f"SymbolTable({self.names})"


# -- constructors ------------------------------------------------------------

def sym(name: str) -> Symbol:
    if not isinstance(name, str) or not _IDENT.match(name):
        raise ExprError(f"invalid symbol name: {name!r}")
    return Symbol(name)


def symbols(names: str) -> tuple[Symbol, ...]:
    """``symbols("x y z")`` -> (x, y, z)."""
    return tuple(sym(n) for n in names.replace(",", " ").split())


def num(v) -> Number:
    if isinstance(v, Number):
        return v
    if isinstance(v, bool):
        v = int(v)
    if isinstance(v, int):
        return Number(v) if abs(v) < _EXACT_LIMIT else Number(float(v))
    v = float(v)
    if not math.isfinite(v):
        raise ExprError(f"non-finite number: {v!r}")
    return Number(v)


def _coerce(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, float)):
        return num(x)
    return NotImplemented


def combine(kind: str, operands: Sequence[Expr]) -> Expr:
    """Build a normalized node. ``kind`` is add/sub/mul/div/pow/neg or a function name."""
    ops = [_coerce(o) for o in operands]
    binary = {"add", "sub", "mul", "div", "pow"}
    if kind.startswith("func:"):
        kind = kind[5:]
    want = 2 if kind in binary else 1
    if len(ops) != want:
        raise ExprError(f"{kind} takes {want} operand(s), got {len(ops)}")
    if kind == "add":
        return _add(ops)
    if kind == "sub":
        return _add([ops[0], _mul([Number(-1), ops[1]])])
    if kind == "mul":
        return _mul(ops)
    if kind == "div":
        return _mul([ops[0], _pow(ops[1], Number(-1))])
    if kind == "pow":
        return _pow(ops[0], ops[1])
    if kind == "neg":
        return _mul([Number(-1), ops[0]])
    if kind in FUNCTIONS:
        return FuncCall(kind, ops[0])
    raise ExprError(f"unknown combine kind: {kind!r}")


def _func(name):
    def f(e):
        return FuncCall(name, _coerce(e))
    f.__name__ = name
    return f


sin, cos, tan, exp, log, sqrt = (_func(n) for n in FUNCTIONS[:6])


# -- normalization -----------------------------------------------------------

def _is_num(e, v=None) -> bool:
    return isinstance(e, Number) and (v is None or e.value == v)


def _int_valued(e) -> bool:
    return isinstance(e, Number) and float(e.value).is_integer()


def _num_add(a, b):
    if type(a) is int and type(b) is int:
        r = a + b
        return r if abs(r) < _EXACT_LIMIT else float(r)
    return float(a) + float(b)


def _num_mul(a, b):
    if type(a) is int and type(b) is int:
        r = a * b
        return r if abs(r) < _EXACT_LIMIT else float(r)
    return float(a) * float(b)


def _split_coeff(term: Expr):
    if isinstance(term, Product) and isinstance(term.factors[0], Number):
        rest = term.factors[1:]
        return term.factors[0].value, rest[0] if len(rest) == 1 else Product(rest)
    return 1, term


def _scaled(c, rest: Expr) -> Expr:
    if c == 1:
        return rest
    if c == -1:
        c = -1
    if isinstance(rest, Product):
        return Product((Number(c),) + rest.factors)
    return Product((Number(c), rest))


def _add(terms: Sequence[Expr]) -> Expr:
    flat = []
    for t in terms:
        flat.extend(t.terms if isinstance(t, Sum) else (t,))
    const = 0
    groups: dict = {}
    for t in flat:
        if isinstance(t, Number):
            const = _num_add(const, t.value)
            continue
        c, rest = _split_coeff(t)
        groups[rest] = _num_add(groups[rest], c) if rest in groups else c
    out = [_scaled(c, rest) for rest, c in groups.items() if c != 0]
    out.sort(key=lambda e: e.sort_key)
    if const != 0:
        out.insert(0, Number(const))
    if not out:
        return Number(const)
    return out[0] if len(out) == 1 else Sum(tuple(out))


def _mul(factors: Sequence[Expr]) -> Expr:
    pending = list(factors)
    coeff = 1
    groups: dict = {}
    while pending:
        f = pending.pop()
        if isinstance(f, Product):
            pending.extend(f.factors)
        elif isinstance(f, Number):
            coeff = _num_mul(coeff, f.value)
        else:
            base, e = (f.base, f.exponent) if isinstance(f, Power) else (f, Number(1))
            groups.setdefault(base, []).append(e)
    if coeff == 0:
        return Number(0)
    if coeff == -1:
        coeff = -1
    out, refold = [], []
    for base, exps in groups.items():
        p = _pow(base, exps[0] if len(exps) == 1 else _add(exps))
        (refold if isinstance(p, (Number, Product)) else out).append(p)
    if refold:
        return _mul(out + refold + [Number(coeff)])
    out.sort(key=lambda e: e.sort_key)
    if coeff != 1:
        out.insert(0, Number(coeff))
    if not out:
        return Number(coeff)
    return out[0] if len(out) == 1 else Product(tuple(out))


def _int_pow(b: int, e: int):
    if abs(b) > 1 and e * math.log2(abs(b)) >= 53:
        return None
    r = b ** e
    return r if abs(r) < _EXACT_LIMIT else None


def _pow(b: Expr, e: Expr) -> Expr:
    if _is_num(e, 0):
        return Number(1)
    if _is_num(e, 1):
        return b
    if _is_num(b, 1):
        return Number(1)
    if _is_num(b, 0) and isinstance(e, Number) and e.value > 0:
        return Number(0)
    if isinstance(b, Number) and isinstance(e, Number):
        if b.exact and e.exact and e.value > 0:
            r = _int_pow(b.value, e.value)
            if r is not None:
                return Number(r)
        return Power(b, e)
    if _int_valued(e):
        if isinstance(b, Power):
            return _pow(b.base, _mul([b.exponent, e]))
        if isinstance(b, Product):
            return _mul([_pow(f, e) for f in b.factors])
    return Power(b, e)


def normalize(e: Expr) -> Expr:
    """Rebuild ``e`` bottom-up through the normalizing constructors."""
    if isinstance(e, (Symbol, Number)):
        return e
    if isinstance(e, Sum):
        return _add([normalize(t) for t in e.terms])
    if isinstance(e, Product):
        return _mul([normalize(f) for f in e.factors])
    if isinstance(e, Power):
        return _pow(normalize(e.base), normalize(e.exponent))
    if isinstance(e, FuncCall):
        return FuncCall(e.fname, normalize(e.arg))
    raise TypeError(f"not an expression: {e!r}")


# -- calculus and substitution -----------------------------------------------

def _depends(e: Expr, s: Symbol) -> bool:
    if isinstance(e, Symbol):
        return e == s
    if isinstance(e, Number):
        return False
    return any(_depends(c, s) for c in _children(e))


def _children(e: Expr) -> tuple:
    if isinstance(e, Sum):
        return e.terms
    if isinstance(e, Product):
        return e.factors
    if isinstance(e, Power):
        return (e.base, e.exponent)
    if isinstance(e, FuncCall):
        return (e.arg,)
    return ()


def _dfunc(fname: str, u: Expr) -> Expr:
    if fname == "sin":
        return FuncCall("cos", u)
    if fname == "cos":
        return _mul([Number(-1), FuncCall("sin", u)])
    if fname == "tan":
        return _pow(FuncCall("cos", u), Number(-2))
    if fname == "exp":
        return FuncCall("exp", u)
    if fname == "log":
        return _pow(u, Number(-1))
    if fname == "sqrt":
        return _mul([_pow(Number(2), Number(-1)), _pow(FuncCall("sqrt", u), Number(-1))])
    raise UnsupportedDerivative(f"derivative of {fname} is not supported")


def diff(e: Expr, s: Symbol) -> Expr:
    """Derivative of ``e`` with respect to symbol ``s`` (normalized).

    Subtrees free of ``s`` differentiate to 0 without being inspected, so
    ``abs`` only raises where it actually depends on ``s``.
    """
    if not isinstance(s, Symbol):
        raise ExprError(f"can only differentiate with respect to a symbol, got {s!r}")
    if isinstance(e, Number) or not _depends(e, s):
        return Number(0)
    if isinstance(e, Symbol):
        return Number(1 if e == s else 0)
    if isinstance(e, Sum):
        return _add([diff(t, s) for t in e.terms])
    if isinstance(e, Product):
        terms = []
        for i, f in enumerate(e.factors):
            df = diff(f, s)
            if _is_num(df, 0):
                continue
            terms.append(_mul([df, *e.factors[:i], *e.factors[i + 1:]]))
        return _add(terms)
    if isinstance(e, Power):
        b, p = e.base, e.exponent
        db = diff(b, s)
        if not _depends(p, s):
            if _is_num(db, 0):
                return Number(0)
            return _mul([p, _pow(b, _add([p, Number(-1)])), db])
        dp = diff(p, s)
        return _mul([e, _add([_mul([dp, FuncCall("log", b)]),
                              _mul([p, db, _pow(b, Number(-1))])])])
    if isinstance(e, FuncCall):
        if e.fname == "abs":
            raise UnsupportedDerivative("derivative of abs is not supported")
        du = diff(e.arg, s)
        if _is_num(du, 0):
            return Number(0)
        return _mul([_dfunc(e.fname, e.arg), du])
    raise TypeError(f"not an expression: {e!r}")


def substitute(e: Expr, bindings: Mapping[Symbol, Expr]) -> Expr:
    """Simultaneous substitution followed by normalization."""
    if not bindings:
        return e
    b = {(sym(k) if isinstance(k, str) else k): _coerce(v) for k, v in bindings.items()}

    def go(x):
        if isinstance(x, Symbol):
            return b.get(x, x)
        if isinstance(x, Number):
            return x
        if isinstance(x, Sum):
            return _add([go(t) for t in x.terms])
        if isinstance(x, Product):
            return _mul([go(f) for f in x.factors])
        if isinstance(x, Power):
            return _pow(go(x.base), go(x.exponent))
        return FuncCall(x.fname, go(x.arg))

    return go(e)


def free_symbols(e: Expr) -> SymbolTable:
    found = set()
    stack = [e]
    while stack:
        x = stack.pop()
        if isinstance(x, Symbol):
            found.add(x)
        else:
            stack.extend(_children(x))
    return SymbolTable(sorted(found, key=lambda s: s.name))


def node_count(e: Expr) -> int:
    return 1 + sum(node_count(c) for c in _children(e))


# -- post-order linearization ------------------------------------------------

def postorder(e: Expr) -> list:
    """Post-order atom list: leaves are Symbol/Number, operators are strings.

    An n-ary sum or product contributes n-1 operator atoms, folded left:
    ``x+y+z`` -> ``[x, y, '+', z, '+']``.
    """
    out: list = []

    def go(x):
        if isinstance(x, (Symbol, Number)):
            out.append(x)
        elif isinstance(x, (Sum, Product)):
            op = "+" if isinstance(x, Sum) else "*"
            kids = _children(x)
            go(kids[0])
            for k in kids[1:]:
                go(k)
                out.append(op)
        elif isinstance(x, Power):
            go(x.base)
            go(x.exponent)
            out.append("^")
        else:
            go(x.arg)
            out.append(x.fname)

    go(e)
    return out


def from_postorder(atoms: Sequence) -> Expr:
    """Shift-reduce a post-order atom list back into a normalized tree."""
    stack: list = []
    for a in atoms:
        if isinstance(a, Expr):
            stack.append(a)
        elif a in ("+", "*", "^"):
            if len(stack) < 2:
                raise ExprError("postfix underflow")
            r, l = stack.pop(), stack.pop()
            stack.append({"+": _add, "*": _mul}[a]([l, r]) if a != "^" else _pow(l, r))
        elif a in FUNCTIONS:
            if not stack:
                raise ExprError("postfix underflow")
            stack.append(FuncCall(a, stack.pop()))
        else:
            raise ExprError(f"unknown postfix atom {a!r}")
    if len(stack) != 1:
        raise ExprError(f"postfix leaves {len(stack)} values on the stack")
    return stack[0]


# -- rendering ---------------------------------------------------------------

def _fmt_num(v) -> str:
    return str(v) if type(v) is int else repr(float(v))


def render(e: Expr) -> str:
    """Infix rendering with minimal parentheses; reparses to the same tree."""
    return _render(e)


def _render(e: Expr) -> str:
    if isinstance(e, Number):
        return _fmt_num(e.value)
    if isinstance(e, Symbol):
        return e.name
    if isinstance(e, FuncCall):
        return f"{e.fname}({_render(e.arg)})"
    if isinstance(e, Power):
        return f"{_pow_operand(e.base, True)}^{_pow_operand(e.exponent, False)}"
    if isinstance(e, Product):
        return _render_product(e)
    parts = []
    for i, t in enumerate(e.terms):
        c, rest = _split_coeff(t)
        if isinstance(t, Number):
            c, rest = t.value, None
        if i > 0 and c < 0:
            parts.append(" - " + _render_scaled(-c, rest))
        elif i > 0:
            parts.append(" + " + _render_scaled(c, rest))
        else:
            parts.append(_render_scaled(c, rest) if c >= 0 else "-" + _render_scaled(-c, rest))
    return "".join(parts)


def _render_scaled(c, rest) -> str:
    if rest is None:
        return _fmt_num(c)
    if c == 1 and type(c) is int:
        return f"({_render(rest)})" if isinstance(rest, Sum) else _render(rest)
    return _render_product(Product((Number(c),) + (rest.factors if isinstance(rest, Product) else (rest,))))


def _render_product(p: Product) -> str:
    factors = list(p.factors)
    sign = ""
    lead = None
    if isinstance(factors[0], Number):
        v = factors.pop(0).value
        if v < 0:
            sign, v = "-", -v
        if not (v == 1 and type(v) is int):
            lead = _fmt_num(v)
    numer = [lead] if lead is not None else []
    denom = []
    for f in factors:
        # only integral exponents: (b^k)^-1 folds back to b^-k when reparsed
        if (isinstance(f, Power) and isinstance(f.exponent, Number) and f.exponent.value < 0
                and float(f.exponent.value).is_integer()):
            inv = -f.exponent.value
            if inv == 1 and type(inv) is int:
                denom.append(_mul_operand(f.base, denominator=True))
            else:
                denom.append(_mul_operand(Power(f.base, Number(inv)), denominator=True))
        else:
            numer.append(_mul_operand(f))
    s = "*".join(numer) if numer else "1"
    if denom:
        s += "/" + "/".join(denom)
    return sign + s


def _mul_operand(e: Expr, denominator: bool = False) -> str:
    if isinstance(e, (Sum, Product)) or (isinstance(e, Number) and e.value < 0):
        return f"({_render(e)})"
    return _render(e)


def _pow_operand(e: Expr, is_base: bool) -> str:
    if isinstance(e, (Sum, Product)) or (isinstance(e, Number) and e.value < 0):
        return f"({_render(e)})"
    if is_base and isinstance(e, Power):
        return f"({_render(e)})"
    return _render(e)

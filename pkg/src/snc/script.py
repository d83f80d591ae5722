"""SNC script: a small Matlab-like language over the expression engine.

    R = 0.127-(x*0.194/(y+0.194))
    Rdy=diff(R,y)
    fun=compile(Rdy)
    fun(0.362,0.556)

Statements are assignments or bare expressions, one per line. Unbound
identifiers are free symbols. Builtins: the elementary functions,
``diff(e, s)`` and ``compile(e)`` (arguments are the free symbols of ``e``
in name order). Calling a compiled function prints its value, and so does
any bare expression without free symbols.
"""
from __future__ import annotations

import re
import sys
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .expr import (
    FUNCTIONS, Expr, Number, Symbol, combine, diff, free_symbols, num, render,
)

__all__ = [
    "Token", "ScriptError", "tokenize", "parse", "parse_expr", "Session", "ScriptFunc",
    "exec_script", "format_value",
]


class ScriptError(Exception):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        where = ""
        if line is not None:
            where = f"line {line}, column {col}: " if col is not None else f"line {line}: "
        super().__init__(where + message)
        self.line, self.col = line, col


class Token(NamedTuple):
    kind: str  # number identifier operator lparen rparen comma assign newline
    lexeme: str
    line: int
    col: int


_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<identifier>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<operator>[-+*/^])
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<comma>,)
  | (?P<assign>=)
  | (?P<newline>[\n;])
""", re.VERBOSE)


def tokenize(source: str) -> list[Token]:
    out: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        col = pos - line_start + 1
        if m is None:
            raise ScriptError(f"illegal character {source[pos]!r}", line, col)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            out.append(Token(kind, m.group(), line, col))
        pos = m.end()
        if kind == "newline" and m.group() == "\n":
            line, line_start = line + 1, pos
    return out


# -- Shunting-Yard ----------------------------------------------------------------

# parse nodes: ("num", float) ("id", name) ("neg", a) ("bin", op, a, b) ("call", name, args)
_BINARY = {"+": (1, "left"), "-": (1, "left"), "*": (2, "left"), "/": (2, "left"),
           "^": (4, "right")}
_NEG_PREC = 3


@dataclass
class _Call:
    name: str
    tok: Token
    argc: int = 0


def _parse_tokens(tokens: list[Token]):
    """Shunting-Yard over one statement's tokens, building parse nodes."""
    if not tokens:
        raise ScriptError("empty expression")
    output: list = []
    ops: list = []  # entries: ("bin", op, tok) ("neg", tok) ("lparen", tok, call-or-None)
    expect_operand = True

    def reduce(entry):
        kind, tok = entry[0], entry[-1]
        if kind == "neg":
            if not output:
                raise ScriptError("dangling operator '-'", tok.line, tok.col)
            output.append(("neg", output.pop()))
            return
        if len(output) < 2:
            raise ScriptError(f"dangling operator {entry[1]!r}", tok.line, tok.col)
        b, a = output.pop(), output.pop()
        output.append(("bin", entry[1], a, b))

    i = 0
    while i < len(tokens):
        tok = tokens[i]
        nxt = tokens[i + 1] if i + 1 < len(tokens) else None
        if expect_operand:
            if tok.kind == "number":
                output.append(("num", float(tok.lexeme)))
                expect_operand = False
            elif tok.kind == "identifier" and nxt is not None and nxt.kind == "lparen":
                ops.append(("lparen", nxt, _Call(tok.lexeme, tok)))
                i += 1
                if i + 1 < len(tokens) and tokens[i + 1].kind == "rparen":
                    # zero-argument call
                    ops.pop()
                    output.append(("call", tok.lexeme, ()))
                    i += 1
                    expect_operand = False
            elif tok.kind == "identifier":
                output.append(("id", tok.lexeme))
                expect_operand = False
            elif tok.kind == "lparen":
                ops.append(("lparen", tok, None))
            elif tok.kind == "operator" and tok.lexeme == "-":
                ops.append(("neg", tok))
            elif tok.kind == "operator" and tok.lexeme == "+":
                pass
            else:
                what = "end of input" if tok.kind == "newline" else repr(tok.lexeme)
                raise ScriptError(f"expected an operand, found {what}", tok.line, tok.col)
        else:
            if tok.kind == "operator":
                prec, assoc = _BINARY[tok.lexeme]
                while ops and ops[-1][0] != "lparen":
                    top = ops[-1]
                    top_prec = _NEG_PREC if top[0] == "neg" else _BINARY[top[1]][0]
                    if top_prec > prec or (top_prec == prec and assoc == "left"):
                        reduce(ops.pop())
                    else:
                        break
                ops.append(("bin", tok.lexeme, tok))
                expect_operand = True
            elif tok.kind in ("rparen", "comma"):
                while ops and ops[-1][0] != "lparen":
                    reduce(ops.pop())
                if not ops:
                    raise ScriptError(f"unexpected {tok.lexeme!r}", tok.line, tok.col)
                call = ops[-1][2]
                if tok.kind == "comma":
                    if call is None:
                        raise ScriptError("',' outside a function call", tok.line, tok.col)
                    call.argc += 1
                    expect_operand = True
                else:
                    ops.pop()
                    if call is not None:
                        n = call.argc + 1
                        args = tuple(output[-n:])
                        del output[-n:]
                        output.append(("call", call.name, args))
            else:
                what = repr(tok.lexeme) if tok.kind != "newline" else "line break"
                raise ScriptError(f"unexpected {what} after an operand", tok.line, tok.col)
        i += 1
    if expect_operand:
        tok = tokens[-1]
        raise ScriptError("expression ends with a dangling operator", tok.line, tok.col)
    while ops:
        entry = ops.pop()
        if entry[0] == "lparen":
            raise ScriptError("unmatched '('", entry[1].line, entry[1].col)
        reduce(entry)
    if len(output) != 1:  # pragma: no cover - guarded by expect_operand tracking
        raise ScriptError("malformed expression")
    return output[0]


def _node_to_expr(node, resolve: Callable[[str], Expr] | None = None) -> Expr:
    kind = node[0]
    if kind == "num":
        return num(node[1])
    if kind == "id":
        return resolve(node[1]) if resolve else Symbol(node[1])
    if kind == "neg":
        return combine("neg", [_node_to_expr(node[1], resolve)])
    if kind == "bin":
        op = {"+": "add", "-": "sub", "*": "mul", "/": "div", "^": "pow"}[node[1]]
        return combine(op, [_node_to_expr(node[2], resolve), _node_to_expr(node[3], resolve)])
    name, args = node[1], node[2]
    if name not in FUNCTIONS:
        raise ScriptError(f"unknown function {name!r}")
    if len(args) != 1:
        raise ScriptError(f"{name} takes 1 argument, got {len(args)}")
    return combine(name, [_node_to_expr(args[0], resolve)])


def parse_expr(source: str | list[Token]) -> Expr:
    """Parse one expression (text or tokens) into a normalized Expr."""
    tokens = tokenize(source) if isinstance(source, str) else list(source)
    tokens = [t for t in tokens if t.kind != "newline"]
    return _node_to_expr(_parse_tokens(tokens))


# -- statements ---------------------------------------------------------------------

@dataclass(frozen=True)
class Statement:
    target: str | None  # None for a bare expression
    node: tuple
    line: int


def parse(source: str) -> list[Statement]:
    stmts, current = [], []
    for tok in tokenize(source) + [Token("newline", "\n", -1, -1)]:
        if tok.kind != "newline":
            current.append(tok)
            continue
        if current:
            stmts.append(_statement(current))
            current = []
    return stmts


def _statement(tokens: list[Token]) -> Statement:
    line = tokens[0].line
    if len(tokens) >= 2 and tokens[1].kind == "assign":
        if tokens[0].kind != "identifier":
            raise ScriptError("can only assign to a name", line, tokens[0].col)
        target, body = tokens[0].lexeme, tokens[2:]
        if not body:
            raise ScriptError("missing expression after '='", line, tokens[1].col)
    else:
        target, body = None, tokens
    for t in body:
        if t.kind == "assign":
            raise ScriptError("unexpected '='", t.line, t.col)
    return Statement(target, _parse_tokens(body), line)


# -- execution ----------------------------------------------------------------------

class ScriptFunc:
    """A compiled script function, evaluated in-process or on the cloud."""

    def __init__(self, expr: Expr, session: "Session"):
        self.expr = expr
        self.args = free_symbols(expr)
        self.remote = session.target == "remote"
        if self.remote:
            from .client import CloudFunc

            self._cloud = CloudFunc(self.args, expr, config=session.config)
        else:
            from .codegen import compile as jit_compile

            self._fn = jit_compile(self.args, expr)

    @property
    def arity(self) -> int:
        return len(self.args)

    def __call__(self, values) -> float:
        if len(values) != self.arity:
            raise ScriptError(f"function of ({', '.join(self.args.names)}) called with "
                              f"{len(values)} argument(s)")
        if not self.remote:
            return float(self._fn(np.asarray(values, dtype=np.float64)))
        from .client import CloudSD

        cfg = self._cloud.config
        inp = CloudSD(config=cfg).init(np.asarray(values, dtype=np.float64))
        out = CloudSD(config=cfg)
        self._cloud.apply(out, inp)
        if not out.fetch_to_local():
            raise ScriptError(f"fetching the result failed: {out.last_error}")
        return out.get_data(0)

    def __repr__(self):
        return f"<compiled ({', '.join(self.args.names)}) -> {render(self.expr)}>"


def format_value(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, Number):
        return format(float(v.value), ".17g")
    if isinstance(v, Expr):
        return render(v)
    return repr(v)


_BUILTINS = frozenset(FUNCTIONS) | {"diff", "compile"}


def _closed_value(v):
    """Numeric value of an expression without free symbols; other values pass through."""
    if isinstance(v, Number):
        return float(v.value)
    if isinstance(v, Expr) and not free_symbols(v).names:
        from .codegen import interpret, linearize

        return interpret(linearize(v, []), [])
    return v


class Session:
    """Name environment for one script context.

    ``target`` is "local" (JIT in-process) or "remote" (through the client
    SDK to the configured cloud; pass a CloudConfig or rely on the global one).
    """

    def __init__(self, target: str = "local", config=None, out: Callable[[str], None] | None = None):
        if target not in ("local", "remote"):
            raise ValueError("target must be 'local' or 'remote'")
        self.target = target
        if target == "remote" and config is None:
            from .client import CloudConfig, global_config

            config = global_config()
            if config.threshold:
                config = CloudConfig(config.sched_addr, config.data_addr, threshold=0)
        self.config = config
        self.env: dict[str, object] = {}
        self.out = out if out is not None else print

    def run(self, source: str) -> list:
        results = []
        for st in parse(source):
            try:
                value = self._eval(st.node)
            except ScriptError as exc:
                if exc.line is None:
                    raise ScriptError(str(exc), st.line) from exc
                raise
            except (ValueError, ArithmeticError) as exc:
                raise ScriptError(str(exc), st.line) from exc
            if st.target is not None:
                if st.target in _BUILTINS:
                    raise ScriptError(f"cannot assign to builtin {st.target!r}", st.line)
                self.env[st.target] = value
                continue
            if isinstance(value, ScriptFunc):
                raise ScriptError("a compiled function must be called, not printed", st.line)
            value = _closed_value(value)
            results.append(value)
            self.out(format_value(value))
        return results

    def _value(self, node) -> Expr:
        v = self._eval(node)
        if isinstance(v, ScriptFunc):
            raise ScriptError("compiled functions cannot be used inside expressions")
        if isinstance(v, float):
            return num(v)
        return v

    def _eval(self, node):
        kind = node[0]
        if kind == "num":
            return num(node[1])
        if kind == "id":
            name = node[1]
            if name in self.env:
                return self.env[name]
            if name in _BUILTINS:
                raise ScriptError(f"builtin {name!r} must be called")
            return Symbol(name)
        if kind == "neg":
            return combine("neg", [self._value(node[1])])
        if kind == "bin":
            op = {"+": "add", "-": "sub", "*": "mul", "/": "div", "^": "pow"}[node[1]]
            return combine(op, [self._value(node[2]), self._value(node[3])])
        return self._call(node[1], node[2])

    def _call(self, name: str, args):
        if name in self.env:
            fn = self.env[name]
            if not isinstance(fn, ScriptFunc):
                raise ScriptError(f"{name!r} is not a function")
            values = []
            for a in args:
                v = _closed_value(self._value(a))
                if not isinstance(v, float):
                    raise ScriptError(f"argument {render(v)!r} of {name}() is not numeric")
                values.append(v)
            return fn(values)
        if name == "diff":
            if len(args) != 2:
                raise ScriptError(f"diff takes 2 arguments, got {len(args)}")
            e, s = self._value(args[0]), self._value(args[1])
            if not isinstance(s, Symbol):
                raise ScriptError("diff: second argument must be a symbol")
            return diff(e, s)
        if name == "compile":
            if len(args) != 1:
                raise ScriptError(f"compile takes 1 argument, got {len(args)}")
            return ScriptFunc(self._value(args[0]), self)
        if name in FUNCTIONS:
            if len(args) != 1:
                raise ScriptError(f"{name} takes 1 argument, got {len(args)}")
            return combine(name, [self._value(args[0])])
        raise ScriptError(f"undefined name {name!r}")


def exec_script(source: str, session: Session | None = None, target: str = "local",
                config=None, out: Callable[[str], None] | None = None) -> list:
    """Run ``source``; returns the values of bare statements (also printed via ``out``)."""
    if session is None:
        session = Session(target, config, out)
    return session.run(source)


def repl(session: Session, stream=None) -> None:  # pragma: no cover - interactive
    stream = stream or sys.stdin
    interactive = stream.isatty()
    while True:
        if interactive:
            print("snc> ", end="", flush=True)
        line = stream.readline()
        if not line:
            break
        try:
            session.run(line)
        except ScriptError as exc:
            print(f"error: {exc}", file=sys.stderr)
            if not interactive:
                raise

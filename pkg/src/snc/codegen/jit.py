"""Native code generation for SNC-IR through LLVM (llvmlite).

Four function shapes are produced, all taking a flat ``double*`` argument
block:

    scalar        double f(double *args)
    batch         int    f(double *args, double *out)        out[k]
    vectorized    int    f(double *args, double *out)        args[i*V + j], out[j]
    vec. batch    int    f(double *args, double *out)        out[k*V + j]

No fast-math flags are set and PowI expands to the interpreter's exact
squaring sequence, so native results track the reference interpreter.
"""
from __future__ import annotations

import ctypes
import logging
import os
import threading
from typing import Sequence

import numpy as np

from ..expr import Expr, SymbolTable
from .interp import interpret, interpret_vec
from .ir import FUNCTIONS, InstrList, IRError, Op, linearize, validate

log = logging.getLogger(__name__)

try:
    import llvmlite.binding as llvm
    import llvmlite.ir as lir
except ImportError:  # pragma: no cover - exercised only on stripped installs
    llvm = lir = None


class BackendError(RuntimeError):
    """Code generation failed; raised instead of aborting the process."""


_LLVM_LOCK = threading.Lock()
_HOST = None


def _target_machine():
    """A fresh target machine; each execution engine takes ownership of its own."""
    global _HOST
    if _HOST is None:
        llvm.initialize_native_target()
        llvm.initialize_native_asmprinter()
        _HOST = (llvm.get_host_cpu_name(), llvm.get_host_cpu_features().flatten())
    cpu, features = _HOST
    return llvm.Target.from_default_triple().create_target_machine(
        cpu=cpu, features=features, opt=2)


def native_available() -> bool:
    if llvm is None or os.environ.get("SNC_BACKEND", "").lower() == "interp":
        return False
    try:
        with _LLVM_LOCK:
            _target_machine()
    except Exception as exc:  # pragma: no cover
        log.warning("native backend unavailable: %s", exc)
        return False
    return True


# -- LLVM IR emission ----------------------------------------------------------

class _Emitter:
    def __init__(self, module):
        self.module = module
        self.dbl = lir.DoubleType()
        self._decls = {}

    def _decl(self, name):
        if name not in self._decls:
            if name == "sqrt":
                fn = self.module.declare_intrinsic("llvm.sqrt", [self.dbl])
            elif name == "abs":
                fn = self.module.declare_intrinsic("llvm.fabs", [self.dbl])
            else:
                arity = 2 if name == "pow" else 1
                fn = lir.Function(self.module, lir.FunctionType(self.dbl, [self.dbl] * arity), name)
            self._decls[name] = fn
        return self._decls[name]

    def powi(self, b, n):
        m = -n if n < 0 else n
        r = None
        while True:
            if m & 1:
                r = b if r is None else self.builder.fmul(r, b)
            m >>= 1
            if m == 0:
                break
            b = self.builder.fmul(b, b)
        if r is None:
            r = lir.Constant(self.dbl, 1.0)
        if n < 0:
            r = self.builder.fdiv(lir.Constant(self.dbl, 1.0), r)
        return r

    def expr(self, builder, ir: InstrList, load):
        self.builder = builder
        stack = []
        for op, arg in ir.code:
            if op == Op.LOAD_ARG:
                stack.append(load(arg))
            elif op == Op.CONST:
                stack.append(lir.Constant(self.dbl, arg))
            elif op == Op.ADD:
                r = stack.pop()
                stack.append(builder.fadd(stack.pop(), r))
            elif op == Op.MUL:
                r = stack.pop()
                stack.append(builder.fmul(stack.pop(), r))
            elif op == Op.POW:
                p = stack.pop()
                stack.append(builder.call(self._decl("pow"), [stack.pop(), p]))
            elif op == Op.POWI:
                stack.append(self.powi(stack.pop(), arg))
            else:
                stack.append(builder.call(self._decl(FUNCTIONS[arg]), [stack.pop()]))
        return stack[0]


def _build_module(irs: Sequence[InstrList], shape: str):
    module = lir.Module(name="snc")
    em = _Emitter(module)
    dbl, i32, i64 = em.dbl, lir.IntType(32), lir.IntType(64)
    pdbl = dbl.as_pointer()
    if shape == "scalar":
        fn = lir.Function(module, lir.FunctionType(dbl, [pdbl]), "snc_fn")
        b = lir.IRBuilder(fn.append_basic_block("entry"))
        loads = {}

        def load(i):
            if i not in loads:
                loads[i] = b.load(b.gep(fn.args[0], [lir.Constant(i64, i)]))
            return loads[i]

        b.ret(em.expr(b, irs[0], load))
        return module

    fn = lir.Function(module, lir.FunctionType(i32, [pdbl, pdbl]), "snc_fn")
    fn.args[0].add_attribute("noalias")
    fn.args[1].add_attribute("noalias")
    args, out = fn.args
    entry = fn.append_basic_block("entry")
    b = lir.IRBuilder(entry)
    if shape == "batch":
        loads = {}

        def load(i):
            if i not in loads:
                loads[i] = b.load(b.gep(args, [lir.Constant(i64, i)]))
            return loads[i]

        for k, ir in enumerate(irs):
            v = em.expr(b, ir, load)
            b.store(v, b.gep(out, [lir.Constant(i64, k)]))
        b.ret(lir.Constant(i32, 0))
        return module

    vec_len = irs[0].vec_len
    loop = fn.append_basic_block("loop")
    done = fn.append_basic_block("done")
    b.branch(loop)
    b.position_at_end(loop)
    j = b.phi(i64, "j")
    j.add_incoming(lir.Constant(i64, 0), entry)
    loads = {}

    def vload(i):
        if i not in loads:
            idx = b.add(lir.Constant(i64, i * vec_len), j)
            loads[i] = b.load(b.gep(args, [idx]))
        return loads[i]

    for k, ir in enumerate(irs):
        v = em.expr(b, ir, vload)
        b.store(v, b.gep(out, [b.add(lir.Constant(i64, k * vec_len), j)]))
    nxt = b.add(j, lir.Constant(i64, 1))
    j.add_incoming(nxt, b.block)
    b.cbranch(b.icmp_unsigned("<", nxt, lir.Constant(i64, vec_len)), loop, done)
    b.position_at_end(done)
    b.ret(lir.Constant(i32, 0))
    return module


def _native(irs: Sequence[InstrList], shape: str):
    try:
        with _LLVM_LOCK:
            tm = _target_machine()
            mod = llvm.parse_assembly(str(_build_module(irs, shape)))
            mod.verify()
            pto = llvm.create_pipeline_tuning_options(speed_level=2)
            pb = llvm.create_pass_builder(tm, pto)
            pb.getModulePassManager().run(mod, pb)
            engine = llvm.create_mcjit_compiler(mod, tm)
            engine.finalize_object()
            addr = engine.get_function_address("snc_fn")
    except Exception as exc:
        raise BackendError(f"LLVM code generation failed: {exc}") from exc
    if shape == "scalar":
        proto = ctypes.CFUNCTYPE(ctypes.c_double, ctypes.c_void_p)
    else:
        proto = ctypes.CFUNCTYPE(ctypes.c_int, ctypes.c_void_p, ctypes.c_void_p)
    return engine, proto(addr)


# -- compiled handles ------------------------------------------------------------

class _Compiled:
    shape = ""

    def __init__(self, irs: Sequence[InstrList], backend: str):
        self.irs = list(irs)
        self.arity = self.irs[0].arity
        self.vec_len = self.irs[0].vec_len
        self.backend = backend
        # the engine owns the machine code; keep it alive with the handle
        self._engine, self._fn = _native(self.irs, self.shape) if backend == "llvm" else (None, None)

    @property
    def count(self) -> int:
        return len(self.irs)

    def _flat_args(self, args) -> np.ndarray:
        a = np.ascontiguousarray(args, dtype=np.float64).reshape(-1)
        want = self.arity * max(self.vec_len, 1)
        if a.size != want:
            raise ValueError(f"expected {want} argument values, got {a.size}")
        return a

    def __repr__(self):
        return (f"<{type(self).__name__} arity={self.arity} count={self.count} "
                f"vec_len={self.vec_len} backend={self.backend}>")


class CompiledFunc(_Compiled):
    """Scalar function: ``f([a0, a1, ...]) -> float``."""

    shape = "scalar"

    def __call__(self, *args) -> float:
        if len(args) == 1 and np.ndim(args[0]) == 1:
            args = args[0]
        if self._fn is None:
            return interpret(self.irs[0], args)
        if len(args) != self.arity:
            raise ValueError(f"expected {self.arity} argument values, got {len(args)}")
        buf = (ctypes.c_double * max(self.arity, 1))(*args)
        return self._fn(ctypes.addressof(buf))


class CompiledBatchFunc(_Compiled):
    """Several expressions sharing one argument tuple: ``f(args) -> array[k]``."""

    shape = "batch"

    def __call__(self, args) -> np.ndarray:
        a = self._flat_args(args)
        if self._fn is None:
            return np.array([interpret(ir, a) for ir in self.irs])
        out = np.empty(self.count)
        self._fn(a.ctypes.data, out.ctypes.data)
        return out


class CompiledVecFunc(_Compiled):
    """One expression at ``vec_len`` points; args shaped (arity, vec_len)."""

    shape = "vec"

    def __call__(self, args) -> np.ndarray:
        a = self._flat_args(args)
        if self._fn is None:
            return interpret_vec(self.irs[0], a.reshape(self.arity, self.vec_len))
        out = np.empty(self.vec_len)
        self._fn(a.ctypes.data, out.ctypes.data)
        return out


class CompiledVecBatchFunc(_Compiled):
    """k expressions at ``vec_len`` points; output shaped (k, vec_len), expression-major."""

    shape = "vec"

    def __call__(self, args) -> np.ndarray:
        a = self._flat_args(args)
        if self._fn is None:
            pts = a.reshape(self.arity, self.vec_len)
            return np.stack([interpret_vec(ir, pts) for ir in self.irs])
        out = np.empty((self.count, self.vec_len))
        self._fn(a.ctypes.data, out.ctypes.data)
        return out


class JIT:
    """A compilation engine. One instance is not meant for concurrent compile calls."""

    def __init__(self, backend: str = "auto"):
        if backend == "auto":
            backend = "llvm" if native_available() else "interp"
        if backend not in ("llvm", "interp"):
            raise ValueError(f"unknown backend {backend!r}")
        self.backend = backend

    def compile(self, args, e: Expr) -> CompiledFunc:
        return CompiledFunc([linearize(e, SymbolTable(args))], self.backend)

    def batch_compile(self, args, es: Sequence[Expr]) -> CompiledBatchFunc:
        table = SymbolTable(args)
        return CompiledBatchFunc([linearize(e, table) for e in _nonempty(es)], self.backend)

    def vec_compile(self, args, vec_len: int, e: Expr) -> CompiledVecFunc:
        return CompiledVecFunc([linearize(e, SymbolTable(args), _check_len(vec_len))], self.backend)

    def vec_batch_compile(self, args, vec_len: int, es: Sequence[Expr]) -> CompiledVecBatchFunc:
        table = SymbolTable(args)
        n = _check_len(vec_len)
        return CompiledVecBatchFunc([linearize(e, table, n) for e in _nonempty(es)], self.backend)

    def compile_ir(self, irs: Sequence[InstrList]):
        """Compile already-linearized programs, choosing the shape from count and vec_len."""
        irs = list(irs)
        for ir in irs:
            validate(ir)
        if not irs or len({(ir.arity, ir.vec_len) for ir in irs}) != 1:
            raise IRError(IRError.BAD_OPERAND, "programs must share arity and vec_len")
        vec = irs[0].vec_len > 0
        if len(irs) == 1:
            cls = CompiledVecFunc if vec else CompiledFunc
        else:
            cls = CompiledVecBatchFunc if vec else CompiledBatchFunc
        return cls(irs, self.backend)


def _nonempty(es):
    es = list(es)
    if not es:
        raise ValueError("expression list is empty")
    return es


def _check_len(vec_len: int) -> int:
    if not (0 < vec_len < 2 ** 32):
        raise ValueError(f"vec_len must be in [1, 2^32), got {vec_len}")
    return int(vec_len)


_default: JIT | None = None


def default_jit() -> JIT:
    global _default
    if _default is None:
        _default = JIT()
    return _default


def compile(args, e: Expr) -> CompiledFunc:  # noqa: A001 - mirrors the public API name
    return default_jit().compile(args, e)


def batch_compile(args, es: Sequence[Expr]) -> CompiledBatchFunc:
    return default_jit().batch_compile(args, es)


def vec_compile(args, vec_len: int, e: Expr) -> CompiledVecFunc:
    return default_jit().vec_compile(args, vec_len, e)


def vec_batch_compile(args, vec_len: int, es: Sequence[Expr]) -> CompiledVecBatchFunc:
    return default_jit().vec_batch_compile(args, vec_len, es)

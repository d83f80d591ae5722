"""Linearization to SNC-IR, the reference interpreter and the native JIT."""
from .interp import interpret, interpret_vec, powi
from .ir import (
    IRError, Instr, InstrList, Op, POWI_LIMIT, deserialize_batch, deserialize_ir,
    linearize, serialize_batch, serialize_ir, validate,
)
from .jit import (
    JIT, BackendError, CompiledBatchFunc, CompiledFunc, CompiledVecBatchFunc,
    CompiledVecFunc, batch_compile, compile, default_jit, native_available,
    vec_batch_compile, vec_compile,
)

__all__ = [
    "IRError", "Instr", "InstrList", "Op", "POWI_LIMIT", "deserialize_batch",
    "deserialize_ir", "linearize", "serialize_batch", "serialize_ir", "validate",
    "interpret", "interpret_vec", "powi", "JIT", "BackendError", "CompiledFunc",
    "CompiledBatchFunc", "CompiledVecFunc", "CompiledVecBatchFunc", "compile",
    "batch_compile", "vec_compile", "vec_batch_compile", "default_jit",
    "native_available",
]

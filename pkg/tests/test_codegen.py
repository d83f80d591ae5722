import gc
import math
import threading

import numpy as np
import pytest

from oracles import IR_OF_X, HALF_CELL_VALUE, random_expr, rel_close, tree_eval
from snc.codegen import (
    JIT, IRError, Instr, InstrList, Op, batch_compile, compile, deserialize_batch,
    deserialize_ir, interpret, interpret_vec, linearize, native_available, powi,
    serialize_batch, serialize_ir, validate, vec_batch_compile, vec_compile,
)
from snc.expr import diff, log, num, sin, sqrt, symbols

x, y, z = symbols("x y z")
NAMES = symbols("a b x y z")

native = pytest.mark.skipif(not native_available(), reason="native backend unavailable")


def code(ir):
    return [repr(i) for i in ir.code]


class TestLinearize:
    def test_single_symbol(self):
        assert code(linearize(x, [x])) == ["LoadArg 0"]

    def test_fig4(self):
        e = x * y + z ** 3
        assert code(linearize(e, [x, y, z])) == [
            "LoadArg 0", "LoadArg 1", "Mul", "LoadArg 2", "PowI 3", "Add"]

    def test_float_integral_exponent_uses_powi(self):
        assert code(linearize(x ** 2.0, [x])) == ["LoadArg 0", "PowI 2"]

    def test_symbolic_exponent_uses_pow(self):
        assert code(linearize(x ** y, [x, y])) == ["LoadArg 0", "LoadArg 1", "Pow"]

    def test_large_exponent_uses_pow(self):
        assert code(linearize(x ** 65, [x])) == ["LoadArg 0", "Const 65.0", "Pow"]
        assert code(linearize(x ** -64, [x]))[-1] == "PowI -64"

    def test_fractional_exponent(self):
        assert code(linearize(sqrt(x), [x])) == ["LoadArg 0", "Call sqrt"]
        assert code(linearize(x ** 2.5, [x])) == ["LoadArg 0", "Const 2.5", "Pow"]

    def test_argument_order_follows_table(self):
        assert code(linearize(x + y, [y, x])) == ["LoadArg 1", "LoadArg 0", "Add"]

    def test_unbound_symbol(self):
        with pytest.raises(IRError) as ei:
            linearize(x + y, [x])
        assert ei.value.code == IRError.UNBOUND

    def test_random_programs_are_valid(self):
        rng = np.random.default_rng(10)
        for _ in range(300):
            ir = linearize(random_expr(rng, 7), NAMES)
            validate(ir)


class TestInterpret:
    def test_examples(self):
        f = linearize(x * y + z ** 3, [x, y, z])
        assert interpret(f, [2.0, 3.0, 2.0]) == 14.0
        R = 0.127 - (x * 0.194 / (y + 0.194))
        assert interpret(linearize(diff(R, y), [x, y]), [0.362, 0.556]) == pytest.approx(
            HALF_CELL_VALUE, rel=1e-15)

    def test_powi_matches_pow(self):
        rng = np.random.default_rng(11)
        for _ in range(5000):
            b = float(rng.choice([-1, 1]) * 10 ** rng.uniform(-3, 3))
            n = int(rng.integers(-64, 65))
            assert rel_close(powi(b, n), math.pow(b, n), 1e-12), (b, n)

    def test_domain_errors_do_not_raise(self):
        assert math.isnan(interpret(linearize(sqrt(x), [x]), [-1.0]))
        assert interpret(linearize(x ** -1, [x]), [0.0]) == math.inf
        assert math.isnan(interpret(linearize(x ** y, [x, y]), [-2.0, 0.5]))

    def test_rejects_invalid_program(self):
        with pytest.raises(IRError):
            interpret(InstrList(1, 0, [Instr(Op.ADD)]), [1.0])
        with pytest.raises(ValueError):
            interpret(linearize(x, [x]), [1.0, 2.0])

    def test_vector_interpreter_agrees_with_scalar(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            ir = linearize(random_expr(rng, 6), NAMES)
            pts = rng.uniform(-2, 2, size=(5, 20))
            got = interpret_vec(ir, pts)
            for j in range(20):
                assert rel_close(got[j], interpret(ir, pts[:, j]), 1e-12)


class TestSerialization:
    def test_hand_encoded_symbol(self):
        assert serialize_ir(linearize(x, [x])) == IR_OF_X
        assert deserialize_ir(IR_OF_X) == linearize(x, [x])

    def test_round_trip_random_programs(self):
        rng = np.random.default_rng(13)
        for _ in range(2000):
            ir = linearize(random_expr(rng, 6, dyadic=False), NAMES, int(rng.integers(0, 4)))
            blob = serialize_ir(ir)
            back = deserialize_ir(blob)
            assert back == ir
            assert serialize_ir(back) == blob

    def test_constants_are_bit_exact(self):
        for v in (0.1, -0.0, 5e-324, 1.7976931348623157e308, math.pi):
            ir = InstrList(0, 0, [Instr(Op.CONST, v)])
            back = deserialize_ir(serialize_ir(ir))
            assert math.copysign(1, back.code[0].arg) == math.copysign(1, v)
            assert back.code[0].arg == v

    def test_error_codes_are_distinct(self):
        blob = serialize_ir(linearize(x + y, [x, y]))
        cases = {
            IRError.BAD_MAGIC: b"XNCI" + blob[4:],
            IRError.BAD_VERSION: blob[:4] + b"\x02" + blob[5:],
            IRError.TRUNCATED: blob[:-1],
            IRError.TRAILING: blob + b"\x00",
            IRError.BAD_OPCODE: blob[:-1] + b"\x09",
            IRError.STACK_IMBALANCE: serialize_ir(InstrList(2, 0, [Instr(Op.LOAD_ARG, 0),
                                                                   Instr(Op.LOAD_ARG, 1)])),
            IRError.BAD_OPERAND: serialize_ir(InstrList(1, 0, [Instr(Op.LOAD_ARG, 3)])),
        }
        for want, data in cases.items():
            with pytest.raises(IRError) as ei:
                deserialize_ir(data)
            assert ei.value.code == want
        assert len(set(cases)) == 7

    def test_every_truncation_is_rejected(self):
        blob = serialize_ir(linearize(sin(x) * y + 0.5, [x, y]))
        for k in range(len(blob)):
            with pytest.raises(IRError):
                deserialize_ir(blob[:k])

    def test_stack_changing_mutants_are_rejected(self):
        # PowI and Call leave the depth unchanged, so only pushes and binary ops
        # are mutated; removing or repeating one of those always unbalances the stack
        rng = np.random.default_rng(14)
        mutants = 0
        while mutants < 1000:
            ir = linearize(random_expr(rng, 6), NAMES)
            idx = [i for i, ins in enumerate(ir.code) if ins.op not in (Op.POWI, Op.CALL)]
            i = int(rng.choice(idx))
            c = list(ir.code)
            if rng.random() < 0.5:
                del c[i]
            else:
                c.insert(i, c[i])
            with pytest.raises(IRError) as ei:
                deserialize_ir(serialize_ir(InstrList(ir.arity, 0, c)))
            assert ei.value.code == IRError.STACK_IMBALANCE
            mutants += 1

    def test_batch_round_trip(self):
        irs = [linearize(e, [x, y], 3) for e in (x + y, x * y, sin(x))]
        assert deserialize_batch(serialize_batch(irs)) == irs

    def test_batch_rejects_mixed_shapes(self):
        blob = serialize_ir(linearize(x, [x])) + serialize_ir(linearize(x, [x, y]))
        with pytest.raises(IRError):
            deserialize_batch(blob)


@pytest.fixture(params=["llvm", "interp"])
def jit(request):
    if request.param == "llvm" and not native_available():
        pytest.skip("native backend unavailable")
    return JIT(request.param)


class TestCompile:
    def test_scalar(self, jit):
        f = jit.compile([x, y, z], x * y + z ** 3)
        assert f([2.0, 3.0, 2.0]) == 14.0
        assert f(2.0, 3.0, 2.0) == 14.0

    def test_half_cell(self, jit):
        R = 0.127 - (x * 0.194 / (y + 0.194))
        f = jit.compile([x, y], diff(R, y))
        assert f(0.362, 0.556) == pytest.approx(HALF_CELL_VALUE, rel=1e-15)

    def test_batch(self, jit):
        f = jit.batch_compile([x, y], [x + y, x * y])
        assert f([2.0, 3.0]).tolist() == [5.0, 6.0]

    def test_vec(self, jit):
        f = jit.vec_compile([x], 3, x ** 2)
        assert f([1.0, 2.0, 3.0]).tolist() == [1.0, 4.0, 9.0]

    def test_vec_batch_layout(self, jit):
        f = jit.vec_batch_compile([x, y], 2, [x + y, x * y, sin(x)])
        out = f(np.array([[1.0, 2.0], [3.0, 4.0]]))
        assert out.shape == (3, 2)
        assert out[:2].tolist() == [[4.0, 6.0], [3.0, 8.0]]
        assert out[2].tolist() == [math.sin(1.0), math.sin(2.0)]

    def test_wrong_argument_count(self, jit):
        f = jit.batch_compile([x, y], [x + y])
        with pytest.raises(ValueError):
            f([1.0])

    def test_bad_vec_len(self, jit):
        with pytest.raises(ValueError):
            jit.vec_compile([x], 0, x)

    def test_empty_batch(self, jit):
        with pytest.raises(ValueError):
            jit.batch_compile([x], [])

    def test_vec_batch_equals_scalar_compile(self, jit):
        rng = np.random.default_rng(15)
        es = [random_expr(rng, 6) for _ in range(8)]
        pts = rng.uniform(-2, 2, size=(5, 16))
        vb = jit.vec_batch_compile(NAMES, 16, es)(pts)
        for i, e in enumerate(es):
            f = jit.compile(NAMES, e)
            for j in range(16):
                a, b = vb[i, j], f(pts[:, j])
                if jit.backend == "llvm":
                    assert a == b or (math.isnan(a) and math.isnan(b))
                else:
                    # numpy and libm transcendental results may differ by an ulp
                    assert rel_close(a, b, 1e-13)

    def test_no_traps_on_domain_errors(self, jit):
        f = jit.batch_compile([x], [log(x), x ** -1, sqrt(x)])
        out = f([-0.0])
        assert out[1] == -math.inf and out[2] == 0.0
        out = f([-1.0])
        assert math.isnan(out[0]) and math.isnan(out[2])

    def test_compile_ir_chooses_shape(self, jit):
        assert jit.compile_ir([linearize(x, [x])]).shape == "scalar"
        assert jit.compile_ir([linearize(x, [x], 4)]).shape == "vec"
        assert jit.compile_ir([linearize(x, [x])] * 2).shape == "batch"


def test_module_level_functions_use_default_engine():
    assert compile([x], x + 1)(1.0) == 2.0
    assert batch_compile([x], [x, x + 1])([1.0]).tolist() == [1.0, 2.0]
    assert vec_compile([x], 2, x * 2)([1.0, 2.0]).tolist() == [2.0, 4.0]
    assert vec_batch_compile([x], 1, [x, -x])([3.0]).tolist() == [[3.0], [-3.0]]


@native
class TestNative:
    def test_agrees_with_interpreter_on_random_programs(self):
        rng = np.random.default_rng(16)
        jit = JIT("llvm")
        for _ in range(150):
            e = random_expr(rng, 8)
            f = jit.compile(NAMES, e)
            ir = f.irs[0]
            for _ in range(10):
                pt = rng.uniform(-2, 2, 5)
                assert rel_close(f(pt), interpret(ir, pt), 1e-12), e

    def test_agrees_with_tree_walk(self):
        rng = np.random.default_rng(17)
        jit = JIT("llvm")
        for _ in range(100):
            e = random_expr(rng, 6)
            f = jit.compile(NAMES, e)
            pt = rng.uniform(-2, 2, 5)
            want = tree_eval(e, dict(zip("abxyz", pt)))
            assert rel_close(f(pt), want, 1e-9), e

    def test_powi_against_pow(self):
        rng = np.random.default_rng(18)
        jit = JIT("llvm")
        fs = {n: jit.compile([x], x ** num(n)) for n in range(-64, 65)}
        for _ in range(3000):
            b = float(rng.choice([-1, 1]) * 10 ** rng.uniform(-3, 3))
            n = int(rng.integers(-64, 65))
            assert rel_close(fs[n](b), math.pow(b, n), 1e-12), (b, n)

    def test_handles_outlive_engine_and_collection(self):
        fs = []
        for k in range(20):
            fs.append(JIT("llvm").compile([x], x + num(k)))
            gc.collect()
        assert [f(1.0) for f in fs] == [1.0 + k for k in range(20)]

    def test_concurrent_calls(self):
        f = JIT("llvm").vec_batch_compile([x, y], 64, [x * y, x + y])
        pts = np.random.default_rng(19).uniform(-1, 1, size=(2, 64))
        want = f(pts)
        errors = []

        def worker():
            for _ in range(200):
                if not np.array_equal(f(pts), want):
                    errors.append(1)

        ts = [threading.Thread(target=worker) for _ in range(8)]
        for t in ts:
            t.start()
        for t in ts:
            t.join()
        assert not errors

    def test_concurrent_compiles(self):
        results = {}

        def worker(k):
            results[k] = JIT("llvm").compile([x], x * num(k))(2.0)

        ts = [threading.Thread(target=worker, args=(k,)) for k in range(8)]
        for t in ts:
            t.start()
        for t in ts:
            t.join()
        assert results == {k: 2.0 * k for k in range(8)}

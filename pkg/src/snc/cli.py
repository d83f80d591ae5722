"""``snc`` command line: run scripts, dump frames, run benchmarks, start a local cluster."""
from __future__ import annotations

import argparse
import sys

from .protocol import ProtocolError, decode, describe, iter_frames


def _cmd_run(a) -> int:
    from .client import CloudConfig
    from .script import ScriptError, Session, repl

    if a.local or not (a.target or CloudConfig().sched_addr):
        session = Session("local")
    else:
        session = Session("remote", CloudConfig(a.target, a.data_addr, threshold=0))
    try:
        if a.file is None:
            repl(session)
        else:
            with open(a.file, encoding="utf-8") as fh:
                session.run(fh.read())
    except ScriptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        if session.config is not None:
            session.config.close()
    return 0


def _cmd_proto_dump(a) -> int:
    data = sys.stdin.buffer.read() if a.file == "-" else open(a.file, "rb").read()
    if a.raw:
        frames = [(0, data)]
    else:
        try:
            frames = list(iter_frames(data))
        except ProtocolError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    status = 0
    for off, payload in frames:
        hexed = payload.hex()
        print(f"frame @{off}: {len(payload)} bytes")
        for i in range(0, len(hexed), 64):
            print("  " + " ".join(hexed[j:j + 2] for j in range(i, min(i + 64, len(hexed)), 2)))
        try:
            for line in describe(decode(payload)):
                print("  " + line)
        except ProtocolError as exc:
            print(f"  decode error: {exc}")
            status = 1
    return status


def _cmd_bench(a) -> int:
    from .bench import format_rows, run_kernel, write_csv

    modes = tuple(m for m in a.modes.split(",") if m)
    rows = run_kernel(a.kernel, modes=modes, remote=a.remote, n=a.n, d=a.d, seed=a.seed,
                      x=a.x, N=a.N)
    print(format_rows(rows))
    if a.csv:
        write_csv(rows, a.csv)
    return 0


def _cmd_cluster(a) -> int:
    import threading

    from .services import Cluster

    with Cluster(a.pes, single=a.single, pe_timeout=a.pe_timeout) as c:
        print(f"task scheduler {c.sched_addr}; data {c.data_addr}; {a.pes} PE(s)", flush=True)
        print(f"export SNC_SCHED_ADDR={c.sched_addr}", flush=True)
        try:
            threading.Event().wait()
        except KeyboardInterrupt:
            pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="snc", description="Symbolic-numeric cloud toolkit")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run an SNC script (REPL on stdin without a file)")
    r.add_argument("file", nargs="?")
    g = r.add_mutually_exclusive_group()
    g.add_argument("--target", help="task scheduler host:port (default env SNC_SCHED_ADDR)")
    g.add_argument("--local", action="store_true", help="compile and evaluate in-process")
    r.add_argument("--data-addr", help="data scheduler host:port (default: via the task scheduler)")
    r.set_defaults(fn=_cmd_run)

    d = sub.add_parser("proto-dump", help="hex dump and decode a file of length-prefixed frames")
    d.add_argument("file", help="capture file, or - for stdin")
    d.add_argument("--raw", action="store_true", help="the file holds one unframed message")
    d.set_defaults(fn=_cmd_proto_dump)

    b = sub.add_parser("bench", help="run a benchmark kernel")
    b.add_argument("kernel", choices=("taylor", "fracpow", "mc", "fem", "griewank"))
    b.add_argument("--remote", metavar="HOST:PORT", help="also run through this task scheduler")
    b.add_argument("--modes", default="jit,interp", help="comma list of jit, interp, remote")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--n", type=int, default=None,
                   help="repetitions (taylor/fracpow), points (mc) or cells per axis (fem)")
    b.add_argument("--d", type=int, default=10, help="Griewank dimension")
    b.add_argument("--N", type=int, default=9, help="Taylor/fracpow order")
    b.add_argument("--x", type=float, default=0.5, help="Taylor/fracpow evaluation point")
    b.add_argument("--csv", help="write the rows to this CSV file")
    b.set_defaults(fn=_cmd_bench)

    c = sub.add_parser("cluster", help="run schedulers and PEs in this process")
    c.add_argument("--pes", type=int, default=1)
    c.add_argument("--single", action="store_true", help="co-host the data store")
    c.add_argument("--pe-timeout", type=float, default=30.0)
    c.set_defaults(fn=_cmd_cluster)
    return p


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    return a.fn(a)


if __name__ == "__main__":
    sys.exit(main())

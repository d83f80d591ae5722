"""key=value text answers for machine-info and installed-libs queries."""
from __future__ import annotations

import os
import platform
from importlib import metadata


def _memory_bytes() -> int:
    try:
        return os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES")
    except (ValueError, OSError, AttributeError):
        return 0


def machine_info(**extra) -> str:
    fields = {
        "cpu_count": os.cpu_count() or 1,
        "memory_bytes": _memory_bytes(),
        "machine": platform.machine(),
        "system": platform.system(),
        **extra,
    }
    return "\n".join(f"{k}={v}" for k, v in fields.items())


def installed_libs() -> str:
    from ..codegen import default_jit

    fields = {"backend": default_jit().backend, "python": platform.python_version()}
    for pkg in ("numpy", "llvmlite"):
        try:
            fields[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            fields[pkg] = "missing"
    try:
        import llvmlite.binding as llvm

        fields["llvm"] = ".".join(map(str, llvm.llvm_version_info))
    except ImportError:
        pass
    return "\n".join(f"{k}={v}" for k, v in fields.items())


def parse_kv(text: str) -> dict[str, str]:
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line)

"""Sandboxed compilation and execution of candidate solutions.

Each unit test runs in its own child interpreter with resource limits
(fresh process state per test, no leakage between assertions).  The child
exit status encodes the outcome: 0 passed, 3 assertion failed, 4 the test
raised, anything else (including a candidate crashing at import time) is an
error; hitting the wall clock is a timeout.

Threat model: accidental damage and runaway resources, not determined
adversaries.  Candidates get an empty environment, a throwaway working
directory, RLIMIT caps on memory/output/forking, and a Python-level guard
that denies sockets and writes outside the working directory.  On platforms
without ``resource`` the harness still runs but logs loudly that limits are
not enforced.
"""

from __future__ import annotations

import logging
import os
import shutil
import signal
import subprocess
import sys
import tempfile
import textwrap
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

try:
    import resource
except ImportError:  # pragma: no cover - non-POSIX
    resource = None  # type: ignore[assignment]

PASSED = "passed"
FAILED = "failed"
ERRORED = "errored"
TIMED_OUT = "timed_out"

EXIT_PASSED = 0
EXIT_FAILED = 3
EXIT_ERRORED = 4


class SandboxConfigError(RuntimeError):
    """The sandbox itself is misconfigured (distinct from candidate failures)."""


@dataclass(frozen=True)
class ExecutionLimits:
    wall_time_s: float = 5.0
    memory_bytes: int = 256 * 1024 * 1024
    output_bytes: int = 64 * 1024

    def __post_init__(self) -> None:
        if self.wall_time_s <= 0 or self.memory_bytes <= 0 or self.output_bytes <= 0:
            raise ValueError("execution limits must be strictly positive")


@dataclass
class ExecutionOutcome:
    compiled: bool
    per_test: list[str] = field(default_factory=list)
    total_tests: int = 0
    passed_tests: int = 0
    diagnostics: str = ""

    def all_passed(self) -> bool:
        return self.compiled and self.total_tests > 0 and self.passed_tests == self.total_tests


_FOOTER_TEMPLATE = """
try:
{test}
except AssertionError:
    import sys
    sys.exit({failed})
except BaseException:
    import sys
    sys.exit({errored})
"""

# Installed before the candidate runs.  In-interpreter guards are
# best-effort (see module docstring); RLIMIT_NPROC also blocks fork, but
# only for unprivileged users, so spawning is denied here as well.
_GUARD_SOURCE = """
import builtins, io, os, socket, subprocess

_SANDBOX_DIR = os.path.realpath(os.getcwd())

def _denied(*a, **k):
    raise PermissionError("sandbox: operation denied")

socket.socket = _denied
socket.create_connection = _denied
socket.socketpair = _denied

subprocess.Popen = _denied
subprocess.run = _denied
for _name in (
    "fork", "forkpty", "posix_spawn", "posix_spawnp", "system", "popen",
    "execv", "execve", "execvp", "execvpe", "spawnv", "spawnve", "spawnvp",
):
    if hasattr(os, _name):
        setattr(os, _name, _denied)

def _inside(path):
    return os.path.realpath(os.path.join(_SANDBOX_DIR, os.fspath(path))).startswith(_SANDBOX_DIR + os.sep)

_open = builtins.open
def _guarded_open(file, mode="r", *a, **k):
    if isinstance(file, int) or set(mode) & set("wxa+"):
        if not isinstance(file, int) and not _inside(file):
            raise PermissionError(f"sandbox: write outside working directory: {file!r}")
    return _open(file, mode, *a, **k)
builtins.open = _guarded_open
io.open = _guarded_open

for _name in ("remove", "unlink", "rmdir", "rename", "replace", "truncate"):
    _orig = getattr(os, _name)
    def _guard(path, *a, _orig=_orig, _name=_name, **k):
        if not _inside(path):
            raise PermissionError(f"sandbox: os.{_name} outside working directory")
        return _orig(path, *a, **k)
    setattr(os, _name, _guard)
"""

_BOOTSTRAP = """
import sys
program_path, guard = sys.argv[1], sys.argv[2] == "1"
if guard:
    exec(compile({guard_source!r}, "<sandbox-guard>", "exec"), {{}})
with open(program_path, "r", encoding="utf-8") as fh:
    source = fh.read()
sys.argv = [program_path]
exec(compile(source, "<candidate>", "exec"), {{"__name__": "__main__"}})
"""


def assemble_program(code: str, test: str) -> str:
    """Concatenate a solution and one test into an executable program.

    The appended footer maps the test outcome onto the exit-status protocol
    (0/3/4); a candidate crashing before the footer exits nonzero on its own.
    """
    body = textwrap.indent(test.rstrip("\n"), "    ")
    footer = _FOOTER_TEMPLATE.format(test=body, failed=EXIT_FAILED, errored=EXIT_ERRORED)
    return code.rstrip("\n") + "\n" + footer


def _compile_diagnostic(exc: BaseException) -> str:
    if isinstance(exc, SyntaxError):
        return f"{exc.msg} (line {exc.lineno})"
    return f"{type(exc).__name__}: {exc}"


class Sandbox:
    """Runs candidate code against unit tests under resource limits."""

    def __init__(
        self,
        limits: ExecutionLimits | None = None,
        interpreter: list[str] | None = None,
        env_allowlist: tuple[str, ...] = (),
        guard: bool = True,
    ):
        self.limits = limits or ExecutionLimits()
        self.interpreter = list(interpreter) if interpreter else [sys.executable, "-I"]
        self.env_allowlist = env_allowlist
        self.guard = guard
        self._default_interpreter = interpreter is None
        if resource is None and guard:
            log.warning(
                "resource limits unavailable on this platform; running in permissive mode"
            )

    # -- compilation -------------------------------------------------------

    def check_compile(self, code: str) -> tuple[bool, str]:
        """Front-end acceptance: parse + bytecode compile, never executes."""
        if not code.strip():
            return False, "empty program"
        if self._default_interpreter:
            import warnings

            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    compile(code, "<candidate>", "exec")
            except (SyntaxError, ValueError, TypeError, MemoryError, RecursionError) as exc:
                return False, _compile_diagnostic(exc)
            return True, ""
        return self._check_compile_subprocess(code)

    def _check_compile_subprocess(self, code: str) -> tuple[bool, str]:
        driver = (
            "import sys\n"
            "src = sys.stdin.read()\n"
            "try:\n"
            "    compile(src, '<candidate>', 'exec')\n"
            "except BaseException as exc:\n"
            "    sys.stderr.write(str(exc))\n"
            "    sys.exit(1)\n"
        )
        try:
            proc = subprocess.run(
                self.interpreter + ["-c", driver],
                input=code,
                capture_output=True,
                text=True,
                timeout=self.limits.wall_time_s,
            )
        except FileNotFoundError as exc:
            raise SandboxConfigError(f"interpreter not found: {self.interpreter[0]}") from exc
        except subprocess.TimeoutExpired:
            return False, "compile check timed out"
        return proc.returncode == 0, proc.stderr.strip()

    # -- execution ---------------------------------------------------------

    def run_tests(
        self, code: str, tests: list[str], limits: ExecutionLimits | None = None
    ) -> ExecutionOutcome:
        """Execute each test in its own child process and classify outcomes."""
        if not tests:
            raise ValueError("tests must be non-empty")
        limits = limits or self.limits
        compiled, diag = self.check_compile(code)
        if not compiled:
            return ExecutionOutcome(compiled=False, diagnostics=diag)

        per_test: list[str] = []
        diagnostics: list[str] = []
        workdir = tempfile.mkdtemp(prefix="utrl-sbx-")
        try:
            for i, test in enumerate(tests):
                status, diag = self._run_one(code, test, limits, workdir, i)
                per_test.append(status)
                if diag:
                    diagnostics.append(f"test {i}: {diag}")
        finally:
            shutil.rmtree(workdir, ignore_errors=True)
        return ExecutionOutcome(
            compiled=True,
            per_test=per_test,
            total_tests=len(per_test),
            passed_tests=per_test.count(PASSED),
            diagnostics="\n".join(diagnostics)[: limits.output_bytes].rstrip(),
        )

    def _child_env(self) -> dict[str, str]:
        env = {"PYTHONIOENCODING": "utf-8", "LC_ALL": "C.UTF-8"}
        for key in self.env_allowlist:
            if key in os.environ:
                env[key] = os.environ[key]
        return env

    def _preexec(self, limits: ExecutionLimits):
        if resource is None:
            return None

        def set_limits() -> None:
            mem = limits.memory_bytes
            resource.setrlimit(resource.RLIMIT_AS, (mem, mem))
            cpu = max(1, int(limits.wall_time_s) + 1)
            resource.setrlimit(resource.RLIMIT_CPU, (cpu, cpu))
            out = limits.output_bytes
            resource.setrlimit(resource.RLIMIT_FSIZE, (out, out))
            try:
                resource.setrlimit(resource.RLIMIT_NPROC, (0, 0))
            except (ValueError, OSError):
                pass

        return set_limits

    def _run_one(
        self, code: str, test: str, limits: ExecutionLimits, workdir: str, index: int
    ) -> tuple[str, str]:
        testdir = os.path.join(workdir, f"t{index}")
        os.makedirs(testdir, exist_ok=True)
        program_path = os.path.join(testdir, "program.py")
        with open(program_path, "w", encoding="utf-8") as fh:
            fh.write(assemble_program(code, test))
        bootstrap = _BOOTSTRAP.format(guard_source=_GUARD_SOURCE)
        out_path = os.path.join(testdir, "out.txt")
        err_path = os.path.join(testdir, "err.txt")
        try:
            with open(out_path, "wb") as out, open(err_path, "wb") as err:
                proc = subprocess.Popen(
                    self.interpreter
                    + ["-c", bootstrap, program_path, "1" if self.guard else "0"],
                    cwd=testdir,
                    env=self._child_env(),
                    stdout=out,
                    stderr=err,
                    stdin=subprocess.DEVNULL,
                    start_new_session=True,
                    preexec_fn=self._preexec(limits),
                )
        except FileNotFoundError as exc:
            raise SandboxConfigError(f"interpreter not found: {self.interpreter[0]}") from exc
        except OSError as exc:
            raise SandboxConfigError(f"cannot spawn sandboxed process: {exc}") from exc

        try:
            rc = proc.wait(timeout=limits.wall_time_s)
        except subprocess.TimeoutExpired:
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                proc.kill()
            proc.wait()
            return TIMED_OUT, ""

        if rc == EXIT_PASSED:
            return PASSED, ""
        stderr_tail = self._read_tail(err_path, limits.output_bytes)
        if rc == EXIT_FAILED:
            return FAILED, ""
        return ERRORED, stderr_tail.splitlines()[-1] if stderr_tail else ""

    @staticmethod
    def _read_tail(path: str, cap: int) -> str:
        try:
            with open(path, "rb") as fh:
                data = fh.read(cap)
        except OSError:
            return ""
        return data.decode("utf-8", errors="replace").strip()

"""RTL extraction, testbench instrumentation, and the lint/compile/simulate pipeline.

External tools are Verilator-compatible (lint) and Icarus-compatible
(compile + runtime); commands are fully configurable so tests can substitute
deterministic stand-ins.
"""
from __future__ import annotations

import os
import re
import subprocess
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence


class ToolchainError(Exception):
    pass


class NoRtlFound(ToolchainError):
    pass


class NoModuleFound(ToolchainError):
    pass


class MultipleTestbenchModules(ToolchainError):
    pass


class AlreadyInstrumented(ToolchainError):
    pass


class ToolNotFound(ToolchainError):
    pass


class ToolTimeout(ToolchainError):
    pass


class WorkdirError(ToolchainError):
    pass


class RuntimeCrash(ToolchainError):
    pass


class Stage(Enum):
    LINT = "lint"
    COMPILE = "compile"
    SIMULATE = "simulate"


@dataclass(frozen=True)
class RtlSource:
    text: str
    module_names: tuple[str, ...]


@dataclass(frozen=True)
class InstrumentedTestbench:
    text: str
    vcd_path: str
    monitored_signals: tuple[str, ...]


@dataclass(frozen=True)
class ToolchainReport:
    stage: Stage
    ok: bool
    log: str
    exit_code: int
    vcd_path: str | None = None
    duration_ms: float = 0.0


def default_pass_marker(log: str) -> bool:
    """Dataset-default simulate pass criterion: no mention of a mismatch."""
    return "mismatch" not in log.lower()


@dataclass
class ToolchainConfig:
    lint_cmd: Sequence[str] = ("verilator", "--lint-only", "-Wall")
    compile_cmd: Sequence[str] = ("iverilog",)
    sim_cmd: Sequence[str] = ("vvp",)
    lint_timeout_s: float = 60.0
    compile_timeout_s: float = 60.0
    sim_timeout_s: float = 120.0
    pass_marker: Callable[[str], bool] = field(default=default_pass_marker)


_MODULE_NAME_RE = re.compile(r"\bmodule\s+([A-Za-z_]\w*)")
_MODULE_KW_RE = re.compile(r"\bmodule\b")
_ENDMODULE_RE = re.compile(r"\bendmodule\b")
_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```|'''[^\n]*\n(.*?)'''", re.S)


def _module_names(text: str) -> tuple[str, ...]:
    return tuple(_MODULE_NAME_RE.findall(text))


def _module_span(text: str) -> str | None:
    """Text from the first `module` keyword to the last `endmodule`, keeping
    everything in between (so multiple modules survive in order)."""
    first = _MODULE_KW_RE.search(text)
    if not first:
        return None
    last = None
    for last in _ENDMODULE_RE.finditer(text):
        pass
    if last is None or last.end() <= first.start():
        return None
    return text[first.start():last.end()]


def extract_rtl(llm_text: str) -> RtlSource:
    """Pull Verilog source out of an LLM completion.

    Fenced blocks (triple-backtick or triple-quote, optional language tag)
    win; otherwise the module...endmodule span of the raw text is taken.
    Prose outside code spans is dropped, making extraction a projection:
    re-extracting an extracted text is the identity.
    """
    blocks = ["".join(m.groups("")) for m in _FENCE_RE.finditer(llm_text)]
    fenced = "\n".join(b.strip("\n") for b in blocks if b.strip())
    text = _module_span(fenced) or _module_span(llm_text)
    if text is None:
        raise NoRtlFound("no fenced code and no module/endmodule span")
    return RtlSource(text, _module_names(text))


def _initial_region_end(text: str, start: int) -> int:
    """Index just past the first initial region starting at `start`.

    Handles both `initial begin ... end` (with nesting) and single-statement
    `initial <stmt>;` forms.
    """
    tokens = list(re.finditer(r"\bbegin\b|\bend\b|;", text[start:]))
    if not tokens:
        return start
    first = tokens[0]
    if first.group() != "begin":
        # single statement: up to and including the first semicolon
        semi = text.find(";", start)
        return semi + 1 if semi != -1 else start
    depth = 0
    for tok in tokens:
        if tok.group() == "begin":
            depth += 1
        elif tok.group() == "end":
            depth -= 1
            if depth == 0:
                return start + tok.end()
    return start


def instrument_testbench(
    tb: str, dut_ports: Sequence[str], vcd_path: str = "dump.vcd"
) -> InstrumentedTestbench:
    """Inject dumpfile/dumpvars/monitor directives into a testbench.

    The instrumentation lands immediately after the testbench's first
    initial region (a fresh initial block is appended before endmodule when
    none exists); everything else is byte-identical.
    """
    if not dut_ports:
        raise ToolchainError("dut_ports must be non-empty")
    if "$dumpfile" in tb or "$dumpvars" in tb:
        raise AlreadyInstrumented("testbench already contains a dump directive")
    names = _module_names(tb)
    if not names:
        raise NoModuleFound("no module declaration in testbench")
    if len(names) > 1:
        raise MultipleTestbenchModules(", ".join(names))
    tb_name = names[0]

    fmt = "time=%0t " + " ".join(f"{p}=%b" for p in dut_ports)
    args = ", ".join(["$time"] + list(dut_ports))
    block = (
        "\n  initial begin\n"
        f'    $dumpfile("{vcd_path}");\n'
        f"    $dumpvars(0, {tb_name});\n"
        f'    $monitor("{fmt}", {args});\n'
        "  end\n"
    )

    m = re.search(r"\binitial\b", tb)
    if m:
        at = _initial_region_end(tb, m.end())
        out = tb[:at] + block + tb[at:]
    else:
        end = tb.rfind("endmodule")
        out = tb[:end] + block + tb[end:]
    return InstrumentedTestbench(out, vcd_path, tuple(dut_ports))


def _run(cmd: Sequence[str], cwd: Path, timeout_s: float) -> tuple[int, str, float]:
    start = time.monotonic()
    try:
        proc = subprocess.run(
            list(cmd),
            cwd=cwd,
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            timeout=timeout_s,
            text=True,
        )
    except FileNotFoundError as e:
        raise ToolNotFound(cmd[0]) from e
    except subprocess.TimeoutExpired as e:
        raise ToolTimeout(f"{cmd[0]} exceeded {timeout_s}s") from e
    elapsed = (time.monotonic() - start) * 1000.0
    if proc.returncode < 0:
        raise RuntimeCrash(f"{cmd[0]} killed by signal {-proc.returncode}")
    return proc.returncode, proc.stdout or "", elapsed


def _prepare_workdir(workdir: Path) -> Path:
    try:
        workdir.mkdir(parents=True, exist_ok=True)
        probe = workdir / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise WorkdirError(str(workdir)) from e
    return workdir


def _write_stage_log(workdir: Path, stage: Stage, log: str) -> None:
    try:
        (workdir / f"stage_{stage.value}.log").write_text(log)
    except OSError:
        pass


def lint(rtl: RtlSource, workdir: Path, cfg: ToolchainConfig) -> ToolchainReport:
    workdir = _prepare_workdir(Path(workdir))
    dut = workdir / "dut.v"
    dut.write_text(rtl.text)
    code, log, ms = _run(list(cfg.lint_cmd) + [str(dut)], workdir, cfg.lint_timeout_s)
    _write_stage_log(workdir, Stage.LINT, log)
    return ToolchainReport(Stage.LINT, code == 0, log, code, duration_ms=ms)


def compile(rtl: RtlSource, tb: InstrumentedTestbench, workdir: Path, cfg: ToolchainConfig) -> ToolchainReport:
    workdir = _prepare_workdir(Path(workdir))
    dut = workdir / "dut.v"
    tbf = workdir / "tb.v"
    out = workdir / "sim.out"
    dut.write_text(rtl.text)
    tbf.write_text(tb.text)
    cmd = list(cfg.compile_cmd) + ["-o", str(out), str(dut), str(tbf)]
    code, log, ms = _run(cmd, workdir, cfg.compile_timeout_s)
    _write_stage_log(workdir, Stage.COMPILE, log)
    return ToolchainReport(Stage.COMPILE, code == 0, log, code, duration_ms=ms)


def simulate(compiled: Path, vcd_path: Path, cfg: ToolchainConfig) -> ToolchainReport:
    compiled = Path(compiled)
    if not compiled.exists():
        raise ToolchainError(f"missing simulation executable: {compiled}")
    workdir = compiled.parent
    code, log, ms = _run(list(cfg.sim_cmd) + [str(compiled)], workdir, cfg.sim_timeout_s)
    _write_stage_log(workdir, Stage.SIMULATE, log)
    ok = code == 0 and cfg.pass_marker(log)
    vcd = str(vcd_path) if Path(vcd_path).exists() else None
    return ToolchainReport(Stage.SIMULATE, ok, log, code, vcd_path=vcd, duration_ms=ms)


def run_pipeline(
    rtl: RtlSource, tb: InstrumentedTestbench, workdir: Path, cfg: ToolchainConfig
) -> ToolchainReport:
    """Lint -> compile -> simulate with fail-fast: the first failing stage's
    report is returned and later stages never run."""
    workdir = _prepare_workdir(Path(workdir))
    report = lint(rtl, workdir, cfg)
    if not report.ok:
        return report
    report = compile(rtl, tb, workdir, cfg)
    if not report.ok:
        return report
    vcd_path = Path(tb.vcd_path)
    if not vcd_path.is_absolute():
        vcd_path = workdir / vcd_path
    return simulate(workdir / "sim.out", vcd_path, cfg)


_MISMATCH_COUNT_RE = re.compile(r"[Mm]ismatch(?:es)?\s*[:=]?\s*(\d+)|(\d+)\s+[Mm]ismatch")


def mismatch_count_from_log(log: str) -> int | None:
    """Best-effort mismatch count from a simulation log (VerilogEval-style
    testbenches print one); None when nothing matches."""
    m = _MISMATCH_COUNT_RE.search(log)
    if not m:
        return None
    return int(m.group(1) or m.group(2))


_SAMPLES_RE = re.compile(r"[Mm]ismatches\s*[:=]?\s*(\d+)\s+in\s+(\d+)\s+samples")


def pass_counts_from_log(log: str) -> tuple[int, int] | None:
    """(n_pass, n_total) when the testbench exposes per-sample counts."""
    m = _SAMPLES_RE.search(log)
    if not m:
        return None
    bad, total = int(m.group(1)), int(m.group(2))
    return max(total - bad, 0), total

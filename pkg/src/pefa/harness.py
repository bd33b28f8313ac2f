"""Dataset loading, benchmark execution, metrics, and report emission.

Datasets are consumed through a manifest.json at the dataset root (see
README for the schema); adapters for upstream releases produce that layout.
"""
from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from . import templates
from .llm import LlmClient, Usage, accumulate_usage, system, user
from .orchestrator import RunConfig, run_pefa
from .toolchain import (
    NoRtlFound,
    ToolchainError,
    extract_rtl,
    instrument_testbench,
    run_pipeline,
)


class DomainError(Exception):
    pass


class Subset(Enum):
    CODE_COMPLETE = "code_complete"
    SPEC_TO_RTL = "spec_to_rtl"
    RTLLM = "rtllm"


@dataclass(frozen=True)
class DesignProblem:
    id: str
    prompt: str
    testbench: str
    subset: Subset
    dut_ports: tuple[str, ...]
    pairing: tuple[tuple[str, str], ...] | None = None


@dataclass(frozen=True)
class EvalRecord:
    problem_id: str
    passed: bool
    loops_used: int
    llm_calls: int
    usage: Usage
    mismatches_initial: int | None
    mismatches_final: int | None
    wall_ms: float


@dataclass
class MetricsReport:
    subset: str
    mode: str
    problem_count: int
    passed_count: int
    pass_rate_pct: float  # percentage, 2 decimals
    total_usage: Usage
    avg_tokens_per_problem: float
    pass_at_n: dict[int, float] = field(default_factory=dict)
    improved: int = 0
    failed: int = 0
    avg_mismatch_reduction: float = 0.0
    excluded: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    untestable: list[str] = field(default_factory=list)


@dataclass
class LoadResult:
    problems: list[DesignProblem]
    excluded: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)  # missing files, with reason
    untestable: list[str] = field(default_factory=list)


def _read_manifest(root: Path) -> list[dict]:
    manifest = root / "manifest.json"
    if not manifest.exists():
        raise FileNotFoundError(manifest)
    data = json.loads(manifest.read_text())
    return data["problems"] if isinstance(data, dict) else data


def _load_problem(root: Path, entry: dict, subset: Subset) -> DesignProblem:
    prompt = (root / entry["prompt"]).read_text()
    testbench = (root / entry["testbench"]).read_text()
    pairing = entry.get("pairing")
    return DesignProblem(
        id=entry["id"],
        prompt=prompt,
        testbench=testbench,
        subset=subset,
        dut_ports=tuple(entry["ports"]),
        pairing=tuple(tuple(p) for p in pairing) if pairing else None,
    )


def load_verilogeval(root: str | Path, subset: Subset, exclusions: list[str] | None = None) -> LoadResult:
    """Load a VerilogEval-style manifest, dropping excluded ids and skipping
    (with a recorded warning) problems whose files are missing."""
    root = Path(root)
    excluded_ids = set(exclusions or [])
    result = LoadResult(problems=[])
    for entry in _read_manifest(root):
        if entry.get("subset", subset.value) != subset.value:
            continue
        if entry["id"] in excluded_ids:
            result.excluded.append(entry["id"])
            continue
        try:
            result.problems.append(_load_problem(root, entry, subset))
        except (OSError, KeyError) as e:
            result.skipped.append(f"{entry.get('id', '?')}: {e}")
    result.problems.sort(key=lambda p: p.id)
    return result


def load_rtllm(root: str | Path) -> LoadResult:
    """Load an RTLLM-style manifest; designs lacking a user-supplied
    testbench are listed as untestable rather than loaded."""
    root = Path(root)
    result = LoadResult(problems=[])
    for entry in _read_manifest(root):
        if not entry.get("testbench"):
            result.untestable.append(entry["id"])
            continue
        try:
            result.problems.append(_load_problem(root, entry, Subset.RTLLM))
        except (OSError, KeyError) as e:
            result.skipped.append(f"{entry.get('id', '?')}: {e}")
    result.problems.sort(key=lambda p: p.id)
    return result


def load_exclusions(path: str | Path) -> list[str]:
    """One problem id per line; blank lines and #-comments ignored."""
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            out.append(line)
    return out


def pass_at_n(m: int, c: int, n: int) -> float:
    """P(at least one of N uniformly drawn samples is correct) given C of M
    samples correct: 1 - C(M-C, N)/C(M, N), via a stable product."""
    if not (0 <= c <= m) or not (1 <= n <= m):
        raise DomainError(f"invalid (M={m}, C={c}, N={n})")
    if n > m - c:
        return 1.0
    prod = 1.0
    for i in range(n):
        prod *= (m - c - i) / (m - i)
    return 1.0 - prod


def mismatch_reduction(records: list[EvalRecord]) -> tuple[int, int, float]:
    """(improved, failed, average reduction) over failed runs whose mismatch
    count decreased; average is 0 when nothing improved."""
    failed = [r for r in records if not r.passed]
    improved = [
        r
        for r in failed
        if r.mismatches_initial is not None
        and r.mismatches_final is not None
        and r.mismatches_final < r.mismatches_initial
    ]
    if not improved:
        return 0, len(failed), 0.0
    avg = sum(r.mismatches_initial - r.mismatches_final for r in improved) / len(improved)
    return len(improved), len(failed), avg


def _run_agentic(problem: DesignProblem, cfg: RunConfig, gen_llm, small_llm, workroot: Path) -> EvalRecord:
    start = time.monotonic()
    run_cfg = RunConfig(
        max_loops=cfg.max_loops,
        toolchain=cfg.toolchain,
        feedback=cfg.feedback,
        workdir=workroot / problem.id,
    )
    summary = run_pefa(problem, run_cfg, gen_llm, small_llm)
    counts = [c for c in summary.mismatch_counts if c is not None]
    return EvalRecord(
        problem_id=problem.id,
        passed=summary.passed,
        loops_used=summary.loops_used,
        llm_calls=summary.llm_calls,
        usage=summary.usage,
        mismatches_initial=counts[0] if counts else None,
        mismatches_final=counts[-1] if counts else None,
        wall_ms=(time.monotonic() - start) * 1000.0,
    )


def _run_nonagentic(
    problem: DesignProblem, cfg: RunConfig, gen_llm, n_calls: int, workroot: Path
) -> tuple[EvalRecord, int]:
    """Independent repeated generation, no feedback; returns the record plus
    the number of correct samples (for pass@N tables)."""
    start = time.monotonic()
    tb = instrument_testbench(problem.testbench, problem.dut_ports, vcd_path="dump.vcd")
    base = [system(templates.SYSTEM_PROMPT), user(problem.prompt)]
    usages, correct = [], 0
    for k in range(n_calls):
        text, used = gen_llm.complete(base)
        usages.append(used)
        try:
            rtl = extract_rtl(text)
            report = run_pipeline(rtl, tb, workroot / problem.id / f"sample_{k}", cfg.toolchain)
        except (NoRtlFound, ToolchainError):
            continue
        if report.ok:
            correct += 1
    record = EvalRecord(
        problem_id=problem.id,
        passed=correct > 0,
        loops_used=0,
        llm_calls=n_calls,
        usage=accumulate_usage(usages),
        mismatches_initial=None,
        mismatches_final=None,
        wall_ms=(time.monotonic() - start) * 1000.0,
    )
    return record, correct


def run_benchmark(
    problems: list[DesignProblem],
    cfg: RunConfig,
    gen_llm: LlmClient,
    small_llm: LlmClient | None = None,
    mode: str = "agentic",
    n_calls: int = 4,
    parallelism: int = 1,
    workroot: str | Path = "pefa_bench",
) -> tuple[MetricsReport, list[EvalRecord]]:
    """Run every problem (at most `parallelism` concurrently) and aggregate
    metrics. Per-problem failures become failed records, never abort the
    sweep."""
    workroot = Path(workroot)
    workroot.mkdir(parents=True, exist_ok=True)
    correct_counts: dict[str, int] = {}

    def one(problem: DesignProblem) -> EvalRecord:
        try:
            if mode == "agentic":
                return _run_agentic(problem, cfg, gen_llm, small_llm, workroot)
            record, correct = _run_nonagentic(problem, cfg, gen_llm, n_calls, workroot)
            correct_counts[problem.id] = correct
            return record
        except Exception:  # per-problem isolation: a crash is a failed record
            return EvalRecord(problem.id, False, 0, 0, Usage(), None, None, 0.0)

    if parallelism <= 1:
        records = [one(p) for p in problems]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            records = list(pool.map(one, problems))
    records.sort(key=lambda r: r.problem_id)

    passed = sum(1 for r in records if r.passed)
    total_usage = accumulate_usage(r.usage for r in records)
    improved, failed, avg_red = mismatch_reduction(records)

    table: dict[int, float] = {}
    if mode == "nonagentic" and problems:
        for n in range(1, n_calls + 1):
            table[n] = sum(
                pass_at_n(n_calls, correct_counts.get(p.id, 0), n) for p in problems
            ) / len(problems)

    subset = problems[0].subset.value if problems else ""
    report = MetricsReport(
        subset=subset,
        mode=mode,
        problem_count=len(problems),
        passed_count=passed,
        pass_rate_pct=round(100.0 * passed / len(problems), 2) if problems else 0.0,
        total_usage=total_usage,
        avg_tokens_per_problem=total_usage.total / len(problems) if problems else 0.0,
        pass_at_n=table,
        improved=improved,
        failed=failed,
        avg_mismatch_reduction=avg_red,
    )
    return report, records


def emit_report(report: MetricsReport, records: list[EvalRecord], out_dir: str | Path) -> list[Path]:
    """Write records.jsonl, report.csv, and report.txt (deterministic order)."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)

        jsonl = out_dir / "records.jsonl"
        with jsonl.open("w") as f:
            for r in sorted(records, key=lambda r: r.problem_id):
                f.write(
                    json.dumps(
                        {
                            "problem_id": r.problem_id,
                            "passed": r.passed,
                            "loops_used": r.loops_used,
                            "llm_calls": r.llm_calls,
                            "prompt_tokens": r.usage.prompt_tokens,
                            "completion_tokens": r.usage.completion_tokens,
                            "total_tokens": r.usage.total,
                            "estimated_tokens": r.usage.estimated,
                            "mismatches_initial": r.mismatches_initial,
                            "mismatches_final": r.mismatches_final,
                            "wall_ms": round(r.wall_ms, 3),
                        }
                    )
                    + "\n"
                )

        csv = out_dir / "report.csv"
        lines = ["subset,mode,problems,passed,pass_rate_pct,total_tokens,avg_tokens,improved,failed,avg_mismatch_reduction"]
        lines.append(
            f"{report.subset},{report.mode},{report.problem_count},{report.passed_count},"
            f"{report.pass_rate_pct:.2f},{report.total_usage.total},"
            f"{report.avg_tokens_per_problem:.1f},{report.improved},{report.failed},"
            f"{report.avg_mismatch_reduction:.2f}"
        )
        csv.write_text("\n".join(lines) + "\n")

        txt = out_dir / "report.txt"
        body = [
            f"subset:        {report.subset}",
            f"mode:          {report.mode}",
            f"problems:      {report.problem_count}",
            f"passed:        {report.passed_count}",
            f"pass rate:     {report.pass_rate_pct:.2f}%",
            f"total tokens:  {report.total_usage.total}"
            + (" (includes estimated counts)" if report.total_usage.estimated else ""),
            f"avg tokens:    {report.avg_tokens_per_problem:.1f}",
            f"improved/failed: {report.improved}/{report.failed}",
            f"avg mismatch reduction: {report.avg_mismatch_reduction:.2f}",
        ]
        if report.pass_at_n:
            body.append("pass@N: " + ", ".join(f"{n}:{v:.4f}" for n, v in sorted(report.pass_at_n.items())))
        txt.write_text("\n".join(body) + "\n")
        return [jsonl, csv, txt]
    except OSError as e:
        raise IOError(str(e)) from e

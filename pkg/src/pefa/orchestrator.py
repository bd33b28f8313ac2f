"""The progressive error-feedback loop: staged feedback selection, context
pruning, and run summarization around the generate/verify cycle.

Feedback escalates over loops: syntax summaries while compilation fails, a
VCD mismatch window on the first post-compile failure, then summarized
simulation logs. The testbench text never enters any LLM message; only tool
logs and derived tables do.
"""
from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from . import templates, vcd
from .llm import ChatMessage, LlmClient, LlmError, Usage, accumulate_usage, assistant, system, user
from .toolchain import (
    InstrumentedTestbench,
    NoRtlFound,
    RtlSource,
    Stage,
    ToolchainConfig,
    ToolchainError,
    ToolchainReport,
    extract_rtl,
    instrument_testbench,
    mismatch_count_from_log,
    run_pipeline,
)


class FeedbackKind(Enum):
    SYNTAX_SUMMARY = "syntax_summary"
    VCD_WINDOW = "vcd_window"
    LLM_LOG_SUMMARY = "llm_log_summary"


class RunStatus(Enum):
    RUNNING = "running"
    PASSED = "passed"
    EXHAUSTED = "exhausted"


class SummarizerUnavailable(Exception):
    pass


@dataclass
class LoopState:
    """Conversation state for one run. loop_index is the feedback-loop count
    N: it starts counting only once some candidate has compiled."""

    max_loops: int = 4
    loop_index: int = 0
    candidate_queue: list[tuple[RtlSource, ToolchainReport]] = field(default_factory=list)
    best_compiling: RtlSource | None = None
    latest_feedback: str | None = None
    status: RunStatus = RunStatus.RUNNING


@dataclass
class RunSummary:
    passed: bool
    status: RunStatus
    loops_used: int
    llm_calls: int
    usage: Usage
    summarizer_usage: Usage
    final_code: RtlSource | None
    chat_summary: str
    mismatch_counts: list[int | None]


@dataclass
class FeedbackConfig:
    pairing_suffix: str = "_ref"
    pairs: list[tuple[str, str]] | None = None  # explicit override
    window_radius: int = 5
    char_budget: int = 2400  # ~600 tokens
    log_tail_lines: int = 20


@dataclass
class RunConfig:
    max_loops: int = 4
    toolchain: ToolchainConfig = field(default_factory=ToolchainConfig)
    feedback: FeedbackConfig = field(default_factory=FeedbackConfig)
    workdir: str | Path | None = None  # default: unique temp dir per run


def decide_feedback(compile_ok: bool, loop_index: int) -> FeedbackKind:
    """The staged-feedback truth table: syntax summary until compilation
    works, VCD window on loop 1, summarized sim log afterwards."""
    if not compile_ok:
        return FeedbackKind.SYNTAX_SUMMARY
    if loop_index == 1:
        return FeedbackKind.VCD_WINDOW
    return FeedbackKind.LLM_LOG_SUMMARY


def _truncate_log(log: str, tail_lines: int) -> str:
    lines = log.splitlines()
    if len(lines) <= 2 * tail_lines:
        return log
    return "\n".join(lines[:tail_lines] + ["... [log truncated] ..."] + lines[-tail_lines:])


def _summarize(small_llm: LlmClient | None, prompt: str) -> tuple[str, Usage]:
    if small_llm is None:
        raise SummarizerUnavailable("no summarizer configured")
    try:
        return small_llm.complete([user(prompt)])
    except LlmError as e:
        raise SummarizerUnavailable(str(e)) from e


def _vcd_window_feedback(report: ToolchainReport, cfg: FeedbackConfig) -> str:
    if report.vcd_path is None:
        return "Simulation failed but produced no waveform dump.\n" + _truncate_log(
            report.log, cfg.log_tail_lines
        )
    try:
        doc = vcd.parse_vcd(Path(report.vcd_path).read_text())
    except (OSError, vcd.VcdError) as e:
        return f"Waveform dump unreadable ({e}).\n" + _truncate_log(report.log, cfg.log_tail_lines)
    table = vcd.to_signal_table(doc)
    pairs = cfg.pairs or vcd.default_pairing(table.columns, cfg.pairing_suffix)
    if not pairs:
        return "No reference/observed signal pairs found in the dump.\n" + _truncate_log(
            report.log, cfg.log_tail_lines
        )
    mm = vcd.find_mismatches(table, pairs, cfg.window_radius)
    if mm.first_mismatch_time is None:
        return "Waveform shows no signal mismatches; check the simulation log.\n" + _truncate_log(
            report.log, cfg.log_tail_lines
        )
    header = (
        f"{mm.total_mismatches} mismatching rows; "
        f"first mismatch at time {mm.first_mismatch_time}.\n"
        f"Signal table around the first mismatch "
        f"(pairs: {', '.join(f'{r} vs {o}' for r, o in mm.pairs)}):\n"
    )
    return header + vcd.render_table(table.columns, mm.window)


def build_feedback(
    kind: FeedbackKind,
    report: ToolchainReport,
    small_llm: LlmClient | None = None,
    cfg: FeedbackConfig | None = None,
    usage_sink: list[Usage] | None = None,
) -> str:
    """Render the feedback text for one failed loop.

    Summarizer failures degrade to rule-based log truncation; the result is
    soft-capped at cfg.char_budget characters. Summarizer usage, when any,
    is appended to usage_sink.
    """
    cfg = cfg or FeedbackConfig()
    if kind is FeedbackKind.VCD_WINDOW:
        text = _vcd_window_feedback(report, cfg)
    else:
        template = (
            templates.SYNTAX_SUMMARY_PROMPT
            if kind is FeedbackKind.SYNTAX_SUMMARY
            else templates.SIM_LOG_SUMMARY_PROMPT
        )
        log = _truncate_log(report.log, cfg.log_tail_lines)
        try:
            text, used = _summarize(small_llm, template.format(log=log))
            if usage_sink is not None:
                usage_sink.append(used)
        except SummarizerUnavailable:
            text = log
    if len(text) > cfg.char_budget:
        text = text[: cfg.char_budget] + "\n... [truncated to feedback budget]"
    return text


def prune_context(state: LoopState, base_prompt: list[ChatMessage]) -> list[ChatMessage]:
    """At most 4 messages: system, original prompt, latest best candidate,
    latest feedback. All earlier loop traffic is discarded."""
    messages = list(base_prompt)
    if state.latest_feedback is not None:
        cand = state.best_compiling
        if cand is None and state.candidate_queue:
            cand = state.candidate_queue[-1][0]
        if cand is not None:
            messages.append(assistant(cand.text))
        messages.append(user(templates.FEEDBACK_PROMPT.format(feedback=state.latest_feedback)))
    return messages


def summarize_run(history: list[str], small_llm: LlmClient | None, usage_sink: list[Usage] | None = None) -> str:
    """Small-LLM summary of the whole session, with a templated fallback."""
    if not history:
        return "no activity"
    joined = "\n".join(history)
    try:
        text, used = _summarize(small_llm, templates.RUN_SUMMARY_PROMPT.format(history=joined))
        if usage_sink is not None:
            usage_sink.append(used)
        return text
    except SummarizerUnavailable:
        return _templated_summary(history)


def _templated_summary(history: list[str]) -> str:
    status = "PASSED" if any(h.startswith("PASSED") for h in history) else "FAILED"
    loops = sum(1 for h in history if h.startswith("feedback"))
    last_error = next((h for h in reversed(history) if h.startswith("error")), "")
    out = f"Run {status} after {loops} feedback loop(s)."
    if last_error:
        out += f" Last {last_error}."
    return out


def run_pefa(problem, cfg: RunConfig, gen_llm: LlmClient, small_llm: LlmClient | None = None) -> RunSummary:
    """Execute one full agentic run for a DesignProblem.

    The generator is called at most 1 + max_loops times; each failure after
    the first call produces exactly one feedback construction. Per-stage
    errors are folded into failed loops, never raised out of the run.
    """
    workdir = Path(cfg.workdir) if cfg.workdir else Path.cwd() / f"pefa_run_{uuid.uuid4().hex[:12]}"
    workdir.mkdir(parents=True, exist_ok=True)

    feedback_cfg = cfg.feedback
    if getattr(problem, "pairing", None):
        feedback_cfg = FeedbackConfig(
            pairing_suffix=cfg.feedback.pairing_suffix,
            pairs=[tuple(p) for p in problem.pairing],
            window_radius=cfg.feedback.window_radius,
            char_budget=cfg.feedback.char_budget,
            log_tail_lines=cfg.feedback.log_tail_lines,
        )

    tb = instrument_testbench(problem.testbench, problem.dut_ports, vcd_path="dump.vcd")
    base_prompt = [system(templates.SYSTEM_PROMPT), user(problem.prompt)]
    state = LoopState(max_loops=cfg.max_loops)

    gen_usages: list[Usage] = []
    sum_usages: list[Usage] = []
    mismatch_counts: list[int | None] = []
    history: list[str] = []
    llm_calls = 0
    feedbacks = 0
    counter_started = False
    final_code: RtlSource | None = None

    while True:
        messages = prune_context(state, base_prompt)
        text, used = gen_llm.complete(messages)
        llm_calls += 1
        gen_usages.append(used)
        history.append(f"generator call {llm_calls}: {len(text)} chars")

        rtl: RtlSource | None = None
        report: ToolchainReport | None = None
        pipeline_errored = False
        try:
            rtl = extract_rtl(text)
        except NoRtlFound:
            history.append("error: completion contained no RTL")

        if rtl is not None:
            (workdir / f"cand_{llm_calls}.v").write_text(rtl.text)
            loopdir = workdir / f"loop_{llm_calls}"
            try:
                report = run_pipeline(rtl, tb, loopdir, cfg.toolchain)
            except ToolchainError as e:
                report = ToolchainReport(Stage.SIMULATE, False, f"toolchain error: {e}", -1)
                pipeline_errored = True
                history.append(f"error: {e}")
            state.candidate_queue.append((rtl, report))
            # reaching the simulate stage means lint and compile both passed
            if report.stage is Stage.SIMULATE and not pipeline_errored:
                state.best_compiling = rtl
            mismatch_counts.append(_loop_mismatch_count(report, feedback_cfg))
            history.append(f"stage {report.stage.value}: {'ok' if report.ok else 'fail'}")
            if report.ok:
                state.status = RunStatus.PASSED
                final_code = rtl
                history.append("PASSED")
                break
        else:
            mismatch_counts.append(None)

        if feedbacks >= cfg.max_loops:
            state.status = RunStatus.EXHAUSTED
            history.append("EXHAUSTED: feedback budget used up")
            break

        compile_ok = (
            rtl is not None
            and report is not None
            and report.stage is Stage.SIMULATE
            and not pipeline_errored
        )
        if compile_ok:
            counter_started = True
        if counter_started:
            state.loop_index += 1

        if rtl is None:
            feedback = templates.EXTRACTION_FAILURE_FEEDBACK
        else:
            kind = decide_feedback(compile_ok, max(state.loop_index, 1))
            history.append(f"feedback kind: {kind.value}")
            feedback = build_feedback(kind, report, small_llm, feedback_cfg, sum_usages)
        feedbacks += 1
        state.latest_feedback = feedback
        (workdir / f"feedback_{feedbacks}.txt").write_text(feedback)
        history.append(f"feedback {feedbacks}: {len(feedback)} chars")

    chat_summary = summarize_run(history, small_llm, sum_usages)
    summary = RunSummary(
        passed=state.status is RunStatus.PASSED,
        status=state.status,
        loops_used=feedbacks,
        llm_calls=llm_calls,
        usage=accumulate_usage(gen_usages),
        summarizer_usage=accumulate_usage(sum_usages),
        final_code=final_code,
        chat_summary=chat_summary,
        mismatch_counts=mismatch_counts,
    )
    _write_summary(workdir, summary)
    return summary


def _loop_mismatch_count(report: ToolchainReport, feedback_cfg: FeedbackConfig) -> int | None:
    """Mismatching-row count for one loop: VCD diff when a dump exists and
    pairs resolve, else the testbench's own printed counter."""
    if report.vcd_path is not None:
        try:
            doc = vcd.parse_vcd(Path(report.vcd_path).read_text())
            table = vcd.to_signal_table(doc)
            pairs = feedback_cfg.pairs or vcd.default_pairing(table.columns, feedback_cfg.pairing_suffix)
            if pairs:
                return vcd.find_mismatches(table, pairs, feedback_cfg.window_radius).total_mismatches
        except (OSError, vcd.VcdError):
            pass
    return mismatch_count_from_log(report.log)


def _write_summary(workdir: Path, summary: RunSummary) -> None:
    record = {
        "passed": summary.passed,
        "status": summary.status.value,
        "loops_used": summary.loops_used,
        "llm_calls": summary.llm_calls,
        "usage": {
            "prompt_tokens": summary.usage.prompt_tokens,
            "completion_tokens": summary.usage.completion_tokens,
            "total": summary.usage.total,
        },
        "summarizer_usage": {
            "prompt_tokens": summary.summarizer_usage.prompt_tokens,
            "completion_tokens": summary.summarizer_usage.completion_tokens,
            "total": summary.summarizer_usage.total,
        },
        "final_modules": list(summary.final_code.module_names) if summary.final_code else [],
        "mismatch_counts": summary.mismatch_counts,
        "chat_summary": summary.chat_summary,
    }
    (workdir / "summary.json").write_text(json.dumps(record, indent=2) + "\n")
    lines = [
        f"status: {summary.status.value}",
        f"loops used: {summary.loops_used}",
        f"llm calls: {summary.llm_calls}",
        f"generator tokens: {summary.usage.total}",
        f"summarizer tokens: {summary.summarizer_usage.total}",
        "",
        summary.chat_summary,
    ]
    (workdir / "summary.txt").write_text("\n".join(lines) + "\n")

"""Command-line front door: `pefa run` for benchmarks, `pefa mcts` for the
search baseline. A JSON config file can mirror every flag; flags win."""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .harness import (
    EvalRecord,
    Subset,
    load_exclusions,
    load_rtllm,
    load_verilogeval,
    run_benchmark,
    emit_report,
    mismatch_reduction,
)
from .llm import GenerationConfig, LlmClient, TranscriptStore, Usage, accumulate_usage
from .mcts import BudgetExhausted, MctsConfig, make_toolchain_evaluator, mcts_search
from .orchestrator import FeedbackConfig, RunConfig
from .toolchain import ToolchainConfig


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _merge(cfg: dict, key: str, flag_value, default):
    """Flag beats config file beats default; click passes None for unset flags."""
    if flag_value is not None:
        return flag_value
    return cfg.get(key, default)


def _make_clients(cfg: dict, model, base_url, temperature, top_k, replay, record, small_model):
    mode = "live"
    store = None
    if replay:
        mode, store = "replay", TranscriptStore(replay)
    elif record:
        mode, store = "record", TranscriptStore(record)
    gen_cfg = GenerationConfig(
        model_id=model,
        base_url=base_url,
        temperature=temperature,
        top_k=top_k,
        provider=cfg.get("provider", "DEFAULT"),
        send_top_k=cfg.get("send_top_k", True),
        temperature_capped_at_one=cfg.get("temperature_capped_at_one", False),
    )
    gen_llm = LlmClient(gen_cfg, mode=mode, store=store)
    small_llm = None
    if small_model:
        small_cfg = GenerationConfig(model_id=small_model, base_url=base_url, temperature=temperature)
        small_llm = LlmClient(small_cfg, mode=mode, store=store)
    return gen_llm, small_llm


def _load_dataset(dataset: str, subset: str, exclusions: str | None):
    if subset == "rtllm":
        result = load_rtllm(dataset)
    else:
        excl = load_exclusions(exclusions) if exclusions else []
        result = load_verilogeval(dataset, Subset(subset), excl)
    for msg in result.skipped:
        click.echo(f"warning: skipped {msg}", err=True)
    for pid in result.untestable:
        click.echo(f"warning: untestable (no testbench): {pid}", err=True)
    return result


def _toolchain_config(cfg: dict) -> ToolchainConfig:
    tc = ToolchainConfig()
    if "lint_cmd" in cfg:
        tc.lint_cmd = cfg["lint_cmd"]
    if "compile_cmd" in cfg:
        tc.compile_cmd = cfg["compile_cmd"]
    if "sim_cmd" in cfg:
        tc.sim_cmd = cfg["sim_cmd"]
    return tc


@click.group()
def main():
    """PEFA: progressive error-feedback RTL generation."""


@main.command()
@click.option("--dataset", required=True, type=click.Path(exists=True), help="dataset root with manifest.json")
@click.option("--subset", default="spec_to_rtl", type=click.Choice(["code_complete", "spec_to_rtl", "rtllm"]))
@click.option("--mode", default="agentic", type=click.Choice(["agentic", "nonagentic"]))
@click.option("--max-loops", default=None, type=int)
@click.option("--model", default=None)
@click.option("--small-model", default=None, help="summarizer model id")
@click.option("--base-url", default=None)
@click.option("--temperature", default=None, type=float)
@click.option("--top-k", default=None, type=int)
@click.option("--workers", default=None, type=int)
@click.option("--replay", default=None, type=click.Path(), help="replay transcript file")
@click.option("--record", default=None, type=click.Path(), help="record transcript file")
@click.option("--exclusions", default=None, type=click.Path(exists=True))
@click.option("--config", default=None, type=click.Path(exists=True), help="JSON config file")
@click.option("--out", default="pefa_out", type=click.Path())
def run(dataset, subset, mode, max_loops, model, small_model, base_url, temperature,
        top_k, workers, replay, record, exclusions, config, out):
    """Run the benchmark sweep; exit 0 iff the sweep completed."""
    cfg = _load_config(config)
    model = _merge(cfg, "model", model, "gpt-4o")
    small_model = _merge(cfg, "small_model", small_model, None)
    base_url = _merge(cfg, "base_url", base_url, "http://localhost:8000/v1")
    temperature = _merge(cfg, "temperature", temperature, 0.8)
    top_k = _merge(cfg, "top_k", top_k, 30)
    max_loops = _merge(cfg, "max_loops", max_loops, 4)
    workers = _merge(cfg, "workers", workers, 1)
    replay = _merge(cfg, "replay", replay, None)
    record = _merge(cfg, "record", record, None)

    result = _load_dataset(dataset, subset, exclusions)
    gen_llm, small_llm = _make_clients(cfg, model, base_url, temperature, top_k, replay, record, small_model)
    run_cfg = RunConfig(max_loops=max_loops, toolchain=_toolchain_config(cfg), feedback=FeedbackConfig())

    report, records = run_benchmark(
        result.problems, run_cfg, gen_llm, small_llm,
        mode=mode, n_calls=max_loops, parallelism=workers,
        workroot=Path(out) / "runs",
    )
    report.excluded = result.excluded
    report.skipped = result.skipped
    report.untestable = result.untestable
    files = emit_report(report, records, out)
    click.echo(f"pass rate: {report.pass_rate_pct:.2f}% ({report.passed_count}/{report.problem_count})")
    for f in files:
        click.echo(f"wrote {f}")


@main.command()
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--subset", default="spec_to_rtl", type=click.Choice(["code_complete", "spec_to_rtl", "rtllm"]))
@click.option("--budget", default=10, type=int, help="rollout budget per problem")
@click.option("--width", default=4, type=int, help="children per expansion")
@click.option("--c-puct", default=1.0, type=float)
@click.option("--model", default=None)
@click.option("--base-url", default=None)
@click.option("--temperature", default=None, type=float)
@click.option("--top-k", default=None, type=int)
@click.option("--replay", default=None, type=click.Path())
@click.option("--record", default=None, type=click.Path())
@click.option("--exclusions", default=None, type=click.Path(exists=True))
@click.option("--config", default=None, type=click.Path(exists=True))
@click.option("--out", default="pefa_mcts_out", type=click.Path())
def mcts(dataset, subset, budget, width, c_puct, model, base_url, temperature,
         top_k, replay, record, exclusions, config, out):
    """Run the MCTS baseline over a dataset."""
    cfg = _load_config(config)
    model = _merge(cfg, "model", model, "gpt-4o")
    base_url = _merge(cfg, "base_url", base_url, "http://localhost:8000/v1")
    temperature = _merge(cfg, "temperature", temperature, 0.8)
    top_k = _merge(cfg, "top_k", top_k, 30)

    result = _load_dataset(dataset, subset, exclusions)
    gen_llm, _ = _make_clients(cfg, model, base_url, temperature, top_k, replay, record, None)
    search_cfg = MctsConfig(c_puct=c_puct, rollout_budget=budget, expansion_width=width)
    toolchain_cfg = _toolchain_config(cfg)

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for problem in result.problems:
        workroot = out_dir / "runs" / problem.id
        evaluate = make_toolchain_evaluator(problem, toolchain_cfg, workroot)
        try:
            _best, rollouts = mcts_search(problem, search_cfg, gen_llm, evaluate)
            passed = True
        except BudgetExhausted as e:
            rollouts, passed = e.rollouts, False
        except Exception as e:
            click.echo(f"warning: {problem.id} failed: {e}", err=True)
            rollouts, passed = 0, False
        records.append({"problem_id": problem.id, "passed": passed, "rollouts": rollouts})
        click.echo(f"{problem.id}: {'pass' if passed else 'fail'} after {rollouts} rollouts")

    with (out_dir / "records.jsonl").open("w") as f:
        for r in sorted(records, key=lambda r: r["problem_id"]):
            f.write(json.dumps(r) + "\n")
    passed = sum(1 for r in records if r["passed"])
    click.echo(f"pass rate: {100.0 * passed / len(records):.2f}%" if records else "no problems")


if __name__ == "__main__":
    sys.exit(main())

"""PUCT-guided Monte Carlo tree search over candidate RTL programs.

Children are full-candidate (or large-chunk) continuations sampled from the
generator rather than single tokens: API-served models expose no per-token
tree, and the search budget is measured in LLM calls either way. Priors are
uniform over an expansion unless the provider supplies likelihoods.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import templates
from .llm import LlmClient, system, user, assistant
from .toolchain import (
    NoRtlFound,
    ToolchainConfig,
    ToolchainError,
    extract_rtl,
    instrument_testbench,
    pass_counts_from_log,
    run_pipeline,
)


class MctsError(Exception):
    pass


class DomainError(MctsError):
    pass


class NoChildren(MctsError):
    pass


class BudgetExhausted(MctsError):
    def __init__(self, best: str | None, best_q: float, rollouts: int):
        super().__init__(f"budget exhausted after {rollouts} rollouts (best Q {best_q:.3f})")
        self.best = best
        self.best_q = best_q
        self.rollouts = rollouts


@dataclass
class MctsNode:
    state: str
    prior: float
    visits: int = 0
    total_reward: float = 0.0
    children: list["MctsNode"] = field(default_factory=list)
    terminal: bool = False

    @property
    def q(self) -> float:
        return self.total_reward / self.visits if self.visits > 0 else 0.0


@dataclass
class MctsConfig:
    c_puct: float = 1.0
    rollout_budget: int = 10
    expansion_width: int = 4

    def __post_init__(self):
        if self.c_puct <= 0 or self.rollout_budget <= 0 or self.expansion_width <= 0:
            raise DomainError("all MctsConfig fields must be positive")


def reward(n_pass: int, n_total: int) -> float:
    """Test pass ratio when anything passes, -1 when nothing does."""
    if n_total < 1 or not (0 <= n_pass <= n_total):
        raise DomainError(f"invalid (n_pass={n_pass}, n_total={n_total})")
    return n_pass / n_total if n_pass > 0 else -1.0


def puct_select(parent: MctsNode, c: float) -> int:
    """argmax over children of Q + c * P * sqrt(sum sibling visits) / (1+N);
    ties go to the lowest index."""
    if not parent.children:
        raise NoChildren("cannot select from a leaf")
    total_visits = sum(ch.visits for ch in parent.children)
    sqrt_total = math.sqrt(total_visits)
    best_i, best_score = 0, -math.inf
    for i, ch in enumerate(parent.children):
        score = ch.q + c * ch.prior * sqrt_total / (1 + ch.visits)
        if score > best_score:
            best_i, best_score = i, score
    return best_i


def expand(node: MctsNode, llm: LlmClient, cfg: MctsConfig, base_messages) -> list[MctsNode]:
    """Attach expansion_width candidate continuations as children.

    Diversity in record/replay mode comes from a per-sample variant request
    appended to the prompt, since the wire has no n-sampling field. Priors
    are uniform (API models expose no continuation likelihoods).
    """
    if node.terminal:
        raise MctsError("cannot expand a terminal node")
    width = cfg.expansion_width
    prior = 1.0 / width
    children = []
    for k in range(width):
        messages = list(base_messages)
        if node.state:
            messages.append(assistant(node.state))
        messages.append(user(f"Provide implementation variant {k + 1} of {width}."))
        text, _usage = llm.complete(messages)
        children.append(MctsNode(state=text, prior=prior, terminal="endmodule" in text))
    node.children = children
    return children


def simulate_and_backprop(
    path: list[MctsNode],
    evaluate: Callable[[str], tuple[int, int]],
    llm: LlmClient | None = None,
    base_messages=None,
) -> float:
    """Roll out the leaf (completing it with one unconditioned continuation
    if needed), score it, and add (reward, +1 visit) along the whole path."""
    leaf = path[-1]
    state = leaf.state
    if "endmodule" not in state:
        if llm is None:
            r = -1.0
            for node in path:
                node.visits += 1
                node.total_reward += r
            return r
        messages = list(base_messages or [])
        messages.append(assistant(state))
        messages.append(user("Complete the module. Return the full module."))
        completion, _usage = llm.complete(messages)
        state = completion
        leaf.state = state
        leaf.terminal = "endmodule" in state

    try:
        n_pass, n_total = evaluate(state)
        r = reward(n_pass, n_total)
    except (ToolchainError, NoRtlFound, DomainError):
        r = -1.0
    for node in path:
        node.visits += 1
        node.total_reward += r
    return r


def make_toolchain_evaluator(
    problem, toolchain_cfg: ToolchainConfig, workroot: str | Path
) -> Callable[[str], tuple[int, int]]:
    """Score a candidate via the lint/compile/simulate pipeline.

    Per-test granularity comes from the testbench's printed sample counts
    when exposed; otherwise the result degrades to binary (all or nothing).
    """
    workroot = Path(workroot)
    tb = instrument_testbench(problem.testbench, problem.dut_ports, vcd_path="dump.vcd")
    counter = {"n": 0}

    def evaluate(candidate_text: str) -> tuple[int, int]:
        counter["n"] += 1
        rtl = extract_rtl(candidate_text)
        report = run_pipeline(rtl, tb, workroot / f"rollout_{counter['n']}", toolchain_cfg)
        counts = pass_counts_from_log(report.log)
        if counts is not None:
            return counts
        return (1, 1) if report.ok else (0, 1)

    return evaluate


def mcts_search(
    problem,
    cfg: MctsConfig,
    llm: LlmClient,
    evaluate: Callable[[str], tuple[int, int]],
) -> tuple[str, int]:
    """select -> expand -> rollout -> backprop until a rollout scores 1.0 or
    the budget runs out (then BudgetExhausted carries the best partial)."""
    base = [system(templates.SYSTEM_PROMPT), user(problem.prompt)]
    root = MctsNode(state="", prior=1.0)
    rollouts = 0
    best_state: str | None = None
    best_r = -math.inf

    while rollouts < cfg.rollout_budget:
        node, path = root, [root]
        while node.children:
            node = node.children[puct_select(node, cfg.c_puct)]
            path.append(node)
        if node is root or (node.visits > 0 and not node.terminal):
            expand(node, llm, cfg, base)
            node = node.children[puct_select(node, cfg.c_puct)]
            path.append(node)
        r = simulate_and_backprop(path, evaluate, llm, base)
        rollouts += 1
        if node.terminal and r > best_r:
            best_state, best_r = node.state, r
        if r >= 1.0:
            return node.state, rollouts

    raise BudgetExhausted(best_state, best_r if best_state else 0.0, rollouts)

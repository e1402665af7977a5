"""Protocol orchestration: Real/WM/W2R episode runs, surrogate evaluation,
lookahead planning, and training-dataset construction.

The three evaluation pipelines share one loop shape:

    Real  the agent acts in the real environment
    WM    the agent acts against the world model's predictions; success is
          the model's completion signal
    W2R   the WM episode's action sequence is replayed open-loop in the real
          environment; success comes from the environment alone

Episode termination reasons: goal, max_steps, env_end (a terminal state
without success, or W2R running out of actions), invalid_action (the agent
backend failed).
"""

from __future__ import annotations

import logging
import math
import random
import re
from dataclasses import dataclass, field
from statistics import fmean
from typing import Any, Callable, Sequence

from behr.agents import AgentError, AgentHandle, admissible_actions
from behr.core import (
    Action,
    Domain,
    EpisodeRecord,
    History,
    Observation,
    Pipeline,
    Step,
    TerminatedBy,
    Trajectory,
    TransitionTuple,
    decompose_trajectory,
)
from behr.envsim import (
    DEFAULT_MAX_STEPS,
    EnvironmentHandle,
    WorldModelHandle,
    adventure_env,
    is_terminal_observation,
    shop_env,
)
from behr.envsim.adventure import ToyAdventureSpec
from behr.envsim.shop import ToyShopSpec
from behr.metrics import (
    AgreementSummary,
    OutcomeTable,
    agreement,
    spearman_rho,
    token_f1,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    max_steps: int = DEFAULT_MAX_STEPS


@dataclass
class TaskSuite:
    """A set of single-task specs sharing one domain."""

    domain: Domain
    specs: dict[str, ToyShopSpec | ToyAdventureSpec]
    max_steps: int = DEFAULT_MAX_STEPS

    @property
    def task_ids(self) -> list[str]:
        return sorted(self.specs)

    def env_for(self, task_id: str) -> EnvironmentHandle:
        spec = self.specs[task_id]
        if self.domain is Domain.SHOP:
            return shop_env(spec, max_steps=self.max_steps)
        return adventure_env(spec, max_steps=self.max_steps)

    def factory(self) -> Callable[[str], EnvironmentHandle]:
        return self.env_for

    @classmethod
    def from_specs(
        cls, specs: Sequence[ToyShopSpec | ToyAdventureSpec], domain: Domain, max_steps: int = DEFAULT_MAX_STEPS
    ) -> "TaskSuite":
        return cls(domain=domain, specs={s.task_id: s for s in specs}, max_steps=max_steps)


def _finish(
    task_id: str,
    pipeline: Pipeline,
    actions: list[Action],
    observations: list[Observation],
    success: bool,
    terminated_by: TerminatedBy,
) -> EpisodeRecord:
    return EpisodeRecord(
        task_id=task_id,
        pipeline=pipeline,
        actions=tuple(actions),
        observations=tuple(observations),
        success=success,
        steps=len(actions),
        terminated_by=terminated_by,
    )


def run_real(agent: AgentHandle, env: EnvironmentHandle, cfg: RunConfig, task_id: str) -> EpisodeRecord:
    """One episode of the agent acting in the real environment."""
    obs = env.reset(task_id)
    history = History(task_id=task_id, initial_obs=obs)
    actions: list[Action] = []
    observations: list[Observation] = []
    for step_i in range(1, cfg.max_steps + 1):
        try:
            action = agent.act(history)
        except AgentError:
            logger.warning("agent failed on %s at step %d", task_id, step_i, exc_info=True)
            return _finish(task_id, Pipeline.REAL, actions, observations, False, TerminatedBy.INVALID_ACTION)
        obs, done, success = env.step(action)
        actions.append(action)
        observations.append(obs)
        history = history.extended(action, obs)
        if done:
            if success:
                return _finish(task_id, Pipeline.REAL, actions, observations, True, TerminatedBy.GOAL)
            if is_terminal_observation(obs) or step_i < cfg.max_steps:
                return _finish(task_id, Pipeline.REAL, actions, observations, False, TerminatedBy.ENV_END)
            return _finish(task_id, Pipeline.REAL, actions, observations, False, TerminatedBy.MAX_STEPS)
    return _finish(task_id, Pipeline.REAL, actions, observations, False, TerminatedBy.MAX_STEPS)


def run_wm(
    agent: AgentHandle,
    wm: WorldModelHandle,
    task_id: str,
    initial_obs: Observation,
    cfg: RunConfig,
) -> EpisodeRecord:
    """One episode of the agent acting against world-model predictions.

    Success is the model's completion signal; an episode also ends when the
    predicted observation is terminal (without success) or at max_steps.
    """
    history = History(task_id=task_id, initial_obs=initial_obs)
    actions: list[Action] = []
    observations: list[Observation] = []
    for step_i in range(1, cfg.max_steps + 1):
        try:
            action = agent.act(history)
        except AgentError:
            logger.warning("agent failed on %s at step %d", task_id, step_i, exc_info=True)
            return _finish(task_id, Pipeline.WM, actions, observations, False, TerminatedBy.INVALID_ACTION)
        obs, done_signal = wm.predict(history, action)
        actions.append(action)
        observations.append(obs)
        history = history.extended(action, obs)
        if done_signal:
            return _finish(task_id, Pipeline.WM, actions, observations, True, TerminatedBy.GOAL)
        if is_terminal_observation(obs):
            return _finish(task_id, Pipeline.WM, actions, observations, False, TerminatedBy.ENV_END)
    return _finish(task_id, Pipeline.WM, actions, observations, False, TerminatedBy.MAX_STEPS)


def replay_w2r(wm_record: EpisodeRecord, env: EnvironmentHandle, cfg: RunConfig) -> EpisodeRecord:
    """Feed a WM episode's actions verbatim into the real environment.

    Open loop by design: the real observations never influence which action
    comes next. Success comes from the environment; running out of recorded
    actions before the goal ends the episode as env_end.
    """
    if wm_record.pipeline is not Pipeline.WM:
        raise ValueError("replay_w2r expects a WM-pipeline record")
    env.reset(wm_record.task_id)
    actions: list[Action] = []
    observations: list[Observation] = []
    for step_i, action in enumerate(wm_record.actions[: cfg.max_steps], start=1):
        obs, done, success = env.step(action)
        actions.append(action)
        observations.append(obs)
        if done:
            if success:
                return _finish(wm_record.task_id, Pipeline.W2R, actions, observations, True, TerminatedBy.GOAL)
            if is_terminal_observation(obs) or step_i < cfg.max_steps:
                return _finish(wm_record.task_id, Pipeline.W2R, actions, observations, False, TerminatedBy.ENV_END)
            return _finish(wm_record.task_id, Pipeline.W2R, actions, observations, False, TerminatedBy.MAX_STEPS)
    return _finish(wm_record.task_id, Pipeline.W2R, actions, observations, False, TerminatedBy.ENV_END)


def collect_trajectory(agent: AgentHandle, env: EnvironmentHandle, cfg: RunConfig, task_id: str) -> Trajectory:
    """Run the agent in the real environment and keep the full trajectory."""
    obs = env.reset(task_id)
    initial = obs
    history = History(task_id=task_id, initial_obs=obs)
    steps: list[Step] = []
    success = False
    for _ in range(cfg.max_steps):
        action = agent.act(history)
        obs, done, success = env.step(action)
        steps.append(Step(action, obs))
        history = history.extended(action, obs)
        if done:
            break
    reward = getattr(env, "partial_reward", None)
    if reward is None:
        score = getattr(env, "score", 0)
        total = len(getattr(env, "spec").subgoals) if hasattr(env, "spec") else 1
        reward = score / total if total else 0.0
    return Trajectory(
        task_id=task_id,
        initial_obs=initial,
        steps=tuple(steps),
        success=success,
        reward_scalar=float(reward),
    )


# --------------------------------------------------------------------------
# Suite-level evaluation


@dataclass
class SuiteOutcomes:
    """Per-task Real / WM / W2R records for one (agent, world model) pair."""

    agent_name: str
    real: dict[str, EpisodeRecord]
    wm: dict[str, EpisodeRecord]
    w2r: dict[str, EpisodeRecord]

    @property
    def task_ids(self) -> list[str]:
        return sorted(self.real)

    def sr(self, which: str) -> float:
        records: dict[str, EpisodeRecord] = getattr(self, which)
        return fmean([1.0 if r.success else 0.0 for r in records.values()]) if records else 0.0

    def real_vs_w2r(self) -> OutcomeTable:
        ids = self.task_ids
        return OutcomeTable(
            task_ids=tuple(ids),
            outcomes_a=tuple(self.real[t].success for t in ids),
            outcomes_b=tuple(self.w2r[t].success for t in ids),
        )

    def wm_vs_real(self) -> OutcomeTable:
        ids = self.task_ids
        return OutcomeTable(
            task_ids=tuple(ids),
            outcomes_a=tuple(self.wm[t].success for t in ids),
            outcomes_b=tuple(self.real[t].success for t in ids),
        )


def run_suite(
    agent: AgentHandle,
    suite: TaskSuite,
    wm: WorldModelHandle,
    cfg: RunConfig | None = None,
    agent_name: str | None = None,
) -> SuiteOutcomes:
    """All three pipelines for one agent over every task in the suite."""
    cfg = cfg or RunConfig(max_steps=suite.max_steps)
    real: dict[str, EpisodeRecord] = {}
    wm_records: dict[str, EpisodeRecord] = {}
    w2r: dict[str, EpisodeRecord] = {}
    for task_id in suite.task_ids:
        real[task_id] = run_real(agent, suite.env_for(task_id), cfg, task_id)
        initial = suite.env_for(task_id).reset(task_id)
        wm_records[task_id] = run_wm(agent, wm, task_id, initial, cfg)
        w2r[task_id] = replay_w2r(wm_records[task_id], suite.env_for(task_id), cfg)
    name = agent_name or getattr(agent, "name", agent.__class__.__name__)
    return SuiteOutcomes(agent_name=name, real=real, wm=wm_records, w2r=w2r)


def _timeout_rate(records: dict[str, EpisodeRecord]) -> float:
    if not records:
        return 0.0
    return fmean([1.0 if r.terminated_by is TerminatedBy.MAX_STEPS else 0.0 for r in records.values()])


def _mean_steps(records: dict[str, EpisodeRecord]) -> float:
    return fmean([r.steps for r in records.values()]) if records else 0.0


def surrogate_eval(
    agents: Sequence[AgentHandle],
    wm: WorldModelHandle,
    suite: TaskSuite,
    cfg: RunConfig | None = None,
) -> dict[str, Any]:
    """Offline-surrogate check: how well WM-internal results track Real.

    Per agent: the Real/WM success-rate pair, task-level agreement counts
    (false positives are WM-only successes), and episode-length calibration.
    Across agents: Spearman rank correlation of the two leaderboards.
    """
    rows: list[dict[str, Any]] = []
    sr_real: list[float] = []
    sr_wm: list[float] = []
    for agent in agents:
        outcomes = run_suite(agent, suite, wm, cfg)
        table = outcomes.wm_vs_real()
        agree: AgreementSummary = agreement(table)
        rows.append(
            {
                "agent": outcomes.agent_name,
                "sr_real": outcomes.sr("real"),
                "sr_wm": outcomes.sr("wm"),
                "tp": agree.tp,
                "tn": agree.tn,
                "fp": agree.fp,
                "fn": agree.fn,
                "agree_rate": agree.agree_rate,
                "mean_steps_real": _mean_steps(outcomes.real),
                "mean_steps_wm": _mean_steps(outcomes.wm),
                "timeout_rate_real": _timeout_rate(outcomes.real),
                "timeout_rate_wm": _timeout_rate(outcomes.wm),
            }
        )
        sr_real.append(outcomes.sr("real"))
        sr_wm.append(outcomes.sr("wm"))
    report: dict[str, Any] = {"rows": rows}
    if len(agents) >= 2:
        try:
            report["spearman_rho"] = spearman_rho(sr_wm, sr_real)
        except ValueError:
            report["spearman_rho"] = None
    return report


# --------------------------------------------------------------------------
# Lookahead planning


@dataclass
class LookaheadStats:
    steps: int = 0
    fallbacks: int = 0


@dataclass
class LookaheadConfig:
    planner: AgentHandle
    wm: WorldModelHandle
    k: int = 5
    preview_chars: int = 800
    stats: LookaheadStats = field(default_factory=LookaheadStats)

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")


def lookahead_step(state_history: History, admissible: list[Action], cfg: LookaheadConfig) -> Action:
    """One planning step: propose up to k candidates (1 planner call),
    simulate each with the world model (k calls), select the best (1 planner
    call). Cost per step is therefore k+2 calls when k candidates exist.

    A selection that is not admissible falls back to the top-ranked
    candidate and is counted in cfg.stats.fallbacks.
    """
    if not admissible:
        raise ValueError("admissible actions must be non-empty")
    k = min(cfg.k, len(admissible))
    proposals = cfg.planner.propose_candidates(state_history, admissible, k)
    proposals = [p for p in proposals if p.text in {a.text for a in admissible}][:k]
    if not proposals:
        raise AgentError("planner proposed no admissible actions")

    options: list[tuple[Action, Observation]] = []
    for action in proposals:
        predicted, _ = cfg.wm.predict(state_history, action)
        preview = Observation(text=predicted.text[: cfg.preview_chars], structured=predicted.structured)
        options.append((action, preview))

    cfg.stats.steps += 1
    try:
        index = cfg.planner.select_among(state_history, options)
        choice = options[index][0]
    except (AgentError, IndexError):
        cfg.stats.fallbacks += 1
        return proposals[0]
    if choice.text not in {a.text for a in admissible}:
        cfg.stats.fallbacks += 1
        return proposals[0]
    return choice


def run_lookahead_episode(
    env: EnvironmentHandle,
    suite_domain: Domain,
    cfg: RunConfig,
    lookahead: LookaheadConfig,
    task_id: str,
) -> EpisodeRecord:
    """Episode in the real environment with lookahead action selection."""
    obs = env.reset(task_id)
    history = History(task_id=task_id, initial_obs=obs)
    actions: list[Action] = []
    observations: list[Observation] = []
    for step_i in range(1, cfg.max_steps + 1):
        candidates = admissible_actions(history.last_obs, suite_domain)
        try:
            if candidates:
                action = lookahead_step(history, candidates, lookahead)
            else:
                action = lookahead.planner.act(history)
        except AgentError:
            logger.warning("planner failed on %s at step %d", task_id, step_i, exc_info=True)
            return _finish(task_id, Pipeline.REAL, actions, observations, False, TerminatedBy.INVALID_ACTION)
        obs, done, success = env.step(action)
        actions.append(action)
        observations.append(obs)
        history = history.extended(action, obs)
        if done:
            if success:
                return _finish(task_id, Pipeline.REAL, actions, observations, True, TerminatedBy.GOAL)
            if is_terminal_observation(obs) or step_i < cfg.max_steps:
                return _finish(task_id, Pipeline.REAL, actions, observations, False, TerminatedBy.ENV_END)
            break
    return _finish(task_id, Pipeline.REAL, actions, observations, False, TerminatedBy.MAX_STEPS)


class CountingAgent:
    """Instrumented wrapper: counts model calls made through the handle."""

    def __init__(self, inner: AgentHandle) -> None:
        self.inner = inner
        self.calls = 0
        self.name = getattr(inner, "name", inner.__class__.__name__)

    def act(self, history: History) -> Action:
        self.calls += 1
        return self.inner.act(history)

    def propose_candidates(self, history: History, admissible: list[Action], k: int) -> list[Action]:
        self.calls += 1
        return self.inner.propose_candidates(history, admissible, k)

    def select_among(self, history: History, options: list[tuple[Action, Observation]]) -> int:
        self.calls += 1
        return self.inner.select_among(history, options)


class CountingWM:
    """Instrumented wrapper around a world model."""

    def __init__(self, inner: WorldModelHandle) -> None:
        self.inner = inner
        self.calls = 0

    def predict(self, history: History, action: Action) -> tuple[Observation, bool]:
        self.calls += 1
        return self.inner.predict(history, action)


# --------------------------------------------------------------------------
# Training-dataset construction


@dataclass(frozen=True)
class DatasetConfig:
    domain: Domain
    baseline_wm: WorldModelHandle
    f1_threshold: float = 0.35
    budget: int = 0  # adventure mode only; 0 means "no sampling, keep all"
    seed: int = 0


_SHOP_ACTION_RE = re.compile(r"^(search\[.+\]|click\[.+\])$")


def _valid_expert_action(action: Action, domain: Domain) -> bool:
    if domain is Domain.SHOP:
        return bool(_SHOP_ACTION_RE.match(action.text))
    return bool(action.text.strip())


def _action_type(tuple_: TransitionTuple) -> str:
    return tuple_.history.final_action.text.split()[0].split("[")[0]


def _baseline_f1(tuple_: TransitionTuple, wm: WorldModelHandle) -> float:
    predicted, _ = wm.predict(tuple_.history.history, tuple_.history.final_action)
    return token_f1(predicted.text, tuple_.real_next_state.text)


def largest_remainder_allocation(weights: dict[str, float], budget: int) -> dict[str, int]:
    """Integer allocation proportional to weights via largest remainder.

    Ties on the fractional part break toward the larger quota, then by key
    order. A zero weight sum allocates nothing.
    """
    total = sum(weights.values())
    if total <= 0 or budget <= 0:
        return {key: 0 for key in weights}
    quotas = {key: budget * w / total for key, w in weights.items()}
    alloc = {key: math.floor(q) for key, q in quotas.items()}
    remaining = budget - sum(alloc.values())
    order = sorted(
        weights,
        key=lambda key: (-(quotas[key] - alloc[key]), -quotas[key], key),
    )
    for key in order[:remaining]:
        alloc[key] += 1
    return alloc


def wm_prompt_messages(tuple_: TransitionTuple) -> list[dict[str, str]]:
    """World-model message history ending at the transition's action: the
    initial observation as system, then action/observation turns in the
    reversed role convention (user speaks actions, assistant states)."""
    messages = [{"role": "system", "content": tuple_.history.initial_obs.text}]
    for step in tuple_.history.pairs:
        messages.append({"role": "user", "content": step.action.text})
        messages.append({"role": "assistant", "content": step.obs.text})
    messages.append({"role": "user", "content": tuple_.history.final_action.text})
    return messages


def _record(tuple_: TransitionTuple) -> dict[str, Any]:
    return {
        "prompt": wm_prompt_messages(tuple_),
        "reward_model": {"ground_truth": tuple_.real_next_state.text},
        "extra_info": {"expert_action": tuple_.expert_next_action.text},
    }


def build_grpo_dataset(trajectories: Sequence[Trajectory], cfg: DatasetConfig) -> list[dict[str, Any]]:
    """Difficulty-aware training records from offline trajectories.

    Every trajectory is decomposed into transition tuples and each tuple's
    baseline world-model prediction is scored with token F1 against the real
    next state. Shop mode keeps tuples below the F1 threshold with valid
    expert actions. Adventure mode groups tuples by the acting verb and
    allocates per-type counts proportional to sqrt(pool * hardness), where
    hardness is 1 minus the type's mean F1, rounding by largest remainder
    and sampling within each type with the configured seed.
    """
    tuples: list[TransitionTuple] = []
    for trajectory in trajectories:
        tuples.extend(decompose_trajectory(trajectory, cfg.domain))
    scored = [(t, _baseline_f1(t, cfg.baseline_wm)) for t in tuples]

    if cfg.domain is Domain.SHOP:
        kept = [
            t
            for t, f1 in scored
            if f1 < cfg.f1_threshold and _valid_expert_action(t.expert_next_action, cfg.domain)
        ]
        return [_record(t) for t in kept]

    by_type: dict[str, list[tuple[TransitionTuple, float]]] = {}
    for t, f1 in scored:
        by_type.setdefault(_action_type(t), []).append((t, f1))
    pool_size = len(scored)
    budget = cfg.budget if cfg.budget > 0 else pool_size
    if budget >= pool_size:
        if cfg.budget > pool_size:
            logger.warning("budget %d exceeds pool %d; taking the full pool", cfg.budget, pool_size)
        return [_record(t) for t, _ in scored]

    weights = {
        kind: math.sqrt(len(group) * max(0.0, 1.0 - fmean([f1 for _, f1 in group])))
        for kind, group in sorted(by_type.items())
    }
    alloc = largest_remainder_allocation(weights, budget)
    rng = random.Random(cfg.seed)
    records: list[dict[str, Any]] = []
    for kind in sorted(by_type):
        group = by_type[kind]
        take = min(alloc.get(kind, 0), len(group))
        if take < alloc.get(kind, 0):
            logger.warning("type %s allocation %d exceeds its pool %d", kind, alloc[kind], len(group))
        chosen = rng.sample(range(len(group)), take) if take < len(group) else list(range(len(group)))
        for idx in sorted(chosen):
            records.append(_record(group[idx][0]))
    return records

"""Canonical data model shared by every other module.

Defines the value types for agent/environment interaction:

- Observation: one textual environment state, optionally with a parsed page
- Action: one single-line agent command
- History / TrajectoryPrefix: interaction prefixes ending in an observation
  or an action respectively
- Trajectory: one complete rollout with its final outcome
- TransitionTuple: one step-level training/eval record
- EpisodeRecord: one pipeline rollout (Real / WM / W2R)

plus the two structural operations `history_prefix` and
`decompose_trajectory` and the trajectory JSONL interchange format.

All types are plain immutable-by-convention dataclasses; they are safe to
share read-only across concurrent workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator

from behr.pages import PageState


class Domain(str, Enum):
    SHOP = "shop"
    ADVENTURE = "adventure"


class Pipeline(str, Enum):
    REAL = "Real"
    WM = "WM"
    W2R = "W2R"


class TerminatedBy(str, Enum):
    GOAL = "goal"
    MAX_STEPS = "max_steps"
    INVALID_ACTION = "invalid_action"
    ENV_END = "env_end"


@dataclass(frozen=True)
class Observation:
    """One environment observation.

    `text` is the ground truth; `structured` is a derived parse carried along
    when the observation is a parseable shop page. The parse is never the
    source of truth.
    """

    text: str
    structured: PageState | None = None

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("observation text must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"text": self.text}
        if self.structured is not None:
            out["page"] = self.structured.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Observation":
        page = data.get("page")
        return cls(
            text=data["text"],
            structured=PageState.from_dict(page) if page is not None else None,
        )


@dataclass(frozen=True)
class Action:
    """A single-line command, e.g. search[...], click[...], or a verb phrase."""

    text: str

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("action text must be non-empty")
        if self.text != self.text.strip():
            raise ValueError("action text must have no leading/trailing whitespace")
        if "\n" in self.text or "\r" in self.text:
            raise ValueError("action text must be a single line")

    def to_dict(self) -> str:
        return self.text

    @classmethod
    def from_dict(cls, data: str) -> "Action":
        return cls(text=data)


@dataclass(frozen=True)
class Step:
    """One (action, resulting observation) pair."""

    action: Action
    obs: Observation

    def to_dict(self) -> dict[str, Any]:
        return {"action": self.action.to_dict(), "obs": self.obs.to_dict()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Step":
        return cls(action=Action.from_dict(data["action"]), obs=Observation.from_dict(data["obs"]))


@dataclass(frozen=True)
class History:
    """An interaction prefix ending in an observation: s_0 plus complete
    (action, observation) pairs. This is what an agent acts on and what a
    world model extends."""

    task_id: str
    initial_obs: Observation
    pairs: tuple[Step, ...] = ()

    @property
    def last_obs(self) -> Observation:
        return self.pairs[-1].obs if self.pairs else self.initial_obs

    def extended(self, action: Action, obs: Observation) -> "History":
        return History(self.task_id, self.initial_obs, self.pairs + (Step(action, obs),))

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "initial_obs": self.initial_obs.to_dict(),
            "pairs": [p.to_dict() for p in self.pairs],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "History":
        return cls(
            task_id=data["task_id"],
            initial_obs=Observation.from_dict(data["initial_obs"]),
            pairs=tuple(Step.from_dict(p) for p in data["pairs"]),
        )


@dataclass(frozen=True)
class TrajectoryPrefix:
    """An interaction prefix ending in an action: the initial observation,
    t-1 complete pairs, and the pending action a_t."""

    task_id: str
    initial_obs: Observation
    pairs: tuple[Step, ...]
    final_action: Action

    @property
    def history(self) -> History:
        """The prefix with the pending action removed."""
        return History(self.task_id, self.initial_obs, self.pairs)

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "initial_obs": self.initial_obs.to_dict(),
            "pairs": [p.to_dict() for p in self.pairs],
            "final_action": self.final_action.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrajectoryPrefix":
        return cls(
            task_id=data["task_id"],
            initial_obs=Observation.from_dict(data["initial_obs"]),
            pairs=tuple(Step.from_dict(p) for p in data["pairs"]),
            final_action=Action.from_dict(data["final_action"]),
        )


@dataclass(frozen=True)
class Trajectory:
    """One full rollout with the environment's outcome."""

    task_id: str
    initial_obs: Observation
    steps: tuple[Step, ...]
    success: bool
    reward_scalar: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.reward_scalar <= 1.0:
            raise ValueError("reward_scalar must lie in [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "initial_obs": self.initial_obs.to_dict(),
            "steps": [s.to_dict() for s in self.steps],
            "success": self.success,
            "reward": self.reward_scalar,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Trajectory":
        return cls(
            task_id=data["task_id"],
            initial_obs=Observation.from_dict(data["initial_obs"]),
            steps=tuple(Step.from_dict(s) for s in data["steps"]),
            success=data["success"],
            reward_scalar=data["reward"],
        )


@dataclass(frozen=True)
class TransitionTuple:
    """One step-level record: the prefix through a_t, the real next state
    s_{t+1}, and the logged next expert action a*_{t+1}."""

    history: TrajectoryPrefix
    real_next_state: Observation
    expert_next_action: Action
    domain_tag: Domain

    def to_dict(self) -> dict[str, Any]:
        return {
            "history": self.history.to_dict(),
            "real_next_state": self.real_next_state.to_dict(),
            "expert_next_action": self.expert_next_action.to_dict(),
            "domain": self.domain_tag.value,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TransitionTuple":
        return cls(
            history=TrajectoryPrefix.from_dict(data["history"]),
            real_next_state=Observation.from_dict(data["real_next_state"]),
            expert_next_action=Action.from_dict(data["expert_next_action"]),
            domain_tag=Domain(data["domain"]),
        )


@dataclass(frozen=True)
class EpisodeRecord:
    """One rollout under one evaluation pipeline."""

    task_id: str
    pipeline: Pipeline
    actions: tuple[Action, ...]
    observations: tuple[Observation, ...]
    success: bool
    steps: int
    terminated_by: TerminatedBy

    def __post_init__(self) -> None:
        if self.steps != len(self.actions):
            raise ValueError("steps must equal the number of actions")
        if len(self.observations) != len(self.actions):
            raise ValueError("one observation is recorded per action")

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "pipeline": self.pipeline.value,
            "actions": [a.to_dict() for a in self.actions],
            "observations": [o.to_dict() for o in self.observations],
            "success": self.success,
            "steps": self.steps,
            "terminated_by": self.terminated_by.value,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EpisodeRecord":
        return cls(
            task_id=data["task_id"],
            pipeline=Pipeline(data["pipeline"]),
            actions=tuple(Action.from_dict(a) for a in data["actions"]),
            observations=tuple(Observation.from_dict(o) for o in data["observations"]),
            success=data["success"],
            steps=data["steps"],
            terminated_by=TerminatedBy(data["terminated_by"]),
        )


def history_prefix(trajectory: Trajectory, t: int) -> TrajectoryPrefix:
    """Materialize the prefix through action t (1-based): the initial
    observation, the first t-1 complete pairs, and action t.

    Raises ValueError when t is outside 1..len(steps).
    """
    if not 1 <= t <= len(trajectory.steps):
        raise ValueError(f"t={t} out of range for a {len(trajectory.steps)}-step trajectory")
    return TrajectoryPrefix(
        task_id=trajectory.task_id,
        initial_obs=trajectory.initial_obs,
        pairs=tuple(trajectory.steps[: t - 1]),
        final_action=trajectory.steps[t - 1].action,
    )


def decompose_trajectory(trajectory: Trajectory, domain_tag: Domain) -> list[TransitionTuple]:
    """Split a trajectory into step-level transition tuples.

    Yields one tuple per t in 1..steps-1, pairing the prefix through a_t with
    observation t (the real next state) and action t+1 (the logged next
    expert action). Trajectories with fewer than 2 steps yield no tuples.
    """
    out: list[TransitionTuple] = []
    for t in range(1, len(trajectory.steps)):
        out.append(
            TransitionTuple(
                history=history_prefix(trajectory, t),
                real_next_state=trajectory.steps[t - 1].obs,
                expert_next_action=trajectory.steps[t].action,
                domain_tag=domain_tag,
            )
        )
    return out


def dump_jsonl(records: Iterable[dict[str, Any]], path: str | Path) -> None:
    """Write one compact JSON object per line, UTF-8, LF-terminated."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def load_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_trajectories(trajectories: Iterable[Trajectory], path: str | Path) -> None:
    dump_jsonl((t.to_dict() for t in trajectories), path)


def read_trajectories(path: str | Path) -> list[Trajectory]:
    return [Trajectory.from_dict(d) for d in load_jsonl(path)]

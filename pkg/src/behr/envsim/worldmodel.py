"""World-model implementations over the toy environments.

The oracle world model replays the interaction history through a fresh real
environment and steps it once, so its predictions match the environment
byte for byte; a history whose observations disagree with the real dynamics
raises DivergenceError.

Corrupted world models wrap the oracle dynamics and deterministically inject
one named defect. Unlike the oracle they replay actions without checking
observations: their own past predictions are fabricated, so exact-match
verification is impossible by design.

    drop_target_pages   shop pages lose the target item, and any buy is
                        optimistically confirmed as a completed task
    break_connectivity  one walkthrough traversal is refused ("You can't go
                        that way."), trapping replay agents
    drift_after_step_k  observation tokens degrade after step k

`rate` selects the affected fraction of tasks by seeded hash, so a zeroed
corruption reproduces the oracle exactly.

The predicted completion signal means "the task just completed
successfully"; episodes that end without success (a failed purchase) are
detected from the terminal observation instead.
"""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from behr.core import Action, History, Observation
from behr.envsim import EnvironmentHandle
from behr.pages import PageState, render_page, try_parse_page

EnvFactory = Callable[[str], EnvironmentHandle]


class DivergenceError(RuntimeError):
    """The supplied history is inconsistent with the real dynamics."""


def is_terminal_observation(obs: Observation) -> bool:
    """Domain-independent end-of-episode detection on observation text."""
    page = obs.structured or try_parse_page(obs.text)
    if page is not None and page.page_type == "done":
        return True
    return "*** The End ***" in obs.text


def _replay(
    factory: EnvFactory, history: History, verify: bool
) -> tuple[EnvironmentHandle, bool, bool]:
    """Run a fresh environment through the history's actions.

    Returns (env, done, success) positioned after the last pair. With
    verify=True every replayed observation must equal the recorded one.
    """
    env = factory(history.task_id)
    obs = env.reset(history.task_id)
    if verify and obs.text != history.initial_obs.text:
        raise DivergenceError("initial observation differs from real dynamics")
    done = success = False
    for step in history.pairs:
        if done:
            raise DivergenceError("history continues past a terminal state")
        obs, done, success = env.step(step.action)
        if verify and obs.text != step.obs.text:
            raise DivergenceError(f"history diverges at action {step.action.text!r}")
    return env, done, success


@dataclass
class OracleWorldModel:
    """Ground-truth simulator: replays the true environment dynamics."""

    factory: EnvFactory

    def predict(self, history: History, action: Action) -> tuple[Observation, bool]:
        env, done, _ = _replay(self.factory, history, verify=True)
        if done:
            raise DivergenceError("cannot predict past a terminal state")
        obs, done, success = env.step(action)
        return obs, done and success


def oracle_wm(factory: EnvFactory) -> OracleWorldModel:
    return OracleWorldModel(factory)


class CorruptionKind(str, Enum):
    DROP_TARGET_PAGES = "drop_target_pages"
    BREAK_CONNECTIVITY = "break_connectivity"
    DRIFT_AFTER_STEP_K = "drift_after_step_k"


@dataclass(frozen=True)
class Corruption:
    kind: CorruptionKind
    rate: float = 1.0  # fraction of tasks affected, selected by seeded hash
    seed: int = 0
    drift_start: int = 3  # drift_after_step_k only
    drift_noise: float = 0.3

    def affects(self, task_id: str) -> bool:
        if self.rate <= 0.0:
            return False
        if self.rate >= 1.0:
            return True
        digest = hashlib.sha256(f"{self.seed}:{task_id}".encode()).digest()
        return int.from_bytes(digest[:8], "big") / 2**64 < self.rate


_GO_RE = re.compile(r"^go (\w+)$")
_PROTECTED_LINE = re.compile(r"^(AVAILABLE ACTIONS:|Clickables:|Page type:|Instruction:|Items:|-= )")


def _drop_target_from_page(page: PageState) -> PageState | None:
    """Remove the target item and its clickable; None when not applicable."""
    tid = page.target_item_id
    if tid is None or tid not in page.item_ids or len(page.items) < 2:
        return None
    from dataclasses import replace

    items = tuple(it for it in page.items if it.item_id != tid)
    clickables = tuple(c for c in page.clickables if c != f"click[{tid.lower()}]")
    return replace(page, items=items, clickables=clickables)


def _drift_text(text: str, rng: random.Random, rate: float) -> str:
    """Replace a fraction of tokens on unprotected lines."""
    noise = ("blur", "smudge", "static", "fuzz", "haze", "mist")
    out_lines = []
    for line in text.split("\n"):
        if _PROTECTED_LINE.match(line):
            out_lines.append(line)
            continue
        tokens = line.split(" ")
        for i in range(len(tokens)):
            if tokens[i] and rng.random() < rate:
                tokens[i] = rng.choice(noise)
        out_lines.append(" ".join(tokens))
    return "\n".join(out_lines)


@dataclass
class CorruptedWorldModel:
    """Oracle dynamics plus one deterministic, seeded defect.

    Implemented as full resimulation: every predict() replays the history's
    actions from scratch under corruption-aware stepping, so the model stays
    a pure function of (history, action) and its own past outputs remain
    consistent with its state.
    """

    factory: EnvFactory
    corruption: Corruption

    def predict(self, history: History, action: Action) -> tuple[Observation, bool]:
        if not self.corruption.affects(history.task_id):
            env, done, _ = _replay(self.factory, history, verify=False)
            if done:
                raise DivergenceError("cannot predict past a terminal state")
            obs, done, success = env.step(action)
            return obs, done and success

        env = self.factory(history.task_id)
        env.reset(history.task_id)
        result: tuple[Observation, bool] | None = None
        step_index = 0
        dropped_ids: set[str] = set()
        for act in [s.action for s in history.pairs] + [action]:
            step_index += 1
            result = self._corrupted_step(env, act, step_index, history.task_id, dropped_ids)
        assert result is not None
        return result

    def _corrupted_step(
        self,
        env: EnvironmentHandle,
        action: Action,
        step_index: int,
        task_id: str,
        dropped_ids: set[str],
    ) -> tuple[Observation, bool]:
        kind = self.corruption.kind

        if kind is CorruptionKind.BREAK_CONNECTIVITY:
            m = _GO_RE.match(action.text.strip().lower())
            if m and self._blocked_direction(env, m.group(1)):
                # refuse the move without advancing the backing env
                room = getattr(env, "_room", "somewhere")
                obs = Observation(
                    text=f"You can't go that way.\n-= {str(room).title()} =-\n"
                    + self._available_line(env)
                )
                return obs, False
            obs, done, success = self._safe_step(env, action)
            return obs, done and success

        if kind is CorruptionKind.DROP_TARGET_PAGES:
            if action.text == "click[buy now]":
                # optimistic completion: confirm whatever is being bought
                obs, done, success = self._safe_step(env, action)
                if not done:  # buy was inapplicable here; pass through
                    return obs, False
                return obs, True
            clicked = action.text[len("click[") : -1] if action.text.startswith("click[") else None
            if clicked and clicked.upper() in dropped_ids:
                obs = self._current_page_dropped(env, dropped_ids)
                return Observation(text="Invalid action.\n" + obs.text, structured=obs.structured), False
            obs, done, success = self._safe_step(env, action)
            if not done:
                page = obs.structured or try_parse_page(obs.text)
                if page is not None:
                    dropped = _drop_target_from_page(page)
                    if dropped is not None:
                        dropped_ids.add(page.target_item_id or "")
                        obs = Observation(text=render_page(dropped), structured=dropped)
            return obs, done and success

        # drift_after_step_k
        obs, done, success = self._safe_step(env, action)
        if step_index >= self.corruption.drift_start and not done:
            rng = random.Random((self.corruption.seed, task_id, step_index).__repr__())
            obs = Observation(text=_drift_text(obs.text, rng, self.corruption.drift_noise))
        return obs, done and success

    def _safe_step(self, env: EnvironmentHandle, action: Action) -> tuple[Observation, bool, bool]:
        return env.step(action)

    def _blocked_direction(self, env: EnvironmentHandle, direction: str) -> bool:
        """Break the first sorted exit of the current room (seeded pick)."""
        room = getattr(env, "_room", None)
        spec = getattr(env, "spec", None)
        if room is None or spec is None or not hasattr(spec, "rooms"):
            return False
        exits = sorted(spec.rooms.get(room, {}))
        if not exits:
            return False
        rng = random.Random((self.corruption.seed, spec.task_id, room).__repr__())
        broken = exits[rng.randrange(len(exits))]
        return direction == broken

    def _available_line(self, env: EnvironmentHandle) -> str:
        actions = getattr(env, "admissible_actions", None)
        if callable(actions):
            return "AVAILABLE ACTIONS: " + " | ".join(actions())
        return "AVAILABLE ACTIONS: look | inventory"

    def _current_page_dropped(self, env: EnvironmentHandle, dropped_ids: set[str]) -> Observation:
        """Re-render the current page with the target still missing."""
        current = getattr(env, "_current_observation", None)
        obs = current() if callable(current) else Observation(text="Invalid action.")
        page = obs.structured or try_parse_page(obs.text)
        if page is not None:
            dropped = _drop_target_from_page(page)
            if dropped is not None:
                return Observation(text=render_page(dropped), structured=dropped)
        return obs


def corrupted_wm(factory: EnvFactory, corruption: Corruption) -> "CorruptedWorldModel | OracleWorldModel":
    """Oracle dynamics with the named corruption; a zero rate is the oracle."""
    if corruption.rate <= 0.0:
        return OracleWorldModel(factory)
    return CorruptedWorldModel(factory=factory, corruption=corruption)


@dataclass
class RemoteWorldModel:
    """Chat-endpoint world model in the reversed role convention: the system
    message is the initial observation, user messages are actions, assistant
    messages are observations. The reply text is the predicted observation;
    the completion signal fires when the prediction reads as a successfully
    finished episode (the adventure end marker, or a done page whose order
    summary satisfies its own instruction)."""

    endpoint: str
    model: str
    api_key_env: str = "WM_API_KEY"
    timeout: float = 120.0
    transport: object | None = None
    calls: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        import httpx

        self._client = httpx.Client(timeout=self.timeout, transport=self.transport)

    def predict(self, history: History, action: Action) -> tuple[Observation, bool]:
        import os

        from behr.agents import order_matches_instruction
        from behr.scorer import strip_think

        messages = [{"role": "system", "content": history.initial_obs.text}]
        for step in history.pairs:
            messages.append({"role": "user", "content": step.action.text})
            messages.append({"role": "assistant", "content": step.obs.text})
        messages.append({"role": "user", "content": action.text})
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self.calls += 1
        resp = self._client.post(
            self.endpoint,
            json={"model": self.model, "messages": messages, "temperature": 0},
            headers=headers,
        )
        resp.raise_for_status()
        text = strip_think(resp.json()["choices"][0]["message"]["content"]).strip()
        if not text:
            text = "(the world model predicted nothing)"
        obs = Observation(text=text, structured=try_parse_page(text))
        done_signal = "*** The End ***" in text or (
            obs.structured is not None
            and obs.structured.page_type == "done"
            and order_matches_instruction(text)
        )
        return obs, done_signal

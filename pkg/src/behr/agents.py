"""Agent implementations: deterministic scripted agents over the toy
domains, and an OpenAI-compatible chat agent.

An agent maps an interaction history to the next action. For lookahead
planning the same handle also proposes ranked candidate actions and selects
among (action, predicted state) pairs; the scripted implementations do this
natively, the remote one via the two-stage planning prompts.

Scripted shop agents act purely from observation text. The careful variant
searches with the instruction keywords, opens the best-matching affordable
result, selects every required option, then buys; the greedy variant buys as
soon as it is on an item page. Both share the same selection heuristic for
lookahead, which checks a predicted order summary against the instruction.

The scripted adventure agent follows its task walkthrough, retrying a
refused step a fixed number of times before moving on, and falls back to
"look" once the plan is exhausted.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Any, Protocol

import httpx

from behr.core import Action, Domain, History, Observation
from behr.pages import (
    SEARCH_PLACEHOLDER,
    instruction_keywords,
    instruction_price_cap,
    instruction_required_options,
    price_cents,
    try_parse_page,
)
from behr.scorer import ACTION_PREFIX, strip_think

logger = logging.getLogger(__name__)


class AgentHandle(Protocol):
    """Deterministic policy over interaction histories."""

    def act(self, history: History) -> Action: ...

    def propose_candidates(self, history: History, admissible: list[Action], k: int) -> list[Action]:
        """Top-k admissible actions, best first (one model call)."""
        ...

    def select_among(self, history: History, options: list[tuple[Action, Observation]]) -> int:
        """Index of the best (action, predicted next state) pair (one call)."""
        ...


class AgentError(RuntimeError):
    """The agent backend failed to produce a usable action."""


def admissible_actions(obs: Observation, domain: Domain) -> list[Action]:
    """Concrete admissible actions read off an observation.

    The shop search placeholder is concretized with the instruction
    keywords; adventure actions come from the AVAILABLE ACTIONS line.
    """
    if domain is Domain.ADVENTURE:
        matches = re.findall(r"^AVAILABLE ACTIONS: (.*)$", obs.text, flags=re.MULTILINE)
        if not matches:
            return []
        return [Action(a.strip()) for a in matches[-1].split(" | ") if a.strip()]
    page = obs.structured or try_parse_page(obs.text)
    if page is None:
        return []
    out = []
    for c in page.clickables:
        if c == SEARCH_PLACEHOLDER:
            out.append(Action(f"search[{' '.join(instruction_keywords(page.instruction))}]"))
        else:
            out.append(Action(c))
    return out


def _selected_values(text: str) -> set[str]:
    for line in text.split("\n"):
        if line.startswith("Selected: "):
            body = line[len("Selected: "):]
            return set() if body == "none" else set(body.split(", "))
    return set()


def _option_values(text: str) -> list[str]:
    for line in text.split("\n"):
        if line.startswith("Options: "):
            values: list[str] = []
            for group in line[len("Options: "):].split(" | "):
                _, _, body = group.partition(": ")
                values.extend(v.strip() for v in body.split(","))
            return values
    return []


@dataclass
class ScriptedShopAgent:
    """Text-driven shop policy; careful=False skips option selection."""

    careful: bool = True

    @property
    def name(self) -> str:
        return "careful-shopper" if self.careful else "greedy-shopper"

    def act(self, history: History) -> Action:
        obs = history.last_obs
        page = obs.structured or try_parse_page(obs.text)
        if page is None:
            return Action("click[back to search]")
        instruction = page.instruction
        keywords = instruction_keywords(instruction)
        if page.page_type == "landing":
            return Action(f"search[{' '.join(keywords)}]")
        if page.page_type == "search_results":
            best = self._best_item(page, instruction)
            if best is None:
                return Action(f"search[{' '.join(keywords)}]")
            return Action(f"click[{best.lower()}]")
        if page.page_type == "item_detail":
            if self.careful:
                missing = self._missing_required(obs.text, instruction)
                if missing is not None:
                    return Action(f"click[{missing}]")
            return Action("click[buy now]")
        return Action("click[back to search]")  # done pages: nothing left to do

    def _best_item(self, page: Any, instruction: str) -> str | None:
        keywords = set(instruction_keywords(instruction))
        cap = instruction_price_cap(instruction)
        best_key: tuple[int, int] | None = None
        best_id: str | None = None
        for pos, item in enumerate(page.items):
            if cap is not None:
                try:
                    if price_cents(item.price) > price_cents(cap):
                        continue
                except ValueError:
                    continue
            overlap = len(keywords & set(item.title.lower().split()))
            if overlap == 0:
                continue
            key = (-overlap, pos)
            if best_key is None or key < best_key:
                best_key, best_id = key, item.item_id
        return best_id

    def _missing_required(self, obs_text: str, instruction: str) -> str | None:
        required = instruction_required_options(instruction)
        selected = _selected_values(obs_text)
        available = set(_option_values(obs_text))
        for value in required:
            if value not in selected and value in available:
                return value
        return None

    def propose_candidates(self, history: History, admissible: list[Action], k: int) -> list[Action]:
        obs = history.last_obs
        page = obs.structured or try_parse_page(obs.text)
        preferred = self.act(history)

        def rank(action: Action) -> tuple[int, int]:
            text = action.text
            if text == preferred.text:
                tier = 0
            elif text == "click[buy now]":
                tier = 1
            elif page is not None and text in {f"click[{v}]" for v in _option_values(obs.text)}:
                tier = 2
            elif page is not None and text in {f"click[{i.lower()}]" for i in page.item_ids}:
                tier = 3
            elif text.startswith("search["):
                tier = 4
            else:
                tier = 5
            return (tier, admissible.index(action))

        ranked = sorted(admissible, key=rank)
        out: list[Action] = []
        for a in ranked:
            if a.text not in {o.text for o in out}:
                out.append(a)
            if len(out) == k:
                break
        return out

    def select_among(self, history: History, options: list[tuple[Action, Observation]]) -> int:
        page = history.last_obs.structured or try_parse_page(history.last_obs.text)
        instruction = page.instruction if page is not None else ""
        scores = [
            self._score_predicted(action, predicted, instruction)
            for action, predicted in options
        ]
        return max(range(len(options)), key=lambda i: (scores[i], -i))

    def _score_predicted(self, action: Action, predicted: Observation, instruction: str) -> float:
        next_page = predicted.structured or try_parse_page(predicted.text)
        if next_page is None:
            return 0.0
        if next_page.page_type == "done":
            return 100.0 if order_matches_instruction(predicted.text) else -100.0
        keywords = set(instruction_keywords(instruction))
        required = instruction_required_options(instruction)
        if next_page.page_type == "item_detail" and next_page.items:
            title_tokens = set(next_page.items[0].title.lower().split())
            if keywords & title_tokens == keywords:
                selected = _selected_values(predicted.text)
                progress = sum(1 for v in required if v in selected)
                return 50.0 + progress
            return 5.0
        if next_page.page_type == "search_results":
            for item in next_page.items:
                if keywords & set(item.title.lower().split()) == keywords:
                    return 40.0
            return 10.0
        return 0.0


def order_matches_instruction(done_page_text: str) -> bool:
    """Check an order-confirmation page against its own instruction line."""
    page = try_parse_page(done_page_text)
    if page is None or page.page_type != "done" or not page.items:
        return False
    item = page.items[0]
    keywords = set(instruction_keywords(page.instruction))
    if keywords & set(item.title.lower().split()) != keywords:
        return False
    cap = instruction_price_cap(page.instruction)
    if cap is not None:
        try:
            if price_cents(item.price) > price_cents(cap):
                return False
        except ValueError:
            return False
    required = set(instruction_required_options(page.instruction))
    return required <= _selected_values(done_page_text)


@dataclass
class ScriptedAdventureAgent:
    """Plan follower with bounded retries and a decision-aware fallback."""

    walkthroughs: dict[str, tuple[str, ...]]
    patience: int = 3

    name: str = "plan-follower"

    def act(self, history: History) -> Action:
        plan = self.walkthroughs.get(history.task_id, ())
        # replay the plan pointer from the history: a step advances unless the
        # environment answered with a refusal, which consumes patience
        pointer = 0
        retries = 0
        for step in history.pairs:
            if pointer >= len(plan):
                break
            if step.action.text != plan[pointer]:
                pointer = self._resync(plan, step.action.text, pointer)
                retries = 0
                continue
            if _is_refusal(step.obs.text) and retries + 1 < self.patience:
                retries += 1
            else:
                pointer += 1
                retries = 0
        if pointer < len(plan):
            return Action(plan[pointer])
        return Action("look")

    def _resync(self, plan: tuple[str, ...], taken: str, pointer: int) -> int:
        if taken in plan[pointer:]:
            return plan.index(taken, pointer) + 1
        return pointer

    def propose_candidates(self, history: History, admissible: list[Action], k: int) -> list[Action]:
        preferred = self.act(history)
        ranked = sorted(
            admissible,
            key=lambda a: (0 if a.text == preferred.text else 1, admissible.index(a)),
        )
        out: list[Action] = []
        for a in ranked:
            if a.text not in {o.text for o in out}:
                out.append(a)
            if len(out) == k:
                break
        return out

    def select_among(self, history: History, options: list[tuple[Action, Observation]]) -> int:
        def score(pair: tuple[Action, Observation]) -> float:
            _, predicted = pair
            if "*** The End ***" in predicted.text:
                return 100.0
            if _is_refusal(predicted.text):
                return -10.0
            m = re.search(r"^Score: (\d+)/(\d+)$", predicted.text, flags=re.MULTILINE)
            return float(m.group(1)) if m else 0.0

        scores = [score(p) for p in options]
        return max(range(len(options)), key=lambda i: (scores[i], -i))


_REFUSALS = (
    "You can't",
    "That's not a verb I recognise.",
    "is locked.",
    "is closed.",
    "Invalid action.",
    "You aren't carrying",
    "Put what where?",
)


def _is_refusal(obs_text: str) -> bool:
    first = obs_text.split("\n", 1)[0]
    return any(marker in first for marker in _REFUSALS)


_ACTION_BLOCK_RE = re.compile(r"Action:\s*\n(.+)", re.DOTALL)


def parse_react_action(reply: str) -> Action:
    """Extract the action line from a Thought/Action reply."""
    text = strip_think(reply)
    m = _ACTION_BLOCK_RE.search(text)
    if not m:
        raise AgentError(f"no Action block in reply: {reply[:120]!r}")
    line = m.group(1).strip().split("\n")[0].strip()
    if not line:
        raise AgentError("empty action line in reply")
    return Action(line)


PROPOSAL_PROMPT = """You are currently in this state:
{observation}

All admissible actions:
{numbered}

Your task is described in the instruction above.
From the admissible actions, select the {k} actions that are MOST LIKELY to help you complete the task successfully.

Output EXACTLY {k} actions, one per line, in the format:
1. action_here
2. action_here
...
Only output the numbered list, nothing else."""

SELECTION_SYSTEM = (
    "You are a decision-making assistant. You will be given a current state "
    "and multiple action options with their predicted outcomes. Select the "
    "BEST option."
)

SELECTION_PROMPT = """CURRENT STATE:
{observation}

AVAILABLE OPTIONS (with predicted outcomes from a world model):

{options}

Select the option that best advances the task goal.
Reply with ONLY the option number (e.g., 1 or 3)."""


@dataclass
class RemoteChatAgent:
    """OpenAI-compatible chat agent at temperature 0.

    Observations become user messages and prior actions assistant messages
    in the Thought/Action format; thinking spans in replies are stripped
    before parsing. Deterministic within one backend configuration.
    """

    endpoint: str
    model: str
    system_prompt: str
    api_key_env: str = "AGENT_API_KEY"
    timeout: float = 60.0
    transport: httpx.BaseTransport | None = None
    name: str = "remote-chat"
    calls: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        self._client = httpx.Client(timeout=self.timeout, transport=self.transport)

    def _chat(self, messages: list[dict[str, str]]) -> str:
        import os

        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self.calls += 1
        try:
            resp = self._client.post(
                self.endpoint,
                json={"model": self.model, "messages": messages, "temperature": 0},
                headers=headers,
            )
            resp.raise_for_status()
            data = resp.json()
            return data["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise AgentError(f"chat backend failed: {exc}") from exc

    def _messages(self, history: History) -> list[dict[str, str]]:
        messages = [{"role": "system", "content": self.system_prompt}]
        messages.append({"role": "user", "content": history.initial_obs.text})
        for step in history.pairs:
            messages.append({"role": "assistant", "content": f"{ACTION_PREFIX}{step.action.text}"})
            messages.append({"role": "user", "content": step.obs.text})
        return messages

    def act(self, history: History) -> Action:
        return parse_react_action(self._chat(self._messages(history)))

    def propose_candidates(self, history: History, admissible: list[Action], k: int) -> list[Action]:
        numbered = "\n".join(f"{i + 1}. {a.text}" for i, a in enumerate(admissible))
        prompt = PROPOSAL_PROMPT.format(
            observation=history.last_obs.text, numbered=numbered, k=k
        )
        reply = strip_think(self._chat(self._messages(history) + [{"role": "user", "content": prompt}]))
        by_text = {a.text: a for a in admissible}
        out: list[Action] = []
        for line in reply.splitlines():
            m = re.match(r"\s*\d+[.)]\s*(.+)", line)
            if not m:
                continue
            text = m.group(1).strip()
            if text in by_text and by_text[text] not in out:
                out.append(by_text[text])
        if not out:
            raise AgentError(f"no admissible proposals in reply: {reply[:120]!r}")
        return out[:k]

    def select_among(self, history: History, options: list[tuple[Action, Observation]]) -> int:
        blocks = []
        for i, (action, predicted) in enumerate(options):
            blocks.append(f"Option {i + 1}: {action.text}\n    Predicted next state: {predicted.text}")
        prompt = SELECTION_PROMPT.format(
            observation=history.last_obs.text, options="\n".join(blocks)
        )
        reply = strip_think(
            self._chat(
                [
                    {"role": "system", "content": SELECTION_SYSTEM},
                    {"role": "user", "content": prompt},
                ]
            )
        )
        m = re.search(r"\d+", reply)
        if not m:
            raise AgentError(f"no option number in reply: {reply[:120]!r}")
        index = int(m.group()) - 1
        if not 0 <= index < len(options):
            raise AgentError(f"option number out of range: {reply[:120]!r}")
        return index

"""Frozen reference-agent scoring: mean per-token log-likelihood of an
action given an agent-perspective context.

The context places observations in user turns and prior actions in assistant
turns (the inverse of the world-model convention), appends the candidate
state as the final user turn, and scores the action behind an "Action:\\n"
prefix so only the action's own tokens count.

Two interchangeable backends:

- ScriptedScorer: a deterministic analytic policy over the toy environments.
  It puts probability mass p_hit on the unique goal-advancing admissible
  action, spreads the remainder uniformly over the other admissible actions,
  and floors inadmissible/broken actions at epsilon_floor. Item-click
  probabilities additionally carry a gentle position decay 1/(1 + w*pos) so
  that layout changes move the score (see ShopPolicy).
- RemoteLogprobClient: an OpenAI-compatible HTTP completions client using
  echo/logprob options. The remote tokenizer defines the token count; this
  module never re-tokenizes. Natural log throughout.

Real-state scores are cached per prompt so a batch of B prompts with n
candidates each costs B*(n+1) backend calls instead of 2*B*n.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

import httpx

from behr.core import Action, Domain, Observation, TrajectoryPrefix
from behr.pages import (
    SEARCH_PLACEHOLDER,
    instruction_keywords,
    instruction_price_cap,
    instruction_required_options,
    price_cents,
    try_parse_page,
)

logger = logging.getLogger(__name__)

ACTION_PREFIX = "Action:\n"

SHOP_SYSTEM_PROMPT = """You are web shopping.
I will give you instructions about what to do.
You have to follow the instructions.
Every round I will give you an observation and a list of available actions, you have to respond an action based on the state and instruction.
You can use search action if search is available.
You can click one of the buttons in clickables.
An action should be of the following structure:
search[keywords]
click[value]
If the action is not valid, perform nothing.
Keywords in search are up to you, but the value in click must be a value in the list of available actions.
Remember that your keywords in search should be carefully designed.
Your response should use the following format:

Thought:
I think ...

Action:
click[something]"""

ADVENTURE_SYSTEM_PROMPT = """You are playing a text-based interactive fiction game (TextWorld).
You will receive observations describing the current state.
When available, a list of admissible actions may be provided.
Always output strictly in the following format:

"Thought:
<your reasoning>

Action:
<the single action to take>"

Guidelines:
- Prefer actions from admissible commands when provided.
- If no list is provided, issue a valid single command (e.g., "look", "inventory", "open door", "go north", "take key").
- Avoid invalid or multiple actions in one step."""

AGENT_SYSTEM_PROMPTS = {
    Domain.SHOP: SHOP_SYSTEM_PROMPT,
    Domain.ADVENTURE: ADVENTURE_SYSTEM_PROMPT,
}

_THINK_SPAN_RE = re.compile(r"<think>.*?</think>\s*", flags=re.DOTALL)


def strip_think(text: str) -> str:
    """Remove reasoning spans emitted by thinking-mode backends."""
    text = _THINK_SPAN_RE.sub("", text)
    # an unterminated leading span hides everything before the close tag
    if text.lstrip().startswith("<think>"):
        return ""
    return text


def format_agent_reply(action: Action, thought: str | None = None) -> str:
    """Assistant-turn rendering of a logged action in the agent format."""
    if thought:
        return f"Thought:\n{thought}\n\n{ACTION_PREFIX}{action.text}"
    return f"{ACTION_PREFIX}{action.text}"


class ScorerError(RuntimeError):
    pass


class ScorerTransportError(ScorerError):
    """Transport-level failure; retriable."""


class ScorerProtocolError(ScorerError):
    """The backend answered but the payload is unusable."""


@dataclass(frozen=True)
class MeanLogProb:
    """Mean per-token natural-log probability of an action."""

    value: float
    token_count: int

    def __post_init__(self) -> None:
        if self.value > 0:
            raise ValueError("mean log-probability cannot be positive")
        if self.token_count < 1:
            raise ValueError("token_count must be >= 1")


@dataclass(frozen=True)
class AgentContext:
    """Agent-perspective prompt: system prompt plus alternating turns, with
    the candidate (or real) next state as the final user turn."""

    system_prompt: str
    turns: tuple[tuple[str, str], ...]
    final_state: Observation

    def __post_init__(self) -> None:
        if not self.turns:
            raise ValueError("context needs at least one turn")
        role, text = self.turns[-1]
        if role != "user" or text != self.final_state.text:
            raise ValueError("last turn must be the final-state user turn")
        expected = "user"
        for role, _ in self.turns:
            if role != expected:
                raise ValueError("roles must alternate starting from user")
            expected = "assistant" if expected == "user" else "user"


def build_agent_context(
    history: TrajectoryPrefix, candidate_state: Observation, domain_tag: Domain
) -> AgentContext:
    """Assemble the scoring context for (history, candidate next state).

    Observations become user turns, logged actions become assistant turns in
    the agent reply format, and the candidate state is appended as the final
    user turn.
    """
    turns: list[tuple[str, str]] = [("user", history.initial_obs.text)]
    for step in history.pairs:
        turns.append(("assistant", format_agent_reply(step.action)))
        turns.append(("user", step.obs.text))
    turns.append(("assistant", format_agent_reply(history.final_action)))
    turns.append(("user", candidate_state.text))
    return AgentContext(
        system_prompt=AGENT_SYSTEM_PROMPTS[domain_tag],
        turns=tuple(turns),
        final_state=candidate_state,
    )


def render_context_prompt(context: AgentContext) -> str:
    """Flatten a context into a completion prompt ending with "Action:\\n".

    The scored action's tokens start exactly at len() of this string.
    """
    parts = [context.system_prompt]
    for role, text in context.turns:
        label = "User" if role == "user" else "Assistant"
        parts.append(f"{label}:\n{text}")
    parts.append(f"Assistant:\n{ACTION_PREFIX}")
    return "\n\n".join(parts[:-1]) + "\n\n" + parts[-1]


class ScorerBackend(Protocol):
    """Deterministic action scorer; pure function of (context, action) for a
    fixed configuration."""

    def mean_logprob(self, context: AgentContext, action: Action) -> MeanLogProb: ...

    def backend_id(self) -> str: ...


# --------------------------------------------------------------------------
# Scripted backend


class ScoringPolicy(Protocol):
    def action_probs(self, context: AgentContext) -> dict[str, float]:
        """Normalized probability per admissible action text; empty when the
        final state is unreadable."""
        ...

    def policy_id(self) -> str: ...


def _admissible_from_clickables(clickables: tuple[str, ...]) -> list[str]:
    return [c for c in clickables if c != SEARCH_PLACEHOLDER]


def _search_allowed(clickables: tuple[str, ...]) -> bool:
    return SEARCH_PLACEHOLDER in clickables


@dataclass
class ShopPolicy:
    """Decision-aware deterministic policy over toy shop pages.

    The preferred action mirrors a careful shopper: search with the
    instruction keywords from the landing page, click the best-matching
    affordable item from results, then select missing required options before
    buying. Preferred mass is p_hit; other admissible actions share the
    remainder uniformly. Every click[<item id>] weight is additionally scaled
    by 1/(1 + position_weight * position) so that reorderings, insertions,
    and deletions shift the scores of decision-preserving perturbations
    slightly instead of not at all.
    """

    p_hit: float = 0.8
    position_weight: float = 0.05

    def policy_id(self) -> str:
        return f"shop-policy(p_hit={self.p_hit},w={self.position_weight})"

    def preferred_action(self, context: AgentContext) -> str | None:
        page = try_parse_page(context.final_state.text)
        if page is None:
            return None
        instruction = page.instruction
        keywords = set(instruction_keywords(instruction))
        required = instruction_required_options(instruction)
        cap = instruction_price_cap(instruction)

        if page.page_type == "landing":
            if _search_allowed(page.clickables):
                return f"search[{' '.join(instruction_keywords(instruction))}]"
            return None
        if page.page_type == "search_results":
            best: tuple[int, int] | None = None
            best_id: str | None = None
            for pos, it in enumerate(page.items):
                if cap is not None:
                    try:
                        if price_cents(it.price) > price_cents(cap):
                            continue
                    except ValueError:
                        continue
                overlap = len(keywords & set(it.title.lower().split()))
                if overlap == 0:
                    continue
                key = (-overlap, pos)
                if best is None or key < best:
                    best, best_id = key, it.item_id
            if best_id is not None and f"click[{best_id.lower()}]" in page.clickables:
                return f"click[{best_id.lower()}]"
            if _search_allowed(page.clickables):
                return f"search[{' '.join(instruction_keywords(instruction))}]"
            return None
        if page.page_type == "item_detail":
            selected = _selected_values(context.final_state.text)
            for value in required:
                if value not in selected and f"click[{value}]" in page.clickables:
                    return f"click[{value}]"
            if "click[buy now]" in page.clickables:
                return "click[buy now]"
            return None
        return None  # done pages: no preference

    def action_probs(self, context: AgentContext) -> dict[str, float]:
        page = try_parse_page(context.final_state.text)
        if page is None:
            return {}
        admissible = _admissible_from_clickables(page.clickables)
        preferred = self.preferred_action(context)
        search_action = None
        if _search_allowed(page.clickables):
            search_action = (
                preferred
                if preferred is not None and preferred.startswith("search[")
                else f"search[{' '.join(instruction_keywords(page.instruction))}]"
            )
            admissible = admissible + [search_action]
        if not admissible:
            return {}
        if preferred is not None and preferred not in admissible:
            preferred = None

        item_pos = {f"click[{it.item_id.lower()}]": pos for pos, it in enumerate(page.items)}
        k = len(admissible)
        weights: dict[str, float] = {}
        for a in admissible:
            if preferred is None:
                base = 1.0 / k
            elif a == preferred:
                base = self.p_hit
            else:
                base = (1.0 - self.p_hit) / (k - 1) if k > 1 else 0.0
            mult = 1.0 / (1.0 + self.position_weight * item_pos[a]) if a in item_pos else 1.0
            weights[a] = base * mult
        total = sum(weights.values())
        if total <= 0:
            return {}
        return {a: w / total for a, w in weights.items()}


_AVAILABLE_RE = re.compile(r"^AVAILABLE ACTIONS: (.*)$", flags=re.MULTILINE)


def _selected_values(text: str) -> set[str]:
    for line in text.split("\n"):
        if line.startswith("Selected: "):
            body = line[len("Selected: "):]
            return set() if body == "none" else set(body.split(", "))
    return set()


@dataclass
class AdventurePolicy:
    """Uniform policy over the admissible commands listed in the final
    state; actions missing from the list hit the floor. Decision awareness
    here comes entirely from admissibility."""

    def policy_id(self) -> str:
        return "adventure-policy(uniform)"

    def action_probs(self, context: AgentContext) -> dict[str, float]:
        m = None
        for m in _AVAILABLE_RE.finditer(context.final_state.text):
            pass  # keep the last list in the observation
        if m is None:
            return {}
        actions = [a.strip() for a in m.group(1).split(" | ") if a.strip()]
        if not actions:
            return {}
        p = 1.0 / len(actions)
        return {a: p for a in actions}


@dataclass
class UniformClickablePolicy:
    """Uniform over raw clickables; handy for analytic tests."""

    def policy_id(self) -> str:
        return "uniform-clickables"

    def action_probs(self, context: AgentContext) -> dict[str, float]:
        page = try_parse_page(context.final_state.text)
        if page is None or not page.clickables:
            return {}
        p = 1.0 / len(page.clickables)
        return {c: p for c in page.clickables}


@dataclass
class ScriptedScorer:
    """Analytic rule-based scorer backend.

    Token count is the whitespace token count of the action text (the
    scripted backend's own trivial tokenizer); the mean log-probability of an
    action with policy probability p and n tokens is ln(p)/n. Thread-safe;
    `calls` counts every scoring call for instrumentation.
    """

    policy: ScoringPolicy
    epsilon_floor: float = 1e-6
    calls: int = field(default=0, init=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def backend_id(self) -> str:
        return f"scripted({self.policy.policy_id()},floor={self.epsilon_floor})"

    def mean_logprob(self, context: AgentContext, action: Action) -> MeanLogProb:
        if not action.text:
            raise ValueError("action must be non-empty")
        with self._lock:
            self.calls += 1
        probs = self.policy.action_probs(context)
        p = probs.get(action.text, 0.0)
        p = max(p, self.epsilon_floor)
        n = max(1, len(action.text.split()))
        return MeanLogProb(value=math.log(p) / n, token_count=n)


def scripted_scorer_for(
    domain_tag: Domain, p_hit: float = 0.8, epsilon_floor: float = 1e-6, position_weight: float = 0.05
) -> ScriptedScorer:
    if domain_tag is Domain.SHOP:
        policy: ScoringPolicy = ShopPolicy(p_hit=p_hit, position_weight=position_weight)
    else:
        policy = AdventurePolicy()
    return ScriptedScorer(policy=policy, epsilon_floor=epsilon_floor)


# --------------------------------------------------------------------------
# Remote backend


@dataclass
class RemoteLogprobClient:
    """OpenAI-compatible completions client for prompt-scored logprobs.

    Two response styles (see README for the exact field mapping):

    - "echo": classic completions with echo=true, max_tokens=0, logprobs=0;
      action tokens are located with choices[0].logprobs.text_offset.
    - "prompt_logprobs": vLLM-style prompt_logprobs lists; offsets are
      reconstructed by accumulating decoded token lengths.

    In both styles a token belongs to the action iff its start offset is at
    or past the end of the prompt prefix; boundary attribution therefore
    follows the backend's own offsets. Transport failures are retried
    `retries` times with exponential backoff, then surfaced as
    ScorerTransportError. Thinking-mode output never appears in these
    prompts; completions text is ignored entirely.
    """

    endpoint: str
    model: str
    style: str = "echo"
    api_key_env: str = "SCORER_API_KEY"
    retries: int = 3
    backoff: float = 0.5
    timeout: float = 60.0
    transport: httpx.BaseTransport | None = None
    calls: int = field(default=0, init=False)
    _sleep: Callable[[float], None] = field(default=time.sleep, repr=False)

    def __post_init__(self) -> None:
        if self.style not in ("echo", "prompt_logprobs"):
            raise ValueError(f"unknown logprob style: {self.style!r}")
        self._client = httpx.Client(
            timeout=self.timeout,
            transport=self.transport,  # tests inject a MockTransport here
        )

    def backend_id(self) -> str:
        return f"remote({self.endpoint},{self.model},{self.style})"

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, body: dict[str, Any]) -> dict[str, Any]:
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                self.calls += 1
                resp = self._client.post(self.endpoint, json=body, headers=self._headers())
                if resp.status_code >= 500:
                    raise httpx.HTTPStatusError(
                        f"server error {resp.status_code}", request=resp.request, response=resp
                    )
                resp.raise_for_status()
                return resp.json()
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                if isinstance(exc, httpx.HTTPStatusError) and exc.response.status_code < 500:
                    raise ScorerProtocolError(f"backend rejected request: {exc}") from exc
                last = exc
                if attempt < self.retries:
                    self._sleep(self.backoff * 2**attempt)
            except json.JSONDecodeError as exc:
                raise ScorerProtocolError(f"non-JSON backend response: {exc}") from exc
        raise ScorerTransportError(f"backend unreachable after {self.retries + 1} attempts: {last}")

    def mean_logprob(self, context: AgentContext, action: Action) -> MeanLogProb:
        prefix = render_context_prompt(context)
        full = prefix + action.text
        if self.style == "echo":
            body = {
                "model": self.model,
                "prompt": full,
                "max_tokens": 0,
                "echo": True,
                "logprobs": 0,
            }
            data = self._post(body)
            try:
                lp = data["choices"][0]["logprobs"]
                offsets = lp["text_offset"]
                token_logprobs = lp["token_logprobs"]
            except (KeyError, IndexError, TypeError) as exc:
                raise ScorerProtocolError(f"malformed echo response: {exc}") from exc
            values = [
                tl
                for off, tl in zip(offsets, token_logprobs)
                if off >= len(prefix) and tl is not None
            ]
        else:
            body = {
                "model": self.model,
                "prompt": full,
                "max_tokens": 1,
                "temperature": 0,
                "prompt_logprobs": 0,
            }
            data = self._post(body)
            try:
                entries = data["choices"][0]["prompt_logprobs"]
            except (KeyError, IndexError, TypeError) as exc:
                raise ScorerProtocolError(f"malformed prompt_logprobs response: {exc}") from exc
            values = []
            offset = 0
            for entry in entries:
                if entry is None:
                    continue
                info = next(iter(entry.values()))
                token_text = info.get("decoded_token", "")
                if offset >= len(prefix) and info.get("logprob") is not None:
                    values.append(info["logprob"])
                offset += len(token_text)
        if not values:
            raise ScorerProtocolError("backend returned zero action tokens")
        return MeanLogProb(value=sum(values) / len(values), token_count=len(values))


# --------------------------------------------------------------------------
# Pair scoring and the real-state cache


def mean_logprob(context: AgentContext, action: Action, backend: ScorerBackend) -> MeanLogProb:
    """Score one action under one context. Pure for a fixed backend."""
    return backend.mean_logprob(context, action)


def score_pair(
    tuple_: "TransitionTupleLike", candidate_state: Observation, backend: ScorerBackend
) -> tuple[MeanLogProb, MeanLogProb]:
    """Score the logged expert action under the candidate and the real next
    state. Returns (l_pred, l_real)."""
    ctx_pred = build_agent_context(tuple_.history, candidate_state, tuple_.domain_tag)
    ctx_real = build_agent_context(tuple_.history, tuple_.real_next_state, tuple_.domain_tag)
    l_pred = backend.mean_logprob(ctx_pred, tuple_.expert_next_action)
    l_real = backend.mean_logprob(ctx_real, tuple_.expert_next_action)
    return l_pred, l_real


class TransitionTupleLike(Protocol):
    history: TrajectoryPrefix
    real_next_state: Observation
    expert_next_action: Action
    domain_tag: Domain


class RealStateCache:
    """Keyed store for real-state scores, correct under concurrent use.

    Values are deterministic and equal for equal keys, so last-writer-wins
    is sound. Storage failures degrade to recomputation and never propagate.
    """

    def __init__(self) -> None:
        self._store: dict[str, MeanLogProb] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._store)

    def get(self, key: str) -> MeanLogProb | None:
        with self._lock:
            return self._store.get(key)

    def put(self, key: str, value: MeanLogProb) -> None:
        with self._lock:
            self._store[key] = value


def real_state_cache_key(tuple_: TransitionTupleLike, backend: ScorerBackend) -> str:
    """Stable hash of (history, real next state, expert action, backend id)."""
    payload = json.dumps(
        {
            "history": tuple_.history.to_dict(),
            "real": tuple_.real_next_state.to_dict(),
            "action": tuple_.expert_next_action.text,
            "backend": backend.backend_id(),
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def cached_real_logprob(
    tuple_: TransitionTupleLike, backend: ScorerBackend, cache: RealStateCache
) -> MeanLogProb:
    """Score the expert action under the real next state, memoized.

    The first call per (prompt, backend) computes and stores; later calls
    return the stored value without a backend call.
    """
    key = real_state_cache_key(tuple_, backend)
    try:
        hit = cache.get(key)
    except Exception:  # cache failure must not fail the reward
        logger.warning("real-state cache read failed; recomputing", exc_info=True)
        hit = None
    if hit is not None:
        return hit
    ctx = build_agent_context(tuple_.history, tuple_.real_next_state, tuple_.domain_tag)
    value = backend.mean_logprob(ctx, tuple_.expert_next_action)
    try:
        cache.put(key, value)
    except Exception:
        logger.warning("real-state cache write failed; continuing uncached", exc_info=True)
    return value

"""Toy shop environment: search a small catalog, open an item page, select
options, buy.

Success requires buying the target item with every required option selected
and the price within the cap. A buy always ends the episode; the partial
reward is the fraction of the three constraints satisfied (local convention:
target, options, price). Malformed or inapplicable actions produce an
"Invalid action." observation and change nothing.

Search ranking is descending keyword-overlap count with ties broken by
catalog order. All observations follow the page grammar in behr.pages.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any

from behr.core import Action, Observation
from behr.envsim import DEFAULT_MAX_STEPS
from behr.pages import (
    SEARCH_PLACEHOLDER,
    PageItem,
    PageState,
    normalize_price,
    price_cents,
    render_page,
)

_SEARCH_RE = re.compile(r"^search\[(.+)\]$")
_CLICK_RE = re.compile(r"^click\[(.+)\]$")

INVALID_FEEDBACK = "Invalid action."
PAGE_SIZE = 10


@dataclass(frozen=True)
class ShopProduct:
    id: str
    title: str
    price: str
    options: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "title": self.title,
            "price": self.price,
            "options": {k: list(v) for k, v in self.options.items()},
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ShopProduct":
        return cls(
            id=data["id"],
            title=data["title"],
            price=normalize_price(data["price"]),
            options={k: tuple(v) for k, v in data.get("options", {}).items()},
        )


@dataclass(frozen=True)
class ToyShopSpec:
    task_id: str
    instruction: str
    catalog: tuple[ShopProduct, ...]
    target_id: str
    required_options: tuple[str, ...] = ()
    price_cap: str | None = None

    def __post_init__(self) -> None:
        ids = [p.id for p in self.catalog]
        if len(ids) != len(set(ids)):
            raise ValueError("catalog ids must be unique")
        if self.target_id not in ids:
            raise ValueError("target_id must appear in the catalog")

    @property
    def target(self) -> ShopProduct:
        return next(p for p in self.catalog if p.id == self.target_id)

    def to_dict(self) -> dict[str, Any]:
        return {
            "domain": "shop",
            "task_id": self.task_id,
            "instruction": self.instruction,
            "catalog": [p.to_dict() for p in self.catalog],
            "target_id": self.target_id,
            "required_options": list(self.required_options),
            "price_cap": self.price_cap,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ToyShopSpec":
        return cls(
            task_id=data["task_id"],
            instruction=data["instruction"],
            catalog=tuple(ShopProduct.from_dict(p) for p in data["catalog"]),
            target_id=data["target_id"],
            required_options=tuple(data.get("required_options", ())),
            price_cap=data.get("price_cap"),
        )


class ShopEnv:
    """Single-task shop episode. Construct via shop_env()."""

    def __init__(self, spec: ToyShopSpec, max_steps: int = DEFAULT_MAX_STEPS) -> None:
        self.spec = spec
        self.max_steps = max_steps
        self._reset_state()

    def _reset_state(self) -> None:
        self._phase = "landing"
        self._results: tuple[ShopProduct, ...] = ()
        self._item: ShopProduct | None = None
        self._selected: dict[str, str] = {}
        self._steps = 0
        self._done = False
        self._success = False
        self._bought: ShopProduct | None = None

    # -- observation rendering -------------------------------------------

    def _landing_page(self) -> PageState:
        return PageState(
            instruction=self.spec.instruction,
            page_type="landing",
            clickables=(SEARCH_PLACEHOLDER,),
        )

    def _results_page(self) -> PageState:
        items = tuple(PageItem(p.id, p.title, p.price) for p in self._results)
        clickables = [SEARCH_PLACEHOLDER]
        clickables += [f"click[{p.id.lower()}]" for p in self._results]
        clickables.append("click[back to search]")
        return PageState(
            instruction=self.spec.instruction,
            page_type="search_results",
            items=items,
            clickables=tuple(clickables),
            target_item_id=self.spec.target_id if self.spec.target_id in {p.id for p in self._results} else None,
        )

    def _item_page_text(self) -> str:
        assert self._item is not None
        page = PageState(
            instruction=self.spec.instruction,
            page_type="item_detail",
            items=(PageItem(self._item.id, self._item.title, self._item.price),),
            clickables=self._item_clickables(),
            target_item_id=self.spec.target_id if self._item.id == self.spec.target_id else None,
        )
        lines = render_page(page).split("\n")
        extra = []
        if self._item.options:
            groups = [
                f"{name}: {', '.join(values)}" for name, values in sorted(self._item.options.items())
            ]
            extra.append("Options: " + " | ".join(groups))
        chosen = [self._selected[g] for g in sorted(self._selected)]
        extra.append("Selected: " + (", ".join(chosen) if chosen else "none"))
        # option lines sit between the items block and the clickables line
        return "\n".join(lines[:-1] + extra + lines[-1:])

    def _item_clickables(self) -> tuple[str, ...]:
        assert self._item is not None
        out = []
        for _, values in sorted(self._item.options.items()):
            out.extend(f"click[{v}]" for v in values)
        out.append("click[buy now]")
        out.append("click[back to search]")
        return tuple(out)

    def _done_page_text(self) -> str:
        assert self._bought is not None
        page = PageState(
            instruction=self.spec.instruction,
            page_type="done",
            items=(PageItem(self._bought.id, self._bought.title, self._bought.price),),
            clickables=(),
        )
        lines = render_page(page).split("\n")
        chosen = [self._selected[g] for g in sorted(self._selected)]
        selected = "Selected: " + (", ".join(chosen) if chosen else "none")
        return "\n".join(lines[:-1] + [selected] + lines[-1:])

    def _current_observation(self, feedback: str | None = None) -> Observation:
        if self._phase == "landing":
            page = self._landing_page()
            text = render_page(page)
        elif self._phase == "results":
            page = self._results_page()
            text = render_page(page)
        elif self._phase == "item":
            page = None
            text = self._item_page_text()
        else:
            page = None
            text = self._done_page_text()
        if feedback:
            text = feedback + "\n" + text
        if page is None:
            from behr.pages import try_parse_page

            page = try_parse_page(text)
        return Observation(text=text, structured=page)

    # -- mechanics ---------------------------------------------------------

    def reset(self, task_id: str) -> Observation:
        if task_id != self.spec.task_id:
            raise ValueError(f"env is bound to task {self.spec.task_id!r}, got {task_id!r}")
        self._reset_state()
        return self._current_observation()

    def _rank_results(self, query: str) -> tuple[ShopProduct, ...]:
        q_tokens = set(query.lower().split())
        scored = []
        for pos, product in enumerate(self.spec.catalog):
            overlap = len(q_tokens & set(product.title.lower().split()))
            if overlap > 0:
                scored.append((-overlap, pos, product))
        scored.sort()
        return tuple(p for _, _, p in scored[:PAGE_SIZE])

    def step(self, action: Action) -> tuple[Observation, bool, bool]:
        if self._done:
            raise RuntimeError("episode is over; reset before stepping again")
        self._steps += 1
        obs = self._apply(action)
        if not self._done and self._steps >= self.max_steps:
            self._done = True
        return obs, self._done, self._success

    def _apply(self, action: Action) -> Observation:
        text = action.text
        m = _SEARCH_RE.match(text)
        if m:
            self._results = self._rank_results(m.group(1))
            self._phase = "results"
            self._item = None
            self._selected = {}
            return self._current_observation()
        m = _CLICK_RE.match(text)
        if not m:
            return self._current_observation(feedback=INVALID_FEEDBACK)
        value = m.group(1)
        if value == "back to search":
            self._phase = "landing" if not self._results else "results"
            self._item = None
            self._selected = {}
            return self._current_observation()
        if value == "buy now":
            if self._phase != "item" or self._item is None:
                return self._current_observation(feedback=INVALID_FEEDBACK)
            return self._buy()
        # option value on the open item page
        if self._phase == "item" and self._item is not None:
            for group, values in self._item.options.items():
                if value in values:
                    self._selected[group] = value
                    return self._current_observation()
        # item click from a results page
        if self._phase == "results":
            for product in self._results:
                if product.id.lower() == value.lower():
                    self._item = product
                    self._selected = {}
                    self._phase = "item"
                    return self._current_observation()
        return self._current_observation(feedback=INVALID_FEEDBACK)

    def _buy(self) -> Observation:
        assert self._item is not None
        self._bought = self._item
        self._phase = "done"
        self._done = True
        self._success = all(self._constraints())
        return self._current_observation()

    def _constraints(self) -> tuple[bool, bool, bool]:
        assert self._bought is not None
        right_item = self._bought.id == self.spec.target_id
        selected = set(self._selected.values())
        options_ok = all(v in selected for v in self.spec.required_options)
        if self.spec.price_cap is None:
            price_ok = True
        else:
            price_ok = price_cents(self._bought.price) <= price_cents(self.spec.price_cap)
        return right_item, options_ok, price_ok

    @property
    def partial_reward(self) -> float:
        """Fraction of satisfied purchase constraints; 0 before any buy."""
        if self._bought is None:
            return 0.0
        satisfied = self._constraints()
        return sum(satisfied) / len(satisfied)


def shop_env(spec: ToyShopSpec, max_steps: int = DEFAULT_MAX_STEPS) -> ShopEnv:
    return ShopEnv(spec, max_steps=max_steps)


def brute_force_shop_success(spec: ToyShopSpec, max_depth: int = 8) -> bool:
    """Independent success oracle: breadth-first search over all action
    sequences up to max_depth, deduplicated on observation text. Intended
    for small specs (a handful of products) in tests."""
    def candidate_actions(obs: Observation) -> list[Action]:
        page = obs.structured
        actions: list[Action] = []
        if page is not None and SEARCH_PLACEHOLDER in page.clickables:
            actions.append(Action(f"search[{spec.target.title}]"))
            actions.append(Action("search[anything at all]"))
        if page is not None:
            for c in page.clickables:
                if c != SEARCH_PLACEHOLDER:
                    actions.append(Action(c))
        return actions

    start = shop_env(spec, max_steps=max_depth + 1).reset(spec.task_id)
    frontier: list[tuple[tuple[str, ...], Observation]] = [((), start)]
    seen = {start.text}
    for _ in range(max_depth):
        next_frontier: list[tuple[tuple[str, ...], Observation]] = []
        for actions_so_far, obs in frontier:
            for action in candidate_actions(obs):
                env = shop_env(spec, max_steps=max_depth + 1)
                env.reset(spec.task_id)
                done = success = False
                replay = actions_so_far + (action.text,)
                for a in replay:
                    new_obs, done, success = env.step(Action(a))
                    if done:
                        break
                if success:
                    return True
                if done:
                    continue
                if new_obs.text not in seen:
                    seen.add(new_obs.text)
                    next_frontier.append((replay, new_obs))
        frontier = next_frontier
    return False

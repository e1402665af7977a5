"""Structured shop pages and the versioned observation text grammar.

Every shop observation emitted by the toy environment follows grammar v1
(full BNF in docs/observation_grammar.md):

    page        := feedback? instruction type items? options? selected? clickables
    feedback    := <any line not starting with "Instruction: "> LF
    instruction := "Instruction: " TEXT LF
    type        := "Page type: " ("landing"|"search_results"|"item_detail"|"done") LF
    items       := "Items:" LF ("- " ID " | " TITLE " | " PRICE LF)*
    options     := "Options: " GROUP (" | " GROUP)* LF      ; item_detail only
    selected    := "Selected: " ("none" | VALUE (", " VALUE)*) LF
    clickables  := "Clickables: " ("none" | ACTION (" | " ACTION)*)

`PageState` is the structured view used by perturbations and the factual
reward: instruction, page type, item facts, clickables, and an optional
ground-truth target annotation. Option/selected lines and feedback lines are
environment detail that the structured view deliberately drops; parse/render
round-trips are exact for pages without them (all perturbation-study pages).
The target annotation is metadata, never recoverable from text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Any

GRAMMAR_VERSION = "v1"

PAGE_TYPES = ("landing", "search_results", "item_detail", "done")

SEARCH_PLACEHOLDER = "search[<keywords>]"

# Canonical item ids: uppercase letter followed by alphanumerics, length >= 4.
ITEM_ID_RE = re.compile(r"^[A-Z][A-Z0-9]{3,}$")

_PRICE_RE = re.compile(r"^\$(\d+)\.(\d{2})$")


class PageParseError(ValueError):
    """The text does not conform to the page grammar."""


@dataclass(frozen=True)
class PageItem:
    item_id: str
    title: str
    price: str

    def to_dict(self) -> dict[str, str]:
        return {"item_id": self.item_id, "title": self.title, "price": self.price}

    @classmethod
    def from_dict(cls, data: dict[str, str]) -> "PageItem":
        return cls(item_id=data["item_id"], title=data["title"], price=data["price"])


@dataclass(frozen=True)
class PageState:
    """Structured view of one shop page."""

    instruction: str
    page_type: str
    items: tuple[PageItem, ...] = ()
    clickables: tuple[str, ...] = ()
    target_item_id: str | None = None

    def __post_init__(self) -> None:
        if self.page_type not in PAGE_TYPES:
            raise ValueError(f"unknown page type: {self.page_type!r}")
        ids = [it.item_id for it in self.items]
        if len(ids) != len(set(ids)):
            raise ValueError("item ids must be unique")

    @property
    def item_ids(self) -> tuple[str, ...]:
        return tuple(it.item_id for it in self.items)

    def item(self, item_id: str) -> PageItem | None:
        for it in self.items:
            if it.item_id == item_id:
                return it
        return None

    def with_items(self, items: tuple[PageItem, ...]) -> "PageState":
        return replace(self, items=items)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "instruction": self.instruction,
            "page_type": self.page_type,
            "items": [it.to_dict() for it in self.items],
            "clickables": list(self.clickables),
        }
        if self.target_item_id is not None:
            out["target_item_id"] = self.target_item_id
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PageState":
        return cls(
            instruction=data["instruction"],
            page_type=data["page_type"],
            items=tuple(PageItem.from_dict(it) for it in data["items"]),
            clickables=tuple(data["clickables"]),
            target_item_id=data.get("target_item_id"),
        )


def normalize_price(price: str | int | float) -> str:
    """Canonical "$X.YZ" form. Raises ValueError on anything else."""
    if isinstance(price, (int, float)):
        cents = round(float(price) * 100)
        return f"${cents // 100}.{cents % 100:02d}"
    text = price.strip()
    m = _PRICE_RE.match(text)
    if not m:
        raise ValueError(f"not a canonical price: {price!r}")
    return text


def price_cents(price: str) -> int:
    m = _PRICE_RE.match(price)
    if not m:
        raise ValueError(f"not a canonical price: {price!r}")
    return int(m.group(1)) * 100 + int(m.group(2))


def render_page(page: PageState) -> str:
    """Canonical text for a structured page (no option/selected lines)."""
    lines = [f"Instruction: {page.instruction}", f"Page type: {page.page_type}"]
    if page.items:
        lines.append("Items:")
        for it in page.items:
            lines.append(f"- {it.item_id} | {it.title} | {it.price}")
    if page.clickables:
        lines.append("Clickables: " + " | ".join(page.clickables))
    else:
        lines.append("Clickables: none")
    return "\n".join(lines)


def parse_page(text: str) -> PageState:
    """Parse observation text into a PageState.

    Leading feedback lines (anything before the "Instruction: " line) and
    option/selected lines are tolerated and dropped; the parse keeps only the
    facts the structured view models. Raises PageParseError on text that does
    not contain a grammar-conforming page.
    """
    lines = text.split("\n")
    start = next((i for i, ln in enumerate(lines) if ln.startswith("Instruction: ")), None)
    if start is None:
        raise PageParseError("no 'Instruction: ' line")
    lines = lines[start:]
    instruction = lines[0][len("Instruction: "):]
    if len(lines) < 2 or not lines[1].startswith("Page type: "):
        raise PageParseError("missing 'Page type: ' line")
    page_type = lines[1][len("Page type: "):]
    if page_type not in PAGE_TYPES:
        raise PageParseError(f"unknown page type: {page_type!r}")

    items: list[PageItem] = []
    clickables: tuple[str, ...] = ()
    saw_clickables = False
    i = 2
    while i < len(lines):
        line = lines[i]
        if line == "Items:":
            i += 1
            while i < len(lines) and lines[i].startswith("- "):
                parts = lines[i][2:].split(" | ")
                if len(parts) != 3:
                    raise PageParseError(f"malformed item line: {lines[i]!r}")
                items.append(PageItem(item_id=parts[0], title=parts[1], price=parts[2]))
                i += 1
        elif line.startswith("Clickables: "):
            body = line[len("Clickables: "):]
            clickables = () if body == "none" else tuple(body.split(" | "))
            saw_clickables = True
            i += 1
        elif line.startswith(("Options: ", "Selected: ")):
            i += 1
        elif not line.strip():
            i += 1
        else:
            raise PageParseError(f"unexpected line: {line!r}")
    if not saw_clickables:
        raise PageParseError("missing 'Clickables: ' line")
    return PageState(
        instruction=instruction,
        page_type=page_type,
        items=tuple(items),
        clickables=clickables,
    )


def try_parse_page(text: str) -> PageState | None:
    try:
        return parse_page(text)
    except PageParseError:
        return None


def extract_item_ids(page: PageState) -> set[str]:
    """Item ids on the page that conform to the canonical id pattern."""
    return {it.item_id for it in page.items if ITEM_ID_RE.match(it.item_id)}


def extract_prices(page: PageState) -> list[str]:
    """Canonical price strings on the page, as a multiset (list)."""
    out = []
    for it in page.items:
        if _PRICE_RE.match(it.price):
            out.append(it.price)
    return out


# Instruction clause parsing, shared by the scripted agents and scorer policy.
_PRICE_CAP_RE = re.compile(r"price lower than (\$\d+\.\d{2})")
_OPTION_CLAUSE_RE = re.compile(r"\b(?:color|size): ([a-z0-9-]+)")


def instruction_keywords(instruction: str) -> list[str]:
    """Search keywords: the words after "Find me " up to the first clause."""
    text = instruction
    if text.startswith("Find me "):
        text = text[len("Find me "):]
    text = text.split(", color:")[0].split(", size:")[0].split(", price lower than")[0]
    return [w for w in text.lower().replace(",", " ").split() if w]


def instruction_required_options(instruction: str) -> list[str]:
    return _OPTION_CLAUSE_RE.findall(instruction)


def instruction_price_cap(instruction: str) -> str | None:
    m = _PRICE_CAP_RE.search(instruction)
    return m.group(1) if m else None

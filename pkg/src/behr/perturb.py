"""Controlled state perturbations over structured shop pages, and the study
runner that measures how each evaluation metric ranks them.

Seven perturbation kinds, from harmless to decision-breaking:

    oracle           identity copy
    shuffle          same items, order permuted (never the identity when
                     two or more distinct items exist)
    drop_irrelevant  remove one uniformly chosen non-target item
    add_irrelevant   insert one synthetic item with a fresh id
    random_noise     replace a seeded fraction of title tokens
    drop_target      remove exactly the target item and its clickable
    random_cross     swap in a uniformly chosen different page

All perturbations are pure functions of (page, seed, corpus). The study
runner scores every kind with the behavior reward, token F1, and exact
match, and reports whether each metric ranks drop_irrelevant above
drop_target (the decision-aware ordering).
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, replace
from enum import Enum
from statistics import fmean
from typing import Sequence

from behr.core import Action, Observation, TransitionTuple
from behr.metrics import exact_match, rows_to_csv, token_f1
from behr.pages import PageItem, PageState, render_page
from behr.reward import RewardMode, behr
from behr.scorer import ScorerBackend, score_pair

logger = logging.getLogger(__name__)


class PerturbationKind(str, Enum):
    ORACLE = "oracle"
    SHUFFLE = "shuffle"
    DROP_IRRELEVANT = "drop_irrelevant"
    ADD_IRRELEVANT = "add_irrelevant"
    RANDOM_NOISE = "random_noise"
    DROP_TARGET = "drop_target"
    RANDOM_CROSS = "random_cross"


MILD_KINDS = (
    PerturbationKind.SHUFFLE,
    PerturbationKind.DROP_IRRELEVANT,
    PerturbationKind.ADD_IRRELEVANT,
)
SEVERE_KINDS = (PerturbationKind.DROP_TARGET, PerturbationKind.RANDOM_CROSS)

DEFAULT_NOISE_RATE = 0.3

# Synthetic-item vocabulary, disjoint from the generated catalog vocabulary
# so an inserted item never outranks the target on keyword overlap.
_SYNTH_ADJECTIVES = ("refurbished", "deluxe", "limited", "bundled", "imported", "vintage")
_SYNTH_NOUNS = ("organizer", "adapter", "caddy", "fixture", "attachment", "accessory")
_NOISE_TOKENS = (
    "zxq", "wvut", "plomb", "krent", "vorpal", "snark", "glint", "quop", "mirv", "trelt",
)


class PerturbationError(ValueError):
    """A perturbation's preconditions were violated; names the kind."""

    def __init__(self, kind: PerturbationKind, message: str) -> None:
        super().__init__(f"{kind.value}: {message}")
        self.kind = kind


def _drop_item(page: PageState, item_id: str) -> PageState:
    items = tuple(it for it in page.items if it.item_id != item_id)
    clickables = tuple(c for c in page.clickables if c != f"click[{item_id.lower()}]")
    return replace(page, items=items, clickables=clickables)


def _fresh_item_id(rng: random.Random, existing: set[str]) -> str:
    while True:
        candidate = "Z" + "".join(rng.choice("0123456789") for _ in range(4))
        if candidate not in existing:
            return candidate


def apply_perturbation(
    page: PageState,
    kind: PerturbationKind,
    rng_seed: int,
    corpus: Sequence[PageState] = (),
) -> PageState:
    """Return a perturbed copy of `page`; the input is never mutated.

    Deterministic for a fixed (page, kind, seed, corpus). Raises
    PerturbationError when the kind's preconditions do not hold.
    """
    rng = random.Random(rng_seed)

    if kind is PerturbationKind.ORACLE:
        return replace(page)

    if kind is PerturbationKind.SHUFFLE:
        if len(set(page.items)) < 2:
            raise PerturbationError(kind, "need at least 2 distinct items to shuffle")
        items = list(page.items)
        for _ in range(32):
            rng.shuffle(items)
            if tuple(items) != page.items:
                break
        else:  # pathological seed streams: rotate, which differs by the guard above
            items = items[1:] + items[:1]
        return replace(page, items=tuple(items))

    if kind is PerturbationKind.DROP_IRRELEVANT:
        if len(page.items) < 2:
            raise PerturbationError(kind, "need at least 2 items")
        non_target = [it for it in page.items if it.item_id != page.target_item_id]
        if not non_target:
            raise PerturbationError(kind, "no non-target item to drop")
        victim = rng.choice(non_target)
        return _drop_item(page, victim.item_id)

    if kind is PerturbationKind.ADD_IRRELEVANT:
        new_id = _fresh_item_id(rng, set(page.item_ids))
        title = f"{rng.choice(_SYNTH_ADJECTIVES)} {rng.choice(_SYNTH_NOUNS)} {rng.choice(_SYNTH_NOUNS)}"
        price = f"${rng.randrange(5, 80)}.{rng.randrange(100):02d}"
        pos = rng.randrange(len(page.items) + 1)
        items = page.items[:pos] + (PageItem(new_id, title, price),) + page.items[pos:]
        clickables = page.clickables + (f"click[{new_id.lower()}]",)
        return replace(page, items=items, clickables=clickables)

    if kind is PerturbationKind.RANDOM_NOISE:
        slots = [
            (i, j)
            for i, it in enumerate(page.items)
            for j in range(len(it.title.split()))
        ]
        if not slots:
            raise PerturbationError(kind, "no title tokens to corrupt")
        n_replace = max(1, round(DEFAULT_NOISE_RATE * len(slots)))
        chosen = set(rng.sample(slots, min(n_replace, len(slots))))
        items = []
        for i, it in enumerate(page.items):
            tokens = it.title.split()
            for j in range(len(tokens)):
                if (i, j) in chosen:
                    repl = rng.choice(_NOISE_TOKENS)
                    if repl == tokens[j]:
                        repl = repl + "x"
                    tokens[j] = repl
            items.append(replace(it, title=" ".join(tokens)))
        return replace(page, items=tuple(items))

    if kind is PerturbationKind.DROP_TARGET:
        if page.target_item_id is None:
            raise PerturbationError(kind, "page has no target item id")
        if len(page.items) < 2:
            raise PerturbationError(kind, "need at least 2 items")
        if page.target_item_id not in page.item_ids:
            raise PerturbationError(kind, "target item not present on page")
        return _drop_item(page, page.target_item_id)

    if kind is PerturbationKind.RANDOM_CROSS:
        others = [p for p in corpus if p != page]
        if not others:
            raise PerturbationError(kind, "corpus has no page other than the input")
        return replace(rng.choice(others))

    raise PerturbationError(kind, "unhandled kind")


@dataclass(frozen=True)
class StudyRow:
    kind: PerturbationKind
    n: int
    mean_behr: float
    mean_token_f1: float
    em_rate: float
    skipped: int

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "n": self.n,
            "mean_behr": self.mean_behr,
            "mean_token_f1": self.mean_token_f1,
            "em_rate": self.em_rate,
            "skipped": self.skipped,
        }


@dataclass(frozen=True)
class StudyReport:
    rows: tuple[StudyRow, ...]
    excluded: int
    ranks_correctly: dict[str, bool]

    def row(self, kind: PerturbationKind) -> StudyRow:
        for r in self.rows:
            if r.kind is kind:
                return r
        raise KeyError(kind)

    def to_dict(self) -> dict:
        return {
            "rows": [r.to_dict() for r in self.rows],
            "excluded": self.excluded,
            "ranks_correctly": dict(self.ranks_correctly),
        }

    def to_markdown(self) -> str:
        lines = [
            "| Perturbation | N | BehR | Token F1 | EM | Skipped |",
            "|---|---|---|---|---|---|",
        ]
        for r in self.rows:
            lines.append(
                f"| {r.kind.value} | {r.n} | {r.mean_behr:.3f} "
                f"| {r.mean_token_f1:.3f} | {r.em_rate:.0%} | {r.skipped} |"
            )
        lines.append("")
        for metric, ok in sorted(self.ranks_correctly.items()):
            mark = "yes" if ok else "no"
            lines.append(f"- {metric} ranks drop_irrelevant above drop_target: {mark}")
        lines.append(f"- excluded tuples: {self.excluded}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        return rows_to_csv([r.to_dict() for r in self.rows])


def run_perturbation_study(
    corpus: Sequence[TransitionTuple],
    backend: ScorerBackend,
    mode: RewardMode = RewardMode(),
    base_seed: int = 0,
) -> StudyReport:
    """Apply every perturbation kind to every usable tuple's real next state
    and aggregate per-kind means for the behavior reward, token F1, and EM.

    Tuples whose real next state lacks a structured page with a target
    annotation are excluded (counted); per-kind precondition violations are
    skipped (counted per row). Per-tuple seeds derive from base_seed and the
    tuple index, so results do not depend on evaluation order.
    """
    usable: list[tuple[int, TransitionTuple, PageState]] = []
    excluded = 0
    for i, t in enumerate(corpus):
        page = t.real_next_state.structured
        if page is None or page.target_item_id is None:
            excluded += 1
            continue
        usable.append((i, t, page))
    pages = [p for _, _, p in usable]

    rows = []
    for kind in PerturbationKind:
        behrs: list[float] = []
        f1s: list[float] = []
        ems: list[float] = []
        skipped = 0
        for i, t, page in usable:
            try:
                perturbed = apply_perturbation(page, kind, rng_seed=base_seed * 1_000_003 + i, corpus=pages)
            except PerturbationError:
                skipped += 1
                continue
            candidate = Observation(text=render_page(perturbed), structured=perturbed)
            real = t.real_next_state
            l_pred, l_real = score_pair(t, candidate, backend)
            behrs.append(behr(l_pred.value, l_real.value, mode))
            f1s.append(token_f1(candidate.text, real.text))
            ems.append(1.0 if exact_match(candidate.text, real.text) else 0.0)
        rows.append(
            StudyRow(
                kind=kind,
                n=len(behrs),
                mean_behr=fmean(behrs) if behrs else 0.0,
                mean_token_f1=fmean(f1s) if f1s else 0.0,
                em_rate=fmean(ems) if ems else 0.0,
                skipped=skipped,
            )
        )

    report = StudyReport(rows=tuple(rows), excluded=excluded, ranks_correctly={})
    di = report.row(PerturbationKind.DROP_IRRELEVANT)
    dt = report.row(PerturbationKind.DROP_TARGET)
    verdicts = {
        "behr": di.mean_behr > dt.mean_behr,
        "token_f1": di.mean_token_f1 > dt.mean_token_f1,
        "exact_match": di.em_rate > dt.em_rate,
    }
    return replace(report, ranks_correctly=verdicts)


def make_study_corpus(n: int, seed: int = 0) -> list[TransitionTuple]:
    """Seeded corpus of search-result transitions for the perturbation study.

    Target titles are short and irrelevant titles long, so removing an
    irrelevant item takes away more token mass than removing the target;
    the expert action is always the click on the target item.
    """
    from behr.core import Domain, TrajectoryPrefix

    rng = random.Random(seed)
    target_nouns = ("mug", "lamp", "scarf", "kettle", "wallet", "stool", "clock", "vase")
    target_adjs = ("blue", "oak", "woolen", "copper", "leather", "round", "green", "slim")
    filler_words = (
        "heavy", "duty", "multi", "purpose", "extra", "wide", "garden", "steel",
        "storage", "premium", "outdoor", "folding", "portable", "reinforced",
    )
    tuples = []
    for i in range(n):
        adj = target_adjs[rng.randrange(len(target_adjs))]
        noun = target_nouns[rng.randrange(len(target_nouns))]
        target_title = f"{adj} {noun}"
        target_id = f"B{i:04d}T"
        n_items = rng.randint(4, 7)
        target_pos = rng.randrange(n_items)
        items = []
        for j in range(n_items):
            if j == target_pos:
                items.append(PageItem(target_id, target_title, f"${rng.randrange(8, 30)}.{rng.randrange(100):02d}"))
            else:
                words = rng.sample(filler_words, 6) + [f"model{i}{j}"]
                items.append(
                    PageItem(f"B{i:04d}{j}", " ".join(words), f"${rng.randrange(8, 60)}.{rng.randrange(100):02d}")
                )
        instruction = f"Find me a {target_title}"
        clickables = tuple([f"click[{it.item_id.lower()}]" for it in items])
        page = PageState(
            instruction=instruction,
            page_type="search_results",
            items=tuple(items),
            clickables=clickables,
            target_item_id=target_id,
        )
        landing = PageState(
            instruction=instruction,
            page_type="landing",
            clickables=("search[<keywords>]",),
        )
        prefix = TrajectoryPrefix(
            task_id=f"study-{i:04d}",
            initial_obs=Observation(text=render_page(landing), structured=landing),
            pairs=(),
            final_action=Action(text=f"search[{target_title}]"),
        )
        tuples.append(
            TransitionTuple(
                history=prefix,
                real_next_state=Observation(text=render_page(page), structured=page),
                expert_next_action=Action(text=f"click[{target_id.lower()}]"),
                domain_tag=Domain.SHOP,
            )
        )
    return tuples

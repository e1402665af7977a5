"""Seeded generators for toy task specs, and the spec file JSON format.

Shop tasks pair a catalog of 4-8 products with an instruction built from the
target's own title, so the target always wins keyword ranking. Adventure
tasks are short room chains with one locked door whose key sits in a
container in an earlier room; the generated walkthrough is validated against
the environment at generation time.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

from behr.envsim.adventure import (
    AdventureObject,
    Subgoal,
    ToyAdventureSpec,
    adventure_env,
)
from behr.envsim.shop import ShopProduct, ToyShopSpec
from behr.core import Action

_ADJECTIVES = (
    "blue", "red", "green", "black", "white", "copper", "oak", "walnut",
    "woolen", "cotton", "leather", "ceramic", "steel", "glass", "bamboo", "slim",
)
_NOUNS = (
    "mug", "lamp", "scarf", "kettle", "wallet", "stool", "clock", "vase",
    "blanket", "notebook", "backpack", "teapot", "mirror", "basket", "pillow", "tray",
)
_FILLERS = (
    "heavy", "duty", "multi", "purpose", "extra", "wide", "garden", "grade",
    "storage", "premium", "outdoor", "folding", "portable", "reinforced",
    "compact", "classic",
)
_COLORS = ("blue", "red", "green", "black", "white", "yellow")
_SIZES = ("small", "medium", "large")

_ROOM_NAMES = ("bedroom", "kitchen", "parlor", "cellar", "study", "pantry")
_CONTAINERS = ("antique trunk", "chest drawer", "cupboard", "toolbox")
_KEYS = ("old key", "brass key", "iron key")
_ITEMS = ("lettuce", "candle", "loaf of bread", "silver coin")
_SUPPORTS = ("stove", "table", "counter", "shelf")


def generate_shop_spec(index: int, seed: int) -> ToyShopSpec:
    rng = random.Random((seed, "shop", index).__repr__())
    n_products = rng.randint(4, 8)
    titles: set[str] = set()
    products = []
    target_pos = rng.randrange(n_products)
    target_adj = rng.choice(_ADJECTIVES)
    target_noun = rng.choice(_NOUNS)
    for j in range(n_products):
        if j == target_pos:
            title = f"{target_adj} {target_noun}"
        else:
            while True:
                words = rng.sample(_FILLERS, 3) + [rng.choice(_NOUNS)]
                # distinct noun and no overlap with the target's words keeps
                # keyword ranking unambiguous
                if words[-1] != target_noun and target_adj not in words:
                    title = " ".join(words)
                    break
        if title in titles:
            title = title + f" mk{j}"
        titles.add(title)
        options = {}
        if rng.random() < 0.7:
            options["color"] = tuple(rng.sample(_COLORS, 2))
        if rng.random() < 0.5:
            options["size"] = tuple(rng.sample(_SIZES, 2))
        price = f"${rng.randrange(8, 70)}.{rng.randrange(100):02d}"
        products.append(ShopProduct(id=f"B{index:04d}{j}", title=title, price=price, options=options))

    target = products[target_pos]
    required = []
    clauses = []
    if target.options and rng.random() < 0.6:
        # require one value from each option group the target offers
        for group in sorted(target.options):
            value = rng.choice(target.options[group])
            required.append(value)
            clauses.append(f"{group}: {value}")
    cap = None
    if rng.random() < 0.5:
        cap_cents = int(target.price[1:].replace(".", "")) + rng.randrange(100, 2000)
        cap = f"${cap_cents // 100}.{cap_cents % 100:02d}"
        clauses.append(f"price lower than {cap}")
    instruction = f"Find me a {target.title}"
    if clauses:
        instruction += ", " + ", ".join(clauses)
    return ToyShopSpec(
        task_id=f"shop-{seed}-{index:04d}",
        instruction=instruction,
        catalog=tuple(products),
        target_id=target.id,
        required_options=tuple(required),
        price_cap=cap,
    )


def generate_shop_specs(n: int, seed: int) -> list[ToyShopSpec]:
    return [generate_shop_spec(i, seed) for i in range(n)]


def fig_style_adventure_spec(task_id: str = "adventure-fig") -> ToyAdventureSpec:
    """The canonical two-room task: trunk holds a key, the key unlocks the
    door east, and the goal object must end up on the kitchen stove."""
    return ToyAdventureSpec(
        task_id=task_id,
        intro="Welcome! Place the lettuce on the stove.",
        start_room="bedroom",
        rooms={"bedroom": {"east": "kitchen"}, "kitchen": {"west": "bedroom"}},
        objects=(
            AdventureObject(name="antique trunk", kind="container", location="bedroom", contains=("old key",)),
            AdventureObject(name="old key", kind="item", location="antique trunk"),
            AdventureObject(
                name="wooden door", kind="door", location="bedroom",
                locked=True, key="old key", blocks=("bedroom", "east"),
            ),
            AdventureObject(name="refrigerator", kind="container", location="kitchen", contains=("lettuce",)),
            AdventureObject(name="lettuce", kind="item", location="refrigerator"),
            AdventureObject(name="stove", kind="support", location="kitchen"),
        ),
        subgoals=(
            Subgoal(kind="reach_room", room="kitchen"),
            Subgoal(kind="take", obj="lettuce"),
            Subgoal(kind="place", obj="lettuce", support="stove"),
        ),
        walkthrough=(
            "open antique trunk",
            "take old key",
            "unlock wooden door",
            "open wooden door",
            "go east",
            "open refrigerator",
            "take lettuce",
            "put lettuce on stove",
        ),
    )


_DIR_PAIRS = (("east", "west"), ("north", "south"))


def generate_adventure_spec(index: int, seed: int) -> ToyAdventureSpec:
    rng = random.Random((seed, "adventure", index).__repr__())
    n_rooms = rng.randint(2, 4)
    rooms = list(rng.sample(_ROOM_NAMES, n_rooms))
    exits: dict[str, dict[str, str]] = {r: {} for r in rooms}
    dirs = []
    for i in range(n_rooms - 1):
        fwd, back = _DIR_PAIRS[rng.randrange(len(_DIR_PAIRS))]
        exits[rooms[i]][fwd] = rooms[i + 1]
        exits[rooms[i + 1]][back] = rooms[i]
        dirs.append(fwd)

    container = rng.choice(_CONTAINERS)
    key = rng.choice(_KEYS)
    goal_item = rng.choice(_ITEMS)
    support = rng.choice(_SUPPORTS)
    item_container = rng.choice([c for c in _CONTAINERS if c != container])
    # the door blocks the final traversal; its key hides in the first room
    door_room = rooms[-2]
    door_dir = dirs[-1]
    objects = [
        AdventureObject(name=container, kind="container", location=rooms[0], contains=(key,)),
        AdventureObject(name=key, kind="item", location=container),
        AdventureObject(
            name="wooden door", kind="door", location=door_room,
            locked=True, key=key, blocks=(door_room, door_dir),
        ),
        AdventureObject(name=item_container, kind="container", location=rooms[-1], contains=(goal_item,)),
        AdventureObject(name=goal_item, kind="item", location=item_container),
        AdventureObject(name=support, kind="support", location=rooms[-1]),
    ]
    subgoals = (
        Subgoal(kind="reach_room", room=rooms[-1]),
        Subgoal(kind="take", obj=goal_item),
        Subgoal(kind="place", obj=goal_item, support=support),
    )
    walkthrough = [f"open {container}", f"take {key}"]
    for i, d in enumerate(dirs):
        if rooms[i] == door_room:
            walkthrough += ["unlock wooden door", "open wooden door"]
        walkthrough.append(f"go {d}")
    walkthrough += [f"open {item_container}", f"take {goal_item}", f"put {goal_item} on {support}"]

    spec = ToyAdventureSpec(
        task_id=f"adventure-{seed}-{index:04d}",
        intro=f"Welcome! Place the {goal_item} on the {support}.",
        start_room=rooms[0],
        rooms=exits,
        objects=tuple(objects),
        subgoals=subgoals,
        walkthrough=tuple(walkthrough),
    )
    _validate_walkthrough(spec)
    return spec


def _validate_walkthrough(spec: ToyAdventureSpec) -> None:
    env = adventure_env(spec)
    env.reset(spec.task_id)
    success = False
    for step in spec.walkthrough:
        _, done, success = env.step(Action(step))
        if done:
            break
    if not success:
        raise AssertionError(f"generated walkthrough does not solve {spec.task_id}")


def generate_adventure_specs(n: int, seed: int) -> list[ToyAdventureSpec]:
    return [generate_adventure_spec(i, seed) for i in range(n)]


def spec_to_json(spec: ToyShopSpec | ToyAdventureSpec) -> str:
    return json.dumps(spec.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def load_spec(path: str | Path) -> ToyShopSpec | ToyAdventureSpec:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("domain") == "shop":
        return ToyShopSpec.from_dict(data)
    if data.get("domain") == "adventure":
        return ToyAdventureSpec.from_dict(data)
    raise ValueError(f"unknown spec domain in {path}")


def write_specs(specs: list[ToyShopSpec] | list[ToyAdventureSpec], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for spec in specs:
        path = out / f"{spec.task_id}.json"
        path.write_text(spec_to_json(spec), encoding="utf-8", newline="\n")
        paths.append(path)
    return paths

"""Toy text-adventure environment: a few rooms, containers, a lockable door,
and ordered subgoals (reach a room, take an object, place it on a support).

Verbs: go <dir>, open <thing>, unlock <thing>, take <obj> [from <container>],
put <obj> on <support>, look, inventory. Unknown verbs answer in fiction
("That's not a verb I recognise.") without ending the episode. Every object
is in exactly one place (a room, a container, or the inventory) at all times.

Observations are a feedback line, a room header, an optional score line, the
room description, and the admissible command list:

    You open the antique trunk, revealing an old key.
    -= Bedroom =-
    Score: 1/3
    You see: an antique trunk (open), a wooden door (locked)
    Exits: east
    AVAILABLE ACTIONS: take old key | go east | look | inventory
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from behr.core import Action, Observation
from behr.envsim import DEFAULT_MAX_STEPS

UNKNOWN_VERB = "That's not a verb I recognise."

_VERBS = ("go", "open", "unlock", "take", "put", "look", "inventory")


@dataclass(frozen=True)
class AdventureObject:
    """A thing in the world. Kinds: item (takeable), container (openable,
    may hold items), support (put target), door (blocks an exit)."""

    name: str
    kind: str
    location: str  # room name, or a container name for nested items
    contains: tuple[str, ...] = ()
    locked: bool = False
    key: str | None = None
    blocks: tuple[str, str] | None = None  # (room, direction)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "kind": self.kind,
            "location": self.location,
            "contains": list(self.contains),
            "locked": self.locked,
            "key": self.key,
            "blocks": list(self.blocks) if self.blocks else None,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AdventureObject":
        blocks = data.get("blocks")
        return cls(
            name=data["name"],
            kind=data["kind"],
            location=data["location"],
            contains=tuple(data.get("contains", ())),
            locked=data.get("locked", False),
            key=data.get("key"),
            blocks=(blocks[0], blocks[1]) if blocks else None,
        )


@dataclass(frozen=True)
class Subgoal:
    kind: str  # reach_room | take | place
    room: str | None = None
    obj: str | None = None
    support: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "room": self.room, "obj": self.obj, "support": self.support}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Subgoal":
        return cls(
            kind=data["kind"],
            room=data.get("room"),
            obj=data.get("obj"),
            support=data.get("support"),
        )


@dataclass(frozen=True)
class ToyAdventureSpec:
    task_id: str
    intro: str
    start_room: str
    rooms: dict[str, dict[str, str]]  # room -> {direction: destination}
    objects: tuple[AdventureObject, ...]
    subgoals: tuple[Subgoal, ...]
    walkthrough: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        names = [o.name for o in self.objects]
        if len(names) != len(set(names)):
            raise ValueError("object names must be unique")
        for room, exits in self.rooms.items():
            for direction, dest in exits.items():
                if dest not in self.rooms:
                    raise ValueError(f"exit {room}/{direction} leads to unknown room {dest!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "domain": "adventure",
            "task_id": self.task_id,
            "intro": self.intro,
            "start_room": self.start_room,
            "rooms": {r: dict(x) for r, x in self.rooms.items()},
            "objects": [o.to_dict() for o in self.objects],
            "subgoals": [g.to_dict() for g in self.subgoals],
            "walkthrough": list(self.walkthrough),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ToyAdventureSpec":
        return cls(
            task_id=data["task_id"],
            intro=data["intro"],
            start_room=data["start_room"],
            rooms={r: dict(x) for r, x in data["rooms"].items()},
            objects=tuple(AdventureObject.from_dict(o) for o in data["objects"]),
            subgoals=tuple(Subgoal.from_dict(g) for g in data["subgoals"]),
            walkthrough=tuple(data.get("walkthrough", ())),
        )


class AdventureEnv:
    """Single-task adventure episode. Construct via adventure_env()."""

    def __init__(self, spec: ToyAdventureSpec, max_steps: int = DEFAULT_MAX_STEPS) -> None:
        self.spec = spec
        self.max_steps = max_steps
        self._reset_state()

    def _reset_state(self) -> None:
        self._room = self.spec.start_room
        self._locations = {o.name: o.location for o in self.spec.objects}
        self._open: dict[str, bool] = {
            o.name: False for o in self.spec.objects if o.kind in ("container", "door")
        }
        self._locked = {o.name: o.locked for o in self.spec.objects}
        self._on_support: dict[str, str] = {}
        self._satisfied = [False] * len(self.spec.subgoals)
        self._steps = 0
        self._done = False
        self._success = False

    # -- world queries ----------------------------------------------------

    def _obj(self, name: str) -> AdventureObject | None:
        for o in self.spec.objects:
            if o.name == name:
                return o
        return None

    def _in_room(self, name: str) -> bool:
        loc = self._locations[name]
        if loc == self._room:
            return True
        # visible inside an open container in this room
        holder = self._obj(loc)
        return (
            holder is not None
            and holder.kind == "container"
            and self._locations[holder.name] == self._room
            and self._open.get(holder.name, False)
        )

    def _carrying(self, name: str) -> bool:
        return self._locations[name] == "inventory"

    def _door_for(self, room: str, direction: str) -> AdventureObject | None:
        for o in self.spec.objects:
            if o.kind == "door" and o.blocks == (room, direction):
                return o
        return None

    @property
    def score(self) -> int:
        return sum(self._satisfied)

    def _update_subgoals(self) -> int:
        gained = 0
        for i, goal in enumerate(self.spec.subgoals):
            if self._satisfied[i]:
                continue
            if goal.kind == "reach_room":
                ok = self._room == goal.room
            elif goal.kind == "take":
                ok = self._carrying(goal.obj or "")
            else:
                ok = self._on_support.get(goal.obj or "") == goal.support
            if ok:
                self._satisfied[i] = True
                gained += 1
        return gained

    # -- rendering ----------------------------------------------------------

    def _visible_things(self) -> list[str]:
        parts = []
        for o in self.spec.objects:
            if o.kind == "door" and o.blocks and o.blocks[0] == self._room:
                state = "locked" if self._locked[o.name] else ("open" if self._open[o.name] else "closed")
                parts.append(f"a {o.name} ({state})")
            elif o.kind == "container" and self._locations[o.name] == self._room:
                state = "open" if self._open[o.name] else "closed"
                parts.append(f"a {o.name} ({state})")
            elif o.kind == "support" and self._locations[o.name] == self._room:
                resting = sorted(n for n, s in self._on_support.items() if s == o.name)
                suffix = f" holding {', '.join(resting)}" if resting else ""
                parts.append(f"a {o.name}{suffix}")
            elif o.kind == "item" and self._in_room(o.name) and o.name not in self._on_support:
                parts.append(f"a {o.name}")
            elif o.kind == "item" and self._on_support.get(o.name) and self._locations[o.name] == self._room:
                pass  # rendered with its support
        return parts

    def admissible_actions(self) -> list[str]:
        out: list[str] = []
        for o in self.spec.objects:
            if o.kind == "container" and self._locations[o.name] == self._room and not self._open[o.name]:
                out.append(f"open {o.name}")
            if o.kind == "door" and o.blocks and o.blocks[0] == self._room:
                if self._locked[o.name] and o.key and self._carrying(o.key):
                    out.append(f"unlock {o.name}")
                elif not self._locked[o.name] and not self._open[o.name]:
                    out.append(f"open {o.name}")
        for o in self.spec.objects:
            if o.kind == "item" and self._in_room(o.name) and not self._carrying(o.name):
                out.append(f"take {o.name}")
        for o in self.spec.objects:
            if o.kind == "item" and self._carrying(o.name):
                for s in self.spec.objects:
                    if s.kind == "support" and self._locations[s.name] == self._room:
                        out.append(f"put {o.name} on {s.name}")
        for direction in sorted(self.spec.rooms.get(self._room, {})):
            door = self._door_for(self._room, direction)
            if door is None or self._open[door.name]:
                out.append(f"go {direction}")
        out.extend(["look", "inventory"])
        return out

    def _render(self, feedback: str | None = None) -> Observation:
        lines = []
        if feedback:
            lines.append(feedback)
        lines.append(f"-= {self._room.title()} =-")
        if self.score:
            lines.append(f"Score: {self.score}/{len(self.spec.subgoals)}")
        things = self._visible_things()
        if things:
            lines.append("You see: " + ", ".join(things))
        exits = sorted(self.spec.rooms.get(self._room, {}))
        if exits:
            lines.append("Exits: " + ", ".join(exits))
        lines.append("AVAILABLE ACTIONS: " + " | ".join(self.admissible_actions()))
        return Observation(text="\n".join(lines))

    # -- mechanics ----------------------------------------------------------

    def reset(self, task_id: str) -> Observation:
        if task_id != self.spec.task_id:
            raise ValueError(f"env is bound to task {self.spec.task_id!r}, got {task_id!r}")
        self._reset_state()
        obs = self._render(feedback=self.spec.intro)
        return obs

    def step(self, action: Action) -> tuple[Observation, bool, bool]:
        if self._done:
            raise RuntimeError("episode is over; reset before stepping again")
        self._steps += 1
        feedback = self._apply(action.text.strip().lower())
        self._update_subgoals()
        if all(self._satisfied):
            self._done = True
            self._success = True
            feedback = (feedback + " " if feedback else "") + "*** The End ***"
        elif self._steps >= self.max_steps:
            self._done = True
        return self._render(feedback=feedback or None), self._done, self._success

    def _apply(self, text: str) -> str:
        words = text.split()
        verb = words[0] if words else ""
        if verb not in _VERBS:
            return UNKNOWN_VERB
        rest = " ".join(words[1:])

        if verb == "look":
            return ""
        if verb == "inventory":
            carried = sorted(n for n, loc in self._locations.items() if loc == "inventory")
            return "You are carrying: " + (", ".join(carried) if carried else "nothing") + "."
        if verb == "go":
            direction = rest
            exits = self.spec.rooms.get(self._room, {})
            if direction not in exits:
                return "You can't go that way."
            door = self._door_for(self._room, direction)
            if door is not None:
                if self._locked[door.name]:
                    return f"The {door.name} is locked."
                if not self._open[door.name]:
                    return f"The {door.name} is closed."
            self._room = exits[direction]
            return f"You go {direction}."
        if verb == "open":
            obj = self._obj(rest)
            if obj is None or obj.kind not in ("container", "door"):
                return "You can't open that."
            if obj.kind == "door" and not (obj.blocks and obj.blocks[0] == self._room):
                return "You can't open that."
            if obj.kind == "container" and self._locations[obj.name] != self._room:
                return "You can't open that."
            if self._locked[obj.name]:
                return f"The {obj.name} is locked."
            if self._open[obj.name]:
                return f"The {obj.name} is already open."
            self._open[obj.name] = True
            if obj.kind == "container" and obj.contains:
                inside = ", ".join(f"an {n}" if n[0] in "aeiou" else f"a {n}" for n in obj.contains)
                return f"You open the {obj.name}, revealing {inside}."
            return f"You open the {obj.name}."
        if verb == "unlock":
            obj = self._obj(rest)
            if obj is None or not self._locked.get(obj.name, False):
                return "You can't unlock that."
            if obj.kind == "door" and not (obj.blocks and obj.blocks[0] == self._room):
                return "You can't unlock that."
            if not obj.key or not self._carrying(obj.key):
                return f"The {obj.name} is locked."
            self._locked[obj.name] = False
            return f"(with the {obj.key}) You unlock the {obj.name}."
        if verb == "take":
            name = rest.split(" from ")[0]
            obj = self._obj(name)
            if obj is None or obj.kind != "item" or not self._in_room(name) or self._carrying(name):
                return "You can't take that."
            self._locations[name] = "inventory"
            self._on_support.pop(name, None)
            return f"You take the {name}."
        if verb == "put":
            if " on " not in rest:
                return "Put what where?"
            name, support = rest.split(" on ", 1)
            obj = self._obj(name)
            sup = self._obj(support)
            if obj is None or not self._carrying(name):
                return "You aren't carrying that."
            if sup is None or sup.kind != "support" or self._locations[sup.name] != self._room:
                return "You can't put it there."
            self._locations[name] = self._room
            self._on_support[name] = support
            return f"You put the {name} on the {support}."
        return UNKNOWN_VERB


def adventure_env(spec: ToyAdventureSpec, max_steps: int = DEFAULT_MAX_STEPS) -> AdventureEnv:
    return AdventureEnv(spec, max_steps=max_steps)

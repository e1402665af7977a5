"""Deterministic miniature environments (toy shop, toy adventure) and the
world-model interface with oracle and corrupted implementations.

These are desk-scale stand-ins for full web-shopping and text-adventure
benchmarks: tiny, fully deterministic, with a fixed observation grammar so
that parsing and perturbation are exact. Adapters for the real environments
are extension points behind the same EnvironmentHandle interface, not
implemented here.
"""

from __future__ import annotations

from typing import Protocol

from behr.core import Action, History, Observation

DEFAULT_MAX_STEPS = 50


class EnvironmentHandle(Protocol):
    """One episode's worth of mutable environment state.

    Deterministic transition function; stepping after done raises. Each
    instance is single-threaded; run instances concurrently across tasks.
    """

    max_steps: int

    def reset(self, task_id: str) -> Observation: ...

    def step(self, action: Action) -> tuple[Observation, bool, bool]:
        """Apply one action; returns (observation, done, success)."""
        ...


class WorldModelHandle(Protocol):
    """Surrogate environment: maps (history, action) to the predicted next
    observation and a task-completion signal. Pure function of its inputs
    for the scripted variants."""

    def predict(self, history: History, action: Action) -> tuple[Observation, bool]: ...


from behr.envsim.adventure import AdventureEnv, ToyAdventureSpec, adventure_env  # noqa: E402
from behr.envsim.genspec import (  # noqa: E402
    fig_style_adventure_spec,
    generate_adventure_specs,
    generate_shop_specs,
    load_spec,
    write_specs,
)
from behr.envsim.shop import ShopEnv, ToyShopSpec, shop_env  # noqa: E402
from behr.envsim.worldmodel import (  # noqa: E402
    Corruption,
    CorruptionKind,
    DivergenceError,
    corrupted_wm,
    is_terminal_observation,
    oracle_wm,
)

__all__ = [
    "DEFAULT_MAX_STEPS",
    "EnvironmentHandle",
    "WorldModelHandle",
    "ShopEnv",
    "ToyShopSpec",
    "shop_env",
    "AdventureEnv",
    "ToyAdventureSpec",
    "adventure_env",
    "oracle_wm",
    "corrupted_wm",
    "Corruption",
    "CorruptionKind",
    "DivergenceError",
    "is_terminal_observation",
    "generate_shop_specs",
    "generate_adventure_specs",
    "fig_style_adventure_spec",
    "load_spec",
    "write_specs",
]

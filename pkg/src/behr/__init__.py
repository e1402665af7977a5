"""Behavior-consistency harness for text-based world models.

Scores world-model state predictions by whether they preserve a frozen
reference agent's likelihood of the logged next action, and evaluates world
models at the task level by replaying their episodes in the real
environment (Real / WM / W2R, CR, CR_pw).
"""

from behr.core import (
    Action,
    Domain,
    EpisodeRecord,
    History,
    Observation,
    Pipeline,
    Step,
    TerminatedBy,
    Trajectory,
    TrajectoryPrefix,
    TransitionTuple,
    decompose_trajectory,
    history_prefix,
)
from behr.pages import PageItem, PageState, parse_page, render_page
from behr.reward import RewardMode, behr, group_normalize

__version__ = "0.1.0"

__all__ = [
    "Action",
    "Domain",
    "EpisodeRecord",
    "History",
    "Observation",
    "PageItem",
    "PageState",
    "Pipeline",
    "RewardMode",
    "Step",
    "TerminatedBy",
    "Trajectory",
    "TrajectoryPrefix",
    "TransitionTuple",
    "behr",
    "decompose_trajectory",
    "group_normalize",
    "history_prefix",
    "parse_page",
    "render_page",
    "__version__",
]

"""Episode engine: tasks, directives, backends, ablations, traces."""

from .ablation import AblationFlags
from .backends import HttpBackendConfig, HttpRealizer, realize_http, realize_stub
from .directive import RealizationDirective, build_directive
from .episode import EpisodeConfig, EpisodeTrace, StepRecord, run_episode
from .tasks import HiddenSumTask, majority_value, make_task
from .trace_io import read_traces, replay_reward_totals, write_traces

__all__ = [
    "AblationFlags",
    "EpisodeConfig",
    "EpisodeTrace",
    "StepRecord",
    "run_episode",
    "HiddenSumTask",
    "make_task",
    "majority_value",
    "RealizationDirective",
    "build_directive",
    "HttpBackendConfig",
    "HttpRealizer",
    "realize_stub",
    "realize_http",
    "read_traces",
    "write_traces",
    "replay_reward_totals",
]

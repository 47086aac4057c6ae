from .backgrounds import (
    BG_HIGH,
    BG_LOW,
    CLEAN_VALUE,
    BackgroundLoadError,
    BackgroundSource,
    BackgroundStream,
    background_next,
    scripted_frame,
)
from .core import (
    AGENT_VALUE,
    DT,
    GOAL_VALUE,
    EnvConfig,
    EnvState,
    PixelEnv,
    StepResult,
    write_episode_csv,
)

__all__ = [
    "AGENT_VALUE",
    "BG_HIGH",
    "BG_LOW",
    "CLEAN_VALUE",
    "DT",
    "GOAL_VALUE",
    "BackgroundLoadError",
    "BackgroundSource",
    "BackgroundStream",
    "EnvConfig",
    "EnvState",
    "PixelEnv",
    "StepResult",
    "background_next",
    "scripted_frame",
    "write_episode_csv",
]

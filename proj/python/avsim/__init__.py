"""Active-vision dataset simulator: native scene, move-graph, labeling,
episode and evaluation operations."""

from ._core import (
    ACTIONS,
    AvsimError,
    ContractError,
    DivergenceError,
    Environment,
    EpisodeState,
    IntegrityError,
    IoError,
    LoadError,
    ParseError,
    Scene,
    UserError,
    average_precision,
    generate_scene,
    iou,
    load_scene,
)

__all__ = [
    "ACTIONS",
    "AvsimError",
    "ContractError",
    "DivergenceError",
    "Environment",
    "EpisodeState",
    "IntegrityError",
    "IoError",
    "LoadError",
    "ParseError",
    "Scene",
    "UserError",
    "average_precision",
    "generate_scene",
    "iou",
    "load_scene",
]

"""Condition-driven neural field renderer.

Thin wrapper over the C++ core: field evaluation and rendering for trained
head/torso checkpoints, ray compositing, hash-collision sweeps, gradient
checks, and the full command line surface via run_cli.
"""

from ._core import (
    HeadField,
    TorsoField,
    collision_sweep,
    composite,
    gradcheck,
    load_head,
    load_torso,
    pose_encoding,
    run_cli,
)

__all__ = [
    "HeadField",
    "TorsoField",
    "collision_sweep",
    "composite",
    "gradcheck",
    "load_head",
    "load_torso",
    "pose_encoding",
    "run_cli",
]

"""Track-wise polyphonic sound event localization and detection (SELD) on
synthetic first-order Ambisonic scenes: scene synthesis, feature extraction,
a two-branch track-wise network with frame-level permutation-invariant
training, masked inference, and joint location-sensitive metrics."""

__version__ = "0.1.0"

from .geometry import DoaAngle, angular_distance
from .scenes import FoaClip, LabelGrid, SceneEvent, encode_plane_wave, synth_scene

__all__ = [
    "DoaAngle",
    "FoaClip",
    "LabelGrid",
    "SceneEvent",
    "angular_distance",
    "encode_plane_wave",
    "synth_scene",
    "__version__",
]

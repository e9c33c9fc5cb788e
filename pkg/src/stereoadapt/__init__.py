"""Online continual adaptation for a compact pyramidal stereo network.

The package bundles a small reverse-mode autodiff core, the network itself,
classical block-matching / scanline-aggregation stereo used to distill proxy
labels, confidence measures to filter them, and the adaptation engine that
updates either the whole network or one sampled module per frame.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    FileFormatError,
    GraphError,
    SequenceError,
    ShapeError,
    StereoAdaptError,
)

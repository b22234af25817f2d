"""Any-to-one single-image relighting.

A scene-structure extractor and a light-effect extractor (both
back-projection autoencoders trained adversarially, the latter with a
dark-region discriminator) feed a re-renderer that paints the image under
the fixed target light. Shadow-free pseudo-targets come from exposure
fusion; a synthetic multi-illumination dataset generator makes the whole
pipeline trainable and measurable at desk scale.
"""

__version__ = "0.1.0"

from .imaging import (
    DIRECTIONS,
    TEMPERATURES,
    ImageTensor,
    LightSetting,
    TARGET_LIGHT,
    from_model_range,
    load_png,
    save_png,
    to_model_range,
)

__all__ = [
    "DIRECTIONS",
    "TEMPERATURES",
    "ImageTensor",
    "LightSetting",
    "TARGET_LIGHT",
    "from_model_range",
    "load_png",
    "save_png",
    "to_model_range",
    "__version__",
]

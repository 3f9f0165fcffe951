"""lumacurve: a desk-scale toolkit for studying brightness robustness of
illuminant estimators.

Pieces: a differentiable piecewise-linear brightness curve, adversarial
brightness augmentation with an adaptive ascent step, a toy convolutional
estimator trained with a joint adversarial + contrastive objective, a
synthetic moving-light dataset, classical statistics baselines, and an
evaluation harness around angular-error summaries.
"""

from .color_core import (
    BrightnessMap,
    Illuminant,
    LinearImage,
    angular_error,
    brightness_map,
    load_pfm,
    normalize_illuminant,
    save_pfm,
    von_kries_correct,
)
from .tone_curve import CurveParams, apply_curve, curve_param_grad, curve_value

__version__ = "0.1.0"

__all__ = [
    "BrightnessMap",
    "CurveParams",
    "Illuminant",
    "LinearImage",
    "angular_error",
    "apply_curve",
    "brightness_map",
    "curve_param_grad",
    "curve_value",
    "load_pfm",
    "normalize_illuminant",
    "save_pfm",
    "von_kries_correct",
    "__version__",
]

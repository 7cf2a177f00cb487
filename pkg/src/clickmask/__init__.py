"""Click-driven interactive segmentation with a run-once image encoder.

The heavyweight encoder runs once per image; every click re-runs only the
light fusion head against the cached feature taps. Import `clickmask.service`
separately for the HTTP layer (it pulls in fastapi).
"""

from .clicksim import Click, next_click
from .data import Sample, SynthConfig, load_dataset, synth_generate
from .errors import ClickmaskError, ConfigError, ShapeError
from .metrics import EvalConfig, click_trajectory, evaluate_dataset, iou, noc
from .model import ClickSegmenter, ModelConfig
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Click",
    "ClickSegmenter",
    "ClickmaskError",
    "ConfigError",
    "EvalConfig",
    "ModelConfig",
    "Sample",
    "ShapeError",
    "SynthConfig",
    "TrainConfig",
    "click_trajectory",
    "evaluate_dataset",
    "iou",
    "load_checkpoint",
    "load_dataset",
    "next_click",
    "noc",
    "save_checkpoint",
    "synth_generate",
    "train",
    "__version__",
]

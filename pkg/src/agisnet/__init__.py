"""Few-shot artistic glyph synthesis: a shape/texture generator trained with
adversarial, L1, contextual and local texture refinement losses."""

from .generator import Generator, GeneratorSpec
from .trainer import TrainConfig, finetune, pretrain, synthesize

__version__ = "0.1.0"

__all__ = ["Generator", "GeneratorSpec", "TrainConfig", "finetune", "pretrain", "synthesize", "__version__"]

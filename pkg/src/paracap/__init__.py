"""One-stage video paragraph captioning at desk scale.

Keyframe-aware encoding, decoding over dynamic video memories, and
diversity-driven training, exercised on a deterministic synthetic corpus
with a full metric suite.
"""

from .autodiff import (ComputationTape, Tensor, backward,
                       finite_difference_check, forward_primitive)
from .config import RunConfig, TrainingConfig
from .errors import ConfigurationError, ContractViolation
from .estimator import KeyframeSelector, VideoParagraphCaptioner
from .metrics import (EvaluationReport, NGramFrequencyTable, bleu4,
                      build_ngram_table, cider, div_n, rep_n)
from .model import ModelParameters
from .vocab import Vocabulary

__version__ = "0.1.0"

__all__ = [
    "ComputationTape", "Tensor", "backward", "finite_difference_check",
    "forward_primitive", "RunConfig", "TrainingConfig", "ConfigurationError",
    "ContractViolation", "KeyframeSelector", "VideoParagraphCaptioner",
    "EvaluationReport", "NGramFrequencyTable", "bleu4", "build_ngram_table",
    "cider", "div_n", "rep_n", "ModelParameters", "Vocabulary", "__version__",
]

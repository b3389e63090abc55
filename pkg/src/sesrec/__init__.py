"""Sequential recommendation enhanced by search histories.

Query/item alignment plus co-attention disentanglement of shared and
distinct interests, trained with a multi-task loss.
"""

from .analysis import ablation, cosine_report, disentanglement_report, js_divergence, sweep
from .config import ConfigError, ModelConfig, TrainConfig
from .data import Corpus, DataError, build_histories, leave_one_out_split
from .evaluator import evaluate
from .model import SESRec
from .synthetic import SynthConfig, generate_synthetic
from .trainer import holdout_metrics, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "Corpus", "DataError", "ModelConfig", "SESRec", "SynthConfig", "TrainConfig",
    "ablation", "build_histories", "cosine_report", "disentanglement_report", "evaluate",
    "generate_synthetic", "holdout_metrics", "js_divergence", "leave_one_out_split", "load_checkpoint",
    "save_checkpoint", "sweep", "train",
]

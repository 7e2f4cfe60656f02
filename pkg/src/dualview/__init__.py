"""Joint review summarization and sentiment classification on a small numpy autodiff engine."""

from .config import Ablations, HyperParams, TrainConfig
from .data import Dataset, load_dataset, prepare_dataset, save_dataset
from .evaluation import evaluate_run, macro_f1, balanced_accuracy, rouge_l, rouge_n
from .model import ModelParams, forward
from .trainer import train

__version__ = "0.1.0"

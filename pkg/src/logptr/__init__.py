"""Variable-aware log parsing with a pointer network."""

from .ingest import (
    DEFAULT_CATEGORY_LABELS,
    AnnotatedRecord,
    DatasetSplit,
    LabelSet,
    RawLogRecord,
    align_template,
    annotate,
    apply_target,
    load_structured_csv,
    pre_tokenize,
    split_dataset,
)
from .metrics import group_accuracy, parsing_accuracy, robustness_report
from .model import ModelConfig, ParseResult, PointerParser
from .tokenizer import SubwordVocab, train_vocab
from .trainer import Checkpoint, TrainConfig, load_model, save_model, train

__version__ = "0.1.0"

"""Long-document Persian summarization: preprocessing, BPE, training and decoding."""

from longsum._longsum import (
    EOS,
    PAD,
    SOS,
    UNK,
    Model,
    Tokenizer,
    assign_split,
    f1,
    full_attention,
    normalize_document,
    persian_ratio,
    run_command,
    sliding_window_attention,
)

__all__ = [
    "EOS",
    "PAD",
    "SOS",
    "UNK",
    "Model",
    "Tokenizer",
    "assign_split",
    "f1",
    "full_attention",
    "normalize_document",
    "persian_ratio",
    "run_command",
    "sliding_window_attention",
]

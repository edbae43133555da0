"""Offline companion to thinkgate: hidden-state extraction, probe training,
and mock-fixture dumps from a locally loaded transformer.

Data flows to the core only through files (hidden-state, weights, and
fixture formats); the core library is imported for prompt rendering and
request-key computation so both sides stay byte-compatible.
"""

from .dump import DumpJob, export_logprob_dump
from .extract import ExtractionJob, extract_hidden_states, think_close_token_index
from .model import CharTokenizer, ModelHandle, load_model, tiny_char_model
from .train import ProbeTrainConfig, TrainResult, export_weights, load_labels, train_probe

__version__ = "0.1.0"

__all__ = [
    "CharTokenizer",
    "DumpJob",
    "ExtractionJob",
    "ModelHandle",
    "ProbeTrainConfig",
    "TrainResult",
    "export_logprob_dump",
    "export_weights",
    "extract_hidden_states",
    "load_labels",
    "load_model",
    "think_close_token_index",
    "tiny_char_model",
    "train_probe",
]

"""Contrastive pose/text embeddings for sign language, in plain numpy."""
from .errors import DegenerateInputError, FormatError, TruncatedFileError, ValidationError
from .layout import KeypointLayout, holistic_layout, resolve_layout
from .pose import DatasetManifest, PoseSequence, Record, load_pose, read_manifest, save_pose, write_manifest
from .text import Prompt, Vocabulary, build_prompt, build_vocab, tokenize
from .encoder import ModelConfig
from .data import Pipeline
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .augment import AugmentConfig
from .train import TrainConfig, train
from .synth import SynthConfig, generate_dataset
from .retrieval import evaluate_retrieval

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig", "Checkpoint", "DatasetManifest", "DegenerateInputError", "FormatError", "KeypointLayout",
    "ModelConfig", "Pipeline", "PoseSequence", "Prompt", "Record", "SynthConfig", "TrainConfig",
    "TruncatedFileError", "ValidationError", "Vocabulary", "build_prompt", "build_vocab", "evaluate_retrieval",
    "generate_dataset", "holistic_layout", "load_checkpoint", "load_pose", "read_manifest", "resolve_layout",
    "save_checkpoint", "save_pose", "tokenize", "train", "write_manifest",
]

from .checkpoint import load_checkpoint, save_checkpoint
from .decoding import GeneratedChapter, generate_beam, greedy_decode
from .network import (
    Batch,
    FusionModel,
    FusionWeights,
    ModelConfig,
    PassageEncoding,
    QueryEncoding,
    build_model,
    collate,
    encode_passage,
    encode_query,
    fuse_and_decode,
    fusion_weights,
)
from .training import AdamWState, compute_loss, grad_check, loss_and_grads, train_step
from .vocab import EncodedExample, Vocab, build_vocab, encode_example, format_input

__all__ = [
    "AdamWState", "Batch", "EncodedExample", "FusionModel", "FusionWeights", "GeneratedChapter",
    "ModelConfig", "PassageEncoding", "QueryEncoding", "Vocab", "build_model", "build_vocab",
    "collate", "compute_loss", "encode_example", "encode_passage", "encode_query", "format_input",
    "fuse_and_decode", "fusion_weights", "generate_beam", "grad_check", "greedy_decode",
    "load_checkpoint", "loss_and_grads", "save_checkpoint", "train_step",
]

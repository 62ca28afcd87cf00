"""Synthetic data: the query-salience summarization set and fixture file locations.

In the salience set every cited abstract has a generic first sentence and
a second "finding" sentence that opens with the paper's topic. The chapter
title names one topic, and the target is the finding sentence of the
paper on that topic, copied verbatim. Leading sentences never carry the
answer, so LEAD-1 scores near zero while a model that matches passages to
the query can copy the right sentence.
"""

from __future__ import annotations

import random
from importlib import resources
from pathlib import Path

from .corpus import ChapterExample, bib_tag

FIELDS = ("robotics", "vision", "speech", "databases", "networks", "security",
          "graphics", "compilers", "theory", "retrieval")
TOPICS = ("parsing", "tracking", "hashing", "routing", "caching", "indexing", "sampling",
          "pruning", "clustering", "ranking", "matching", "labeling", "mapping", "scheduling",
          "sorting", "tagging", "coding", "filtering", "planning", "probing", "testing",
          "mining", "summarizing", "translating", "segmenting", "grounding", "rendering",
          "verifying", "compressing", "aligning")
METHODS = ("transformer", "lstm", "cnn", "gan", "svm", "crf", "hmm", "bert", "resnet", "unet",
           "vae", "gnn", "mlp", "rnn", "knn", "lda", "pca", "ica", "dqn", "ppo",
           "xgboost", "forest", "boosting", "bandit", "kernel", "autoencoder", "capsule",
           "attention", "memory", "pointer", "ladder", "siamese", "triplet", "contrastive",
           "diffusion", "flow", "energy", "spline", "wavelet", "fourier")
METRICS = ("accuracy", "recall", "precision", "latency", "throughput", "bleu", "rouge",
           "perplexity", "auc", "mae", "rmse", "coverage", "fidelity", "robustness",
           "efficiency", "sparsity", "stability", "calibration", "fairness", "privacy")
DATASETS = ("imagenet", "coco", "squad", "mnist", "cifar", "wikitext", "librispeech", "kitti",
            "pubmed", "arxiv", "reddit", "twitter", "yelp", "imdb", "conll", "ontonotes",
            "movielens", "netflix", "criteo", "avazu", "shapenet", "scannet", "nuscenes",
            "waymo", "voxceleb", "timit", "switchboard", "europarl", "wmt", "opus",
            "openwebtext", "pile", "c4", "laion", "cc3m", "vqa", "gqa", "clevr", "hotpotqa", "triviaqa")
FILLERS = ("novel", "simple", "general", "unified", "scalable", "efficient", "robust", "practical",
           "large", "small", "deep", "shallow", "sparse", "dense", "fast", "slow", "modern",
           "classic", "formal", "empirical", "adaptive", "static", "dynamic", "online", "offline",
           "local", "global", "hybrid", "modular", "neural", "symbolic", "statistical",
           "parallel", "distributed", "incremental", "iterative", "recursive", "hierarchical",
           "probabilistic", "deterministic")


def _finding(topic: str, rng: random.Random) -> str:
    return (f"{topic.capitalize()} {rng.choice(METHODS)} improves "
            f"{rng.choice(METRICS)} on {rng.choice(DATASETS)}.")


def salience_example(rng: random.Random, n_min: int = 3, n_max: int = 5) -> ChapterExample:
    field = rng.choice(FIELDS)
    n = rng.randint(n_min, n_max)
    topics = rng.sample(TOPICS, n)
    key = topics[0]
    rng.shuffle(topics)
    abstracts, target = [], ""
    for t in topics:
        lead = f"This paper studies {rng.choice(FILLERS)} {rng.choice(FILLERS)} systems."
        finding = _finding(t, rng)
        abstracts.append(f"{lead} {finding}")
        if t == key:
            target = finding
    return ChapterExample(
        review_title=f"A survey of {field}",
        chapter_title=f"{key} approaches",
        inputs=tuple((bib_tag(i + 1), a) for i, a in enumerate(abstracts)),
        target=target,
        source_review_id=f"synthetic-{field}",
    )


def salience_dataset(n_examples: int, seed: int = 0) -> list[ChapterExample]:
    rng = random.Random(seed)
    return [salience_example(rng) for _ in range(n_examples)]


def fixture_path(name: str) -> Path:
    """Path of a file shipped in ``litreview/data``."""
    return Path(str(resources.files("litreview") / "data" / name))

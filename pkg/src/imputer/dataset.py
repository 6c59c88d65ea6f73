"""
Examples, synthetic task generation and the line-delimited dataset format.

Each dataset line is a JSON object:
    {"id": str, "features": [[float, ...], ...], "labels": [int, ...],
     "expert_alignment": [int, ...] | null, "modes": [[int, ...], [int, ...]] | null}
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal

import numpy as np

from imputer.core_types import Alignment, LabelSeq, Vocab, collapse
from imputer.errors import ConfigurationError, InvalidInput
from imputer.model import FeatureSeq
from imputer.utils import read_jsonl, write_jsonl

Task = Literal["unimodal", "multimodal"]


@dataclass(frozen=True)
class Example:
    id: str
    features: FeatureSeq
    labels: LabelSeq
    expert_alignment: Alignment | None = None
    modes: tuple[LabelSeq, LabelSeq] | None = None

    def __post_init__(self):
        if not self.id:
            raise InvalidInput("Example id must not be empty")
        if self.expert_alignment is not None:
            # Strided encoders align to fewer slots than there are frames
            if len(self.expert_alignment) > self.features.T:
                raise InvalidInput(
                    f"Example {self.id}: expert alignment has {len(self.expert_alignment)} "
                    f"slots for {self.features.T} frames"
                )
            if collapse(self.expert_alignment).ids != self.labels.ids:
                raise InvalidInput(
                    f"Example {self.id}: expert alignment does not collapse to labels"
                )

    @property
    def feasible(self) -> bool:
        return len(self.labels) <= self.features.T

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "features": self.features.frames.tolist(),
            "labels": list(self.labels.ids),
            "expert_alignment": None
            if self.expert_alignment is None
            else list(self.expert_alignment.ids),
            "modes": None if self.modes is None else [list(m.ids) for m in self.modes],
        }

    @classmethod
    def from_record(cls, record: dict, vocab: Vocab) -> "Example":
        try:
            expert = record.get("expert_alignment")
            modes = record.get("modes")
            return cls(
                id=str(record["id"]),
                features=FeatureSeq(np.asarray(record["features"], dtype=np.float64)),
                labels=LabelSeq(tuple(record["labels"]), vocab),
                expert_alignment=None if expert is None else Alignment(tuple(expert), vocab),
                modes=None if modes is None else tuple(LabelSeq(tuple(m), vocab) for m in modes),
            )
        except KeyError as err:
            raise InvalidInput(f"Dataset record is missing field {err.args[0]}") from None


@dataclass(frozen=True)
class SyntheticSpec:
    num_examples: int = 2000
    vocab_size: int = 4
    min_length: int = 4
    max_length: int = 8
    min_frames_per_token: int = 1
    max_frames_per_token: int = 3
    feature_dim: int = 16
    noise: float = 0.1

    def __post_init__(self):
        if self.num_examples < 0:
            raise ConfigurationError(f"num_examples must be nonnegative, got {self.num_examples}")
        if self.vocab_size < 1 or self.feature_dim < 1:
            raise ConfigurationError("vocab_size and feature_dim must be positive")
        if not 0 <= self.min_length <= self.max_length:
            raise ConfigurationError(
                f"Invalid label length range [{self.min_length}, {self.max_length}]"
            )
        if not 1 <= self.min_frames_per_token <= self.max_frames_per_token:
            raise ConfigurationError(
                f"Invalid frames-per-token range "
                f"[{self.min_frames_per_token}, {self.max_frames_per_token}]"
            )
        if self.noise < 0:
            raise ConfigurationError(f"noise must be nonnegative, got {self.noise}")

    @property
    def vocab(self) -> Vocab:
        return Vocab.of_size(self.vocab_size)


def relabelings(vocab_size: int) -> tuple[dict[int, int], dict[int, int]]:
    """The two label maps of the multimodal task: identity and cyclic successor"""
    identity = {v: v for v in range(1, vocab_size + 1)}
    successor = {v: v % vocab_size + 1 for v in range(1, vocab_size + 1)}
    return identity, successor


def symbol_embeddings(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, 1.0, size=(spec.vocab_size + 1, spec.feature_dim))


def _sample_alignment(tokens: np.ndarray, spec: SyntheticSpec, rng, vocab: Vocab) -> Alignment:
    """Give each token a run of frames and place it at a random slot of its run"""
    ids = []
    for token in tokens:
        frames = int(rng.integers(spec.min_frames_per_token, spec.max_frames_per_token + 1))
        run = [vocab.blank_id] * frames
        run[int(rng.integers(frames))] = int(token)
        ids.extend(run)
    if not ids:
        ids = [vocab.blank_id] * int(rng.integers(1, spec.max_frames_per_token + 1))
    return Alignment(tuple(ids), vocab)


def _features(alignment: Alignment, embeddings: np.ndarray, noise: float, rng) -> FeatureSeq:
    frames = embeddings[np.asarray(alignment.ids)]
    if noise > 0:
        frames = frames + rng.normal(0.0, noise, size=frames.shape)
    return FeatureSeq(frames)


def gen_synthetic(task: Task, spec: SyntheticSpec, rng: np.random.Generator) -> list[Example]:
    if task not in ("unimodal", "multimodal"):
        raise ConfigurationError(f"Unknown synthetic task: {task}")
    vocab = spec.vocab
    embeddings = symbol_embeddings(spec, rng)
    f1, f2 = relabelings(spec.vocab_size)

    examples = []
    for index in range(spec.num_examples):
        length = int(rng.integers(spec.min_length, spec.max_length + 1))
        latent = rng.integers(1, spec.vocab_size + 1, size=length)
        latent_alignment = _sample_alignment(latent, spec, rng, vocab)
        features = _features(latent_alignment, embeddings, spec.noise, rng)

        if task == "unimodal":
            examples.append(
                Example(
                    id=f"{task}-{index:06d}",
                    features=features,
                    labels=collapse(latent_alignment),
                    expert_alignment=latent_alignment,
                )
            )
            continue

        modes = tuple(
            LabelSeq(tuple(f[int(z)] for z in latent), vocab) for f in (f1, f2)
        )
        chosen = f1 if rng.random() < 0.5 else f2
        alignment = Alignment(
            tuple(chosen.get(s, s) for s in latent_alignment.ids), vocab
        )
        examples.append(
            Example(
                id=f"{task}-{index:06d}",
                features=features,
                labels=collapse(alignment),
                expert_alignment=alignment,
                modes=modes,
            )
        )

    logging.info(f"Generated {len(examples)} {task} examples")
    return examples


def write_dataset(path: Path, examples: Iterable[Example]) -> int:
    return write_jsonl(path, (example.to_record() for example in examples))


def read_dataset(path: Path, vocab: Vocab) -> list[Example]:
    examples = [Example.from_record(record, vocab) for record in read_jsonl(path)]
    ids = [example.id for example in examples]
    if len(set(ids)) != len(ids):
        raise InvalidInput(f"Dataset {path} contains duplicate example ids")
    return examples

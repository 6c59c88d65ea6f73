"""
Vocabulary, label sequences, alignments and partial alignments.

Symbol ids are small non-negative integers: blank is 0, vocabulary tokens are
1..k and the mask id is k + 1, so ids below the mask index lattice columns
directly.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

from imputer.errors import InvalidInput

BLANK_ID = 0


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[int, ...]
    blank_id: int = BLANK_ID
    mask_id: int | None = None

    def __post_init__(self):
        tokens = tuple(int(t) for t in self.tokens)
        object.__setattr__(self, "tokens", tokens)
        if self.mask_id is None:
            object.__setattr__(self, "mask_id", len(tokens) + 1)
        if not tokens:
            raise InvalidInput("Vocab must contain at least one token")
        if len(set(tokens)) != len(tokens):
            raise InvalidInput(f"Vocab tokens must be distinct: {tokens}")
        if self.blank_id in tokens:
            raise InvalidInput(f"blank_id {self.blank_id} clashes with a token")
        if self.mask_id in tokens or self.mask_id == self.blank_id:
            raise InvalidInput(f"mask_id {self.mask_id} clashes with V+")
        # Lattice columns are indexed by symbol id
        if set(tokens) | {self.blank_id} != set(range(len(tokens) + 1)):
            raise InvalidInput("Vocab ids (tokens and blank) must be exactly 0..|V+|-1")

    @classmethod
    def of_size(cls, k: int) -> "Vocab":
        if k < 1:
            raise InvalidInput(f"Vocabulary size must be positive, got {k}")
        return cls(tokens=tuple(range(1, k + 1)), blank_id=BLANK_ID, mask_id=k + 1)

    @property
    def size(self) -> int:
        """|V+|, the number of lattice columns"""
        return len(self.tokens) + 1

    def is_token(self, symbol: int) -> bool:
        return symbol in self._token_set

    @cached_property
    def _token_set(self) -> frozenset[int]:
        return frozenset(self.tokens)


def _as_ids(ids: Iterable[int]) -> tuple[int, ...]:
    return tuple(int(i) for i in ids)


@dataclass(frozen=True)
class LabelSeq:
    ids: tuple[int, ...]
    vocab: Vocab

    def __post_init__(self):
        object.__setattr__(self, "ids", _as_ids(self.ids))
        for symbol in self.ids:
            if not self.vocab.is_token(symbol):
                raise InvalidInput(f"Label sequence contains non-token id {symbol}")

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)

    def __getitem__(self, index):
        return self.ids[index]


@dataclass(frozen=True)
class Alignment:
    ids: tuple[int, ...]
    vocab: Vocab

    def __post_init__(self):
        object.__setattr__(self, "ids", _as_ids(self.ids))
        for symbol in self.ids:
            if symbol == self.vocab.mask_id:
                raise InvalidInput("Alignment cannot contain the mask token")
            if symbol != self.vocab.blank_id and not self.vocab.is_token(symbol):
                raise InvalidInput(f"Alignment contains unknown id {symbol}")

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)

    def __getitem__(self, index):
        return self.ids[index]


@dataclass(frozen=True)
class PartialAlignment:
    ids: tuple[int, ...]
    vocab: Vocab

    def __post_init__(self):
        object.__setattr__(self, "ids", _as_ids(self.ids))
        for symbol in self.ids:
            if (
                symbol not in (self.vocab.blank_id, self.vocab.mask_id)
                and not self.vocab.is_token(symbol)
            ):
                raise InvalidInput(f"Partial alignment contains unknown id {symbol}")

    @classmethod
    def all_masks(cls, length: int, vocab: Vocab) -> "PartialAlignment":
        return cls((vocab.mask_id,) * length, vocab)

    @classmethod
    def from_alignment(cls, a: Alignment) -> "PartialAlignment":
        return cls(a.ids, a.vocab)

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)

    def __getitem__(self, index):
        return self.ids[index]

    def is_masked(self, slot: int) -> bool:
        return self.ids[slot] == self.vocab.mask_id

    @property
    def masked_slots(self) -> list[int]:
        return [t for t, symbol in enumerate(self.ids) if symbol == self.vocab.mask_id]

    @property
    def mask_count(self) -> int:
        return sum(1 for symbol in self.ids if symbol == self.vocab.mask_id)

    def commit(self, assignments: dict[int, int]) -> "PartialAlignment":
        """Fill masked slots with symbols; committed slots are never overwritten"""
        ids = list(self.ids)
        for slot, symbol in assignments.items():
            if ids[slot] != self.vocab.mask_id:
                raise InvalidInput(f"Slot {slot} is already committed")
            if symbol == self.vocab.mask_id:
                raise InvalidInput("Cannot commit the mask token")
            ids[slot] = symbol
        return PartialAlignment(tuple(ids), self.vocab)

    def to_alignment(self) -> Alignment:
        if self.mask_count:
            raise InvalidInput(f"{self.mask_count} slots are still masked")
        return Alignment(self.ids, self.vocab)


@dataclass(frozen=True)
class BlockSpec:
    block_size: int
    length: int

    def __post_init__(self):
        if self.block_size < 1:
            raise InvalidInput(f"Block size must be positive, got {self.block_size}")
        if self.length < 0:
            raise InvalidInput(f"Length must be nonnegative, got {self.length}")

    @property
    def boundaries(self) -> list[range]:
        return [
            range(start, min(start + self.block_size, self.length))
            for start in range(0, self.length, self.block_size)
        ]


def collapse(a: Alignment | Sequence[int], vocab: Vocab = None) -> LabelSeq:
    """Remove blanks; adjacent repeats are kept"""
    if not isinstance(a, Alignment):
        if vocab is None:
            raise InvalidInput("A vocab is required to collapse raw ids")
        ids = _as_ids(a)
        if vocab.mask_id in ids:
            raise InvalidInput("Cannot collapse a sequence containing mask tokens")
        a = Alignment(ids, vocab)
    return LabelSeq(
        tuple(symbol for symbol in a.ids if symbol != a.vocab.blank_id), a.vocab
    )


def is_valid_alignment(a: Alignment, y: LabelSeq) -> bool:
    return len(a) >= len(y) and collapse(a).ids == y.ids


def is_compatible(partial: PartialAlignment, a: Alignment) -> bool:
    if len(partial) != len(a):
        raise InvalidInput(
            f"Length mismatch: partial alignment has {len(partial)} slots, alignment has {len(a)}"
        )
    mask_id = partial.vocab.mask_id
    return all(p == mask_id or p == s for p, s in zip(partial.ids, a.ids))

"""
Exact log-space dynamic programs over the alignment lattice.

Lattice states are (slots processed, target tokens consumed). Since collapse
only removes blanks, a slot either emits blank and stays on the same state or
emits the next target token and advances by one. Forced emission is handled by
hiding the symbols a partial alignment forbids at each slot (their
log-probability becomes -inf) and then running the ordinary recurrence.
"""

import logging
from dataclasses import dataclass
from math import comb

import numpy as np

from imputer.core_types import (
    Alignment,
    LabelSeq,
    PartialAlignment,
    Vocab,
    collapse,
    is_compatible,
)
from imputer.errors import Infeasible, InvalidInput

NEG_INF = -np.inf
NORMALIZATION_TOLERANCE = 1e-6


def logsumexp(values, axis=None):
    """log(sum(exp(values))) with max subtraction; empty or all -inf gives -inf"""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        if axis is None:
            return NEG_INF
        return np.full(np.delete(x.shape, axis), NEG_INF)
    x_max = np.max(x, axis=axis, keepdims=True)
    safe_max = np.where(np.isfinite(x_max), x_max, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - safe_max), axis=axis, keepdims=True)) + safe_max
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


class LogProbLattice:
    """T x |V+| table of per-slot log-probabilities"""

    def __init__(self, values, check: bool = True):
        values = np.array(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 2:
            raise InvalidInput(f"Lattice must be a T x V table, got shape {values.shape}")
        if np.isnan(values).any() or np.isposinf(values).any():
            raise InvalidInput("Lattice contains NaN or +inf")
        if check:
            row_mass = logsumexp(values, axis=1)
            worst = float(np.max(np.abs(row_mass)))
            if worst > NORMALIZATION_TOLERANCE:
                raise InvalidInput(
                    f"Lattice rows are not normalized (max |logsumexp| = {worst:.3g})"
                )
        values.setflags(write=False)
        self.values = values

    @classmethod
    def from_scores(cls, scores) -> "LogProbLattice":
        scores = np.asarray(scores, dtype=np.float64)
        return cls(scores - logsumexp(scores, axis=1)[:, None])

    @classmethod
    def uniform(cls, T: int, V: int) -> "LogProbLattice":
        return cls(np.full((T, V), -np.log(V)))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def V(self) -> int:
        return self.values.shape[1]

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.values)

    def path_score(self, ids) -> float:
        ids = np.asarray(tuple(ids), dtype=np.int64)
        return float(np.sum(self.values[np.arange(self.T), ids]))

    def __repr__(self):
        return f"{self.__class__.__name__}(T={self.T}, V={self.V})"


@dataclass(frozen=True)
class DpLattice:
    """Forward and backward tables, shape (T+1) x (m+1), in log space"""

    alpha: np.ndarray
    beta: np.ndarray

    @property
    def log_likelihood(self) -> float:
        return float(self.alpha[-1, -1])


@dataclass(frozen=True)
class DpPosteriors:
    """gamma[t, v]: posterior probability that slot t emits v"""

    gamma: np.ndarray


def _check_vocab(L: LogProbLattice, vocab: Vocab):
    if L.V != vocab.size:
        raise InvalidInput(f"Lattice has {L.V} columns but |V+| = {vocab.size}")


def _labels_array(y: LabelSeq) -> np.ndarray:
    return np.asarray(y.ids, dtype=np.int64)


def _forbid(L: LogProbLattice, partial: PartialAlignment) -> np.ndarray:
    """Lattice values with every symbol that a pinned slot forbids set to -inf"""
    values = L.values.copy()
    mask_id = partial.vocab.mask_id
    for t, symbol in enumerate(partial.ids):
        if symbol != mask_id:
            keep = values[t, symbol]
            values[t, :] = NEG_INF
            values[t, symbol] = keep
    return values


def _alpha(values: np.ndarray, labels: np.ndarray, blank_id: int) -> np.ndarray:
    T, m = values.shape[0], len(labels)
    alpha = np.full((T + 1, m + 1), NEG_INF)
    alpha[0, 0] = 0.0
    for t in range(T):
        stay = alpha[t] + values[t, blank_id]
        advance = np.full(m + 1, NEG_INF)
        advance[1:] = alpha[t, :-1] + values[t, labels]
        alpha[t + 1] = logsumexp(np.stack([stay, advance]), axis=0)
    return alpha


def _beta(values: np.ndarray, labels: np.ndarray, blank_id: int) -> np.ndarray:
    T, m = values.shape[0], len(labels)
    beta = np.full((T + 1, m + 1), NEG_INF)
    beta[T, m] = 0.0
    for t in range(T - 1, -1, -1):
        stay = beta[t + 1] + values[t, blank_id]
        advance = np.full(m + 1, NEG_INF)
        advance[:-1] = beta[t + 1, 1:] + values[t, labels]
        beta[t] = logsumexp(np.stack([stay, advance]), axis=0)
    return beta


def _require_feasible(T: int, y: LabelSeq):
    if len(y) > T:
        raise Infeasible(f"Label sequence of length {len(y)} cannot align to {T} slots")


def _require_compatible(partial: PartialAlignment, a: Alignment, T: int):
    if len(partial) != T or len(a) != T:
        raise InvalidInput(
            f"Lattice has {T} slots but partial alignment has {len(partial)} and alignment {len(a)}"
        )
    if not is_compatible(partial, a):
        raise Infeasible("Partial alignment is incompatible with the alignment")


def ctc_lattice(L: LogProbLattice, y: LabelSeq) -> DpLattice:
    _check_vocab(L, y.vocab)
    _require_feasible(L.T, y)
    labels = _labels_array(y)
    blank_id = y.vocab.blank_id
    return DpLattice(
        alpha=_alpha(L.values, labels, blank_id), beta=_beta(L.values, labels, blank_id)
    )


def ctc_forward(L: LogProbLattice, y: LabelSeq) -> float:
    """log p(y) summed over every alignment of y to the lattice's slots"""
    _check_vocab(L, y.vocab)
    _require_feasible(L.T, y)
    alpha = _alpha(L.values, _labels_array(y), y.vocab.blank_id)
    return float(alpha[L.T, len(y)])


def ctc_backward(L: LogProbLattice, y: LabelSeq) -> np.ndarray:
    _check_vocab(L, y.vocab)
    _require_feasible(L.T, y)
    return _beta(L.values, _labels_array(y), y.vocab.blank_id)


def _viterbi(values: np.ndarray, y: LabelSeq) -> Alignment:
    vocab = y.vocab
    labels = _labels_array(y)
    T, m = values.shape[0], len(labels)
    delta = np.full((T + 1, m + 1), NEG_INF)
    delta[0, 0] = 0.0
    for t in range(T):
        stay = delta[t] + values[t, vocab.blank_id]
        advance = np.full(m + 1, NEG_INF)
        advance[1:] = delta[t, :-1] + values[t, labels]
        delta[t + 1] = np.maximum(stay, advance)
    if not np.isfinite(delta[T, m]):
        raise Infeasible("No alignment reaches the final lattice state")

    # Backtrace takes the advance edge whenever it ties the stay edge, so
    # among equally good alignments tokens are emitted as late as possible
    ids = [vocab.blank_id] * T
    j = m
    for t in range(T - 1, -1, -1):
        if j > 0:
            advance_score = delta[t, j - 1] + values[t, labels[j - 1]]
            stay_score = delta[t, j] + values[t, vocab.blank_id]
            if advance_score >= stay_score and np.isfinite(advance_score):
                ids[t] = int(labels[j - 1])
                j -= 1
    return Alignment(tuple(ids), vocab)


def ctc_viterbi(L: LogProbLattice, y: LabelSeq) -> Alignment:
    """Highest-scoring alignment of y"""
    _check_vocab(L, y.vocab)
    _require_feasible(L.T, y)
    return _viterbi(L.values, y)


def constrained_viterbi(
    L: LogProbLattice, partial: PartialAlignment, a: Alignment
) -> Alignment:
    """Highest-scoring alignment compatible with the partial alignment"""
    _check_vocab(L, a.vocab)
    _require_compatible(partial, a, L.T)
    return _viterbi(_forbid(L, partial), collapse(a))


def constrained_forward(
    L: LogProbLattice, partial: PartialAlignment, a: Alignment
) -> float:
    """log of the total probability of alignments that agree with the partial alignment"""
    _check_vocab(L, a.vocab)
    _require_compatible(partial, a, L.T)
    y = collapse(a)
    alpha = _alpha(_forbid(L, partial), _labels_array(y), y.vocab.blank_id)
    total = float(alpha[L.T, len(y)])
    if not np.isfinite(total):
        raise Infeasible("Forced emissions leave the final lattice state unreachable")
    return total


def count_compatible(partial: PartialAlignment, a: Alignment) -> int:
    """Number of alignments compatible with the partial alignment

    Counts the paths of the forced-emission lattice in exact integers: the
    forward recurrence with addition in place of logsumexp, where a pinned slot
    admits only its own symbol. Tokens may cross pinned blanks, and a pinned
    token may be matched by any equal label, so runs are not independent.
    """
    if not is_compatible(partial, a):
        raise InvalidInput("Partial alignment is incompatible with the alignment")
    vocab = partial.vocab
    labels = collapse(a).ids
    m = len(labels)
    paths = [1] + [0] * m
    for pinned in partial.ids:
        free = pinned == vocab.mask_id
        stay = free or pinned == vocab.blank_id
        step = [paths[j] if stay else 0 for j in range(m + 1)]
        for j in range(1, m + 1):
            if free or pinned == labels[j - 1]:
                step[j] += paths[j - 1]
        paths = step
    return paths[m]


def repetition_constant(partial: PartialAlignment, a: Alignment) -> int:
    """Product over maximal masked runs of C(run slots, tokens of a in the run)

    Counts the compatible alignments that keep every token inside the run where
    a places it, so it never exceeds count_compatible and equals it when no
    token can move across a pinned slot.
    """
    if not is_compatible(partial, a):
        raise InvalidInput("Partial alignment is incompatible with the alignment")
    mask_id, blank_id = partial.vocab.mask_id, partial.vocab.blank_id
    count = 1
    run_slots = run_tokens = 0
    for p, s in zip(partial.ids + (None,), a.ids + (None,)):
        if p == mask_id:
            run_slots += 1
            run_tokens += s != blank_id
        elif run_slots:
            count *= comb(run_slots, run_tokens)
            run_slots = run_tokens = 0
    return count


def _forward_backward(values: np.ndarray, y: LabelSeq) -> tuple[float, DpPosteriors]:
    vocab = y.vocab
    labels = _labels_array(y)
    alpha = _alpha(values, labels, vocab.blank_id)
    beta = _beta(values, labels, vocab.blank_id)
    T, m = values.shape[0], len(labels)
    log_likelihood = float(alpha[T, m])
    if not np.isfinite(log_likelihood):
        raise Infeasible("Forced emissions leave the final lattice state unreachable")

    gamma = np.zeros(values.shape)
    with np.errstate(under="ignore"):
        for t in range(T):
            stay = alpha[t] + values[t, vocab.blank_id] + beta[t + 1]
            gamma[t, vocab.blank_id] = np.exp(logsumexp(stay) - log_likelihood)
            if m:
                advance = alpha[t, :-1] + values[t, labels] + beta[t + 1, 1:]
                np.add.at(gamma[t], labels, np.exp(advance - log_likelihood))

    drift = float(np.max(np.abs(gamma.sum(axis=1) - 1.0)))
    if drift > NORMALIZATION_TOLERANCE:
        logging.warning(f"Posterior rows drift from 1 by {drift:.3g}")
    return log_likelihood, DpPosteriors(gamma=gamma)


def ctc_forward_backward(L: LogProbLattice, y: LabelSeq) -> tuple[float, DpPosteriors]:
    _check_vocab(L, y.vocab)
    _require_feasible(L.T, y)
    return _forward_backward(L.values, y)


def forward_backward(
    L: LogProbLattice, partial: PartialAlignment, a: Alignment
) -> tuple[float, DpPosteriors]:
    """Constrained log-likelihood and the per-slot posteriors of compatible alignments"""
    _check_vocab(L, a.vocab)
    _require_compatible(partial, a, L.T)
    return _forward_backward(_forbid(L, partial), collapse(a))


def lattice_gradient(L: LogProbLattice, posteriors: DpPosteriors) -> np.ndarray:
    """d(-log-likelihood)/d(pre-softmax scores): p - gamma"""
    return L.probs - posteriors.gamma

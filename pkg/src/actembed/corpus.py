"""Corpus handling for discrete activity time-series.

Loads subject-week sequences of integer activity counts, builds the symbol
vocabulary (with an UNK entry for missing epochs), derives the unigram noise
distribution for negative sampling, and partitions every sequence into
equal-length segments with neighbor structure at a chosen time granularity.

All structures here are immutable once built and safe for concurrent readers.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

# Classification tasks and their class counts.
TASKS = {"apnea": 2, "diabetes": 3, "hypertension": 2, "insomnia": 3}

# Samples per segment at each granularity (30-second epochs).
GRANULARITIES = ("sample", "hour", "day", "week")
SEGMENT_LENGTH = {"sample": 1, "hour": 120, "day": 2880, "week": 20160}

# Internal sentinel for a missing epoch (JSON null on disk).
MISSING = -1

DEFAULT_SEQUENCE_LENGTH = 20160  # one week of 30-second epochs


class CorpusError(ValueError):
    """Malformed or inconsistent corpus input."""


@dataclass(frozen=True)
class ActivitySequence:
    """One subject-week of activity counts plus optional task labels.

    ``samples`` is an int64 array; ``MISSING`` marks epochs without a reading.
    """

    subject_id: str
    samples: np.ndarray
    labels: dict[str, int] = field(default_factory=dict)


def _validate_labels(labels: dict, where: str) -> dict[str, int]:
    out = {}
    for task, value in labels.items():
        if task not in TASKS:
            raise CorpusError(f"{where}: unknown task {task!r}")
        if isinstance(value, bool) or not isinstance(value, int):
            raise CorpusError(f"{where}: label for {task!r} is not an integer")
        if not 0 <= value < TASKS[task]:
            raise CorpusError(
                f"{where}: label {value} for {task!r} outside 0..{TASKS[task] - 1}"
            )
        out[task] = value
    return out


class Corpus:
    """An ordered collection of equal-length activity sequences."""

    def __init__(self, sequences: list[ActivitySequence]):
        sequences = list(sequences)
        if not sequences:
            raise CorpusError("empty corpus")
        length = len(sequences[0].samples)
        roster: list[str] = []
        roster_pos: dict[str, int] = {}
        subject_labels: dict[str, dict[str, int]] = {}
        subject_index = np.empty(len(sequences), dtype=np.int64)
        for i, seq in enumerate(sequences):
            if len(seq.samples) != length:
                raise CorpusError(
                    f"sequence {i} has length {len(seq.samples)}, expected {length}"
                )
            if seq.samples.min(initial=0) < MISSING:
                raise CorpusError(f"sequence {i}: negative sample value")
            _validate_labels(seq.labels, f"sequence {i}")
            if seq.subject_id not in roster_pos:
                roster_pos[seq.subject_id] = len(roster)
                roster.append(seq.subject_id)
            subject_index[i] = roster_pos[seq.subject_id]
            known = subject_labels.setdefault(seq.subject_id, {})
            for task, value in seq.labels.items():
                if known.get(task, value) != value:
                    raise CorpusError(
                        f"subject {seq.subject_id!r} has conflicting {task!r} labels"
                    )
                known[task] = value
        self.sequences = sequences
        self.length = length
        self.subjects = roster
        self.subject_index = subject_index
        self._subject_labels = subject_labels

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    def labels_of_subject(self, subject_id: str) -> dict[str, int]:
        """Union of task labels across the subject's sequences."""
        return dict(self._subject_labels.get(subject_id, {}))


def load_corpus(path) -> Corpus:
    """Read a corpus from a UTF-8 JSON Lines file.

    Each line is ``{"subject": str, "series": [int|null, ...],
    "labels": {task: int, ...}}`` with labels optional. Line order defines
    sequence index. Raises :class:`CorpusError` naming the offending line.
    """
    sequences = []
    expected_length = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise CorpusError(f"line {lineno}: record is not an object")
            subject = record.get("subject")
            if not isinstance(subject, str) or not subject:
                raise CorpusError(f"line {lineno}: missing or invalid 'subject'")
            series = record.get("series")
            if not isinstance(series, list) or not series:
                raise CorpusError(f"line {lineno}: missing or invalid 'series'")
            samples = np.empty(len(series), dtype=np.int64)
            for j, value in enumerate(series):
                if value is None:
                    samples[j] = MISSING
                elif isinstance(value, bool) or not isinstance(value, int):
                    raise CorpusError(
                        f"line {lineno}: sample {j} is not an integer or null"
                    )
                elif value < 0:
                    raise CorpusError(f"line {lineno}: sample {j} is negative")
                else:
                    samples[j] = value
            if expected_length is None:
                expected_length = len(samples)
            elif len(samples) != expected_length:
                raise CorpusError(
                    f"line {lineno}: series length {len(samples)} does not match "
                    f"first record's length {expected_length}"
                )
            labels = record.get("labels", {})
            if not isinstance(labels, dict):
                raise CorpusError(f"line {lineno}: 'labels' is not an object")
            labels = _validate_labels(labels, f"line {lineno}")
            sequences.append(ActivitySequence(subject, samples, labels))
    if not sequences:
        raise CorpusError("empty corpus")
    return Corpus(sequences)


def save_corpus(corpus: Corpus, path) -> None:
    """Write a corpus in the JSON Lines format read by :func:`load_corpus`.

    Output is canonical (sorted label keys, no whitespace variation) so the
    same corpus always produces byte-identical files.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for seq in corpus.sequences:
            series = [None if v == MISSING else int(v) for v in seq.samples]
            record = {"subject": seq.subject_id, "series": series}
            if seq.labels:
                record["labels"] = {k: seq.labels[k] for k in sorted(seq.labels)}
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


@dataclass(frozen=True)
class Vocabulary:
    """Distinct observed activity values, their counts, and ordinal ranks.

    ``symbols`` is strictly ascending; index ``i`` names symbol ``symbols[i]``
    and carries ordinal rank ``i + 1``. The UNK entry lives at index
    ``len(symbols)``, counts missing epochs, and has no ordinal rank.
    """

    symbols: np.ndarray
    counts: np.ndarray
    unk_count: int = 0

    def __post_init__(self):
        if self.symbols.size == 0:
            raise CorpusError("vocabulary has no observed symbols")
        if np.any(np.diff(self.symbols) <= 0):
            raise CorpusError("vocabulary symbols must be strictly ascending")
        if np.any(self.counts <= 0):
            raise CorpusError("vocabulary counts must be positive")

    @property
    def n_symbols(self) -> int:
        """Number of non-UNK symbols (C, equal to V)."""
        return int(self.symbols.size)

    @property
    def unk_id(self) -> int:
        return int(self.symbols.size)

    @property
    def size(self) -> int:
        """Number of embedding rows: symbols plus UNK."""
        return int(self.symbols.size) + 1

    def index_of(self, value: int) -> int:
        """Exact symbol index of an in-vocabulary value."""
        i = int(np.searchsorted(self.symbols, value))
        if i >= self.symbols.size or self.symbols[i] != value:
            raise KeyError(f"value {value} not in vocabulary")
        return i

    def ordinal_rank(self, symbol_index: int) -> int:
        """Rank in 1..C of a non-UNK symbol index."""
        if not 0 <= symbol_index < self.n_symbols:
            raise ValueError(f"symbol index {symbol_index} has no ordinal rank")
        return symbol_index + 1

    def encode(self, samples: np.ndarray) -> np.ndarray:
        """Map raw sample values to symbol indices; missing maps to UNK.

        Every non-missing value must be in the vocabulary (use
        :func:`resolve_oov` for unseen values).
        """
        out = np.full(samples.shape, self.unk_id, dtype=np.int64)
        observed = samples != MISSING
        idx = np.searchsorted(self.symbols, samples[observed])
        idx = np.clip(idx, 0, self.symbols.size - 1)
        if np.any(self.symbols[idx] != samples[observed]):
            bad = samples[observed][self.symbols[idx] != samples[observed]][0]
            raise CorpusError(f"value {int(bad)} not in vocabulary")
        out[observed] = idx
        return out

    def fingerprint(self) -> str:
        """Stable hash of symbols and counts, for model/corpus pairing checks."""
        payload = json.dumps(
            {
                "symbols": self.symbols.tolist(),
                "counts": self.counts.tolist(),
                "unk_count": self.unk_count,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


def build_vocabulary(corpus: Corpus) -> Vocabulary:
    """Collect the distinct observed values and their occurrence counts."""
    pooled = np.concatenate([seq.samples for seq in corpus.sequences])
    observed = pooled[pooled != MISSING]
    if observed.size == 0:
        raise CorpusError("corpus has no observed values")
    symbols, counts = np.unique(observed, return_counts=True)
    return Vocabulary(symbols, counts, unk_count=int(pooled.size - observed.size))


def resolve_oov(value: int, vocab: Vocabulary) -> int:
    """Nearest in-vocabulary symbol index for an arbitrary value.

    Exact matches return their own index; otherwise the symbol with minimal
    absolute distance wins, ties going to the smaller value. Values beyond
    either end clamp to the boundary symbol.
    """
    if value < 0:
        raise ValueError(f"activity value must be non-negative, got {value}")
    dist = np.abs(vocab.symbols - value)
    return int(np.argmin(dist))


def oov_blend(value: int, vocab: Vocabulary) -> list[tuple[int, float]]:
    """Interpolation weights over vocabulary rows for an arbitrary value.

    In-vocabulary (or out-of-range) values map to a single row with weight 1.
    A value strictly between two adjacent symbols splits linearly between
    them, so vector callers can average the two enclosing embedding rows.
    """
    if value < 0:
        raise ValueError(f"activity value must be non-negative, got {value}")
    syms = vocab.symbols
    hi = int(np.searchsorted(syms, value))
    if hi < syms.size and syms[hi] == value:
        return [(hi, 1.0)]
    if hi == 0:
        return [(0, 1.0)]
    if hi == syms.size:
        return [(int(syms.size - 1), 1.0)]
    lo = hi - 1
    span = float(syms[hi] - syms[lo])
    w_hi = (value - float(syms[lo])) / span
    return [(lo, 1.0 - w_hi), (hi, w_hi)]


def symbol_noise_distribution(vocab: Vocabulary, exponent: float = 1.0) -> np.ndarray:
    """Unigram noise distribution over symbol indices (UNK has zero mass).

    ``exponent`` optionally flattens the distribution (count ** exponent,
    renormalized); 1.0 reproduces the raw unigram frequencies.
    """
    probs = np.zeros(vocab.size, dtype=np.float64)
    weights = vocab.counts.astype(np.float64) ** exponent
    probs[: vocab.n_symbols] = weights / weights.sum()
    return probs


@dataclass(frozen=True)
class SegmentIndex:
    """Granularity-determined partition of every sequence into segments.

    Global segment IDs are dense in ``0..G-1``, assigned sequence-major then
    by position, so segment ``k`` of sequence ``n`` has ID ``n * K + k``.
    """

    granularity: str
    segment_length: int
    segments_per_sequence: int
    n_sequences: int
    subject_of: np.ndarray
    half_width: int = 1

    @property
    def n_segments(self) -> int:
        return self.n_sequences * self.segments_per_sequence

    def global_id(self, seq_index: int, k: int) -> int:
        if not 0 <= seq_index < self.n_sequences:
            raise IndexError(f"sequence index {seq_index} out of range")
        if not 0 <= k < self.segments_per_sequence:
            raise IndexError(f"segment position {k} out of range")
        return seq_index * self.segments_per_sequence + k

    def sequence_of(self, segment_id: int) -> int:
        self._check(segment_id)
        return segment_id // self.segments_per_sequence

    def position_of(self, segment_id: int) -> int:
        self._check(segment_id)
        return segment_id % self.segments_per_sequence

    def neighbors(self, segment_id: int) -> np.ndarray:
        """Adjacent segment IDs within the same sequence (half_width per side)."""
        self._check(segment_id)
        k = segment_id % self.segments_per_sequence
        base = segment_id - k
        lo = max(0, k - self.half_width)
        hi = min(self.segments_per_sequence - 1, k + self.half_width)
        ids = np.arange(lo, hi + 1, dtype=np.int64)
        return base + ids[ids != k]

    def segment_bounds(self, segment_id: int) -> tuple[int, int, int]:
        """(sequence index, start sample, stop sample) of a segment."""
        self._check(segment_id)
        n, k = divmod(segment_id, self.segments_per_sequence)
        start = k * self.segment_length
        return n, start, start + self.segment_length

    def _check(self, segment_id: int) -> None:
        if not 0 <= segment_id < self.n_segments:
            raise IndexError(f"segment id {segment_id} out of range")


def segment(corpus: Corpus, granularity: str, half_width: int = 1) -> SegmentIndex:
    """Partition every sequence into K equal segments for a granularity."""
    if granularity not in GRANULARITIES:
        raise ValueError(f"unknown granularity {granularity!r}")
    if half_width < 1:
        raise ValueError("neighbor half_width must be >= 1")
    length = SEGMENT_LENGTH[granularity]
    if corpus.length % length != 0:
        raise CorpusError(
            f"sequence length {corpus.length} is not divisible by "
            f"segment length {length} ({granularity})"
        )
    k = corpus.length // length
    subject_of = np.repeat(corpus.subject_index, k)
    return SegmentIndex(
        granularity=granularity,
        segment_length=length,
        segments_per_sequence=k,
        n_sequences=len(corpus),
        subject_of=subject_of,
        half_width=half_width,
    )


def segment_noise_distribution(index: SegmentIndex) -> np.ndarray:
    """Uniform noise distribution over segment IDs.

    Each segment ID occurs exactly once in the corpus, so its unigram
    distribution is uniform at 1/G.
    """
    g = index.n_segments
    return np.full(g, 1.0 / g, dtype=np.float64)


def encode_corpus(corpus: Corpus, vocab: Vocabulary) -> list[np.ndarray]:
    """Symbol-index arrays for every sequence, missing epochs mapped to UNK."""
    return [vocab.encode(seq.samples) for seq in corpus.sequences]


def corpus_fingerprint(vocab: Vocabulary, subjects: list[str], n_sequences: int,
                       length: int) -> str:
    """Hash pairing a trained model with the corpus it was built from."""
    payload = json.dumps(
        {
            "vocab": vocab.fingerprint(),
            "subjects": list(subjects),
            "n_sequences": n_sequences,
            "length": length,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()

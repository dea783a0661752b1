"""Trainable parameters: the shared embedding matrix and predictor weights.

Owns initialization, lookup, subject-representation assembly, single-row
inference for unseen segments, and a bit-exact binary persistence format.
All arrays are float32; training math upcasts per-row as needed, so a
save/load round trip reproduces every matrix exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from actembed import corpus as corpus_mod
from actembed.corpus import SegmentIndex, Vocabulary, corpus_fingerprint, resolve_oov
from actembed.losses import segment_content_loss

MAGIC = b"A2V1"
FORMAT_VERSION = 1

# Embedding rows start uniform in [-0.5/d, 0.5/d]; predictor weights at zero.
INIT_SCALE = 0.5
THETA_SPAN = 2.0


class ModelFormatError(ValueError):
    """Corrupt or inconsistent model file."""


@dataclass
class ModelParams:
    """All trainable state plus the metadata needed to reuse it.

    ``phi_sym`` holds one embedding row per symbol plus UNK; ``phi_seg`` one
    row per segment ID (None at sample granularity, where a segment's vector
    IS the symbol embedding of its single sample). ``w_s``/``w_nc`` are the
    output weights for symbol and segment prediction, ``u`` the per-subject
    discriminator rows, ``w_o``/``theta`` the ordinal regression parameters.
    """

    granularity: str
    d: int
    phi_sym: np.ndarray
    phi_seg: np.ndarray | None
    w_s: np.ndarray
    w_nc: np.ndarray
    u: np.ndarray
    w_o: np.ndarray
    theta: np.ndarray
    symbols: np.ndarray
    subjects: list[str]
    vocab_hash: str
    hyperparams: dict = field(default_factory=dict)

    @property
    def n_symbols(self) -> int:
        return int(self.symbols.size)

    @property
    def n_segments(self) -> int:
        return int(self.w_nc.shape[0])

    @property
    def n_subjects(self) -> int:
        return int(self.u.shape[0])

    def check_finite(self) -> bool:
        for arr in (self.phi_sym, self.phi_seg, self.w_s, self.w_nc, self.u,
                    self.w_o, self.theta):
            if arr is not None and not np.isfinite(arr).all():
                return False
        return True


def init_params(vocab: Vocabulary, index: SegmentIndex, subjects: list[str],
                d: int = 100, seed: int = 1, hyperparams: dict | None = None,
                ) -> ModelParams:
    """Fresh parameters for a corpus: seeded embeddings, zeroed predictors.

    Embedding rows are uniform in [-0.5/d, 0.5/d]; all output weights start
    at zero; thresholds are equally spaced on [-THETA_SPAN, THETA_SPAN].
    Deterministic given the seed.
    """
    if d <= 0:
        raise ValueError("embedding dimension must be positive")
    rng = np.random.default_rng(seed)
    scale = INIT_SCALE / d
    v1 = vocab.size
    g = index.n_segments
    phi_sym = rng.uniform(-scale, scale, size=(v1, d)).astype(np.float32)
    if index.granularity == "sample":
        phi_seg = None
    else:
        phi_seg = rng.uniform(-scale, scale, size=(g, d)).astype(np.float32)
    c = vocab.n_symbols
    if c - 1 <= 0:
        theta = np.zeros(0, dtype=np.float32)
    elif c - 1 == 1:
        theta = np.zeros(1, dtype=np.float32)
    else:
        theta = np.linspace(-THETA_SPAN, THETA_SPAN, c - 1, dtype=np.float32)
    fingerprint = corpus_fingerprint(
        vocab, subjects, index.n_sequences,
        index.segments_per_sequence * index.segment_length,
    )
    return ModelParams(
        granularity=index.granularity,
        d=d,
        phi_sym=phi_sym,
        phi_seg=phi_seg,
        w_s=np.zeros((v1, d), dtype=np.float32),
        w_nc=np.zeros((g, d), dtype=np.float32),
        u=np.zeros((len(subjects), d), dtype=np.float32),
        w_o=np.zeros(d, dtype=np.float32),
        theta=theta,
        symbols=np.asarray(vocab.symbols, dtype=np.int64).copy(),
        subjects=list(subjects),
        vocab_hash=fingerprint,
        hyperparams=dict(hyperparams or {}),
    )


def lookup_symbol(params: ModelParams, symbol_id: int) -> np.ndarray:
    """Copy of one symbol embedding row."""
    if not 0 <= symbol_id < params.phi_sym.shape[0]:
        raise IndexError(f"symbol id {symbol_id} out of range")
    return params.phi_sym[symbol_id].copy()


def lookup_segment(params: ModelParams, segment_id: int,
                   encoded: list[np.ndarray] | None = None,
                   index: SegmentIndex | None = None) -> np.ndarray:
    """Copy of one segment's embedding vector.

    At sample granularity there is no segment matrix: the vector is the
    symbol embedding of the segment's single sample, so ``encoded`` and
    ``index`` are required to resolve it.
    """
    if params.phi_seg is not None:
        if not 0 <= segment_id < params.phi_seg.shape[0]:
            raise IndexError(f"segment id {segment_id} out of range")
        return params.phi_seg[segment_id].copy()
    if encoded is None or index is None:
        raise ValueError("sample granularity lookup needs encoded sequences "
                         "and a segment index")
    n, start, _ = index.segment_bounds(segment_id)
    return lookup_symbol(params, int(encoded[n][start]))


def segment_vectors(params: ModelParams, index: SegmentIndex,
                    encoded: list[np.ndarray] | None = None) -> np.ndarray:
    """Matrix of all segment vectors, shape (G, d), frozen copies."""
    if params.phi_seg is not None:
        return params.phi_seg.copy()
    if encoded is None:
        raise ValueError("sample granularity needs encoded sequences")
    ids = np.concatenate(encoded)
    return params.phi_sym[ids].copy()


def subject_representation(params: ModelParams, index: SegmentIndex,
                           seq_index: int,
                           encoded: list[np.ndarray] | None = None,
                           average: bool = False) -> np.ndarray:
    """Sequence-level vector: the K segment vectors in time order.

    Concatenation (the default) yields length K*d; ``average`` collapses to
    length d instead.
    """
    if not 0 <= seq_index < index.n_sequences:
        raise IndexError(f"unknown sequence index {seq_index}")
    k = index.segments_per_sequence
    if params.phi_seg is not None:
        rows = params.phi_seg[seq_index * k:(seq_index + 1) * k]
    else:
        if encoded is None:
            raise ValueError("sample granularity needs encoded sequences")
        rows = params.phi_sym[encoded[seq_index]]
    if average:
        return rows.mean(axis=0, dtype=np.float64).astype(np.float32)
    return rows.reshape(-1).copy()


def infer_unseen_segment(params: ModelParams, vocab: Vocabulary,
                         samples: np.ndarray, steps: int,
                         window: int | None = None, m_negatives: int = 12,
                         learning_rate: float = 0.025, seed: int = 0,
                         ) -> np.ndarray:
    """Inductive embedding for a segment the model never saw.

    Initializes a fresh row, freezes every existing parameter, and runs
    ``steps`` epochs of content-loss updates on that row alone. Out-of-range
    values resolve to the nearest in-vocabulary symbol; missing samples map
    to UNK. The model itself is never mutated.
    """
    from actembed.trainer import (GRANULARITY_WINDOW, NoiseSampler,
                                  positive_symbol_schedule)
    from actembed.corpus import MISSING, symbol_noise_distribution

    samples = np.asarray(samples)
    length = corpus_mod.SEGMENT_LENGTH[params.granularity]
    if samples.size != length:
        raise ValueError(
            f"segment length {samples.size} does not match granularity "
            f"{params.granularity!r} (expected {length})"
        )
    ids = np.empty(samples.size, dtype=np.int64)
    for j, value in enumerate(samples):
        ids[j] = vocab.unk_id if value == MISSING else resolve_oov(int(value), vocab)
    if window is None:
        window = GRANULARITY_WINDOW[params.granularity]
    window = min(window, max(1, samples.size))
    rng = np.random.default_rng(seed)
    row = rng.uniform(-INIT_SCALE / params.d, INIT_SCALE / params.d,
                      size=params.d).astype(np.float32)
    sampler = NoiseSampler(symbol_noise_distribution(vocab))
    for _ in range(steps):
        for pos in positive_symbol_schedule(samples.size, window, rng):
            target = int(ids[pos])
            negs = sampler.sample(m_negatives, (target,), rng)
            grad = segment_content_loss(row, target, negs, params.w_s)
            for slc, _, g in grad.grads:
                if slc == "anchor":
                    row -= np.float32(learning_rate) * g.astype(np.float32)
    return row


def _header_dict(params: ModelParams) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "granularity": params.granularity,
        "d": params.d,
        "V": params.n_symbols,
        "G": params.n_segments,
        "P": params.n_subjects,
        "C": params.n_symbols,
        "symbols": params.symbols.tolist(),
        "subjects": list(params.subjects),
        "vocab_hash": params.vocab_hash,
        "hyperparameters": params.hyperparams,
    }


def _payload_arrays(params: ModelParams) -> list[np.ndarray]:
    arrays = [params.phi_sym]
    if params.phi_seg is not None:
        arrays.append(params.phi_seg)
    arrays += [params.w_s, params.w_nc, params.u, params.w_o, params.theta]
    return arrays


def save_model(params: ModelParams, path) -> None:
    """Write magic, JSON header, then row-major little-endian float32 blocks."""
    header = json.dumps(_header_dict(params), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for arr in _payload_arrays(params):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_model(path) -> ModelParams:
    """Read a model file back; round-trips bit-exactly with save_model."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ModelFormatError("bad magic")
    if len(blob) < 8:
        raise ModelFormatError("truncated payload")
    (header_len,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + header_len:
        raise ModelFormatError("truncated payload")
    try:
        header = json.loads(blob[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported format version {header.get('format_version')!r}")
    gran = header["granularity"]
    d, v, g, p, c = (int(header[k]) for k in ("d", "V", "G", "P", "C"))
    symbols = np.asarray(header["symbols"], dtype=np.int64)
    if symbols.size != v or c != v:
        raise ModelFormatError("header dimensions disagree with symbol list")
    subjects = list(header["subjects"])
    if len(subjects) != p:
        raise ModelFormatError("header dimensions disagree with subject roster")
    shapes = [(v + 1, d)]
    if gran != "sample":
        shapes.append((g, d))
    shapes += [(v + 1, d), (g, d), (p, d), (d,), (max(c - 1, 0),)]
    expected = sum(int(np.prod(s)) for s in shapes) * 4
    payload = blob[8 + header_len:]
    if len(payload) < expected:
        raise ModelFormatError(
            f"truncated payload: expected {expected} bytes, found {len(payload)}")
    if len(payload) > expected:
        raise ModelFormatError(
            f"payload size mismatch: expected {expected} bytes, found {len(payload)}")
    arrays = []
    offset = 0
    for shape in shapes:
        n = int(np.prod(shape)) * 4
        arrays.append(np.frombuffer(payload, dtype="<f4", count=int(np.prod(shape)),
                                    offset=offset).reshape(shape).copy())
        offset += n
    it = iter(arrays)
    phi_sym = next(it)
    phi_seg = None if gran == "sample" else next(it)
    w_s, w_nc, u, w_o, theta = next(it), next(it), next(it), next(it), next(it)
    return ModelParams(
        granularity=gran, d=d, phi_sym=phi_sym, phi_seg=phi_seg, w_s=w_s,
        w_nc=w_nc, u=u, w_o=w_o, theta=theta, symbols=symbols,
        subjects=subjects, vocab_hash=header["vocab_hash"],
        hyperparams=dict(header.get("hyperparameters", {})),
    )

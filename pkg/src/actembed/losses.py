"""Loss components of the embedding objective, with exact analytic gradients.

Five terms act on a segment's embedding vector: a negative-sampled content
loss (the segment predicts its own symbols), a cumulative-link ordinal loss
over symbol magnitudes, a negative-sampled neighbor-context loss, a squared
l2 smoothing penalty between neighboring segment embeddings, and an
adversarial term that is the exact negation of a subject-discriminator
cross-entropy. Every function here is pure: it reads vectors or parameter
matrices and returns a value plus sparse gradients, mutating nothing.

Gradients are reported as ``(slice, row, gradient)`` entries. ``slice`` names
the parameter block from the loss's own perspective ("anchor" is the segment
vector handed in; "w" an output-weight row; "u" the whole discriminator
matrix; "theta"/"w_o" the ordinal parameters). The caller owns the mapping
from those names onto concrete model storage.

Vector arithmetic runs in the dtype of its inputs (float32 during training,
float64 in verification); scalar log/exp steps always use float64 so loss
values keep full precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Floor for probabilities before a log, so collapsed thresholds or saturated
# softmaxes yield large finite losses instead of infinities.
PROB_FLOOR = 1e-12


@dataclass
class LossGrad:
    """Scalar loss value plus the sparse gradients it induces."""

    value: float
    grads: list[tuple[str, int | None, np.ndarray]]


def sigmoid(x):
    """Numerically stable logistic function, elementwise.

    Scalars take a branch-free math path; arrays use a single exp on -|x|.
    Safe for |x| far beyond 700.
    """
    if isinstance(x, (float, int)):
        if x >= 0:
            return 1.0 / (1.0 + math.exp(-x))
        e = math.exp(x)
        return e / (1.0 + e)
    x = np.asarray(x)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0, e) / (1.0 + e)
    if out.ndim == 0:
        return float(out)
    return out


def _nce_pair_loss(segment_vec, pos_id, neg_ids, output_weights) -> LossGrad:
    """Shared form of the content and neighbor-context losses.

    value = -log s(w_pos . phi) - sum_m log s(-w_m . phi), with the standard
    sparse gradients of the negative-sampling objective. Duplicate negatives
    contribute one gradient entry each.
    """
    if len(neg_ids) < 1:
        raise ValueError("at least one negative sample is required")
    segment_vec = np.asarray(segment_vec)
    output_weights = np.asarray(output_weights)
    if (neg_ids == pos_id).any():
        raise ValueError("negative sample equals the positive; resample upstream")
    w_pos = output_weights[pos_id]
    w_neg = output_weights[neg_ids]
    s_pos = float(w_pos @ segment_vec)
    s_neg = w_neg @ segment_vec
    if s_pos >= 0:
        v_pos = math.log1p(math.exp(-s_pos))
    else:
        v_pos = -s_pos + math.log1p(math.exp(s_pos))
    value = v_pos + float(np.logaddexp(0.0, s_neg.astype(np.float64)).sum())
    coef_pos = sigmoid(s_pos) - 1.0
    coef_neg = sigmoid(s_neg)
    d_phi = coef_pos * w_pos + coef_neg @ w_neg
    grads: list[tuple[str, int | None, np.ndarray]] = [
        ("anchor", None, d_phi),
        ("w", int(pos_id), coef_pos * np.asarray(segment_vec)),
    ]
    outer = coef_neg[:, None] * np.asarray(segment_vec)[None, :]
    for i, m in enumerate(neg_ids):
        grads.append(("w", int(m), outer[i]))
    return LossGrad(value, grads)


def segment_content_loss(segment_vec, pos_symbol, neg_symbols, w_s) -> LossGrad:
    """Segment vector predicts one of its own symbols against sampled noise.

    ``w_s`` is the full symbol output-weight matrix; gradients touch only the
    positive and negative rows plus the segment vector itself.
    """
    return _nce_pair_loss(segment_vec, pos_symbol, np.asarray(neg_symbols), w_s)


def neighbor_context_loss(segment_vec, pos_segment, neg_segments, w_nc,
                          neighbor_ids, anchor_id=None) -> LossGrad:
    """Segment vector predicts an adjacent segment's ID against sampled noise.

    ``neighbor_ids`` is the anchor's neighbor list; the positive must belong
    to it. Negatives equal to the positive or to ``anchor_id`` are rejected
    (the sampler resamples them upstream).
    """
    neg_segments = np.asarray(neg_segments)
    if not (np.asarray(neighbor_ids) == pos_segment).any():
        raise ValueError(f"segment {pos_segment} is not a neighbor of the anchor")
    if anchor_id is not None and (neg_segments == anchor_id).any():
        raise ValueError("negative sample equals the anchor segment")
    return _nce_pair_loss(segment_vec, pos_segment, neg_segments, w_nc)


def ordinal_class_probs(z: float, theta: np.ndarray) -> np.ndarray:
    """Class probabilities of the cumulative-link model at score z.

    Class c in 1..C has probability s(theta_c - z) - s(theta_{c-1} - z) with
    theta_0 = -inf and theta_C = +inf.
    """
    theta = np.asarray(theta, dtype=np.float64)
    cum = np.concatenate(([0.0], sigmoid(theta - z), [1.0]))
    return np.diff(cum)


def ordinal_loss(symbol_vec, rank, w_o, theta) -> LossGrad:
    """Cumulative-link ordinal loss for a symbol of known rank.

    ``rank`` is 1-based over the C ordered non-UNK symbols; ``theta`` holds
    the C-1 interior thresholds, strictly increasing. The class probability
    is floored at ``PROB_FLOOR`` before the log so collapsed thresholds stay
    finite; gradients use the same floored denominator.
    """
    symbol_vec = np.asarray(symbol_vec)
    w_o = np.asarray(w_o)
    theta = np.asarray(theta)
    n_classes = len(theta) + 1
    if n_classes < 2:
        raise ValueError("ordinal loss needs at least 2 classes")
    if not 1 <= rank <= n_classes:
        raise ValueError(f"rank {rank} outside 1..{n_classes}")
    z = float(w_o @ symbol_vec)
    if rank < n_classes:
        sig_a = sigmoid(float(theta[rank - 1]) - z)
        dsig_a = sig_a * (1.0 - sig_a)
    else:
        sig_a, dsig_a = 1.0, 0.0
    if rank > 1:
        sig_b = sigmoid(float(theta[rank - 2]) - z)
        dsig_b = sig_b * (1.0 - sig_b)
    else:
        sig_b, dsig_b = 0.0, 0.0
    prob = max(sig_a - sig_b, PROB_FLOOR)
    value = -math.log(prob)
    d_z = (dsig_a - dsig_b) / prob
    grads: list[tuple[str, int | None, np.ndarray]] = [
        ("anchor", None, d_z * w_o),
        ("w_o", None, d_z * symbol_vec),
    ]
    if rank < n_classes:
        grads.append(("theta", rank - 1, -dsig_a / prob))
    if rank > 1:
        grads.append(("theta", rank - 2, dsig_b / prob))
    return LossGrad(value, grads)


def smoothing_loss(segment_vec, neighbor_vecs, eta) -> LossGrad:
    """Squared-distance pull between a segment and its neighbors' embeddings.

    value = (eta / |N|) * sum_c ||phi_k - phi_c||^2. Neighbor gradients are
    reported positionally, in the order the vectors were passed.
    """
    if eta < 0:
        raise ValueError("smoothing strength must be non-negative")
    phi = np.asarray(segment_vec)
    nbrs = np.asarray(neighbor_vecs)
    if nbrs.ndim == 1:
        nbrs = nbrs[None, :]
    if nbrs.shape[0] == 0:
        raise ValueError("smoothing loss needs at least one neighbor")
    scale = eta / nbrs.shape[0]
    diffs = phi[None, :] - nbrs
    value = scale * float(np.einsum("ij,ij->", diffs, diffs))
    grads: list[tuple[str, int | None, np.ndarray]] = [
        ("anchor", None, (2.0 * scale) * diffs.sum(axis=0)),
    ]
    for j in range(nbrs.shape[0]):
        grads.append(("neighbor", j, (-2.0 * scale) * diffs[j]))
    return LossGrad(value, grads)


def discriminator_probs(segment_vec, u) -> np.ndarray:
    """Softmax over per-subject scores u_p . phi, computed shift-stably."""
    u = np.asarray(u)
    if u.shape[0] < 2:
        raise ValueError("discriminator needs at least 2 subjects")
    logits = u @ np.asarray(segment_vec)
    logits = logits - logits.max()
    ex = np.exp(logits)
    return ex / ex.sum()


def discriminator_loss(probs, subject, segment_vec) -> LossGrad:
    """Cross-entropy of the subject discriminator; gradients on u only.

    The segment vector is treated as a frozen input: it receives no gradient
    from this loss. The gradient for row q is (probs[q] - 1[q=subject]) * phi.
    """
    probs = np.asarray(probs)
    if not 0 <= subject < len(probs):
        raise ValueError(f"unknown subject index {subject}")
    value = -math.log(max(float(probs[subject]), PROB_FLOOR))
    coef = probs.copy()
    coef[subject] -= 1.0
    phi = np.asarray(segment_vec)
    return LossGrad(value, [("u", None, coef[:, None] * phi[None, :])])


def adversarial_loss(probs, subject, u) -> LossGrad:
    """Encoder-side negation of the discriminator loss; gradient on phi only.

    value = +log probs[subject], exactly -discriminator_loss. Minimizing it
    pushes the segment vector away from its own subject's score direction:
    d/d phi = u_p - sum_q probs[q] * u_q.
    """
    probs = np.asarray(probs)
    u = np.asarray(u)
    if not 0 <= subject < len(probs):
        raise ValueError(f"unknown subject index {subject}")
    value = math.log(max(float(probs[subject]), PROB_FLOOR))
    d_phi = u[subject] - probs @ u
    return LossGrad(value, [("anchor", None, d_phi)])


def combined_loss_value(l_s=None, l_o=None, l_nc=None, l_r=None, l_a=None,
                        beta: float = 0.5, lam: float = 0.05) -> float:
    """Weighted sum of the component values, for reporting.

    Absent components (None) are omitted rather than counted as zero;
    training applies component gradients individually, never this sum.
    """
    if beta < 0 or lam < 0:
        raise ValueError("component weights must be non-negative")
    total = 0.0
    for term, weight in ((l_s, 1.0), (l_o, beta), (l_nc, 1.0), (l_r, 1.0),
                         (l_a, lam)):
        if term is not None:
            total += weight * float(term)
    return total

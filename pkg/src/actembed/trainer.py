"""Seeded SGD training of the embedding model.

One pass visits every sequence (in permuted order), every segment, and a
without-replacement subsample of positions inside each segment. Each inner
step applies, in order: the content update, the weighted ordinal update (with
threshold re-projection), the neighbor-context update, the smoothing update,
and the ramp-weighted adversarial update; with fixed probability the subject
discriminator then takes one step of its own on the frozen segment vector.
The whole trajectory is a pure function of (seed, corpus, config).
"""

from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from actembed.corpus import (GRANULARITIES, SEGMENT_LENGTH, Corpus,
                             SegmentIndex, Vocabulary, encode_corpus,
                             segment_noise_distribution,
                             symbol_noise_distribution)
from actembed.losses import (adversarial_loss, combined_loss_value,
                             discriminator_loss, discriminator_probs,
                             neighbor_context_loss, ordinal_loss,
                             segment_content_loss, smoothing_loss)
from actembed.model import ModelParams

GRANULARITY_WINDOW = {"sample": 20, "hour": 20, "day": 30, "week": 50}
GRANULARITY_ETA = {"sample": 0.0, "hour": 0.5, "day": 0.25, "week": 0.0}

THRESHOLD_GAP = 1e-6

# Stream tag separating evaluation RNG forks from the training stream.
_EVAL_STREAM = 0x45564C


class ConfigError(ValueError):
    """Invalid training configuration."""


class NumericalError(RuntimeError):
    """A non-finite value appeared in a loss or parameter during training."""


@dataclass
class TrainConfig:
    """Hyperparameters and ablation toggles for one training run.

    ``window`` and ``eta`` default per granularity (20/20/30/50 and
    0/0.5/0.25/0); smoothing is force-disabled for week granularity, where a
    sequence has a single segment and no neighbors. ``ordinal_clip`` caps the
    norm of each applied ordinal gradient entry: with hundreds of thresholds
    packed into a few units, raw cumulative-link gradients scale like the
    inverse class probability and would scatter the thresholds within one
    epoch; 0 disables the cap.
    """

    granularity: str = "day"
    d: int = 100
    m_negatives: int = 12
    window: int | None = None
    eta: float | None = None
    beta: float = 0.5
    lambda_max: float = 0.05
    disc_prob: float = 0.2
    learning_rate: float = 0.025
    lr_floor: float = 1e-4
    epochs: int = 20
    tol: float = 1e-3
    patience: int = 3
    seed: int = 1
    half_width: int = 1
    noise_exponent: float = 1.0
    ordinal_clip: float = 1.0
    use_ordinal: bool = True
    use_context: bool = True
    use_smoothing: bool = True
    use_adversarial: bool = True
    verbose: bool = False
    eta_forced_zero: bool = field(default=False, init=False)

    def __post_init__(self):
        if self.granularity not in GRANULARITIES:
            raise ConfigError(f"unknown granularity {self.granularity!r}")
        if self.window is None:
            self.window = GRANULARITY_WINDOW[self.granularity]
        if self.eta is None:
            self.eta = GRANULARITY_ETA[self.granularity]
        if self.granularity == "week" and self.eta > 0:
            self.eta = 0.0
            self.eta_forced_zero = True
        seg_len = SEGMENT_LENGTH[self.granularity]
        if self.d <= 0:
            raise ConfigError("embedding dimension must be positive")
        if self.m_negatives < 1:
            raise ConfigError("need at least one negative sample")
        if self.window < 1:
            raise ConfigError("window must be positive")
        if self.granularity != "sample" and self.window > seg_len:
            raise ConfigError(
                f"window {self.window} exceeds segment length {seg_len}")
        if self.eta < 0 or self.beta < 0 or self.lambda_max < 0:
            raise ConfigError("loss weights must be non-negative")
        if not 0.0 <= self.disc_prob <= 1.0:
            raise ConfigError("discriminator probability must be in [0, 1]")
        if not 0 < self.lr_floor <= self.learning_rate:
            raise ConfigError("need 0 < lr_floor <= learning_rate")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.tol <= 0 or self.patience < 1:
            raise ConfigError("invalid early-stopping settings")
        if self.half_width < 1:
            raise ConfigError("neighbor half_width must be >= 1")
        if self.ordinal_clip < 0:
            raise ConfigError("ordinal gradient clip must be non-negative")

    def positives_per_segment(self) -> int:
        if self.granularity == "sample":
            return 1
        return -(-SEGMENT_LENGTH[self.granularity] // self.window)


@dataclass
class TrainReport:
    """Per-epoch loss means and bookkeeping for one training run."""

    seed: int
    granularity: str
    initial: dict[str, float]
    epoch_means: list[dict[str, float]] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    disc_updates: int = 0
    epochs_run: int = 0
    converged_early: bool = False
    total_steps_planned: int = 0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "granularity": self.granularity,
            "initial": self.initial,
            "epoch_means": self.epoch_means,
            "epoch_seconds": self.epoch_seconds,
            "disc_updates": self.disc_updates,
            "epochs_run": self.epochs_run,
            "converged_early": self.converged_early,
            "total_steps_planned": self.total_steps_planned,
        }


def lambda_schedule(progress: float, lambda_max: float) -> float:
    """Adversary weight ramp: 0 at the start, lambda_max-saturating by the end.

    lambda(q) = lambda_max * (2 / (1 + exp(-10 q)) - 1), monotone in q.
    """
    if not 0.0 <= progress <= 1.0:
        raise ValueError("progress must lie in [0, 1]")
    return lambda_max * (2.0 / (1.0 + math.exp(-10.0 * progress)) - 1.0)


class NoiseSampler:
    """Inverse-CDF categorical sampler with exclusion-by-resampling."""

    def __init__(self, probs: np.ndarray):
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("distribution must be a non-empty 1-D array")
        if np.any(probs < 0) or not np.isfinite(probs).all():
            raise ValueError("probabilities must be finite and non-negative")
        total = probs.sum()
        if total <= 0:
            raise ValueError("distribution has no mass")
        self.probs = probs / total
        self._cdf = np.cumsum(self.probs)
        self._cdf[-1] = 1.0
        self.support_size = int(np.count_nonzero(self.probs))

    def sample(self, m: int, exclusions, rng: np.random.Generator) -> np.ndarray:
        """Draw m indices, resampling any draw that lands in ``exclusions``."""
        probs = self.probs
        if self.support_size <= len(exclusions):
            excluded_mass = 0
            for e in set(exclusions):
                if 0 <= e < probs.size and probs[e] > 0:
                    excluded_mass += 1
            if self.support_size - excluded_mass < 1:
                raise ValueError(
                    "noise distribution support exhausted by exclusions")
        out = np.searchsorted(self._cdf, rng.random(m), side="right")
        while True:
            bad = None
            for e in exclusions:
                hit = out == e
                bad = hit if bad is None else bad | hit
            n_bad = int(bad.sum()) if bad is not None else 0
            if not n_bad:
                break
            out[bad] = np.searchsorted(self._cdf, rng.random(n_bad),
                                       side="right")
        return out


def sample_negatives(distribution, m: int, exclusions,
                     rng: np.random.Generator) -> np.ndarray:
    """Draw m negatives from a probability vector, avoiding ``exclusions``."""
    sampler = distribution if isinstance(distribution, NoiseSampler) \
        else NoiseSampler(distribution)
    return sampler.sample(m, exclusions, rng)


def positive_symbol_schedule(segment_length: int, window: int,
                             rng: np.random.Generator) -> np.ndarray:
    """Positions visited in one segment pass: ceil(L/w) draws, no repeats."""
    if window < 1:
        raise ValueError("window must be positive")
    n = -(-segment_length // window)
    n = min(n, segment_length)
    return rng.choice(segment_length, size=n, replace=False)


_RAMP_CACHE: dict = {}


def project_thresholds(theta: np.ndarray) -> np.ndarray:
    """Restore strict ascending order: theta_c <- max(theta_c, theta_{c-1} + gap).

    A prefix-max scan in gap-shifted space reproduces the forward pass;
    entries already satisfying the rule pass through bit-exactly. If the
    fixed gap underflows at the float32 magnitudes involved, a sequential
    pass with nextafter guarantees strictness anyway.
    """
    theta = np.array(theta, copy=True)
    if theta.size < 2:
        return theta
    key = (theta.size, theta.dtype.str)
    ramp = _RAMP_CACHE.get(key)
    if ramp is None:
        gap = theta.dtype.type(THRESHOLD_GAP)
        ramp = gap * np.arange(theta.size, dtype=theta.dtype)
        _RAMP_CACHE[key] = ramp
    shifted = theta - ramp
    scanned = np.maximum.accumulate(shifted)
    out = np.where(scanned == shifted, theta, scanned + ramp)
    if np.any(np.diff(out) <= 0):
        gap = theta.dtype.type(THRESHOLD_GAP)
        for c in range(1, out.size):
            floor = out[c - 1] + gap
            if floor <= out[c - 1]:
                floor = np.nextafter(out[c - 1], np.inf)
            if out[c] < floor:
                out[c] = floor
    return out


class _RunContext:
    """Precomputed per-run state shared by training and evaluation passes."""

    def __init__(self, corpus: Corpus, vocab: Vocabulary, index: SegmentIndex,
                 config: TrainConfig):
        self.encoded = encode_corpus(corpus, vocab)
        self.index = index
        self.unk_id = vocab.unk_id
        self.subject_index = corpus.subject_index
        self.sym_sampler = NoiseSampler(
            symbol_noise_distribution(vocab, config.noise_exponent))
        k = index.segments_per_sequence
        self.seg_sampler = NoiseSampler(segment_noise_distribution(index)) \
            if k > 1 else None
        h = index.half_width
        self.nb_positions = [
            np.concatenate((np.arange(max(0, p - h), p),
                            np.arange(p + 1, min(k, p + h + 1))))
            for p in range(k)
        ]
        self.n_pos = config.positives_per_segment()

    def steps_per_epoch(self) -> int:
        return len(self.encoded) * self.index.segments_per_sequence * self.n_pos


def _check_compatible(vocab: Vocabulary, index: SegmentIndex,
                      params: ModelParams, config: TrainConfig) -> None:
    if not (params.granularity == index.granularity == config.granularity):
        raise ConfigError("granularity mismatch between params, index and config")
    if params.phi_sym.shape[0] != vocab.size:
        raise ConfigError("params were built for a different vocabulary")
    if params.n_segments != index.n_segments:
        raise ConfigError("params were built for a different segmentation")
    if config.use_ordinal and vocab.n_symbols < 2:
        raise ConfigError("ordinal loss needs at least 2 symbol classes")


def _epoch_pass(ctx: _RunContext, params: ModelParams, config: TrainConfig,
                rng: np.random.Generator, seq_order, *, update: bool,
                step_start: int, denom: int, lam_fixed: float | None,
                epoch_label) -> tuple[int, dict, dict, int]:
    """One full pass over the corpus; updates parameters when ``update``.

    Returns (next step counter, per-component value sums, per-component
    counts, discriminator update count). The rng stream is consumed
    identically whether or not updates are applied.
    """
    k_per_seq = ctx.index.segments_per_sequence
    seg_len = ctx.index.segment_length
    is_sample = ctx.index.granularity == "sample"
    phi_sym, phi_seg = params.phi_sym, params.phi_seg
    w_s, w_nc, u = params.w_s, params.w_nc, params.u
    m = config.m_negatives
    lr0, lr_span = config.learning_rate, config.learning_rate - config.lr_floor
    beta, lam_max = config.beta, config.lambda_max
    eta = config.eta
    use_o = config.use_ordinal
    use_c = config.use_context and ctx.seg_sampler is not None
    use_r = config.use_smoothing and eta > 0 and k_per_seq > 1
    use_a = config.use_adversarial
    clip = config.ordinal_clip
    half = max(1, config.window // 2)
    names = ["content", "ordinal", "context", "smoothing", "adversarial",
             "combined"]
    sums = dict.fromkeys(names, 0.0)
    counts = dict.fromkeys(names, 0)
    disc_updates = 0
    step = step_start

    for n in seq_order:
        seq = ctx.encoded[n]
        subject = int(ctx.subject_index[n])
        base = n * k_per_seq
        for k in range(k_per_seq):
            gid = base + k
            if is_sample:
                anchor = phi_sym[seq[k]]
                positions = (k,)
            else:
                anchor = phi_seg[gid]
                positions = positive_symbol_schedule(seg_len, config.window, rng)
            nb_pos = ctx.nb_positions[k]
            nb_gids = base + nb_pos
            seg_start = k * seg_len
            for pos in positions:
                if update:
                    q = step / denom
                    lr = max(config.lr_floor, lr0 - lr_span * q)
                    lam = lam_max * (2.0 / (1.0 + math.exp(-10.0 * q)) - 1.0)
                else:
                    lr, lam = 0.0, lam_fixed
                if is_sample:
                    lo = max(0, k - half)
                    hi = min(len(seq) - 1, k + half)
                    if hi > lo:
                        j = lo + int(rng.integers(hi - lo))
                        if j >= k:
                            j += 1
                    else:
                        j = k
                    pos_sym = int(seq[j])
                else:
                    pos_sym = int(seq[seg_start + pos])

                negs = ctx.sym_sampler.sample(m, (pos_sym,), rng)
                lg = segment_content_loss(anchor, pos_sym, negs, w_s)
                _record("content", lg.value, sums, counts, epoch_label, n, k, step)
                l_s = lg.value
                if update:
                    for slc, idx, g in lg.grads:
                        if slc == "anchor":
                            anchor -= lr * g
                        else:
                            w_s[idx] -= lr * g

                l_o = None
                if use_o and pos_sym != ctx.unk_id:
                    lg = ordinal_loss(phi_sym[pos_sym], pos_sym + 1,
                                      params.w_o, params.theta)
                    _record("ordinal", lg.value, sums, counts, epoch_label,
                            n, k, step)
                    l_o = lg.value
                    if update:
                        scaled = lr * beta
                        for slc, idx, g in lg.grads:
                            if slc == "theta":
                                if clip > 0.0:
                                    g = max(-clip, min(clip, g))
                                params.theta[idx] -= scaled * g
                                continue
                            if clip > 0.0:
                                norm = math.sqrt(float(g @ g))
                                if norm > clip:
                                    g = g * (clip / norm)
                            if slc == "anchor":
                                phi_sym[pos_sym] -= scaled * g
                            else:
                                params.w_o -= scaled * g
                        t = params.theta
                        sz = t.shape[0]
                        lo = pos_sym - 2 if pos_sym >= 2 else 0
                        hi = pos_sym + 1 if pos_sym + 1 < sz else sz - 1
                        for i in range(lo, hi):
                            if t[i + 1] - t[i] < THRESHOLD_GAP:
                                params.theta = project_thresholds(t)
                                break

                l_nc = None
                if use_c and nb_pos.size:
                    nb_gid = int(nb_gids[int(rng.integers(nb_pos.size))])
                    seg_negs = ctx.seg_sampler.sample(m, (nb_gid, gid), rng)
                    lg = neighbor_context_loss(anchor, nb_gid, seg_negs, w_nc,
                                               nb_gids, anchor_id=gid)
                    _record("context", lg.value, sums, counts, epoch_label,
                            n, k, step)
                    l_nc = lg.value
                    if update:
                        for slc, idx, g in lg.grads:
                            if slc == "anchor":
                                anchor -= lr * g
                            else:
                                w_nc[idx] -= lr * g

                l_r = None
                if use_r and nb_pos.size:
                    if is_sample:
                        nb_rows = seq[nb_pos]
                        nb_vecs = phi_sym[nb_rows]
                    else:
                        nb_rows = nb_gids
                        nb_vecs = phi_seg[nb_rows]
                    lg = smoothing_loss(anchor, nb_vecs, eta)
                    _record("smoothing", lg.value, sums, counts, epoch_label,
                            n, k, step)
                    l_r = lg.value
                    if update:
                        for slc, idx, g in lg.grads:
                            if slc == "anchor":
                                anchor -= lr * g
                            else:
                                target = phi_sym if is_sample else phi_seg
                                target[nb_rows[idx]] -= lr * g

                l_a = None
                if use_a:
                    probs = discriminator_probs(anchor, u)
                    lg = adversarial_loss(probs, subject, u)
                    _record("adversarial", lg.value, sums, counts, epoch_label,
                            n, k, step)
                    l_a = lg.value
                    if update and lam > 0.0:
                        anchor -= (lr * lam) * lg.grads[0][2]
                    if rng.random() < config.disc_prob:
                        if update:
                            probs = discriminator_probs(anchor, u)
                            lg = discriminator_loss(probs, subject, anchor)
                            u -= lr * lg.grads[0][2]
                            disc_updates += 1

                sums["combined"] += combined_loss_value(
                    l_s, l_o, l_nc, l_r, l_a, beta=beta, lam=lam)
                counts["combined"] += 1
                step += 1
    return step, sums, counts, disc_updates


def _record(name, value, sums, counts, epoch_label, n, k, step):
    if not math.isfinite(value):
        raise NumericalError(
            f"non-finite {name} loss at epoch {epoch_label}, sequence {n}, "
            f"segment {k}, step {step}")
    sums[name] += value
    counts[name] += 1


def _means(sums: dict, counts: dict) -> dict[str, float]:
    return {name: sums[name] / counts[name]
            for name in sums if counts[name] > 0}


def evaluate_epoch_loss(corpus: Corpus, vocab: Vocabulary, index: SegmentIndex,
                        params: ModelParams, config: TrainConfig,
                        rng: np.random.Generator | None = None,
                        progress: float = 0.0) -> dict[str, float]:
    """Mean loss components over one full measurement pass, no updates.

    Uses its own forked rng (or the one supplied) so measurement never
    perturbs a training stream. ``progress`` fixes the adversary weight used
    in the combined value. Disabled components are absent from the result.
    """
    if rng is None:
        rng = np.random.default_rng([config.seed, _EVAL_STREAM])
    _check_compatible(vocab, index, params, config)
    ctx = _RunContext(corpus, vocab, index, config)
    lam = lambda_schedule(progress, config.lambda_max)
    _, sums, counts, _ = _epoch_pass(
        ctx, params, config, rng, range(len(corpus)), update=False,
        step_start=0, denom=1, lam_fixed=lam, epoch_label="eval")
    return _means(sums, counts)


def train(corpus: Corpus, vocab: Vocabulary, index: SegmentIndex,
          params: ModelParams, config: TrainConfig,
          ) -> tuple[ModelParams, TrainReport]:
    """Run the full SGD schedule; mutates and returns ``params``.

    Stops at the epoch cap or once the relative change of the epoch-mean
    combined loss stays below ``config.tol`` for ``config.patience``
    consecutive transitions. Raises :class:`NumericalError` on any
    non-finite loss or parameter, identifying the offending step.
    """
    _check_compatible(vocab, index, params, config)
    ctx = _RunContext(corpus, vocab, index, config)
    rng = np.random.default_rng(config.seed)
    steps_total = config.epochs * ctx.steps_per_epoch()
    denom = max(1, steps_total - 1)

    eval_rng = np.random.default_rng([config.seed, _EVAL_STREAM, 0])
    lam0 = lambda_schedule(0.0, config.lambda_max)
    _, sums0, counts0, _ = _epoch_pass(
        ctx, params, config, eval_rng, range(len(corpus)), update=False,
        step_start=0, denom=1, lam_fixed=lam0, epoch_label="initial")
    report = TrainReport(seed=config.seed, granularity=config.granularity,
                         initial=_means(sums0, counts0),
                         total_steps_planned=steps_total)

    step = 0
    streak = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(corpus))
        step, sums, counts, disc = _epoch_pass(
            ctx, params, config, rng, order, update=True, step_start=step,
            denom=denom, lam_fixed=None, epoch_label=epoch)
        if not params.check_finite():
            raise NumericalError(f"non-finite parameter after epoch {epoch}")
        means = _means(sums, counts)
        q = min(1.0, (step - 1) / denom) if step > 0 else 0.0
        means["lambda"] = lambda_schedule(q, config.lambda_max)
        means["lr"] = max(config.lr_floor,
                          config.learning_rate
                          - (config.learning_rate - config.lr_floor) * q)
        report.epoch_means.append(means)
        report.epoch_seconds.append(time.perf_counter() - t0)
        report.disc_updates += disc
        report.epochs_run = epoch + 1
        if config.verbose:
            parts = " ".join(f"{k}={v:.4f}" for k, v in means.items())
            print(f"epoch {epoch}: {parts}", file=sys.stderr)
        if epoch > 0:
            prev = report.epoch_means[epoch - 1]["combined"]
            cur = means["combined"]
            rel = abs(cur - prev) / max(abs(prev), 1e-12)
            streak = streak + 1 if rel < config.tol else 0
            if streak >= config.patience:
                report.converged_early = True
                break
    return params, report

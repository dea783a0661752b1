"""Deterministic synthetic cohorts with planted, label-dependent signatures.

Every subject gets a shared day-periodic activity curve, additive hour-band
deltas whose size depends on their (possibly hidden) class for each task,
and subject-specific nuisance distortions: a multiplicative gain, a phase
shift of the daily rhythm, and observation noise. The gain and phase are the
"environment" an adversarially trained model is expected to erase. A machine
readable manifest records which hour bands differ per task so tests can
assert learnability direction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from actembed.corpus import MISSING, TASKS, ActivitySequence, Corpus

CIRCADIAN_TROUGH_HOUR = 2.0  # daily activity minimum; the peak sits 12h later


@dataclass(frozen=True)
class TaskEffect:
    """Additive day-shape delta for one task: amplitude per class step.

    Class k adds ``k * amplitude`` activity counts inside ``band`` (hours,
    half-open). Amplitude 0 makes the task unlearnable by construction.
    """

    band: tuple[float, float]
    amplitude: float


DEFAULT_EFFECTS = {
    "apnea": TaskEffect((0.0, 5.0), 30.0),
    "diabetes": TaskEffect((13.0, 18.0), 20.0),
    "hypertension": TaskEffect((6.0, 11.0), 30.0),
    "insomnia": TaskEffect((20.0, 24.0), 0.0),
}


@dataclass
class SynthConfig:
    """Knobs for one synthetic cohort; fully determines it given the seed.

    ``noise_rate`` scales the additive Gaussian observation noise relative
    to ``base_amplitude``; ``missing_rate`` is the per-epoch probability of
    a missing reading.
    """

    n_subjects: int = 120
    labeled_fraction: float = 0.5
    length: int = 20160
    v_max: int = 200
    base_amplitude: float = 60.0
    effects: dict[str, TaskEffect] = field(
        default_factory=lambda: dict(DEFAULT_EFFECTS))
    gain_range: tuple[float, float] = (0.6, 1.4)
    phase_hours: float = 2.0
    noise_rate: float = 0.15
    missing_rate: float = 0.005
    seed: int = 7

    def validate(self) -> None:
        if self.n_subjects < 1:
            raise ValueError("need at least one subject")
        if not 0.0 <= self.labeled_fraction <= 1.0:
            raise ValueError("labeled_fraction must be in [0, 1]")
        if self.length < 1:
            raise ValueError("sequence length must be positive")
        if self.v_max < 1:
            raise ValueError("v_max must be positive")
        if self.base_amplitude < 0:
            raise ValueError("base amplitude must be non-negative")
        for task, effect in self.effects.items():
            if task not in TASKS:
                raise ValueError(f"unknown task {task!r}")
            if effect.amplitude < 0:
                raise ValueError(f"effect amplitude for {task!r} is negative")
            lo, hi = effect.band
            if not 0.0 <= lo < hi <= 24.0:
                raise ValueError(f"effect band for {task!r} must satisfy "
                                 "0 <= start < end <= 24")
        lo, hi = self.gain_range
        if not 0.0 < lo <= hi:
            raise ValueError("gain range must be positive with lo <= hi")
        if self.phase_hours < 0:
            raise ValueError("phase shift range must be non-negative")
        if not 0.0 <= self.noise_rate:
            raise ValueError("noise rate must be non-negative")
        if not 0.0 <= self.missing_rate <= 1.0:
            raise ValueError("missing rate must be in [0, 1]")


def _circadian(tod_hours: np.ndarray, amplitude: float) -> np.ndarray:
    """Smooth daily rhythm: 0 at the trough hour, ``amplitude`` 12h later."""
    phase = 2.0 * np.pi * (tod_hours - CIRCADIAN_TROUGH_HOUR) / 24.0
    return amplitude * 0.5 * (1.0 - np.cos(phase))


def generate_cohort(config: SynthConfig) -> Corpus:
    """Build the cohort; byte-identical output for identical configs.

    Classes are drawn for every subject (the planted signal exists whether
    or not the subject is labeled), but labels are attached only to the
    labeled fraction, mirroring a part-labeled study population.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    n_labeled = int(round(config.labeled_fraction * config.n_subjects))
    labeled = set(rng.permutation(config.n_subjects)[:n_labeled].tolist())
    epoch_hours = np.arange(config.length, dtype=np.float64) * (30.0 / 3600.0)
    task_order = sorted(TASKS)
    noise_std = config.noise_rate * config.base_amplitude
    sequences = []
    for i in range(config.n_subjects):
        gain = float(rng.uniform(*config.gain_range))
        phase = float(rng.uniform(-config.phase_hours, config.phase_hours))
        classes = {task: int(rng.integers(TASKS[task])) for task in task_order}
        tod = (epoch_hours + phase) % 24.0
        signal = _circadian(tod, config.base_amplitude)
        for task in task_order:
            effect = config.effects.get(task)
            if effect is None or effect.amplitude == 0.0 or classes[task] == 0:
                continue
            lo, hi = effect.band
            band = (tod >= lo) & (tod < hi)
            signal = signal + band * (classes[task] * effect.amplitude)
        noise = rng.normal(0.0, noise_std, config.length) if noise_std > 0 \
            else 0.0
        values = np.clip(np.rint(gain * signal + noise), 0, config.v_max)
        samples = values.astype(np.int64)
        if config.missing_rate > 0:
            samples[rng.random(config.length) < config.missing_rate] = MISSING
        labels = dict(classes) if i in labeled else {}
        sequences.append(ActivitySequence(f"S{i:04d}", samples, labels))
    return Corpus(sequences)


def describe_planted_effects(config: SynthConfig) -> dict:
    """Manifest of which hour bands differ per task, for acceptance checks."""
    config.validate()
    tasks = {}
    for task in sorted(TASKS):
        effect = config.effects.get(task, TaskEffect((0.0, 0.0), 0.0))
        tasks[task] = {
            "band_hours": list(effect.band),
            "amplitude_per_class": effect.amplitude,
            "n_classes": TASKS[task],
            "learnable": effect.amplitude > 0.0,
        }
    return {
        "tasks": tasks,
        "n_subjects": config.n_subjects,
        "labeled_fraction": config.labeled_fraction,
        "length": config.length,
        "v_max": config.v_max,
        "base_amplitude": config.base_amplitude,
        "circadian_trough_hour": CIRCADIAN_TROUGH_HOUR,
        "gain_range": list(config.gain_range),
        "phase_hours": config.phase_hours,
        "noise_rate": config.noise_rate,
        "missing_rate": config.missing_rate,
        "seed": config.seed,
    }


def write_manifest(config: SynthConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(describe_planted_effects(config), fh, sort_keys=True, indent=2)
        fh.write("\n")

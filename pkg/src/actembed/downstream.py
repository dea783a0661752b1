"""Linear-probe evaluation of frozen embeddings.

Disorder tasks are scored with one-vs-all L2-regularized logistic regression
on subject representations, across repeated seeded train/validation/test
splits; residual subject identifiability is measured with a fresh softmax
probe over frozen segment embeddings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from actembed.corpus import TASKS, Corpus, SegmentIndex, Vocabulary
from actembed.model import ModelParams, segment_vectors, subject_representation
from actembed.losses import sigmoid

L2_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0)
SPLIT_FRACTIONS = (0.8, 0.1, 0.1)


class EvalError(ValueError):
    """Evaluation protocol cannot run on the given inputs."""


def _augment(features: np.ndarray) -> np.ndarray:
    ones = np.ones((features.shape[0], 1), dtype=np.float64)
    return np.hstack([np.asarray(features, dtype=np.float64), ones])


def _logreg_objective(weights, x_aug, targets, l2):
    """Summed-over-classes mean log loss plus l2 on the non-intercept weights."""
    scores = x_aug @ weights.T
    margins = np.where(targets == 1, -scores, scores)
    loss = np.logaddexp(0.0, margins).mean(axis=0).sum()
    reg = 0.5 * l2 * float(np.square(weights[:, :-1]).sum())
    return loss + reg


def _logreg_gradient(weights, x_aug, targets, l2):
    scores = x_aug @ weights.T
    residual = sigmoid(scores) - targets
    grad = residual.T @ x_aug / x_aug.shape[0]
    grad[:, :-1] += l2 * weights[:, :-1]
    return grad


def train_logreg(features: np.ndarray, labels: np.ndarray, n_classes: int,
                 l2: float, tol: float = 1e-6, max_iter: int = 10_000,
                 ) -> np.ndarray:
    """Fit an L2-regularized logistic model by full-batch gradient descent.

    Binary problems return one weight row; multiclass problems one row per
    class (one-vs-all). The last column is the unregularized intercept.
    Backtracking line search keeps the objective nonincreasing; iteration
    stops at gradient norm <= tol or at the iteration cap.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if features.shape[0] != labels.size or features.shape[0] < 2:
        raise EvalError("need at least 2 examples with matching labels")
    present = np.unique(labels)
    for c in range(n_classes):
        if c not in present:
            raise EvalError(f"class absent from training data: {c}")
    x_aug = _augment(features)
    if n_classes == 2:
        targets = (labels == 1).astype(np.float64)[:, None]
        k = 1
    else:
        targets = (labels[:, None] == np.arange(n_classes)[None, :])
        targets = targets.astype(np.float64)
        k = n_classes
    weights = np.zeros((k, x_aug.shape[1]), dtype=np.float64)
    value = _logreg_objective(weights, x_aug, targets, l2)
    step = 1.0
    for _ in range(max_iter):
        grad = _logreg_gradient(weights, x_aug, targets, l2)
        gnorm2 = float(np.square(grad).sum())
        if np.sqrt(gnorm2) <= tol:
            break
        while step > 1e-16:
            trial = weights - step * grad
            trial_value = _logreg_objective(trial, x_aug, targets, l2)
            if trial_value <= value - 0.5 * step * gnorm2:
                break
            step *= 0.5
        weights = weights - step * grad
        value = _logreg_objective(weights, x_aug, targets, l2)
        step = min(step * 2.0, 1e6)
    return weights


def predict(weights: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Class indices from a fitted model.

    Binary: class 1 iff score >= 0. One-vs-all: argmax over class scores,
    ties resolved to the lowest class index.
    """
    x_aug = _augment(features)
    if x_aug.shape[1] != weights.shape[1]:
        raise EvalError(
            f"feature dimension {x_aug.shape[1] - 1} does not match model "
            f"({weights.shape[1] - 1})")
    scores = x_aug @ weights.T
    if weights.shape[0] == 1:
        return (scores[:, 0] >= 0).astype(np.int64)
    return np.argmax(scores, axis=1).astype(np.int64)


def f1_scores(y_true, y_pred, n_classes: int) -> dict[str, float]:
    """F1 metrics; harmonic-mean terms with 0/0 precision or recall score 0.

    Binary tasks report the positive-class F1 (key ``f1``); multiclass tasks
    report unweighted macro-F1. Both include pooled micro-F1, which equals
    accuracy for single-label prediction.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size != y_pred.size:
        raise EvalError("label lists differ in length")
    per_class = []
    tp_total = fp_total = fn_total = 0
    for c in range(n_classes):
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        denom = 2 * tp + fp + fn
        per_class.append(2.0 * tp / denom if denom else 0.0)
        tp_total += tp
        fp_total += fp
        fn_total += fn
    micro_denom = 2 * tp_total + fp_total + fn_total
    micro = 2.0 * tp_total / micro_denom if micro_denom else 0.0
    if n_classes == 2:
        return {"f1": per_class[1], "micro_f1": micro}
    return {"macro_f1": float(np.mean(per_class)), "micro_f1": micro}


def selection_metric(metrics: dict[str, float]) -> float:
    """Validation metric for hyperparameter choice: binary F1 or micro-F1."""
    return metrics["f1"] if "f1" in metrics else metrics["micro_f1"]


@dataclass
class SplitResult:
    seed: int
    l2: float
    val_metric: float
    test_metrics: dict[str, float]


@dataclass
class EvalReport:
    """Per-split and aggregate F1 statistics for one task."""

    task: str
    n_classes: int
    n_subjects: int
    base_seed: int
    splits: list[SplitResult] = field(default_factory=list)

    def metric_values(self, key: str) -> np.ndarray:
        return np.array([s.test_metrics[key] for s in self.splits])

    def mean(self, key: str) -> float:
        return float(self.metric_values(key).mean())

    def std(self, key: str) -> float:
        return float(self.metric_values(key).std())

    def to_dict(self) -> dict:
        keys = sorted(self.splits[0].test_metrics) if self.splits else []
        return {
            "task": self.task,
            "n_classes": self.n_classes,
            "n_subjects": self.n_subjects,
            "base_seed": self.base_seed,
            "splits": [
                {"seed": s.seed, "l2": s.l2, "val_metric": s.val_metric,
                 "test_metrics": s.test_metrics}
                for s in self.splits
            ],
            "mean": {k: self.mean(k) for k in keys},
            "std": {k: self.std(k) for k in keys},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _stratified_split(labels: np.ndarray, fractions, rng: np.random.Generator):
    """Per-class shuffle into train/validation/test index lists."""
    f_train, f_val, _ = fractions
    train, val, test = [], [], []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(members.size)]
        n = members.size
        n_train = max(1, int(round(f_train * n)))
        n_val = int(round(f_val * n))
        n_train = min(n_train, n - 1) if n > 1 else n_train
        n_val = min(n_val, n - n_train)
        train.extend(members[:n_train])
        val.extend(members[n_train:n_train + n_val])
        test.extend(members[n_train + n_val:])
    return (np.sort(np.array(train, dtype=np.int64)),
            np.sort(np.array(val, dtype=np.int64)),
            np.sort(np.array(test, dtype=np.int64)))


def evaluate_features(features: np.ndarray, labels: np.ndarray, n_classes: int,
                      task: str = "task", splits: int = 10,
                      fractions=SPLIT_FRACTIONS, base_seed: int = 0,
                      l2_grid=L2_GRID) -> EvalReport:
    """Repeated-split linear-probe protocol on ready-made feature rows.

    Each split shuffles subjects per class, trains one model per l2 value,
    picks the l2 with the best validation metric (ties to the smaller
    value), and reports test metrics from that model. Test data never
    influences the l2 choice.
    """
    labels = np.asarray(labels, dtype=np.int64)
    for c in range(n_classes):
        if int(np.sum(labels == c)) < 3:
            raise EvalError(
                f"task {task!r} needs >= 3 labeled subjects per class "
                f"(class {c} has {int(np.sum(labels == c))})")
    report = EvalReport(task=task, n_classes=n_classes,
                        n_subjects=int(labels.size), base_seed=base_seed)
    for split_i in range(splits):
        rng = np.random.default_rng([base_seed, split_i])
        tr, va, te = _stratified_split(labels, fractions, rng)
        best = None
        for l2 in l2_grid:
            weights = train_logreg(features[tr], labels[tr], n_classes, l2)
            if va.size:
                val_metrics = f1_scores(labels[va],
                                        predict(weights, features[va]),
                                        n_classes)
                score = selection_metric(val_metrics)
            else:
                score = 0.0
            if best is None or score > best[0]:
                best = (score, l2, weights)
        score, l2, weights = best
        test_metrics = f1_scores(labels[te], predict(weights, features[te]),
                                 n_classes)
        report.splits.append(SplitResult(seed=split_i, l2=l2,
                                         val_metric=score,
                                         test_metrics=test_metrics))
    return report


def subject_features(params: ModelParams, corpus: Corpus, index: SegmentIndex,
                     encoded=None, average: bool = False,
                     ) -> tuple[np.ndarray, list[str]]:
    """One representation row per subject, in roster order.

    A subject with several sequences gets the mean of their representations.
    """
    reps: dict[int, list[np.ndarray]] = {}
    for i in range(len(corpus)):
        rep = subject_representation(params, index, i, encoded=encoded,
                                     average=average)
        reps.setdefault(int(corpus.subject_index[i]), []).append(rep)
    rows = np.stack([
        np.mean(reps[s], axis=0) for s in range(corpus.n_subjects)
    ]).astype(np.float64)
    return rows, list(corpus.subjects)


def evaluate_task(params: ModelParams, corpus: Corpus, vocab: Vocabulary,
                  index: SegmentIndex, task: str, splits: int = 10,
                  fractions=SPLIT_FRACTIONS, base_seed: int = 0,
                  l2_grid=L2_GRID, encoded=None) -> EvalReport:
    """Score one disorder task from frozen subject representations."""
    if task not in TASKS:
        raise EvalError(f"unknown task {task!r}")
    features, subjects = subject_features(params, corpus, index, encoded=encoded)
    rows, labels = [], []
    for i, subject in enumerate(subjects):
        value = corpus.labels_of_subject(subject).get(task)
        if value is not None:
            rows.append(features[i])
            labels.append(value)
    if not rows:
        raise EvalError(f"no labeled subjects for task {task!r}")
    return evaluate_features(np.stack(rows), np.array(labels), TASKS[task],
                             task=task, splits=splits, fractions=fractions,
                             base_seed=base_seed, l2_grid=l2_grid)


@dataclass
class ProbeReport:
    """Residual subject identifiability of frozen segment embeddings."""

    accuracy: float
    chance: float
    n_subjects: int
    n_train: int
    n_test: int
    seed: int
    held_out_fraction: float

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "chance": self.chance,
            "n_subjects": self.n_subjects,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "seed": self.seed,
            "held_out_fraction": self.held_out_fraction,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _fit_softmax(features, labels, n_classes, tol=1e-6, max_iter=1000):
    """Plain multinomial softmax regression (no bias), backtracking GD."""
    x = np.asarray(features, dtype=np.float64)
    onehot = (labels[:, None] == np.arange(n_classes)[None, :]).astype(np.float64)
    w = np.zeros((n_classes, x.shape[1]), dtype=np.float64)

    def value_of(wm):
        logits = x @ wm.T
        logits -= logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(logits).sum(axis=1))
        return float(np.mean(logz - logits[np.arange(x.shape[0]), labels]))

    def grad_of(wm):
        logits = x @ wm.T
        logits -= logits.max(axis=1, keepdims=True)
        ex = np.exp(logits)
        probs = ex / ex.sum(axis=1, keepdims=True)
        return (probs - onehot).T @ x / x.shape[0]

    value = value_of(w)
    step = 1.0
    for _ in range(max_iter):
        grad = grad_of(w)
        gnorm2 = float(np.square(grad).sum())
        if np.sqrt(gnorm2) <= tol:
            break
        while step > 1e-16:
            trial_value = value_of(w - step * grad)
            if trial_value <= value - 0.5 * step * gnorm2:
                break
            step *= 0.5
        w = w - step * grad
        value = value_of(w)
        step = min(step * 2.0, 1e6)
    return w


def subject_probe(params: ModelParams, index: SegmentIndex,
                  held_out_fraction: float = 0.3, seed: int = 0,
                  encoded=None) -> ProbeReport:
    """Train a fresh linear softmax to identify subjects from embeddings.

    Splits each subject's segments into train and held-out portions, fits on
    the frozen train vectors, and reports held-out top-1 accuracy. Lower
    accuracy means more subject-invariant embeddings. The model itself is
    never modified.
    """
    if index.segments_per_sequence < 2:
        raise EvalError("subject probe needs >= 2 segments per sequence")
    if not 0.0 < held_out_fraction < 1.0:
        raise EvalError("held-out fraction must be in (0, 1)")
    vectors = segment_vectors(params, index, encoded=encoded).astype(np.float64)
    subjects = np.asarray(index.subject_of, dtype=np.int64)
    n_subjects = int(subjects.max()) + 1
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for s in range(n_subjects):
        members = np.flatnonzero(subjects == s)
        members = members[rng.permutation(members.size)]
        n_test = min(members.size - 1, max(1, int(round(held_out_fraction
                                                        * members.size))))
        test_idx.extend(members[:n_test])
        train_idx.extend(members[n_test:])
    train_idx = np.array(train_idx, dtype=np.int64)
    test_idx = np.array(test_idx, dtype=np.int64)
    w = _fit_softmax(vectors[train_idx], subjects[train_idx], n_subjects)
    pred = np.argmax(vectors[test_idx] @ w.T, axis=1)
    accuracy = float(np.mean(pred == subjects[test_idx]))
    return ProbeReport(accuracy=accuracy, chance=1.0 / n_subjects,
                       n_subjects=n_subjects, n_train=int(train_idx.size),
                       n_test=int(test_idx.size), seed=seed,
                       held_out_fraction=held_out_fraction)

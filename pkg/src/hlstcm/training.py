"""Training loop (per-sample SGD with momentum and lr decay), evaluation,
and the central-finite-difference gradient checker."""

import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import model


class NumericalError(RuntimeError):
    """A loss or gradient became non-finite; carries epoch/sample context."""

    def __init__(self, message, epoch=None, sample_id=None):
        super().__init__(message)
        self.epoch = epoch
        self.sample_id = sample_id


@dataclass
class TrainConfig:
    lr: float = 5e-4
    momentum: float = 0.9
    decay: float = 0.95
    epochs: int = 100
    clip_norm: float = 5.0  # 0 disables clipping
    seed: int = 0
    shuffle: bool = True
    batch_size: int = 1

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError(f"decay must be in (0, 1], got {self.decay}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.clip_norm < 0:
            raise ValueError(f"clip_norm must be >= 0, got {self.clip_norm}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float  # nan when no test set was given
    lr: float
    seconds: float
    clamped: int = 0  # samples whose target probability hit the log floor

    def csv_row(self):
        return (f"{self.epoch},{self.loss!r},{self.train_acc!r},"
                f"{self.test_acc!r},{self.lr!r},{self.seconds!r}")


CSV_HEADER = "epoch,loss,train_acc,test_acc,lr,seconds"


@dataclass
class History:
    epochs: list = field(default_factory=list)

    def to_csv_text(self):
        return "\n".join([CSV_HEADER] + [m.csv_row() for m in self.epochs]) + "\n"

    def deterministic_fields(self):
        """Everything except wall time, for bitwise reproducibility checks."""
        return [(m.epoch, m.loss, m.train_acc, m.test_acc, m.lr, m.clamped)
                for m in self.epochs]

    @property
    def final(self):
        return self.epochs[-1]


@dataclass
class Metrics:
    accuracy: float
    per_class: list
    confusion: np.ndarray  # (k, k) ints, rows = true class
    n: int

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "per_class": self.per_class,
            "confusion": self.confusion.tolist(),
            "n": self.n,
        }


def sgd_momentum_step(params, grads, velocity, lr_t, momentum, clip_norm):
    """Classical momentum update, in place on ``params`` and ``velocity``.

    With gradient global L2 norm g above ``clip_norm`` (> 0), gradients are
    scaled by clip_norm/g first; then v <- momentum*v - lr*g, theta <- theta + v.
    Raises NumericalError naming the first non-finite gradient tensor.
    """
    named_g = model.named_tensors(grads)
    for name, g in named_g:
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient in tensor {name}")
    scale = 1.0
    if clip_norm > 0:
        total = math.sqrt(sum(float((g * g).sum()) for _, g in named_g))
        if total > clip_norm:
            scale = clip_norm / total
    for (_, theta), (_, g), (_, v) in zip(
        model.named_tensors(params), named_g, model.named_tensors(velocity)
    ):
        v *= momentum
        v -= (lr_t * scale) * g
        theta += v


def _epoch_order(n, cfg, epoch):
    if not cfg.shuffle:
        return np.arange(n)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, epoch)))
    return rng.permutation(n)


def train(params, config, train_set, cfg, test_set=None, start_epoch=0, velocity=None):
    """Optimize ``params`` in place over ``cfg.epochs`` epochs.

    Per epoch: a seeded shuffle, then one update per batch (batch size 1 by
    default) with lr decayed as lr * decay**epoch. Training accuracy is the
    running accuracy of the pre-update predictions made during the pass.
    Fully deterministic given (seed, config, data). Passing ``start_epoch``
    and ``velocity`` resumes an interrupted run on the same seed stream.

    Returns (params, History, velocity).
    """
    if len(train_set.samples) == 0:
        raise ValueError("training set is empty")
    for s in train_set.samples:
        s.check_against(config)
    if velocity is None:
        velocity = params.zeros_like()
    history = History()
    n = len(train_set.samples)
    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.perf_counter()
        lr_t = cfg.lr * cfg.decay ** epoch
        order = _epoch_order(n, cfg, epoch)
        loss_sum = 0.0
        correct = 0
        clamped = 0
        for lo in range(0, n, cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            grads = None
            for j in batch:
                sample = train_set.samples[j]
                probs, tape = model.forward(params, config, sample)
                lval = model.sample_loss(tape, sample.label)
                if not math.isfinite(lval):
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch}, sample {sample.id!r}",
                        epoch=epoch, sample_id=sample.id)
                if probs[sample.label] <= 0.0:
                    clamped += 1
                loss_sum += lval
                correct += model.predict(probs) == sample.label
                g = model.backward(params, config, tape, sample.label)
                grads = g if grads is None else _add_grads(grads, g)
            if len(batch) > 1:
                _scale_grads(grads, 1.0 / len(batch))
            try:
                sgd_momentum_step(params, grads, velocity, lr_t, cfg.momentum, cfg.clip_norm)
            except NumericalError as exc:
                raise NumericalError(f"{exc} (epoch {epoch})", epoch=epoch) from None
        test_acc = float("nan")
        if test_set is not None:
            test_acc = evaluate(params, config, test_set).accuracy
        history.epochs.append(EpochMetrics(
            epoch=epoch, loss=loss_sum / n, train_acc=correct / n,
            test_acc=test_acc, lr=lr_t, seconds=time.perf_counter() - t0,
            clamped=clamped))
    return params, history, velocity


def _add_grads(a, b):
    for (_, x), (_, y) in zip(model.named_tensors(a), model.named_tensors(b)):
        x += y
    return a


def _scale_grads(g, factor):
    for _, x in model.named_tensors(g):
        x *= factor
    return g


def evaluate(params, config, dataset):
    """Accuracy, per-class accuracy, and the k x k confusion matrix.

    Read-only over ``params``; rows of the confusion matrix sum to the
    per-class sample counts.
    """
    if len(dataset.samples) == 0:
        raise ValueError("evaluation set is empty")
    k = config.k
    confusion = np.zeros((k, k), dtype=np.int64)
    for sample in dataset.samples:
        probs, _ = model.forward(params, config, sample)
        confusion[sample.label, model.predict(probs)] += 1
    totals = confusion.sum(axis=1)
    per_class = [
        float(confusion[i, i] / totals[i]) if totals[i] else float("nan")
        for i in range(k)
    ]
    accuracy = float(np.trace(confusion) / confusion.sum())
    return Metrics(accuracy, per_class, confusion, int(confusion.sum()))


@dataclass
class GradCheckReport:
    rows: list  # (tensor name, max rel err, mean rel err, entries checked)
    max_rel: float
    worst_tensor: str
    epsilon: float
    threshold: float
    passed: bool

    def to_text(self):
        width = max(len(name) for name, *_ in self.rows)
        lines = [f"{'tensor'.ljust(width)}  {'max rel err':>12}  {'mean rel err':>12}  {'checked':>7}"]
        for name, mx, mean, cnt in self.rows:
            lines.append(f"{name.ljust(width)}  {mx:12.3e}  {mean:12.3e}  {cnt:7d}")
        lines.append(
            f"worst: {self.worst_tensor} ({self.max_rel:.3e}); "
            f"threshold {self.threshold:.3e}: {'PASS' if self.passed else 'FAIL'}"
        )
        return "\n".join(lines)

    def to_dict(self):
        return {
            "schema_version": 1,
            "rows": [
                {"tensor": n, "max_rel_err": mx, "mean_rel_err": mean, "checked": cnt}
                for n, mx, mean, cnt in self.rows
            ],
            "max_rel_err": self.max_rel,
            "worst_tensor": self.worst_tensor,
            "epsilon": self.epsilon,
            "threshold": self.threshold,
            "passed": self.passed,
        }


def gradient_check(params, config, sample, epsilon=1e-5, threshold=1e-4,
                   max_entries=200, seed=0, corrupt_tensor=None):
    """Compare analytic gradients against central finite differences.

    Every entry of a tensor is probed unless the tensor exceeds
    ``max_entries`` entries, in which case a seeded subsample of that many
    entries is probed. Relative error per entry is
    |g - fd| / max(|g|, |fd|, 1e-8); the report carries per-tensor max and
    mean. ``corrupt_tensor`` flips the sign of that tensor's analytic
    gradient first (a hook for verifying the check detects broken
    backward passes).

    The probe losses are evaluated on an extended-precision copy of the
    parameters (np.longdouble, 80-bit on x86-64): the difference
    J(theta+eps) - J(theta-eps) cancels to around one ulp of J, and in
    float64 that floor, divided by 2*eps, would swamp the smallest true
    gradient entries. Where longdouble aliases float64 the check still
    runs, at the coarser floor.
    """
    sample.check_against(config)
    _, tape = model.forward(params, config, sample)
    grads = model.backward(params, config, tape, sample.label)
    named_g = dict(model.named_tensors(grads))
    if corrupt_tensor is not None:
        if corrupt_tensor not in named_g:
            raise KeyError(f"no tensor named {corrupt_tensor!r}")
        named_g[corrupt_tensor] *= -1.0
    rng = np.random.default_rng(seed)
    params_ext = params.map_arrays(lambda a: a.astype(np.longdouble))

    def loss_now():
        _, t = model.forward(params_ext, config, sample)
        return model.sample_loss(t, sample.label)

    rows = []
    for name, theta in model.named_tensors(params_ext):
        g = named_g[name]
        size = theta.size
        if size <= max_entries:
            idx = np.arange(size)
        else:
            idx = np.sort(rng.choice(size, size=max_entries, replace=False))
        rels = np.empty(len(idx))
        for pos, i in enumerate(idx):
            orig = theta.flat[i]
            theta.flat[i] = orig + epsilon
            up = loss_now()
            theta.flat[i] = orig - epsilon
            down = loss_now()
            theta.flat[i] = orig
            fd = float((up - down) / (2.0 * epsilon))
            a = g.flat[i]
            rels[pos] = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
        rows.append((name, float(rels.max()), float(rels.mean()), len(idx)))
    worst = max(rows, key=lambda r: r[1])
    return GradCheckReport(
        rows=rows, max_rel=worst[1], worst_tensor=worst[0],
        epsilon=epsilon, threshold=threshold, passed=worst[1] <= threshold)

"""Vertical federated logistic regression driven by a secret-key budget.

Feature columns are partitioned across workers; only the first worker holds
labels. Training minimizes the quadratic surrogate of the logistic loss,
``log 2 - y*u/2 + u^2/8`` averaged over samples plus an L2 penalty, where
``u`` sums each admitted worker's local score. Workers exchange only scalar
scores and residuals, never raw columns or labels; key exchange and record
alignment are simulated as budget debits over an id intersection.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .parsing import ParseError, parse_number, read_tokens

LOG2 = math.log(2.0)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss (step size too large)."""


@dataclass(frozen=True)
class SecretKeyBudget:
    """Key units/s granted to a cluster head, and the per-channel draw."""

    rate: float
    per_channel_rate: float = 1.0

    def __post_init__(self):
        if self.rate < 0 or self.per_channel_rate <= 0:
            raise ValueError("rates must be nonnegative (per-channel positive)")


def admitted_workers(budget: SecretKeyBudget, available: int) -> int:
    """Workers that can hold a secured channel; the label holder always joins."""
    if available < 1:
        raise ValueError("need at least one worker")
    return max(1, min(available, 1 + int(budget.rate // budget.per_channel_rate)))


@dataclass
class VerticalDataset:
    """Column-partitioned samples; worker 0's shard carries the labels."""

    features: np.ndarray
    labels: np.ndarray
    shard_bounds: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if len(self.labels) != len(self.features):
            raise ValueError("label count differs from sample count")
        if not np.all(np.isin(self.labels, (-1, 1))):
            raise ValueError("labels must be -1 or +1")
        covered = []
        for start, end in self.shard_bounds:
            if end <= start:
                raise ValueError("shard widths must be at least 1")
            covered.extend(range(start, end))
        if sorted(covered) != list(range(self.features.shape[1])):
            raise ValueError("shards must partition the feature columns")

    @property
    def num_workers(self) -> int:
        return len(self.shard_bounds)

    @property
    def num_samples(self) -> int:
        return len(self.features)

    def shard(self, worker: int) -> np.ndarray:
        start, end = self.shard_bounds[worker]
        return self.features[:, start:end]


@dataclass
class GlobalModel:
    """Per-worker coefficient blocks, in shard order."""

    blocks: list[np.ndarray]

    def flat(self) -> np.ndarray:
        return np.concatenate(self.blocks) if self.blocks else np.zeros(0)


class ShardWorker:
    """Owns one feature shard and its coefficient block.

    The training loop interacts with workers only through these methods, so
    raw columns never leave the object.
    """

    def __init__(self, shard: np.ndarray):
        self._shard = shard
        self.theta = np.zeros(shard.shape[1])

    @property
    def width(self) -> int:
        return self._shard.shape[1]

    def local_scores(self) -> np.ndarray:
        return self._shard @ self.theta

    def apply_residuals(self, residuals: np.ndarray, learn_rate: float,
                        l2_penalty: float) -> None:
        gradient = self._shard.T @ residuals + l2_penalty * self.theta
        self.theta = self.theta - learn_rate * gradient

    def penalty(self) -> float:
        return float(self.theta @ self.theta)


class LabelHolder(ShardWorker):
    """The one worker allowed to see labels; computes loss and residuals."""

    def __init__(self, shard: np.ndarray, labels: np.ndarray):
        super().__init__(shard)
        self._labels = labels

    def data_loss(self, scores: np.ndarray) -> float:
        y = self._labels
        return LOG2 + float(np.mean(-0.5 * y * scores + 0.125 * scores**2))

    def residuals(self, scores: np.ndarray) -> np.ndarray:
        return (0.25 * scores - 0.5 * self._labels) / len(self._labels)


@dataclass
class MessageLedger:
    """Budget accounting that stands in for key exchange and encryption."""

    key_units_spent: float = 0.0
    messages: int = 0

    def debit(self, key_units: float, count: int = 1) -> None:
        self.key_units_spent += key_units * count
        self.messages += count


def align_samples(ids_by_worker: list[set], ledger: MessageLedger | None = None,
                  units_per_exchange: float = 1.0) -> set:
    """Private-set-intersection stand-in: plain id intersection plus debits."""
    common = set.intersection(*ids_by_worker) if ids_by_worker else set()
    if ledger is not None:
        ledger.debit(units_per_exchange, count=2 * len(ids_by_worker))
    return common


def build_workers(dataset: VerticalDataset, admitted: int) -> list[ShardWorker]:
    if not 1 <= admitted <= dataset.num_workers:
        raise ValueError("admitted workers out of range")
    workers: list[ShardWorker] = [LabelHolder(dataset.shard(0), dataset.labels)]
    workers.extend(ShardWorker(dataset.shard(k)) for k in range(1, admitted))
    return workers


@dataclass
class FelTrainResult:
    losses: list[float]
    model: GlobalModel
    ledger: MessageLedger = field(default_factory=MessageLedger)

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


def train_vertical(dataset: VerticalDataset, admitted: int, epochs: int = 200,
                   learn_rate: float = 0.5, l2_penalty: float = 1e-3,
                   workers: list[ShardWorker] | None = None,
                   ledger: MessageLedger | None = None) -> FelTrainResult:
    """Full-batch gradient descent on the quadratic surrogate loss.

    ``losses[0]`` is the pre-update loss (exactly log 2 from zero
    coefficients); one entry follows per epoch. Raises DivergenceError when
    the loss leaves the finite range.
    """
    if workers is None:
        workers = build_workers(dataset, admitted)
    holder = workers[0]
    if not isinstance(holder, LabelHolder):
        raise ValueError("worker 0 must hold the labels")
    ledger = ledger if ledger is not None else MessageLedger()

    def current_loss() -> tuple[float, np.ndarray]:
        scores = np.zeros(dataset.num_samples)
        for worker in workers:
            scores += worker.local_scores()
            ledger.debit(1.0)
        penalty = 0.5 * l2_penalty * sum(w.penalty() for w in workers)
        return holder.data_loss(scores) + penalty, scores

    losses: list[float] = []
    loss, scores = current_loss()
    losses.append(loss)
    for _ in range(epochs):
        residuals = holder.residuals(scores)
        ledger.debit(1.0, count=len(workers))
        for worker in workers:
            worker.apply_residuals(residuals, learn_rate, l2_penalty)
        loss, scores = current_loss()
        if not math.isfinite(loss):
            raise DivergenceError(f"loss diverged to {loss}; lower the learn rate")
        losses.append(loss)
    model = GlobalModel(blocks=[w.theta.copy() for w in workers])
    return FelTrainResult(losses=losses, model=model, ledger=ledger)


def taylor_loss_and_gradient(features: np.ndarray, labels: np.ndarray,
                             theta: np.ndarray, l2_penalty: float = 0.0
                             ) -> tuple[float, np.ndarray]:
    """Centralized surrogate loss and its exact gradient (test reference)."""
    scores = features @ theta
    loss = LOG2 + float(np.mean(-0.5 * labels * scores + 0.125 * scores**2))
    loss += 0.5 * l2_penalty * float(theta @ theta)
    grad = features.T @ (0.25 * scores - 0.5 * labels) / len(labels)
    grad = grad + l2_penalty * theta
    return loss, grad


def optimal_taylor_loss(features: np.ndarray, labels: np.ndarray,
                        l2_penalty: float) -> float:
    """Closed-form minimum of the quadratic surrogate (normal equations)."""
    n, d = features.shape
    hessian = features.T @ features / (4 * n) + l2_penalty * np.eye(d)
    rhs = features.T @ labels / (2 * n)
    theta = np.linalg.solve(hessian, rhs)
    loss, _ = taylor_loss_and_gradient(features, labels, theta, l2_penalty)
    return loss


def key_rate_sweep(dataset: VerticalDataset, budgets: list[SecretKeyBudget],
                   epochs: int = 200, learn_rate: float = 0.5,
                   l2_penalty: float = 1e-3) -> list[tuple[float, int, float]]:
    """One fresh training run per budget: rows of (rate, workers, final loss)."""
    rates = [b.rate for b in budgets]
    if rates != sorted(rates):
        raise ValueError("budgets must be nondecreasing")
    curve = []
    for budget in budgets:
        k = admitted_workers(budget, dataset.num_workers)
        result = train_vertical(dataset, k, epochs=epochs,
                                learn_rate=learn_rate, l2_penalty=l2_penalty)
        curve.append((budget.rate, k, result.final_loss))
    return curve


def curve_csv(curve: list[tuple[float, int, float]]) -> str:
    rows = ["rate,workers,final_loss"]
    rows += [f"{rate:.6g},{workers},{loss:.10g}" for rate, workers, loss in curve]
    return "\n".join(rows) + "\n"


def make_synthetic(num_samples: int = 400, num_workers: int = 8,
                   cols_per_worker: int = 2, separation: float = 1.0,
                   rng: np.random.Generator | None = None) -> VerticalDataset:
    """Gaussian class-conditional data; every shard carries signal."""
    rng = rng if rng is not None else np.random.default_rng(0)
    d = num_workers * cols_per_worker
    labels = np.where(rng.random(num_samples) < 0.5, -1.0, 1.0)
    features = rng.normal(size=(num_samples, d)) + separation * labels[:, None]
    bounds = tuple((k * cols_per_worker, (k + 1) * cols_per_worker)
                   for k in range(num_workers))
    return VerticalDataset(features=features, labels=labels, shard_bounds=bounds)


def load_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Feature columns plus a final ``label`` column holding -1/+1."""
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        if not header or header[-1].strip().lower() != "label":
            raise ValueError(f"{path}: last column must be named 'label'")
        rows = [[float(cell) for cell in row] for row in reader if row]
    data = np.array(rows)
    if data.size == 0:
        raise ValueError(f"{path}: no data rows")
    return data[:, :-1], data[:, -1]


def load_shard_map(path, num_columns: int) -> tuple[tuple[int, int], ...]:
    """Parse ``worker <k> <col_start> <col_end>`` lines (inclusive ends)."""
    entries: dict[int, tuple[int, int]] = {}
    for line_no, tokens in read_tokens(path):
        if tokens[0] != "worker" or len(tokens) != 4:
            raise ParseError(str(path), line_no, "expected: worker <k> <col_start> <col_end>")
        k = parse_number(tokens[1], str(path), line_no, int)
        start = parse_number(tokens[2], str(path), line_no, int)
        end = parse_number(tokens[3], str(path), line_no, int)
        if k in entries:
            raise ParseError(str(path), line_no, f"duplicate worker {k}")
        entries[k] = (start, end + 1)
    if sorted(entries) != list(range(len(entries))):
        raise ValueError(f"{path}: workers must be numbered 0..{len(entries) - 1}")
    bounds = tuple(entries[k] for k in sorted(entries))
    covered = sorted(c for start, end in bounds for c in range(start, end))
    if covered != list(range(num_columns)):
        raise ValueError(f"{path}: shards must cover all {num_columns} feature columns")
    return bounds

import math

import numpy as np
import pytest

from qkdprov.fel import (LOG2, DivergenceError, LabelHolder, SecretKeyBudget,
                         ShardWorker, VerticalDataset, admitted_workers,
                         build_workers, curve_csv, key_rate_sweep, load_csv,
                         load_shard_map, make_synthetic, optimal_taylor_loss,
                         taylor_loss_and_gradient, train_vertical)


@pytest.fixture
def dataset():
    return make_synthetic(num_samples=300, num_workers=4, cols_per_worker=2,
                          separation=0.8, rng=np.random.default_rng(21))


def test_admitted_workers_arithmetic():
    assert admitted_workers(SecretKeyBudget(rate=0.0), 10) == 1
    assert admitted_workers(SecretKeyBudget(rate=3.0, per_channel_rate=1.0), 10) == 4
    assert admitted_workers(SecretKeyBudget(rate=1e9), 10) == 10
    assert admitted_workers(SecretKeyBudget(rate=2.5, per_channel_rate=1.0), 10) == 3


def test_zero_model_loss_is_exactly_log_two(dataset):
    result = train_vertical(dataset, admitted=dataset.num_workers, epochs=0)
    assert result.losses == [LOG2]


def test_training_decreases_loss(dataset):
    result = train_vertical(dataset, admitted=dataset.num_workers, epochs=150)
    assert result.final_loss < result.losses[0]
    assert all(b <= a + 1e-12 for a, b in zip(result.losses, result.losses[1:]))


def test_full_participation_at_least_as_good_as_label_holder_alone(dataset):
    l2 = 1e-3
    solo = train_vertical(dataset, admitted=1, epochs=2000, learn_rate=0.8,
                          l2_penalty=l2)
    everyone = train_vertical(dataset, admitted=dataset.num_workers, epochs=2000,
                              learn_rate=0.8, l2_penalty=l2)
    assert everyone.final_loss <= solo.final_loss + 1e-6


def test_descent_approaches_normal_equation_optimum(dataset):
    l2 = 1e-3
    result = train_vertical(dataset, admitted=dataset.num_workers, epochs=4000,
                            learn_rate=0.8, l2_penalty=l2)
    target = optimal_taylor_loss(dataset.features, dataset.labels, l2)
    assert result.final_loss == pytest.approx(target, abs=1e-6)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n, d = int(rng.integers(5, 30)), int(rng.integers(1, 6))
        features = rng.normal(size=(n, d))
        labels = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        theta = rng.normal(size=d)
        l2 = float(rng.uniform(0, 0.1))
        _, grad = taylor_loss_and_gradient(features, labels, theta, l2)
        h = 1e-5
        for i in range(d):
            up = theta.copy(); up[i] += h
            down = theta.copy(); down[i] -= h
            lu, _ = taylor_loss_and_gradient(features, labels, up, l2)
            ld, _ = taylor_loss_and_gradient(features, labels, down, l2)
            numeric = (lu - ld) / (2 * h)
            scale = max(abs(numeric), abs(grad[i]), 1e-8)
            assert abs(numeric - grad[i]) / scale <= 1e-4


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_divergence_raises():
    data = make_synthetic(num_samples=50, num_workers=2, separation=2.0,
                          rng=np.random.default_rng(2))
    with pytest.raises(DivergenceError):
        train_vertical(data, admitted=2, epochs=400, learn_rate=1e9)


def test_sweep_rows_and_monotonicity(dataset):
    budgets = [SecretKeyBudget(rate=float(k)) for k in range(dataset.num_workers)]
    curve = key_rate_sweep(dataset, budgets, epochs=400, learn_rate=0.8)
    assert [workers for _, workers, _ in curve] == [1, 2, 3, 4]
    losses = [loss for _, _, loss in curve]
    assert all(b <= a + 1e-3 for a, b in zip(losses, losses[1:]))
    assert losses[-1] <= 0.9 * LOG2


def test_sweep_same_worker_count_same_loss(dataset):
    budgets = [SecretKeyBudget(rate=1.0), SecretKeyBudget(rate=1.9)]
    curve = key_rate_sweep(dataset, budgets, epochs=50)
    assert curve[0][1] == curve[1][1] == 2
    assert curve[0][2] == curve[1][2]


def test_sweep_validates_ordering_and_single_budget(dataset):
    with pytest.raises(ValueError, match="nondecreasing"):
        key_rate_sweep(dataset, [SecretKeyBudget(rate=2.0), SecretKeyBudget(rate=1.0)])
    curve = key_rate_sweep(dataset, [SecretKeyBudget(rate=0.0)], epochs=20)
    assert len(curve) == 1
    text = curve_csv(curve)
    assert text.splitlines()[0] == "rate,workers,final_loss"
    assert len(text.splitlines()) == 2


class RecordingWorker(ShardWorker):
    def __init__(self, shard, log, name):
        super().__init__(shard)
        self._log = log
        self._name = name

    def local_scores(self):
        self._log.append((self._name, "local_scores"))
        return super().local_scores()

    def apply_residuals(self, residuals, learn_rate, l2_penalty):
        self._log.append((self._name, "apply_residuals"))
        super().apply_residuals(residuals, learn_rate, l2_penalty)

    def penalty(self):
        self._log.append((self._name, "penalty"))
        return super().penalty()


class RecordingHolder(RecordingWorker, LabelHolder):
    def __init__(self, shard, labels, log):
        LabelHolder.__init__(self, shard, labels)
        self._log = log
        self._name = "holder"

    def data_loss(self, scores):
        self._log.append((self._name, "data_loss"))
        return LabelHolder.data_loss(self, scores)

    def residuals(self, scores):
        self._log.append((self._name, "residuals"))
        return LabelHolder.residuals(self, scores)


def test_privacy_contract_via_instrumented_workers(dataset):
    log = []
    workers = [RecordingHolder(dataset.shard(0), dataset.labels, log)]
    workers += [RecordingWorker(dataset.shard(k), log, f"w{k}")
                for k in range(1, 3)]
    train_vertical(dataset, admitted=3, epochs=3, workers=workers)
    # Only scalar exchanges: scores out, residuals in, plus penalty norms.
    allowed = {"local_scores", "apply_residuals", "penalty"}
    for name, call in log:
        if name != "holder":
            assert call in allowed, f"feature worker performed {call}"
    # Label-dependent computation happened only on the holder.
    assert ("holder", "data_loss") in log
    assert ("holder", "residuals") in log
    label_calls = [c for n, c in log if c in ("data_loss", "residuals")]
    assert all(n == "holder" for n, c in log if c in ("data_loss", "residuals"))


def test_build_workers_places_labels_first(dataset):
    workers = build_workers(dataset, admitted=2)
    assert isinstance(workers[0], LabelHolder)
    assert not isinstance(workers[1], LabelHolder)
    with pytest.raises(ValueError):
        build_workers(dataset, admitted=0)


def test_dataset_invariants():
    with pytest.raises(ValueError, match="partition"):
        VerticalDataset(features=np.zeros((4, 3)),
                        labels=np.ones(4),
                        shard_bounds=((0, 2),))
    with pytest.raises(ValueError, match="-1 or \\+1"):
        VerticalDataset(features=np.zeros((2, 1)),
                        labels=np.array([0.0, 1.0]),
                        shard_bounds=((0, 1),))


def test_csv_and_shard_map_ingestion(tmp_path):
    csv_path = tmp_path / "data.csv"
    csv_path.write_text("f0,f1,f2,label\n0.5,1.0,2.0,1\n-0.5,0.0,1.0,-1\n")
    features, labels = load_csv(csv_path)
    assert features.shape == (2, 3)
    assert labels.tolist() == [1.0, -1.0]

    shard_path = tmp_path / "shards.txt"
    shard_path.write_text("worker 0 0 1\nworker 1 2 2\n")
    bounds = load_shard_map(shard_path, num_columns=3)
    assert bounds == ((0, 2), (2, 3))
    dataset = VerticalDataset(features=features, labels=labels, shard_bounds=bounds)
    assert dataset.shard(1).shape == (2, 1)

    bad = tmp_path / "bad.txt"
    bad.write_text("worker 0 0 0\n")
    with pytest.raises(ValueError, match="cover"):
        load_shard_map(bad, num_columns=3)


def test_message_ledger_counts_budget(dataset):
    result = train_vertical(dataset, admitted=2, epochs=5)
    assert result.ledger.messages > 0
    assert result.ledger.key_units_spent > 0

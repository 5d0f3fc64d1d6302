import numpy as np
import pytest

from ltcnn.data import batch_iterator
from ltcnn.errors import DatasetError, DivergenceError
from ltcnn.network import NetworkSpec, build_network
from ltcnn.optim import make_optimizer
from ltcnn.tensor import make_rng
from ltcnn.train import (
    EpochRecord,
    TrainConfig,
    emit_curves,
    format_progress,
    read_curves,
    train,
    train_step,
)


@pytest.fixture
def no_dropout_spec():
    return NetworkSpec.for_classes(["left", "right"], input_height=32, input_width=32, dropout_rate=0.0)


def fresh(spec, seed=0):
    return build_network(spec, make_rng(seed, "init"))


class TestTrainConfig:
    """Test training hyperparameter validation."""

    def test_defaults(self):
        """Test batch 32, Adam and lr 1e-3 by default."""
        cfg = TrainConfig(epochs=3)
        assert (cfg.batch_size, cfg.optimizer, cfg.learning_rate) == (32, "adam", 1e-3)

    @pytest.mark.parametrize("bad", [{"epochs": 0}, {"epochs": 1, "batch_size": 0},
                                     {"epochs": 1, "optimizer": "rmsprop"}, {"epochs": 1, "lr": 0.1}])
    def test_rejects_bad_values(self, bad):
        """Test bounds, enum and unknown keys."""
        with pytest.raises(ValueError):
            TrainConfig(**bad)


class TestTrainStep:
    """Test a single optimization step."""

    def test_memorizes_one_batch(self, no_dropout_spec, halves_dataset):
        """Test that repeated steps on one batch drive the loss near zero."""
        net = fresh(no_dropout_spec)
        x, labels = next(batch_iterator(halves_dataset, 8, None, False, no_dropout_spec, workers=1))
        opt = make_optimizer("adam", net.named_parameters(), 0.01)
        rng = make_rng(0, "dropout")
        for _ in range(300):
            loss, _ = train_step(net, x, labels, opt, rng)
        assert loss < 0.01

    def test_non_finite_loss_leaves_parameters(self, no_dropout_spec, halves_dataset, mocker):
        """Test that a NaN loss raises before any update."""
        net = fresh(no_dropout_spec)
        before = {k: v.copy() for k, v in net.named_parameters().items()}
        mocker.patch("ltcnn.train.softmax_cross_entropy", return_value=(float("nan"), None, None))
        x, labels = next(batch_iterator(halves_dataset, 4, None, False, no_dropout_spec, workers=1))
        with pytest.raises(FloatingPointError):
            train_step(net, x, labels, make_optimizer("adam", net.named_parameters(), 0.01), make_rng(0))
        assert all(np.array_equal(before[k], v) for k, v in net.named_parameters().items())


class TestTrain:
    """Test the epoch loop."""

    def test_overfits_small_set(self, small_spec, halves_dataset):
        """Test that the default network (dropout 0.2, Adam at 1e-3) fits eight separable images at some epoch."""
        net = fresh(small_spec)
        assert small_spec.dropout_rate == 0.2
        cfg = TrainConfig(epochs=50, batch_size=4)
        assert (cfg.optimizer, cfg.learning_rate) == ("adam", 1e-3)
        result = train(net, halves_dataset, None, cfg, workers=1)
        assert len(result.records) == 50
        assert any(r.train_accuracy == 1.0 for r in result.records)
        assert result.records[-1].train_loss < result.records[0].train_loss

    def test_same_seed_same_run(self, small_spec, halves_dataset, halves_val_dataset):
        """Test that two runs with one seed give identical weights and curves."""
        cfg = TrainConfig(epochs=3, batch_size=4, seed=11)
        a = train(fresh(small_spec, 11), halves_dataset, halves_val_dataset, cfg, workers=1)
        b = train(fresh(small_spec, 11), halves_dataset, halves_val_dataset, cfg, workers=4)
        assert a.records == b.records
        for name, value in a.final.tensors.items():
            assert np.array_equal(value, b.final.tensors[name])

    def test_best_is_earliest_highest_validation_accuracy(self, small_spec, halves_dataset, halves_val_dataset):
        """Test best-checkpoint selection and its metadata."""
        result = train(fresh(small_spec), halves_dataset, halves_val_dataset,
                       TrainConfig(epochs=4, batch_size=4, learning_rate=0.01), workers=1)
        accs = [r.val_accuracy for r in result.records]
        expected = accs.index(max(accs)) + 1
        assert result.best.metadata.best_epoch == expected
        assert result.best.metadata.epochs_trained == expected
        assert result.final.metadata.epochs_trained == 4
        assert result.final.metadata.best_epoch == expected

    def test_without_validation_best_is_final(self, small_spec, halves_dataset):
        """Test that best falls back to the final weights."""
        result = train(fresh(small_spec), halves_dataset, None, TrainConfig(epochs=1, batch_size=4), workers=1)
        assert result.best is result.final
        assert result.records[0].val_accuracy is None

    def test_eval_every(self, small_spec, halves_dataset, halves_val_dataset):
        """Test that validation runs on the period and on the last epoch."""
        result = train(fresh(small_spec), halves_dataset, halves_val_dataset,
                       TrainConfig(epochs=3, batch_size=4, eval_every=2), workers=1)
        assert [r.val_accuracy is not None for r in result.records] == [False, True, True]

    def test_progress_callback(self, small_spec, halves_dataset):
        """Test one callback per epoch with the total epoch count."""
        calls = []
        train(fresh(small_spec), halves_dataset, None, TrainConfig(epochs=2, batch_size=8),
              progress=lambda record, total: calls.append((record.epoch, total)), workers=1)
        assert calls == [(1, 2), (2, 2)]

    def test_divergence_reports_epoch_and_batch(self, small_spec, halves_dataset, mocker):
        """Test that a NaN loss stops training with exit code 3."""
        mocker.patch("ltcnn.train.softmax_cross_entropy", return_value=(float("nan"), None, None))
        with pytest.raises(DivergenceError) as exc:
            train(fresh(small_spec), halves_dataset, None, TrainConfig(epochs=2, batch_size=4), workers=1)
        assert (exc.value.epoch, exc.value.batch) == (1, 1)
        assert exc.value.exit_code == 3
        assert "divergence at epoch 1, batch 1" in str(exc.value)

    def test_train_time_logged(self, small_spec, halves_dataset, mocker):
        """Test that the wall-clock training time is logged and returned."""
        log = mocker.patch("ltcnn.train.log")
        result = train(fresh(small_spec), halves_dataset, None, TrainConfig(epochs=2, batch_size=4), workers=1)
        finished = [c for c in log.info.call_args_list if c.args and c.args[0] == "train_finished"]
        assert len(finished) == 1
        assert finished[0].kwargs["epochs"] == 2
        assert finished[0].kwargs["elapsed_seconds"] >= 0
        assert result.elapsed_seconds > 0

    def test_train_time_not_in_checkpoint(self, small_spec, halves_dataset):
        """Test that two identical runs produce identical checkpoints despite different timings."""
        runs = [train(fresh(small_spec), halves_dataset, None, TrainConfig(epochs=1, batch_size=4), workers=1)
                for _ in range(2)]
        assert runs[0].final.metadata == runs[1].final.metadata
        assert "elapsed" not in runs[0].final.metadata.model_dump_json()

    def test_class_mismatch(self, halves_dataset):
        """Test that the dataset classes must match the network."""
        spec = NetworkSpec.for_classes(["cat", "dog"], input_height=32, input_width=32)
        with pytest.raises(DatasetError, match="classes do not match"):
            train(fresh(spec), halves_dataset, None, TrainConfig(epochs=1), workers=1)


class TestCurves:
    """Test progress lines and the curves CSV."""

    def test_progress_line(self):
        """Test the per-epoch progress format."""
        record = EpochRecord(epoch=2, train_loss=0.5, train_accuracy=0.75, val_loss=0.25, val_accuracy=1.0)
        assert format_progress(record, 5) == (
            "epoch 2/5 train_loss=0.5000 train_acc=0.7500 val_loss=0.2500 val_acc=1.0000"
        )
        assert format_progress(EpochRecord(epoch=1, train_loss=1, train_accuracy=0), 1) == (
            "epoch 1/1 train_loss=1.0000 train_acc=0.0000"
        )

    def test_write_and_read(self, tmp_path):
        """Test header, empty validation cells and reading back."""
        records = [
            EpochRecord(epoch=1, train_loss=0.7, train_accuracy=0.5),
            EpochRecord(epoch=2, train_loss=0.3, train_accuracy=0.875, val_loss=0.4, val_accuracy=0.75),
        ]
        path = tmp_path / "curves.csv"
        emit_curves(records, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,train_loss,train_acc,val_loss,val_acc"
        assert lines[1] == "1,0.7,0.5,,"
        assert read_curves(path) == records

    def test_read_rejects_other_csv(self, tmp_path):
        """Test that a file with another header is refused."""
        path = tmp_path / "other.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_curves(path)

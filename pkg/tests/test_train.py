import numpy as np
import pytest

from skycount.errors import ContractError, NumericError, ShapeError
from skycount.gradcheck import grad_check
from skycount.model import Variant, build_model, forward
from skycount.synthetic import blob_samples, tiny_config
from skycount.tensor import Tensor, square, tsum
from skycount.train import (TrainConfig, format_loss_log, l2_loss, parse_loss_log, prepare_sample,
                            sgd_step, train)
from skycount.weights import load_weights


class TestLoss:
    def test_zero(self, rng):
        a = rng.normal(size=(2, 1, 3, 3))
        assert l2_loss(Tensor(a), Tensor(a)).item() == 0.0

    def test_arithmetic(self):
        pred = Tensor(np.array([1.0, -1.0, 0.0, 0.0]).reshape(1, 1, 2, 2))
        assert l2_loss(pred, Tensor(np.zeros((1, 1, 2, 2)))).item() == 1.0

    def test_gradient(self, rng):
        gt = rng.normal(size=(3, 1, 2, 2))
        pred = Tensor(rng.normal(size=(3, 1, 2, 2)), requires_grad=True)
        l2_loss(pred, Tensor(gt)).backward()
        np.testing.assert_allclose(pred.grad, (pred.data - gt) / 3, rtol=1e-14)
        assert grad_check(lambda p: l2_loss(p, Tensor(gt)), Tensor(pred.data)).passed

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            l2_loss(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 2, 3))))


class TestSgd:
    def test_update_rule(self):
        theta = Tensor([1.0], requires_grad=True)
        theta.grad = np.array([2.0])
        sgd_step({"t": theta}, 0.1)
        assert theta.data[0] == pytest.approx(0.8) and theta.grad is None

    def test_zero_gradient(self, rng):
        w = Tensor(rng.normal(size=3), requires_grad=True)
        before = w.data.copy()
        w.grad = np.zeros(3)
        sgd_step({"w": w}, 0.5)
        np.testing.assert_array_equal(w.data, before)

    def test_missing_gradient_named(self):
        a, b = Tensor([1.0], requires_grad=True), Tensor([1.0], requires_grad=True)
        a.grad = np.ones(1)
        with pytest.raises(ContractError, match="'b'"):
            sgd_step({"a": a, "b": b}, 0.1)
        assert a.data[0] == 1.0  # nothing applied on failure

    @pytest.mark.parametrize("lr", [0.05, 0.3, 0.9])
    def test_quadratic_contracts(self, lr):
        theta = Tensor([3.0], requires_grad=True)
        values = []
        for _ in range(30):
            tsum(square(theta)).backward()
            sgd_step({"t": theta}, lr)
            values.append(theta.data[0] ** 2)
        assert all(b < a for a, b in zip(values, values[1:]))
        assert values[-1] == pytest.approx(9 * (1 - 2 * lr) ** 60, rel=1e-9)

    def test_small_step_decreases_batch_loss(self):
        config = tiny_config()
        params = build_model(config, np.random.default_rng(0))
        prep = prepare_sample(blob_samples(1, 32, seed=4)[0], 4.0)
        x, gt = Tensor(prep.image[None]), Tensor(prep.target[None, None])
        loss = l2_loss(forward(params, config, x), gt)
        loss.backward()
        sgd_step(params, 1e-7)
        assert l2_loss(forward(params, config, x), gt).item() < loss.item()


class TestTrain:
    def _setup(self, n=3, size=32):
        config = tiny_config(init_scheme="he")
        return config, blob_samples(n, size, counts=(2, 5), margin=4, seed=1)

    def test_lr_zero_keeps_params(self):
        config, samples = self._setup()
        params = build_model(config, np.random.default_rng(0))
        before = {n: t.data.copy() for n, t in params.items()}
        train(params, config, TrainConfig(learning_rate=0.0, max_epochs=2), samples, sigma=3)
        assert all(np.array_equal(params[n].data, v) for n, v in before.items())

    def test_deterministic_and_logged(self, tmp_path):
        config, samples = self._setup()
        logs, blobs = [], []
        for run in range(2):
            params = build_model(config, np.random.default_rng(0))
            log = tmp_path / f"loss{run}.log"
            tc = TrainConfig(learning_rate=1e-3, batch_size=2, max_epochs=3, seed=5,
                             checkpoint_every=2, checkpoint_dir=str(tmp_path / f"ck{run}"),
                             log_path=str(log))
            result = train(params, config, tc, samples, sigma=3)
            logs.append(log.read_bytes())
            blobs.append((tmp_path / f"ck{run}" / "checkpoint_epoch0002.aspd").read_bytes())
            assert parse_loss_log(log.read_text()) == result.log
            assert len(result.log) == 3 * 2 and len(result.epoch_losses()) == 3
        assert logs[0] == logs[1] and blobs[0] == blobs[1]
        assert not (tmp_path / "ck0" / "checkpoint_epoch0001.aspd").exists()
        load_weights(tmp_path / "ck0" / "checkpoint_epoch0002.aspd", config)

    def test_validation_tracked(self):
        config, samples = self._setup()
        params = build_model(config, np.random.default_rng(0))
        result = train(params, config, TrainConfig(learning_rate=1e-3, max_epochs=2), samples[:2],
                       val_samples=samples[2:], sigma=3)
        assert len(result.val_mae) == 2 and all(np.isfinite(result.val_mae))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_aborts(self):
        config, samples = self._setup(1)
        params = build_model(config, np.random.default_rng(0))
        params["head.bias"].data[:] = np.inf
        with pytest.raises(NumericError, match=r"epoch 1, batch 0.*max \|grad\|"):
            train(params, config, TrainConfig(max_epochs=1), samples, sigma=3)

    def test_empty(self):
        config, _ = self._setup()
        with pytest.raises(ContractError):
            train(build_model(config, np.random.default_rng(0)), config, TrainConfig(), [])

    def test_config_validation(self):
        with pytest.raises(ContractError):
            TrainConfig(batch_size=0)
        with pytest.raises(ContractError):
            TrainConfig(learning_rate=-1.0)
        assert TrainConfig().learning_rate == 1e-5 and TrainConfig().max_epochs == 400


def test_prepare_sample_conserves_count():
    s = blob_samples(1, 60, counts=(4, 4), margin=20, seed=2)[0]
    prep = prepare_sample(s, 3.0)
    assert prep.image.shape == (3, 64, 64) and prep.target.shape == (8, 8)
    assert prep.target.sum() == pytest.approx(4.0, abs=4e-3)


def test_loss_log_format():
    log = [(1, 0, 0.1), (1, 1, 1 / 3)]
    text = format_loss_log(log)
    assert text.splitlines()[0] == "1\t0\t0.1"
    assert parse_loss_log(text) == log

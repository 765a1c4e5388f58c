import numpy as np
import pytest
from sklearn.base import clone

from softproprio.errors import ShapeMismatch, ValidationError
from softproprio.regressor import (ShapeRegressor, load_regressor, predict_shape, save_regressor,
                                   train_regressor)
from softproprio.sensor import SensorRecording, build_dataset

from helpers import fitted_regressor, gradient_check


class TestGradients:
    @pytest.mark.parametrize("preset", ["strip", "finger", "linear"])
    def test_matches_finite_differences(self, preset):
        reg, X, Y = fitted_regressor(preset)
        for seed in range(3):
            assert gradient_check(reg, X, Y, seed=seed) < 1e-4


class TestTraining:
    def test_constant_targets(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(200, 8))
        Y = np.tile([0.3, -2.0, 5.0], (200, 1))
        reg = ShapeRegressor(preset="finger", dropout=0.0, epochs=200, learning_rate=1e-2).fit(X, Y)
        # standardized targets are all zero, so the loss is the squared output itself
        assert reg.loss_curve_[-1] < 0.05 * reg.loss_curve_[0]
        assert np.mean((reg.predict(X) - Y) ** 2) < 2e-3
        np.testing.assert_allclose(reg.predict(X).mean(axis=0), Y[0], atol=0.02)

    def test_linear_mapping_is_learned(self):
        rng = np.random.default_rng(1)
        A = rng.normal(size=(8, 4))
        X = rng.normal(size=(600, 8))
        Y = X @ A
        Xv = rng.normal(size=(200, 8))
        Yv = Xv @ A
        reg = ShapeRegressor(preset="linear", epochs=200, learning_rate=1e-2).fit(X, Y, Xv, Yv)
        mse = np.mean((reg.predict(Xv) - Yv) ** 2)
        assert mse < 1e-4 * Yv.var()

    def test_loss_decreases(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(400, 8))
        Y = np.tanh(X @ rng.normal(size=(8, 3)))
        reg = ShapeRegressor(preset="finger", dropout=0.0, epochs=30, learning_rate=1e-2).fit(X, Y)
        assert reg.loss_curve_[-1] < 0.5 * reg.loss_curve_[0]

    def test_best_validation_epoch_is_kept(self):
        rng = np.random.default_rng(3)
        X, Y = rng.normal(size=(100, 8)), rng.normal(size=(100, 2))
        Xv, Yv = rng.normal(size=(50, 8)), rng.normal(size=(50, 2))
        reg = ShapeRegressor(preset="finger", epochs=15).fit(X, Y, Xv, Yv)
        best = reg.best_epoch_
        assert reg.validation_curve_[best] == min(reg.validation_curve_)
        Xs = (Xv - reg.x_mean_) / reg.x_scale_
        Ys = (Yv - reg.y_mean_) / reg.y_scale_
        assert reg._loss(reg.layers_, Xs, Ys) == pytest.approx(reg.validation_curve_[best])

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        X, Y = rng.normal(size=(80, 5, 8)), rng.normal(size=(80, 8))
        a = ShapeRegressor(preset="strip", epochs=3, random_state=7).fit(X, Y)
        b = ShapeRegressor(preset="strip", epochs=3, random_state=7).fit(X, Y)
        np.testing.assert_array_equal(a.predict(X), b.predict(X))

    def test_train_regressor_uses_splits(self):
        rng = np.random.default_rng(5)
        recs = [SensorRecording(rng.normal(size=(60, 8)), rng.normal(size=(60, 8)), "train"),
                SensorRecording(rng.normal(size=(30, 8)), rng.normal(size=(30, 8)), "validation")]
        reg = train_regressor(build_dataset(recs, 5), "strip", epochs=2, seed=1)
        assert reg.window_ == 5 and reg.n_features_in_ == 40
        assert len(reg.validation_curve_) == 2

    def test_no_training_split(self):
        recs = [SensorRecording(np.zeros((10, 8)), np.zeros((10, 8)), "validation")]
        with pytest.raises(ValidationError):
            train_regressor(build_dataset(recs, 1), "finger", epochs=1)

    def test_conv_needs_room_for_kernel(self):
        with pytest.raises(ValidationError):
            ShapeRegressor(preset="strip", window=2, epochs=1).fit(np.zeros((10, 2, 8)), np.zeros((10, 1)))


class TestPredict:
    def test_zero_weights_give_bias(self):
        reg, X, _ = fitted_regressor("finger", n_out=3)
        for L in reg.layers_:
            L["W"][:] = 0.0
        reg.layers_[-1]["b"][:] = [0.5, -1.0, 2.0]
        expected = np.array([0.5, -1.0, 2.0]) * reg.y_scale_ + reg.y_mean_
        np.testing.assert_allclose(reg.predict(X[:4].reshape(4, -1)), np.tile(expected, (4, 1)))

    def test_output_dimension(self):
        reg, X, _ = fitted_regressor("strip", n_out=8)
        assert reg.predict(X).shape == (len(X), 8)
        assert predict_shape(reg, X[0]).shape == (8,)

    def test_shape_mismatch(self):
        reg, X, _ = fitted_regressor("strip")
        with pytest.raises(ShapeMismatch):
            predict_shape(reg, X[0][:3])
        with pytest.raises(ShapeMismatch):
            reg.predict(np.zeros((2, 3, 8)))
        with pytest.raises(ShapeMismatch):
            reg.predict(np.zeros((2, 12)))

    def test_prediction_is_finite_and_dropout_free(self):
        reg, X, _ = fitted_regressor("strip")
        a, b = reg.predict(X), reg.predict(X)
        assert np.all(np.isfinite(a))
        np.testing.assert_array_equal(a, b)


class TestEstimatorApi:
    def test_get_params_and_clone(self):
        reg = ShapeRegressor(preset="strip", epochs=7, learning_rate=0.01)
        params = reg.get_params()
        assert params["preset"] == "strip" and params["epochs"] == 7
        assert clone(reg).get_params() == params

    def test_unknown_preset(self):
        with pytest.raises(ValidationError):
            ShapeRegressor(preset="octopus").fit(np.zeros((4, 8)), np.zeros((4, 1)))

    def test_json_round_trip(self, tmp_path):
        reg, X, _ = fitted_regressor("strip")
        path = tmp_path / "regressor.json"
        save_regressor(reg, path)
        back = load_regressor(path)
        np.testing.assert_array_equal(back.predict(X), reg.predict(X))
        assert back.get_params() == reg.get_params()

    def test_score_is_r2(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(300, 8))
        Y = X @ rng.normal(size=(8, 2))
        reg = ShapeRegressor(preset="linear", epochs=100, learning_rate=1e-2).fit(X, Y)
        assert reg.score(X, Y) > 0.999

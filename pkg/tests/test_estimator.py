"""The sklearn-facing estimator wrapper."""

import numpy as np
import pytest
from sklearn.base import clone

from fthnet.estimator import FthnetQualityRegressor, as_image_array, check_mos


class TestSklearnProtocol:
    def test_get_set_params(self):
        est = FthnetQualityRegressor(max_iters=10)
        params = est.get_params()
        assert params["max_iters"] == 10
        est.set_params(seed=9)
        assert est.seed == 9

    def test_clone(self):
        est = FthnetQualityRegressor(lr_peak=1e-3, seed=4)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()

    def test_predict_before_fit_raises(self):
        with pytest.raises(RuntimeError):
            FthnetQualityRegressor().predict([np.zeros((64, 64, 3), dtype=np.uint8)])


class TestValidationHelpers:
    def test_as_image_array_from_float(self):
        arr = as_image_array(np.random.default_rng(0).random((32, 32, 3)))
        assert arr.dtype == np.uint8

    def test_as_image_array_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            as_image_array(np.zeros((32, 32)))

    def test_check_mos_range(self):
        with pytest.raises(ValueError):
            check_mos([120.0], 1)
        with pytest.raises(ValueError):
            check_mos([50.0, 60.0], 1)


class TestFitPredict:
    def test_fit_predict_evaluate(self, synth_data):
        est = FthnetQualityRegressor(model_profile="tiny", input_size=64,
                                     lr_peak=1e-3, warmup_iters=2, max_iters=12,
                                     batch_size=8, seed=0)
        X = synth_data.images[:10]
        y = synth_data.mos[:10]
        est.fit(X, y)
        preds = est.predict(X)
        assert preds.shape == (10,)
        assert np.isfinite(preds).all()
        result = est.evaluate(X, y)
        assert set(result) == {"rmse", "plcc", "srcc"}

    def test_fit_accepts_paths(self, synth_dir, synth_data):
        from fthnet.dataset import load_manifest

        records = load_manifest(synth_dir / "manifest.csv")[:6]
        paths = [synth_dir / r.image_path for r in records]
        y = [r.mos for r in records]
        est = FthnetQualityRegressor(model_profile="tiny", input_size=64,
                                     warmup_iters=2, max_iters=6, batch_size=4)
        est.fit(paths, y)
        assert est.predict(paths).shape == (6,)

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from subnyquist.metrics import MetricsReport, evaluate, gaussian_window, mse, ssim
from subnyquist.reconstruction import ReconResult


def sk_ssim(a, b):
    return structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5, use_sample_covariance=False)


def test_mse_examples():
    a = np.random.default_rng(0).uniform(size=(8, 8))
    assert mse(a, a) == 0.0
    assert mse(np.zeros((4, 4)), np.ones((4, 4))) == 1.0
    assert mse(np.zeros((2, 2)), np.array([[0.1, 0.1], [0.3, 0.1]])) == pytest.approx(0.03, rel=1e-12)


def test_mse_shape_mismatch():
    with pytest.raises(ValueError):
        mse(np.zeros((2, 2)), np.zeros((3, 3)))


def test_gaussian_window():
    g = gaussian_window()
    assert g.shape == (11,) and g.sum() == pytest.approx(1.0)
    assert g[5] == g.max() and g[0] == g[-1]
    assert g[4] / g[5] == pytest.approx(math.exp(-1 / (2 * 1.5**2)))


def test_ssim_identical():
    a = np.random.default_rng(1).uniform(size=(32, 32))
    assert ssim(a, a) == 1.0


def test_ssim_inverted_binary_is_negative():
    a = np.zeros((32, 32))
    a[::2] = 1.0
    a[:, ::3] = 1 - a[:, ::3]
    assert ssim(a, 1 - a) < 0


def test_ssim_constant_images_closed_form():
    c1 = 0.01**2
    expected = (2 * 0.5 * 0.6 + c1) / (0.5**2 + 0.6**2 + c1)
    assert ssim(np.full((16, 16), 0.5), np.full((16, 16), 0.6)) == pytest.approx(expected, rel=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([11, 16, 33, 64]))
def test_ssim_matches_reference_implementation(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(n, n))
    b = np.clip(a + rng.normal(0, 0.2, size=(n, n)), 0, 1)
    assert ssim(a, b) == pytest.approx(sk_ssim(a, b), abs=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_symmetry_and_range(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(16, 16)), rng.uniform(size=(16, 16))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-15)
    assert mse(a, b) == mse(b, a)
    assert -1 <= ssim(a, b) <= 1


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 10)), np.zeros((10, 10)))


def _result(truth, aliased, unet, final):
    return ReconResult(aliased, unet, np.zeros(truth.shape, dtype=complex), final)


def test_evaluate_perfect():
    y = np.random.default_rng(2).uniform(size=(16, 16))
    report = evaluate([_result(y, y, y, y)] * 2, [y, y])
    for stage in ("aliased", "unet", "corrected"):
        assert list(report.values(stage, "mse")) == [0.0, 0.0]
        assert list(report.values(stage, "ssim")) == [1.0, 1.0]


def test_evaluate_hand_values():
    y = np.zeros((16, 16))
    res = _result(y, y + 0.3, y + 0.2, y + 0.1)
    report = evaluate([res], [y])
    assert report.mean("aliased", "mse") == pytest.approx(0.09)
    assert report.mean("unet", "mse") == pytest.approx(0.04)
    assert report.mean("corrected", "mse") == pytest.approx(0.01)
    assert report.mean("corrected", "ssim") == pytest.approx(sk_ssim(y, y + 0.1))


def test_aggregate_sample_std():
    y = np.zeros((16, 16))
    report = evaluate([_result(y, y + d, y + d, y + d) for d in (0.1, 0.2, 0.3)], [y] * 3)
    values = np.array([0.01, 0.04, 0.09])
    agg = report.aggregate()["aliased"]
    assert agg["mse_mean"] == pytest.approx(values.mean())
    assert agg["mse_std"] == pytest.approx(values.std(ddof=1))
    assert agg["count"] == 3


def test_evaluate_empty(tmp_path):
    report = evaluate([], [])
    assert report.rows == []
    assert math.isnan(report.mean("corrected", "mse"))
    report.write_json(tmp_path / "m.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["empty"] is True and doc["aggregates"]["unet"]["mse_mean"] is None


def test_evaluate_length_mismatch():
    y = np.zeros((16, 16))
    with pytest.raises(ValueError):
        evaluate([_result(y, y, y, y)], [])


def test_report_files(tmp_path):
    y = np.zeros((16, 16))
    report = evaluate([_result(y, y + 0.1, y + 0.1, y)], [y])
    report.write_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "image_id,stage,mse,ssim"
    assert [l.split(",")[1] for l in lines[1:]] == ["aliased", "unet", "corrected"]
    report.write_json(tmp_path / "m.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["columns"] == ["aliased", "unet", "corrected"]
    assert doc["aggregates"]["corrected"]["mse_mean"] == 0.0
    assert doc["aggregates"]["corrected"]["mse_std"] is None
    assert "MSE" in report.table() and "SSIM" in report.table()


def test_report_default_empty():
    assert MetricsReport().aggregate()["aliased"]["count"] == 0

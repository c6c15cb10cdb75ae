import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blindcs.core import Datacube
from blindcs.errors import DimensionError
from blindcs.evalkit import evaluate, format_mean_std, psnr, spectral_correlation


def test_constant_error_gives_twenty_db():
    truth = np.zeros((8, 8, 3))
    truth[0, 0, :] = 1.0
    rep = psnr(truth + 0.1, truth)
    assert np.allclose(rep.psnr_per_channel, 20.0)
    assert rep.psnr_std == pytest.approx(0.0, abs=1e-12)
    assert rep.summary == "20.0000±0.0000"


def test_perfect_channel_is_infinite_and_flagged():
    truth = np.random.default_rng(0).uniform(size=(4, 4, 2))
    recon = truth.copy()
    recon[:, :, 1] += 0.01
    rep = psnr(recon, truth)
    assert rep.infinite.tolist() == [True, False]
    assert np.isinf(rep.psnr_mean)
    assert rep.summary == "inf"


def test_psnr_uses_sample_std_and_peak_override():
    truth = np.full((2, 2, 3), 0.5)
    recon = truth + np.array([0.1, 0.01, 0.001])
    rep = psnr(recon, truth, peak=1.0)
    assert rep.psnr_per_channel.tolist() == pytest.approx([20.0, 40.0, 60.0])
    assert rep.psnr_std == pytest.approx(20.0)
    assert rep.peak == 1.0
    with pytest.raises(ValueError):
        psnr(recon, truth, peak=0.0)
    with pytest.raises(DimensionError):
        psnr(recon[:1], truth)


def test_accepts_datacubes_and_2d():
    t = np.random.default_rng(1).uniform(size=(3, 3))
    rep = psnr(Datacube((t + 0.1)[:, :, None]), t)
    assert rep.psnr_per_channel.shape == (1,)


@given(a=st.floats(0.1, 10), b=st.floats(-5, 5), seed=st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_spectral_correlation_is_affine_invariant(a, b, seed):
    rng = np.random.default_rng(seed)
    truth = rng.uniform(size=(4, 4, 6))
    recon = truth + 0.1 * rng.standard_normal(truth.shape)
    base = spectral_correlation(recon, truth, (0, 0, 4, 4))
    assert spectral_correlation(a * recon + b, truth, (0, 0, 4, 4)) == pytest.approx(base, abs=1e-9)


def test_negated_truth_gives_minus_one():
    truth = np.random.default_rng(2).uniform(size=(5, 5, 4))
    assert spectral_correlation(-truth, truth, (1, 1, 3, 3)) == pytest.approx(-1.0)
    assert spectral_correlation(truth, truth, (1, 1, 3, 3)) == pytest.approx(1.0)


def test_region_validation_and_constant_spectrum():
    truth = np.random.default_rng(3).uniform(size=(5, 5, 4))
    with pytest.raises(ValueError, match="outside"):
        spectral_correlation(truth, truth, (3, 3, 4, 4))
    flat = np.ones((5, 5, 4))
    with pytest.raises(ValueError, match="constant"):
        spectral_correlation(flat, truth, (0, 0, 2, 2))


def test_evaluate_report_outputs(tmp_path):
    rng = np.random.default_rng(4)
    truth = rng.uniform(size=(6, 6, 3))
    recon = truth + 0.05 * rng.standard_normal(truth.shape)
    rep = evaluate(recon, truth, regions=[(0, 0, 3, 3), (2, 2, 4, 4)])
    assert set(rep.spectral_corr) == {"0_0_3_3", "2_2_4_4"}
    table = rep.to_table()
    assert "corr[0_0_3_3]" in table and rep.summary in table
    path = tmp_path / "r.csv"
    rep.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["metric", "key", "value", "flag"]
    assert float(rows[1][2]) == rep.psnr_per_channel[0]


def test_format_mean_std():
    assert format_mean_std(32.61749, 4.04171) == "32.6175±4.0417"
    assert format_mean_std(float("inf"), 0.0) == "inf"

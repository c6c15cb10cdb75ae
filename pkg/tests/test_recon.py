import numpy as np
import pytest

from blindcs.errors import DimensionError, RegistrationError
from blindcs.evalkit import psnr
from blindcs.recon import ReconJob, default_opts, denoise, inpaint, reconstruct_cs, run_job
from blindcs.scenes import rgb_projection, synthetic_cube, synthetic_image
from blindcs.sensing import CodeCube, Measurement, add_noise, forward, random_cassi_code


def cs_instance(n=16, L=4, seed=0, noise=1e4, rgb=False):
    cube = synthetic_cube(n, n, L, [seed, 1])
    code = random_cassi_code(n, n, L, [seed, 2])
    meas = add_noise(forward(cube, code), noise, [seed, 3])
    if rgb:
        meas = Measurement(meas.image, meas.noise_precision_true, rgb_projection(cube))
    return cube, code, meas


def vb_opts(iterations=10, K=16, **kw):
    return default_opts("cs_hyperspectral", "vb", iterations=iterations, K=K, **kw)


def test_default_opts():
    assert default_opts("denoise").iterations == 20
    assert default_opts("cs_hyperspectral").iterations == 100
    g = default_opts("inpaint", "gibbs")
    assert (g.iterations, g.burn_in, g.K) == (200, 100, 64)


def test_job_validation():
    cube, code, meas = cs_instance(8, 2)
    with pytest.raises(ValueError):
        ReconJob("cs_hyperspectral", meas)
    with pytest.raises(ValueError):
        ReconJob("inpaint", np.zeros((8, 8, 3)))
    with pytest.raises(ValueError):
        ReconJob("denoise", Measurement(np.zeros((8, 8)), side_rgb=np.zeros((8, 8, 3))))
    with pytest.raises(ValueError):
        ReconJob("deblur", meas)
    assert ReconJob("denoise", np.zeros((8, 8, 3))).patch == 7
    assert ReconJob("cs_hyperspectral", meas, code=code).patch == 8


def test_cs_result_shape_and_metadata():
    cube, code, meas = cs_instance(12, 3)
    res = reconstruct_cs(ReconJob("cs_hyperspectral", meas, code=code, opts=vb_opts(3, 4), patch=4))
    assert res.estimate.shape == cube.shape
    assert res.metadata["compression_ratio"] == "3:1"
    assert res.dictionary.shape == (48, 4) and res.weights.shape == (4,)
    assert res.runtime > 0


def test_all_ones_code_single_channel_recovers_measurement():
    cube = synthetic_cube(32, 32, 1, [0, 1])
    code = CodeCube(np.ones((32, 32, 1)))
    meas = forward(cube, code)
    res = reconstruct_cs(ReconJob("cs_hyperspectral", meas, code=code, opts=vb_opts(20, 64), patch=8))
    err = np.linalg.norm(res.estimate.data[:, :, 0] - meas.image) / np.linalg.norm(meas.image)
    assert err < 0.01


def test_scale_covariance():
    cube, code, meas = cs_instance(16, 3, seed=1)
    opts = vb_opts(8, 8)
    a = reconstruct_cs(ReconJob("cs_hyperspectral", meas, code=code, opts=opts, patch=4))
    scaled = Measurement(meas.image * 37.5)
    b = reconstruct_cs(ReconJob("cs_hyperspectral", scaled, code=code, opts=opts, patch=4))
    rel = np.linalg.norm(b.estimate.data - 37.5 * a.estimate.data) / np.linalg.norm(37.5 * a.estimate.data)
    assert rel < 0.01


def test_side_information_block_is_fitted():
    # the RGB rows are fully observed, so the model has to reproduce them
    cube, code, meas = cs_instance(32, 4, seed=2, rgb=True)
    res = reconstruct_cs(ReconJob("cs_hyperspectral", meas, code=code, opts=vb_opts(20, 64), patch=8))
    assert res.metadata["side_info"] and res.metadata["compression_ratio"] == "7:4"
    assert res.metadata["side_fit_rel_error"] < 0.05
    assert res.estimate.shape == cube.shape


def test_unregistered_rgb_is_an_error():
    cube, code, meas = cs_instance(16, 4)
    with pytest.raises(RegistrationError):
        Measurement(meas.image, side_rgb=np.zeros((15, 16, 3)))
    # a measurement whose RGB image was swapped afterwards is caught by the job too
    bad = Measurement(meas.image)
    bad.side_rgb = np.zeros((15, 16, 3))
    with pytest.raises(RegistrationError):
        reconstruct_cs(ReconJob("cs_hyperspectral", bad, code=code, opts=vb_opts(1, 2), patch=4))


def test_code_dims_must_match():
    cube, code, meas = cs_instance(16, 4)
    small = CodeCube(code.codes[:8])
    with pytest.raises(DimensionError):
        reconstruct_cs(ReconJob("cs_hyperspectral", meas, code=small, opts=vb_opts(1, 2), patch=4))


def test_inpaint_with_full_mask_equals_denoise_bit_for_bit():
    img = synthetic_image(16, 0)
    noisy = img + 10 * np.random.default_rng(0).standard_normal(img.shape)
    opts = default_opts("denoise", iterations=3, K=8)
    a = denoise(noisy, opts, patch=4)
    b = inpaint(noisy, np.ones(img.shape[:2]), opts, patch=4)
    assert np.array_equal(a.estimate.data, b.estimate.data)


def test_clean_input_survives_denoising():
    # smooth 8-bit-range scene, default K and iteration count
    img = synthetic_cube(32, 32, 3, [0, 1]).data * 255.0
    res = denoise(img, default_opts("denoise"), patch=7)
    assert psnr(res.estimate.data, img, peak=255.0).psnr_mean >= 40.0


def test_denoise_accepts_gray_and_rejects_bad_input():
    gray = synthetic_image(12, 2)[:, :, 0]
    res = denoise(gray, default_opts("denoise", iterations=2, K=4), patch=4)
    assert res.estimate.shape == (12, 12, 1)
    with pytest.raises(ValueError):
        denoise(np.full((8, 8), np.nan), default_opts("denoise", iterations=1, K=2), patch=4)


def test_inpaint_warns_on_empty_patches():
    img = synthetic_image(12, 3)
    mask = np.ones((12, 12))
    mask[:4, :4] = 0
    with pytest.warns(RuntimeWarning, match="no observed pixels"):
        res = inpaint(img * mask[:, :, None], mask, default_opts("inpaint", iterations=2, K=4), patch=4, stride=4)
    assert np.all(np.isfinite(res.estimate.data))
    with pytest.raises(DimensionError):
        inpaint(img, np.ones((11, 12)), default_opts("inpaint", iterations=1, K=2), patch=4)


def test_gibbs_path_runs_through_jobs():
    cube, code, meas = cs_instance(8, 2)
    opts = default_opts("cs_hyperspectral", "gibbs", iterations=4, burn_in=2, K=4)
    res = run_job(ReconJob("cs_hyperspectral", meas, code=code, opts=opts, patch=4))
    assert res.estimate.shape == cube.shape
    assert len(res.trace.neg_log_posterior) == 4

import numpy as np
import pytest

from blindcs.core import extract_patches, make_grid
from blindcs.model import Hyperparams, InferenceOpts, init_state
from blindcs.sensing import build_patch_operators, identity_operators, random_cassi_code


def tiny_cs_problem(seed=0, H=4, W=4, L=3, patch=(2, 2), stride=2, K=2):
    """A random coded problem small enough for dense-matrix oracles."""
    rng = np.random.default_rng(seed)
    code = random_cassi_code(H, W, L, seed + 11)
    grid = make_grid((H, W), patch, stride)
    ops = build_patch_operators(code, grid)
    cube = rng.uniform(0, 1, (H, W, L))
    from blindcs.sensing import forward

    meas = forward(cube, code).image + 0.01 * rng.standard_normal((H, W))
    Y = extract_patches(meas, grid=grid)
    return Y, ops


def random_state(Y, ops, K=2, seed=0, hyper=None):
    """A state with every latent variable set to a generic (non-initial) value."""
    rng = np.random.default_rng(seed)
    st = init_state(Y, ops, InferenceOpts(K=K, iterations=2, burn_in=1), hyper, rng)
    K, N = st.S.shape
    st.S = rng.standard_normal((K, N))
    st.nu = rng.uniform(0.5, 1.5, K) * rng.choice([-1, 1], K)
    st.eta_tilde = rng.uniform(0.5, 2.0, K)
    st.refresh_eta()
    st.tau = rng.uniform(0.5, 2.0, N)
    st.alpha_kn = rng.uniform(0.5, 2.0, (K, N))
    st.phi = rng.uniform(0.5, 2.0, (K, N))
    st.alpha0 = 3.0
    return st


@pytest.fixture
def tiny_cs():
    return tiny_cs_problem()


@pytest.fixture
def moderate_hyper():
    return Hyperparams(a0=2.0, b0=1.5, c0=2.5, d0=1.0, e0=2.0, f0=1.0, g0=3.0, h0=2.0)


def random_vb_state(Y, ops, K=2, seed=0):
    """A factorised posterior with generic means and SPD covariance blocks."""
    from blindcs import vb

    rng = np.random.default_rng(seed)
    st = vb.init_vb_state(Y, ops, InferenceOpts(K=K, inference_kind="vb", burn_in=0), rng)
    P, K = st.D.shape
    _, m, c, _ = st.D_cov.shape
    N = st.S.shape[1]
    A = rng.standard_normal((K, m, c, c)) * 0.3
    st.D = rng.standard_normal((P, K))
    st.D_cov = A @ np.swapaxes(A, 2, 3) + 0.05 * np.eye(c)
    st.S = rng.standard_normal((K, N))
    st.S_var = rng.uniform(0.05, 0.5, (K, N))
    st.nu = rng.uniform(0.5, 1.5, K)
    st.nu_var = rng.uniform(0.05, 0.3, K)
    return st

import numpy as np
import pytest

from conftest import random_state, tiny_cs_problem
from blindcs.errors import DimensionError
from blindcs.model import (
    Hyperparams,
    InferenceOpts,
    ModelState,
    as_problem,
    init_state,
    load_state,
    neg_log_posterior,
    posterior_terms,
    prune_atoms,
    save_state,
)
from scipy import stats


def test_hyperparams_must_be_positive():
    assert Hyperparams().a0 == 1e-6
    with pytest.raises(ValueError):
        Hyperparams(c0=0.0)
    with pytest.raises(ValueError):
        Hyperparams(h0=-1.0)


def test_inference_opts_validation():
    InferenceOpts(inference_kind="vb", iterations=0, burn_in=0)
    with pytest.raises(ValueError):
        InferenceOpts(iterations=10, burn_in=10)
    with pytest.raises(ValueError):
        InferenceOpts(K=0)
    with pytest.raises(ValueError):
        InferenceOpts(inference_kind="mcmc")
    with pytest.raises(ValueError):
        InferenceOpts(prune_threshold=1.0)


def test_as_problem_shapes(tiny_cs):
    Y, ops = tiny_cs
    Y3, stack = as_problem(Y, ops)
    assert Y3.shape == (len(ops), 1, 4)
    assert np.array_equal(Y3.reshape(len(ops), -1).T, Y.vectors)
    with pytest.raises(DimensionError):
        as_problem(Y.vectors[:-1], ops)


def test_init_state_shapes_and_scale(tiny_cs):
    Y, ops = tiny_cs
    st = init_state(Y, ops, InferenceOpts(K=5), rng=np.random.default_rng(0))
    assert st.D.shape == (12, 5) and st.S.shape == (5, len(ops))
    assert np.all(st.S == 0) and np.all(st.nu == 1)
    assert st.alpha0 == pytest.approx(1.0 / np.var(Y.vectors))
    st.check()


def test_state_check_rejects_bad_values(tiny_cs):
    Y, ops = tiny_cs
    st = random_state(Y, ops)
    bad = st.copy()
    bad.tau[0] = 0.0
    with pytest.raises(ValueError):
        bad.check()
    bad = st.copy()
    bad.phi = bad.phi[:, :1]
    with pytest.raises(DimensionError):
        bad.check()


def test_posterior_terms_match_scipy_densities(tiny_cs, moderate_hyper):
    Y, ops = tiny_cs
    h = moderate_hyper
    st = random_state(Y, ops, hyper=h)
    t = posterior_terms(st, Y, ops, h)
    gam = lambda x, a, b: -stats.gamma.logpdf(x, a, scale=1.0 / b).sum()
    assert t["tau_prior"] == pytest.approx(gam(st.tau, h.a0, h.b0))
    assert t["phi_prior"] == pytest.approx(gam(st.phi, h.g0, h.h0))
    assert t["eta_prior"] == pytest.approx(gam(st.eta_tilde, h.e0, h.f0))
    assert t["alpha0_prior"] == pytest.approx(gam(st.alpha0, h.c0, h.d0))
    ref = -stats.invgamma.logpdf(st.alpha_kn, 1.0, scale=0.5 / st.phi).sum()
    assert t["alpha_prior"] == pytest.approx(ref)
    Y3, stack = as_problem(Y, ops)
    r = sum(np.sum((Y3[n].ravel() - stack[n].to_dense() @ st.signal()[:, n]) ** 2) for n in range(st.N))
    assert t["data"] == pytest.approx(0.5 * st.alpha0 * r)
    assert neg_log_posterior(st, Y, ops, h) == pytest.approx(sum(t.values()))


def test_posterior_residual_shortcut(tiny_cs):
    Y, ops = tiny_cs
    st = random_state(Y, ops)
    Y3, stack = as_problem(Y, ops)
    R = Y3 - stack.apply(st.signal().T.reshape(st.N, stack.c, stack.n_pixels))
    assert neg_log_posterior(st, None, None, residual=R) == pytest.approx(neg_log_posterior(st, Y, ops))


def test_prune_drops_small_atoms_and_rebuilds_eta(tiny_cs):
    Y, ops = tiny_cs
    st = random_state(Y, ops, K=2)
    st.nu = np.array([1.0, 0.01])
    st.eta_tilde = np.array([2.0, 3.0])
    st.refresh_eta()
    out = prune_atoms(st, 0.1)
    assert out.K == 1
    assert np.array_equal(out.D[:, 0], st.D[:, 0])
    assert out.eta.tolist() == [2.0]
    assert prune_atoms(st, 0.0).K == 2
    with pytest.raises(ValueError):
        prune_atoms(st, 1.5)


def test_prune_reindexes_eta_products(tiny_cs):
    Y, ops = tiny_cs
    st = random_state(Y, ops, K=2)
    st.nu = np.array([0.001, 1.0])
    st.eta_tilde = np.array([2.0, 3.0])
    out = prune_atoms(st, 0.5)
    # the surviving factor becomes the first of the product
    assert out.eta.tolist() == [3.0]


def test_checkpoint_roundtrip_is_exact(tmp_path):
    Y, ops = tiny_cs_problem(4)
    st = random_state(Y, ops, K=3, seed=2)
    path = tmp_path / "state.bin"
    save_state(st, path)
    back = load_state(path)
    for name in ("D", "S", "nu", "eta_tilde", "eta", "tau", "alpha_kn", "phi"):
        assert np.array_equal(getattr(back, name), getattr(st, name)), name
    assert back.alpha0 == st.alpha0


def test_checkpoint_rejects_truncation(tmp_path):
    Y, ops = tiny_cs_problem(4)
    st = random_state(Y, ops)
    path = tmp_path / "state.bin"
    save_state(st, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(ValueError):
        load_state(path)
    path.write_bytes(b"junk\n" + raw)
    with pytest.raises(ValueError):
        load_state(path)


def test_signal_is_dictionary_times_weighted_coefficients():
    st = ModelState(
        D=np.array([[1.0, 0.0], [0.0, 2.0]]), S=np.array([[1.0], [3.0]]), nu=np.array([2.0, -1.0]),
        eta_tilde=np.ones(2), eta=np.ones(2), tau=np.ones(1), alpha_kn=np.ones((2, 1)),
        phi=np.ones((2, 1)), alpha0=1.0,
    )
    assert st.signal()[:, 0].tolist() == [2.0, -6.0]

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dwisr import encoding, qspace, ridgelets, solver
from dwisr.analysis import nmse


def _acquire(phantom, basis, scheme, snr=float("inf"), seed=0):
    return encoding.simulate_acquisition(
        phantom, basis, scheme, encoding.NoiseSpec(target_snr=snr, seed=seed)
    )


# ---------------------------------------------------------------- soft_threshold

def test_soft_threshold_analytic():
    out = solver.soft_threshold(np.array([3.0, -1.0, 0.5]), 1.0)
    assert np.array_equal(out, [2.0, 0.0, 0.0])


def test_soft_threshold_zero_t_identity(rng):
    v = rng.standard_normal(20)
    assert np.array_equal(solver.soft_threshold(v, 0.0), v)


def test_soft_threshold_rejects_negative_t():
    with pytest.raises(ValueError):
        solver.soft_threshold(np.ones(3), -0.1)


def test_soft_threshold_prox_subgradient(rng):
    # v - out must lie in t * subdifferential of |out|_1, componentwise
    v = rng.standard_normal(50)
    t = 0.3
    out = solver.soft_threshold(v, t)
    resid = v - out
    nonzero = out != 0
    assert np.allclose(resid[nonzero], t * np.sign(out[nonzero]))
    assert np.all(np.abs(resid[~nonzero]) <= t + 1e-15)


@settings(deadline=None, max_examples=50)
@given(
    u=hnp.arrays(np.float64, 8, elements=st.floats(-100, 100)),
    v=hnp.arrays(np.float64, 8, elements=st.floats(-100, 100)),
    t=st.floats(0, 50),
)
def test_soft_threshold_contraction(u, v, t):
    du = solver.soft_threshold(u, t) - solver.soft_threshold(v, t)
    assert np.linalg.norm(du) <= np.linalg.norm(u - v) + 1e-9


# ---------------------------------------------------------------- tikhonov

def test_tikhonov_noiseless_exact(design64, basis5, small_phantom):
    phantom, labels = small_phantom
    scheme = qspace.make_scheme(design64, 1)
    y = _acquire(phantom, basis5, scheme)
    s = solver.tikhonov_init(y, basis5, scheme, mu=1e-8)
    mask = labels > 0
    rel = np.abs(s.values - phantom.values)[mask] / phantom.values[mask].max()
    assert rel.max() < 1e-5


def test_tikhonov_zero_data(design64, basis5):
    scheme = qspace.make_scheme(design64, 2)
    y = [
        encoding.DwiVolumeSet(np.zeros((4, 4, 1, len(a))))
        for a in scheme.assignments
    ]
    s = solver.tikhonov_init(y, basis5, scheme, mu=0.5)
    assert np.all(s.values == 0)


def test_tikhonov_large_mu_shrinks(design64, basis5, small_phantom):
    phantom, _ = small_phantom
    scheme = qspace.make_scheme(design64, 2)
    y = _acquire(phantom, basis5, scheme)
    norms = [
        np.linalg.norm(solver.tikhonov_init(y, basis5, scheme, mu).values)
        for mu in (1e-3, 1.0, 1e3, 1e6)
    ]
    assert all(a > b for a, b in zip(norms, norms[1:]))


def test_tikhonov_rejects_nonpositive_mu(design64, basis5, small_phantom):
    phantom, _ = small_phantom
    scheme = qspace.make_scheme(design64, 2)
    y = _acquire(phantom, basis5, scheme)
    with pytest.raises(ValueError):
        solver.tikhonov_init(y, basis5, scheme, mu=0.0)


# ---------------------------------------------------------------- lls_update

def test_lls_zero_penalty_recovers_truth(design64, basis5, small_phantom):
    phantom, labels = small_phantom
    scheme = qspace.make_scheme(design64, 1)
    y = _acquire(phantom, basis5, scheme)
    cfg = solver.SolverConfig(rho1=0.0, rho2=0.0, lam=0.0, lambda_tv=0.0)
    s = solver.lls_update(y, basis5, scheme, cfg, np.zeros(phantom.values.shape))
    assert np.max(np.abs(s - phantom.values)) < 1e-8


def test_lls_dominant_penalty_limit(design64, basis5, small_phantom, rng):
    phantom, _ = small_phantom
    scheme = qspace.make_scheme(design64, 2)
    y = _acquire(phantom, basis5, scheme)
    target = rng.standard_normal(phantom.values.shape)
    cfg = solver.SolverConfig(rho1=1e12, rho2=0.0, lambda_tv=0.0)
    s = solver.lls_update(y, basis5, scheme, cfg, target)
    assert np.max(np.abs(s - target)) < 1e-6


def test_lls_normal_equations_residual(design64, basis5, small_phantom, rng):
    phantom, _ = small_phantom
    scheme = qspace.make_scheme(design64, 3)
    y = _acquire(phantom, basis5, scheme, snr=20.0, seed=4)
    cfg = solver.SolverConfig()
    p1 = rng.standard_normal(phantom.values.shape)
    p2 = rng.standard_normal(phantom.values.shape)
    s = solver.lls_update(y, basis5, scheme, cfg, p1, p2)

    # plug back into the normal equations, spot-checking random q columns
    groups, positions = solver._scheme_groups(scheme)
    af = basis5.af
    nx, ny, nz, _ = phantom.values.shape
    for ks, js in groups:
        j = js[int(rng.integers(len(js)))]
        b_rows = basis5.matrix[[k - 1 for k in ks]]
        lhs_mat = b_rows.T @ b_rows + (cfg.rho1 + cfg.rho2) * np.eye(af)
        sj = s[..., j].reshape(nx, ny, nz // af, af)
        rhs = cfg.rho1 * p1[..., j] + cfg.rho2 * p2[..., j]
        rhs = rhs.reshape(nx, ny, nz // af, af).copy()
        for k in ks:
            pos = positions[k - 1][j]
            rhs += basis5.matrix[k - 1] * y[k - 1].values[..., pos][..., None]
        resid = np.einsum("ab,xyzb->xyza", lhs_mat, sj) - rhs
        assert np.linalg.norm(resid) < 1e-10 * max(np.linalg.norm(rhs), 1.0)


# ---------------------------------------------------------------- bp_update

@pytest.fixture(scope="module")
def small_dict():
    a = np.random.default_rng(99).standard_normal((20, 40))
    return a / np.linalg.norm(a, axis=0)


def test_bp_lambda_zero_kkt(small_dict):
    a = small_dict
    b = np.random.default_rng(5).standard_normal((20, 3))
    c = solver.bp_update(a, b, lam=0.0, rho1=1.0, n_iters=20000, tol=0.0)
    kkt = np.linalg.norm(a.T @ (a @ c - b))
    assert kkt <= 1e-6 * np.linalg.norm(a.T @ b)


def test_bp_zero_data(small_dict):
    c = solver.bp_update(small_dict, np.zeros((20, 2)), lam=0.1, rho1=1.0, n_iters=50)
    assert np.all(c == 0)


def test_bp_null_threshold(small_dict):
    a = small_dict
    b = np.random.default_rng(6).standard_normal((20, 4))
    lam = 1.0 * np.max(np.abs(a.T @ b)) + 1e-9
    c = solver.bp_update(a, b, lam=lam, rho1=1.0, n_iters=100)
    assert np.all(c == 0)
    # subgradient condition for optimality of 0: |rho1 A^T b|_inf <= lam
    assert np.max(np.abs(1.0 * a.T @ b)) <= lam


def test_bp_monotone_objective(small_dict):
    # prefix trajectories of a deterministic solver expose per-iteration values
    a = small_dict
    b = np.random.default_rng(7).standard_normal((20, 5))
    objs = []
    for iters in range(1, 15):
        c = solver.bp_update(a, b, lam=0.05, rho1=1.0, n_iters=iters, tol=0.0)
        objs.append(np.sum(solver._bp_objective(a, c, b, 0.05, 1.0)))
    assert all(x >= y - 1e-12 for x, y in zip(objs, objs[1:]))


def test_bp_warm_start_converges_faster(small_dict):
    a = small_dict
    b = np.random.default_rng(8).standard_normal((20, 3))
    c_long = solver.bp_update(a, b, lam=0.05, rho1=1.0, n_iters=3000, tol=0.0)
    c_warm = solver.bp_update(
        a, b, lam=0.05, rho1=1.0, n_iters=1, tol=0.0, warm_start=c_long
    )
    f_opt = np.sum(solver._bp_objective(a, c_long, b, 0.05, 1.0))
    f_warm = np.sum(solver._bp_objective(a, c_warm, b, 0.05, 1.0))
    assert f_warm <= f_opt + 1e-9


def test_power_iteration_matches_eigvalsh(small_dict):
    lip = solver.dictionary_lipschitz(small_dict, rho1=2.0)
    exact = 2.0 * np.linalg.eigvalsh(small_dict.T @ small_dict).max()
    assert lip == pytest.approx(exact, rel=1e-10)


# ---------------------------------------------------------------- dual updates

def test_lambda_dual_update_rules(rng):
    s = rng.standard_normal((7, 4))
    lam = rng.standard_normal((7, 4))
    assert np.array_equal(solver.lambda_dual_update(lam, s, s), lam)
    r = rng.standard_normal((7, 4))
    out = solver.lambda_dual_update(np.zeros((7, 4)), s, s - r)
    assert np.allclose(out, r)
    twice = solver.lambda_dual_update(solver.lambda_dual_update(lam, s, s - r), s, s - r)
    assert np.allclose(twice, lam + 2 * r)


def test_gamma_dual_update_rules(rng):
    s = rng.standard_normal((4, 4, 4, 2))
    g = rng.standard_normal((4, 4, 4, 2))
    assert np.array_equal(solver.gamma_dual_update(g, s, s), g)
    r = rng.standard_normal((4, 4, 4, 2))
    assert np.allclose(solver.gamma_dual_update(np.zeros_like(s), s, s - r), r)
    back = solver.gamma_dual_update(solver.gamma_dual_update(g, s + r, s), s - r, s)
    assert np.allclose(back, g)


# ---------------------------------------------------------------- tv_update

def _fgp_tv_reference(v, weight, n_iters):
    """Independent oracle: accelerated dual projected gradient (FGP)."""
    p = np.zeros((3,) + v.shape)
    q = p.copy()
    t = 1.0
    step = 1.0 / 12.0
    for _ in range(n_iters):
        g = solver._grad3(solver._div3(q) - v / weight)
        p_new = q + step * g
        mag = np.sqrt(np.sum(p_new**2, axis=0))
        p_new = p_new / np.maximum(1.0, mag)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        q = p_new + ((t - 1) / t_new) * (p_new - p)
        p, t = p_new, t_new
    return v - weight * solver._div3(p)


def _tv_objective(z, v, weight):
    return 0.5 * np.sum((v - z) ** 2) + weight * solver.tv_seminorm(z)


def test_tv_zero_weight_identity(rng):
    v = rng.standard_normal((6, 6, 6))
    cfg = solver.SolverConfig(lambda_tv=0.0)
    assert np.array_equal(solver.tv_update(v, cfg), v)


def test_tv_constant_volume_unchanged():
    v = np.full((8, 8, 8), 1.3)
    out = solver.tv_prox(v, weight=0.1, n_iters=200)
    assert np.max(np.abs(out - v)) < 1e-12


def test_tv_matches_long_run_reference(rng):
    v = np.random.default_rng(17).standard_normal((8, 8, 8))
    weight = 0.1
    z = solver.tv_prox(v, weight, n_iters=3000)
    z_ref = _fgp_tv_reference(v, weight, n_iters=10000)
    assert abs(_tv_objective(z, v, weight) - _tv_objective(z_ref, v, weight)) <= 1e-3


def test_tv_requires_rho2_with_weight(rng):
    cfg = solver.SolverConfig(lambda_tv=0.1, rho2=0.0)
    with pytest.raises(ValueError):
        solver.tv_update(np.zeros((4, 4, 4)), cfg)


# ---------------------------------------------------------------- reconstruct

def test_paper_parameter_defaults():
    cfg = solver.SolverConfig()
    assert (cfg.lam, cfg.lambda_tv, cfg.rho1, cfg.rho2, cfg.n_iter) == (
        0.02, 0.005, 0.01, 0.01, 8,
    )
    # in-vivo-style settings are constructible
    solver.SolverConfig(lam=0.06, lambda_tv=1e-5, rho1=3.0, rho2=3.0)


def test_reconstruct_exact_recovery(design64, basis5, small_phantom, dictionary64):
    phantom, labels = small_phantom
    scheme = qspace.make_scheme(design64, 1)
    y = _acquire(phantom, basis5, scheme)
    cfg = solver.SolverConfig(lam=1e-8, lambda_tv=1e-8, n_iter=8)
    rec, report = solver.reconstruct(y, basis5, scheme, dictionary64, cfg)
    mask = labels > 0
    assert np.nanmedian(nmse(rec.values[mask], phantom.values[mask])) < 1e-4
    assert report.iterations_run == len(report.rel_change_history)
    assert report.iterations_run == len(report.objective_history)


def test_reconstruct_reduction_bit_identity(design64, basis5, small_phantom, dictionary64):
    # lambda_tv = 0, rho2 = 0 must follow the dedicated three-step scheme exactly
    phantom, _ = small_phantom
    scheme = qspace.make_scheme(design64, 2)
    y = _acquire(phantom, basis5, scheme, snr=20.0, seed=3)
    cfg = solver.SolverConfig(lambda_tv=0.0, rho2=0.0, n_iter=8, epsilon=1e-12)
    full, _ = solver.reconstruct(y, basis5, scheme, dictionary64, cfg)
    three, _ = solver.reconstruct_sparse_only(y, basis5, scheme, dictionary64, cfg)
    assert np.array_equal(full.values, three.values)


def test_reconstruct_deterministic(design64, basis5, small_phantom, dictionary64):
    phantom, _ = small_phantom
    scheme = qspace.make_scheme(design64, 2)
    y = _acquire(phantom, basis5, scheme, snr=20.0, seed=9)
    cfg = solver.SolverConfig(n_iter=3)
    a, _ = solver.reconstruct(y, basis5, scheme, dictionary64, cfg)
    b, _ = solver.reconstruct(y, basis5, scheme, dictionary64, cfg)
    assert np.array_equal(a.values, b.values)


def test_reconstruct_scaling_covariance(design64, basis5, small_phantom, dictionary64):
    # scaling Y by alpha with lam and lambda_tv scaled by alpha (duals start
    # at zero) scales the whole trajectory by alpha
    phantom, _ = small_phantom
    scheme = qspace.make_scheme(design64, 2)
    y = _acquire(phantom, basis5, scheme, snr=20.0, seed=13)
    alpha = 2.0
    y_scaled = [
        encoding.DwiVolumeSet(alpha * yk.values, yk.voxel_size) for yk in y
    ]
    cfg = solver.SolverConfig(n_iter=3, epsilon=1e-15)
    cfg_scaled = solver.SolverConfig(
        lam=alpha * cfg.lam, lambda_tv=alpha * cfg.lambda_tv, n_iter=3, epsilon=1e-15
    )
    rec, _ = solver.reconstruct(y, basis5, scheme, dictionary64, cfg)
    rec_scaled, _ = solver.reconstruct(
        y_scaled, basis5, scheme, dictionary64, cfg_scaled
    )
    assert np.allclose(rec_scaled.values, alpha * rec.values, rtol=1e-9, atol=1e-11)


def test_reconstruct_literal_gamma_flag(design64, basis5, small_phantom, dictionary64):
    phantom, _ = small_phantom
    scheme = qspace.make_scheme(design64, 2)
    y = _acquire(phantom, basis5, scheme, snr=20.0, seed=21)
    cfg = solver.SolverConfig(n_iter=3)
    a, _ = solver.reconstruct(y, basis5, scheme, dictionary64, cfg)
    b, _ = solver.reconstruct(
        y, basis5, scheme, dictionary64, cfg, literal_gamma_update=True
    )
    assert not np.array_equal(a.values, b.values)


def test_numerical_failure_names_stage():
    with pytest.raises(solver.NumericalFailure, match="lls_update"):
        solver._check_finite(np.array([1.0, np.inf]), "lls_update")


def test_config_validation():
    with pytest.raises(ValueError):
        solver.SolverConfig(lam=-1.0)
    with pytest.raises(ValueError):
        solver.SolverConfig(n_iter=0)
    with pytest.raises(ValueError):
        solver.SolverConfig(epsilon=0.0)

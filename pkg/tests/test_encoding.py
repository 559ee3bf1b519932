import numpy as np
import pytest

from dwisr import encoding, qspace


def test_default_basis_af5_spectrum(basis5):
    evals = np.sort(np.linalg.eigvalsh(basis5.matrix))
    assert np.allclose(evals, [-2, -2, -2, -2, 3])
    assert np.linalg.cond(basis5.matrix) == pytest.approx(1.5)


def test_default_basis_af2_singular():
    with pytest.raises(ValueError, match="singular"):
        encoding.default_basis(2)
    with pytest.raises(ValueError):
        encoding.default_basis(1)


def test_default_basis_constant_slab(basis5):
    # row sums of J - 2I are af - 2 = 3
    s = encoding.DwiVolumeSet(np.full((4, 4, 5, 2), 0.7))
    for k in range(1, 6):
        thick = encoding.downsample(s, basis5, k)
        assert np.allclose(thick.values, 3 * 0.7)


def test_downsample_identity_af1():
    basis = encoding.EncodingBasis(np.array([[1.0]]))
    s = encoding.DwiVolumeSet(np.random.default_rng(0).standard_normal((4, 4, 3, 2)))
    out = encoding.downsample(s, basis, 1)
    assert np.array_equal(out.values, s.values)


def test_downsample_linearity(basis5, rng):
    s1 = rng.standard_normal((6, 6, 10, 3))
    s2 = rng.standard_normal((6, 6, 10, 3))
    a = 1.7
    lhs = encoding.downsample(
        encoding.DwiVolumeSet(a * s1 + s2), basis5, 2
    ).values
    rhs = a * encoding.downsample(encoding.DwiVolumeSet(s1), basis5, 2).values + \
        encoding.downsample(encoding.DwiVolumeSet(s2), basis5, 2).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_downsample_zero(basis5):
    s = encoding.DwiVolumeSet(np.zeros((4, 4, 5, 2)))
    assert np.all(encoding.downsample(s, basis5, 3).values == 0)


def test_downsample_rejects_bad_nz(basis5):
    s = encoding.DwiVolumeSet(np.zeros((4, 4, 7, 2)))
    with pytest.raises(ValueError, match="divisible"):
        encoding.downsample(s, basis5, 1)


def test_downsample_rejects_bad_k(basis5):
    s = encoding.DwiVolumeSet(np.zeros((4, 4, 5, 2)))
    with pytest.raises(ValueError):
        encoding.downsample(s, basis5, 6)


def test_adjoint_dot_product(basis5, rng):
    # <D_k s, y> == <s, D_k^T y> on random pairs
    for k in range(1, 6):
        s = encoding.DwiVolumeSet(rng.standard_normal((5, 5, 10, 4)))
        y = encoding.DwiVolumeSet(rng.standard_normal((5, 5, 2, 4)))
        lhs = np.vdot(encoding.downsample(s, basis5, k).values, y.values)
        rhs = np.vdot(s.values, encoding.downsample_adjoint(y, basis5, k).values)
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)


def test_simulate_noiseless_equals_masked_downsample(
    design64, basis5, small_phantom
):
    phantom, _ = small_phantom
    scheme = qspace.make_scheme(design64, 2)
    noise = encoding.NoiseSpec(target_snr=float("inf"), seed=0)
    y = encoding.simulate_acquisition(phantom, basis5, scheme, noise)
    for k in range(1, 6):
        idx = qspace.scheme_mask(scheme, k)
        expected = encoding.downsample(phantom, basis5, k).values[..., idx]
        assert np.array_equal(y[k - 1].values, expected)


def test_simulate_scheme2x_volume_counts(design64, basis5, small_phantom):
    phantom, _ = small_phantom
    scheme = qspace.make_scheme(design64, 2)
    y = encoding.simulate_acquisition(
        phantom, basis5, scheme, encoding.NoiseSpec(float("inf"), 0)
    )
    assert [yk.n_q for yk in y] == [32, 32, 32, 32, 32]


def test_simulate_empirical_sigma(design64, basis5):
    phantom, _ = encoding.make_phantom((24, 24, 5), (1, 1, 1), design64)
    scheme = qspace.make_scheme(design64, 1)
    noise = encoding.NoiseSpec(target_snr=20.0, seed=11)
    sigma = encoding.noise_sigma(phantom, basis5, noise)
    y = encoding.simulate_acquisition(phantom, basis5, scheme, noise)
    clean = encoding.simulate_acquisition(
        phantom, basis5, scheme, encoding.NoiseSpec(float("inf"), 0)
    )
    resid = np.concatenate(
        [(yk.values - ck.values).ravel() for yk, ck in zip(y, clean)]
    )
    assert resid.size >= 1e5
    assert np.std(resid) == pytest.approx(sigma, rel=0.02)


def test_simulate_noise_deterministic(design64, basis5, small_phantom):
    phantom, _ = small_phantom
    scheme = qspace.make_scheme(design64, 3)
    noise = encoding.NoiseSpec(target_snr=20.0, seed=5)
    a = encoding.simulate_acquisition(phantom, basis5, scheme, noise)
    b = encoding.simulate_acquisition(phantom, basis5, scheme, noise)
    for ya, yb in zip(a, b):
        assert np.array_equal(ya.values, yb.values)


def test_hr_acquisition_sigma(design64, small_phantom):
    phantom, labels = small_phantom
    noise = encoding.NoiseSpec(target_snr=20.0, seed=2)
    hr = encoding.simulate_hr_acquisition(phantom, noise)
    resid = (hr.values - phantom.values).ravel()
    assert np.std(resid) == pytest.approx(4.6 / 20.0, rel=0.02)
    clean = encoding.simulate_hr_acquisition(
        phantom, encoding.NoiseSpec(float("inf"), 0)
    )
    assert np.array_equal(clean.values, phantom.values)


def test_phantom_closed_form_values(design64, small_phantom):
    phantom, labels = small_phantom
    b = design64.bvalue
    csf = phantom.values[labels == encoding.LABEL_CSF]
    assert np.allclose(csf, np.exp(-b * 3.0e-3))
    assert csf[0, 0] == pytest.approx(2.479e-3, rel=1e-3)
    # WM bundle A along +x probed along x: exp(-b * 1.7e-3)
    q = design64.directions
    j = int(np.argmax(np.abs(q[:, 0])))  # direction closest to +-x
    wm = phantom.values[labels == encoding.LABEL_WM_A][:, j]
    expected = np.exp(
        -b * (1.7e-3 * q[j, 0] ** 2 + 0.3e-3 * (q[j, 1] ** 2 + q[j, 2] ** 2))
    )
    assert np.allclose(wm, expected)
    assert np.exp(-2000 * 1.7e-3) == pytest.approx(3.337e-2, rel=1e-3)


def test_phantom_signal_bounds(small_phantom):
    phantom, labels = small_phantom
    assert phantom.values.min() >= 0.0
    assert phantom.values.max() <= 1.0
    assert np.all(phantom.values[labels == 0] == 0.0)


def test_phantom_b0_limit(design64):
    design_b0 = qspace.QSpaceDesign(
        directions=design64.directions, bvalue=0.0
    )
    phantom, labels = encoding.make_phantom((16, 16, 4), (1, 1, 1), design_b0)
    assert np.allclose(phantom.values[labels > 0], 1.0)


def test_phantom_rejects_small_dims(design64):
    with pytest.raises(ValueError):
        encoding.make_phantom((8, 8, 5), (1, 1, 1), design64)


def test_phantom_has_all_regions(small_phantom):
    _, labels = small_phantom
    assert set(np.unique(labels)) == {0, 1, 2, 3, 4, 5}


def test_stacked_operator_positive_definite(basis5, design64):
    scheme = qspace.make_scheme(design64, 1)
    total = sum(
        basis5.matrix[k - 1][:, None] @ basis5.matrix[k - 1][None, :]
        for k in range(1, 6)
    )
    assert np.all(np.linalg.eigvalsh(total) > 0)


def test_volume_set_validation():
    with pytest.raises(ValueError):
        encoding.DwiVolumeSet(np.zeros((4, 4, 4)))  # not 4-D
    bad = np.zeros((2, 2, 2, 2))
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        encoding.DwiVolumeSet(bad)

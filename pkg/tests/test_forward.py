import dataclasses

import numpy as np
import pytest

from safe_mrf.forward import (CoefficientMaps, GeometryError, clean_coeffs, corrupt,
                              corrupt_oracle, recon, time_segmentation)
from safe_mrf.metrics import nrmse
from safe_mrf.phantom import FieldMaps, ParameterMaps, PhantomSpec, generate_phantom
from safe_mrf.spiral import design_spiral, exact_forward, grid_adjoint, grid_forward

# NRMSE(corrupt(L) vs oracle) on the blur_setup phantom for L = 1, 2, 4, 8, 16
LS_NRMSE_GOLDEN = (1.014775, 0.7409557, 0.1538424, 2.895931e-4, 2.312587e-4)


def _nrmse_maps(a, b):
    return nrmse(a.channels, b.channels)


def _small(cd, seed=0):
    spec = PhantomSpec(grid_n=32, voxel_mm=8.0)
    pm, fm = generate_phantom(spec, seed)
    return pm, fm, design_spiral(9.0, 256.0, 32, 4.0)


def test_on_grid_voxel_scaled_by_pd(coarse_seq2):
    _, basis, cd = coarse_seq2
    i = cd.coeffs.shape[0] // 3
    t1, t2, b1 = cd.params[i]
    shape = (8, 8)
    mask = np.zeros(shape, bool)
    mask[3, 4] = True
    pm = ParameterMaps(np.where(mask, t1, 0.0), np.where(mask, t2, 0.0), 2.0 * mask, mask, 8, 4.0)
    fm = FieldMaps(np.where(mask, b1, 1.0), np.zeros(shape), 8, 4.0)
    c = clean_coeffs(pm, fm, basis, cd)
    np.testing.assert_array_equal(c.channels[:, 3, 4], 2.0 * cd.coeffs[i])
    assert np.count_nonzero(c.channels) == cd.K
    assert c.basis_id == basis.basis_id


def test_zero_pd_gives_zero(coarse_seq2):
    _, basis, cd = coarse_seq2
    pm, fm, _ = _small(cd)
    pm0 = dataclasses.replace(pm, pd=np.zeros_like(pm.pd))
    assert not np.any(clean_coeffs(pm0, fm, basis, cd).channels)


def test_b1_sensitivity(coarse_seq2):
    _, basis, cd = coarse_seq2
    pm, fm, _ = _small(cd)
    m = pm.mask
    a = clean_coeffs(pm, dataclasses.replace(fm, b1_rel=np.ones_like(fm.b1_rel)), basis, cd)
    b = clean_coeffs(pm, dataclasses.replace(fm, b1_rel=np.full_like(fm.b1_rel, 0.7)), basis, cd)
    rel = np.abs(b.channels[0][m] - a.channels[0][m]) / np.abs(a.channels[0][m])
    assert rel.max() > 0.01


def test_basis_mismatch(coarse_seq2, small_dict):
    _, basis, _ = coarse_seq2
    pm, fm, _ = _small(None)
    with pytest.raises(GeometryError):
        clean_coeffs(pm, fm, basis, small_dict[2])


@pytest.mark.parametrize("n", [1, 3, 8, 16])
def test_segments_partition_readout(n):
    t = design_spiral(9.0, 256.0, 32, 4.0)
    seg = time_segmentation(t, n)
    counts = np.bincount(seg.labels, minlength=n)
    assert counts.sum() == t.n_samples and np.all(counts > 0)
    assert np.all(np.diff(seg.labels) >= 0)
    np.testing.assert_allclose(np.diff(seg.centers_ms), 9.0 / n)


def test_zero_b0_l1_is_gridding_roundtrip(coarse_seq2):
    _, basis, cd = coarse_seq2
    pm, fm, t = _small(cd)
    c = clean_coeffs(pm, fm, basis, cd)
    out, samples = corrupt(c, np.zeros((32, 32)), t, time_segmentation(t, 1))
    for ch in range(c.K):
        np.testing.assert_array_equal(samples[ch], grid_forward(c.channels[ch], t))
        np.testing.assert_array_equal(out.channels[ch],
                                      grid_adjoint(grid_forward(c.channels[ch], t), t,
                                                   use_dcf=True))
    for n, kind in [(4, "ls"), (16, "ls"), (8, "rect")]:
        other, _ = corrupt(c, np.zeros((32, 32)), t, time_segmentation(t, n, kind))
        np.testing.assert_array_equal(other.channels, out.channels)


def test_linearity(coarse_seq2):
    _, basis, cd = coarse_seq2
    pm, fm, t = _small(cd)
    seg = time_segmentation(t, 8)
    c1 = clean_coeffs(pm, fm, basis, cd)
    pm2, fm2 = generate_phantom(PhantomSpec(grid_n=32, voxel_mm=8.0), 1)
    c2 = clean_coeffs(pm2, fm2, basis, cd)
    a, b = 1.5 - 0.5j, -0.25
    mix = dataclasses.replace(c1, channels=a * c1.channels + b * c2.channels)
    lhs = corrupt(mix, fm.b0_hz, t, seg)[0].channels
    rhs = a * corrupt(c1, fm.b0_hz, t, seg)[0].channels + b * corrupt(c2, fm.b0_hz, t, seg)[0].channels
    assert np.max(np.abs(lhs - rhs)) < 1e-10 * np.max(np.abs(rhs))


def test_segmentation_converges_to_oracle(blur_setup):
    s = blur_setup
    errs = []
    for n in (1, 2, 4, 8, 16):
        out, _ = corrupt(s["c"], s["fm"].b0_hz, s["traj"], time_segmentation(s["traj"], n))
        errs.append(_nrmse_maps(out, s["oracle"]))
    assert all(b <= a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-2 and errs[3] <= errs[0]
    np.testing.assert_allclose(errs, LS_NRMSE_GOLDEN, rtol=1e-3)


def test_oracle_zero_b0_samples(coarse_seq2):
    _, basis, cd = coarse_seq2
    pm, fm, t = _small(cd)
    c = clean_coeffs(pm, fm, basis, cd)
    _, samples = corrupt_oracle(c, np.zeros((32, 32)), t)
    for ch in range(c.K):
        np.testing.assert_array_equal(samples[ch], exact_forward(c.channels[ch], t))


def test_oracle_uniform_offset_demodulates(coarse_seq2):
    _, basis, cd = coarse_seq2
    pm, fm, t = _small(cd)
    c = clean_coeffs(pm, fm, basis, cd)
    _, s0 = corrupt_oracle(c, np.zeros((32, 32)), t)
    _, s1 = corrupt_oracle(c, np.full((32, 32), 60.0), t)
    a, b = recon(s0, t), recon(s1, t, demod_hz=60.0)
    assert np.max(np.abs(a - b)) < 1e-10 * np.max(np.abs(a))


def test_oracle_blur_grows_with_amplitude(coarse_seq2):
    _, basis, cd = coarse_seq2
    pm, fm, t = _small(cd)
    c = clean_coeffs(pm, fm, basis, cd)
    shape = fm.b0_hz / np.abs(fm.b0_hz[pm.mask]).max()
    clean = recon(np.stack([exact_forward(ch, t) for ch in c.channels]), t)
    errs = [nrmse(corrupt_oracle(c, amp * shape, t)[0].channels, clean) for amp in (0, 75, 150)]
    assert errs[0] < 1e-12 < errs[1] < errs[2]


def test_noise_hook(coarse_seq2):
    _, basis, cd = coarse_seq2
    pm, fm, t = _small(cd)
    c = clean_coeffs(pm, fm, basis, cd)
    seg = time_segmentation(t, 4)
    clean, s0 = corrupt(c, fm.b0_hz, t, seg)
    noisy, s1 = corrupt(c, fm.b0_hz, t, seg, noise_std=0.5, rng=3)
    again, s2 = corrupt(c, fm.b0_hz, t, seg, noise_std=0.5, rng=3)
    np.testing.assert_array_equal(s1, s2)
    assert np.std(s1 - s0) == pytest.approx(0.5 * np.sqrt(2), rel=0.05)
    assert not np.array_equal(noisy.channels, clean.channels)


def test_geometry_mismatch(coarse_seq2):
    _, basis, cd = coarse_seq2
    pm, fm, t = _small(cd)
    c = clean_coeffs(pm, fm, basis, cd)
    with pytest.raises(GeometryError):
        corrupt(c, np.zeros((16, 16)), t, time_segmentation(t, 2))
    with pytest.raises(GeometryError):
        corrupt_oracle(c, fm.b0_hz, design_spiral(9.0, 256.0, 64, 4.0))
    with pytest.raises(ValueError):
        time_segmentation(t, 0)


def test_coefficient_maps_k():
    assert CoefficientMaps(np.zeros((3, 4, 4), complex), "x", 4, 1.0).K == 3

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given
from scipy.ndimage import gaussian_filter

from safe_mrf.metrics import nrmse
from safe_mrf.seqmodel import builtin_names, builtin_sequence
from safe_mrf.spiral import (DomainError, density_weights, design_spiral, exact_forward,
                             grid_adjoint, grid_forward)

# grid_forward vs exact_forward NRMSE, smooth 64x64 image (4.89e-4 at 5.38 ms, 4.75e-4 at 9 ms)
NUFFT_NRMSE_GOLDEN = 4.75e-4


def smooth_image(n, seed, sigma=3.0):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    img = gaussian_filter(z.real, sigma) + 1j * gaussian_filter(z.imag, sigma)
    y, x = np.mgrid[:n, :n] - n / 2
    return img * (np.hypot(x, y) < 0.4 * n)


@pytest.fixture(scope="module")
def traj64():
    return design_spiral(9.0, 256.0, 64, 4.0)


def test_sample_count_and_kmax():
    t = design_spiral(5.38, 256.0, 128, 4.0)
    assert t.n_samples == 1345
    assert t.kmax == 0.25
    assert t.t_ms[0] == 0.0 and np.all(np.diff(t.t_ms) > 0)


@pytest.mark.parametrize("name", builtin_names())
def test_design_invariants_builtin(name):
    ro = builtin_sequence(name).readout_ms
    for n in (32, 64, 128):
        t = design_spiral(ro, 256.0, n, 4.0)
        r = np.hypot(t.kx, t.ky)
        assert np.all(r <= t.kmax + 1e-12)
        assert np.all(np.diff(r) >= 0)
        assert np.all(np.diff(t.t_ms) > 0) and t.t_ms[-1] < ro
        assert t.kmax == pytest.approx(1 / (2 * t.voxel_mm), rel=1e-15)
        assert t.n_samples == int(ro * 1000 // 4)


@pytest.mark.parametrize("args", [(0.1, 256.0, 64, 4.0), (5.0, 0.0, 64, 4.0), (5.0, 256.0, 64, -1)])
def test_design_errors(args):
    with pytest.raises(DomainError):
        design_spiral(*args)


def test_density_weights(seq1):
    t = design_spiral(seq1.readout_ms, 256.0, 64, 4.0)
    w = density_weights(t)
    assert np.all(np.isfinite(w)) and np.all(w >= 0)
    assert np.all(np.diff(w) >= -1e-15 * w.max())


def test_disk_recon_with_dcf(traj64):
    n = 64
    y, x = np.mgrid[:n, :n] - n / 2
    disk = (np.hypot(x, y) < 20).astype(float)
    rec = grid_adjoint(exact_forward(disk, traj64), traj64, use_dcf=True)
    inner = np.hypot(x, y) < 18
    assert nrmse(rec.real, disk, inner) < 0.1


def test_centre_voxel_gives_ones(traj64):
    img = np.zeros((64, 64))
    img[32, 32] = 1.0
    np.testing.assert_allclose(exact_forward(img, traj64), 1.0, atol=1e-12)


def test_uniform_b0_factorizes(traj64):
    img = smooth_image(64, 0)
    f0 = 37.5
    a = exact_forward(img, traj64, np.full((64, 64), f0))
    b = exact_forward(img, traj64) * np.exp(2j * np.pi * f0 * traj64.t_ms / 1000)
    assert np.max(np.abs(a - b)) < 1e-9 * np.max(np.abs(b))


def test_linearity(traj64):
    x, y = smooth_image(64, 1), smooth_image(64, 2)
    a, b = 0.3 - 1.1j, 2.0
    for op in (exact_forward, grid_forward):
        lhs = op(a * x + b * y, traj64)
        rhs = a * op(x, traj64) + b * op(y, traj64)
        assert np.max(np.abs(lhs - rhs)) < 1e-12 * np.max(np.abs(rhs))


@pytest.mark.parametrize("ro", [5.38, 9.0])
def test_grid_matches_exact(ro):
    t = design_spiral(ro, 256.0, 64, 4.0)
    img = smooth_image(64, 3)
    err = nrmse(grid_forward(img, t), exact_forward(img, t))
    assert err < 1e-2
    assert err < 1.5 * NUFFT_NRMSE_GOLDEN


def test_zero_in_zero_out(traj64):
    assert np.all(grid_forward(np.zeros((64, 64)), traj64) == 0)
    assert np.all(grid_adjoint(np.zeros(traj64.n_samples), traj64) == 0)


@pytest.mark.parametrize("n", [32, 64])
def test_adjoint_identity(n):
    t = design_spiral(9.0, 256.0, n, 4.0)
    rng = np.random.default_rng(n)
    for _ in range(10):
        x = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        y = rng.standard_normal(t.n_samples) + 1j * rng.standard_normal(t.n_samples)
        lhs = np.vdot(y, grid_forward(x, t))
        rhs = np.vdot(grid_adjoint(y, t), x)
        assert abs(lhs - rhs) / (np.linalg.norm(x) * np.linalg.norm(y)) < 1e-6


def test_demodulation_restores_uniform_offset(traj64):
    img = smooth_image(64, 4)
    f0 = -80.0
    clean = grid_adjoint(exact_forward(img, traj64), traj64, use_dcf=True)
    off = exact_forward(img, traj64, np.full((64, 64), f0))
    blurred = grid_adjoint(off, traj64, use_dcf=True)
    fixed = grid_adjoint(off, traj64, demod_hz=f0, use_dcf=True)
    assert nrmse(fixed, clean) < 0.1
    assert nrmse(fixed, clean) < 1e-9 < nrmse(blurred, clean)


def test_geometry_errors(traj64):
    with pytest.raises(DomainError):
        grid_forward(np.zeros((32, 32)), traj64)
    with pytest.raises(DomainError):
        exact_forward(np.zeros((32, 32)), traj64)
    with pytest.raises(DomainError):
        grid_adjoint(np.zeros(7), traj64)


@given(st.floats(1.0, 20.0), st.sampled_from([16, 32, 48]), st.floats(1.0, 8.0))
def test_design_property(ro, n, dwell):
    if ro * 1000 / dwell < 64:
        with pytest.raises(DomainError):
            design_spiral(ro, 200.0, n, dwell)
        return
    t = design_spiral(ro, 200.0, n, dwell)
    r = np.hypot(t.kx, t.ky)
    assert np.all(r <= t.kmax + 1e-12) and np.all(np.diff(r) >= 0)
    assert t.n_samples == int(np.floor(round(ro * 1000 / dwell, 9)))

import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

warnings.filterwarnings("ignore", message=".*TBB.*")

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

from safe_mrf import dictionary as dct  # noqa: E402
from safe_mrf.experiment import coarse_grid  # noqa: E402
from safe_mrf.seqmodel import builtin_sequence  # noqa: E402


@pytest.fixture(scope="session")
def seq1():
    return builtin_sequence("seq1")


@pytest.fixture(scope="session")
def seq2():
    return builtin_sequence("seq2")


@pytest.fixture(scope="session")
def small_grid():
    return dct.ParamGrid(t1_ms=tuple(np.geomspace(200, 2500, 10)),
                         t2_ms=tuple(np.geomspace(20, 300, 10)),
                         b1_rel=(0.7, 1.0, 1.3))


@pytest.fixture(scope="session")
def small_dict(seq1, small_grid):
    d = dct.build_dictionary(seq1, small_grid)
    basis, cd = dct.compress(d, 5)
    return d, basis, cd


@pytest.fixture(scope="session")
def coarse_seq2(seq2):
    d = dct.build_dictionary(seq2, coarse_grid())
    basis, cd = dct.compress(d, 5)
    return d, basis, cd


@pytest.fixture(scope="session")
def standard_seq1(seq1):
    """Standard-grid dictionary on seq1 (about 35k atoms, roughly half a minute)."""
    d = dct.build_dictionary(seq1, dct.standard_grid())
    basis, cd = dct.compress(d, 5)
    return d, basis, cd


@pytest.fixture(scope="session")
def blur_setup(coarse_seq2, seq2):
    """64x64 phantom, +-150 Hz B0 smoothed over 48 mm, clean coefficients, exact corruption."""
    from safe_mrf.forward import clean_coeffs, corrupt_oracle
    from safe_mrf.phantom import PhantomSpec, generate_phantom
    from safe_mrf.spiral import design_spiral

    _, basis, cd = coarse_seq2
    spec = PhantomSpec(grid_n=64, voxel_mm=4.0, b0_smooth_mm=48.0, b0_amp_min=150.0,
                       b0_amp_max=150.0)
    pm, fm = generate_phantom(spec, 0)
    traj = design_spiral(seq2.readout_ms, 256.0, 64, 4.0)
    c = clean_coeffs(pm, fm, basis, cd)
    oracle, oracle_samples = corrupt_oracle(c, fm.b0_hz, traj)
    return dict(pm=pm, fm=fm, traj=traj, c=c, basis=basis, cd=cd, oracle=oracle,
                oracle_samples=oracle_samples)


@pytest.fixture(scope="session")
def bias_dict(seq1):
    """Fine seq1 grid around (1000 ms, 80 ms) with 13 B1 values in [0.7, 1.3]."""
    g = dct.ParamGrid(t1_ms=tuple(1000 * 2 ** (np.arange(-10, 11) / 10)),
                      t2_ms=tuple(80 * 2 ** (np.arange(-16, 17) / 8)),
                      b1_rel=tuple(np.round(np.linspace(0.7, 1.3, 13), 10)))
    d = dct.build_dictionary(seq1, g)
    basis, cd = dct.compress(d, 5)
    return d, basis, cd


@pytest.fixture
def report(request):
    """Record one acceptance line; all lines are echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_REPORT, [])

    def _report(n: int, ok: bool, detail: str) -> None:
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append(line)

    return _report


_REPORT = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_REPORT, [])
    if lines:
        terminalreporter.section("acceptance")
        for line in sorted(lines):
            terminalreporter.write_line(line)

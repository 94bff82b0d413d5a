"""Time-segmented corruption vs the exact off-resonance oracle for increasing L.

Usage: python3 scripts/segmentation_convergence.py [--seed 0] [--amp 150]
"""
import argparse

from safe_mrf import dictionary as dct
from safe_mrf.experiment import coarse_grid
from safe_mrf.forward import clean_coeffs, corrupt, corrupt_oracle, time_segmentation
from safe_mrf.metrics import nrmse
from safe_mrf.phantom import PhantomSpec, generate_phantom
from safe_mrf.seqmodel import builtin_sequence
from safe_mrf.spiral import design_spiral


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--amp", type=float, default=150.0, help="B0 amplitude in Hz")
    ap.add_argument("--smooth-mm", type=float, default=48.0)
    a = ap.parse_args()
    seq = builtin_sequence("seq2")
    basis, cd = dct.compress(dct.build_dictionary(seq, coarse_grid()), 5)
    spec = PhantomSpec(grid_n=64, voxel_mm=4.0, b0_smooth_mm=a.smooth_mm,
                       b0_amp_min=a.amp, b0_amp_max=a.amp)
    pm, fm = generate_phantom(spec, a.seed)
    traj = design_spiral(seq.readout_ms, 256.0, 64, 4.0)
    c = clean_coeffs(pm, fm, basis, cd)
    oracle, _ = corrupt_oracle(c, fm.b0_hz, traj)
    for kind in ("ls", "rect"):
        for n in (1, 2, 4, 8, 16):
            out, _ = corrupt(c, fm.b0_hz, traj, time_segmentation(traj, n, kind))
            print(f"{kind:4s} L={n:2d}  nrmse {nrmse(out.channels, oracle.channels):.3e}")


if __name__ == "__main__":
    main()

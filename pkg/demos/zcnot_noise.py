"""Z-CNOT under quasistatic and 1/f charge noise.

A reduced ensemble keeps this to about a minute; the CLI ``noise-curve``
command runs the full version.
"""

import numpy as np

from hybridcz import gates, noise
from hybridcz.model import DEFAULT_PARAMS, ueV_to_GHz

P = DEFAULT_PARAMS
settings = gates.calibrate_zcnot(P, 4.2, 4.4, 2.25)
print(f"Z-CNOT gate time {settings.gate_time:.3f} ns")
print(f"noise-free 1-F = {gates.compose_zcnot(P, settings).infidelity:.2e}")

unit = noise.one_over_f_ensemble(noise.OneOverFSpec.from_sigma(1.0, seed=1), settings.gate_time, 50)
print("\n sigma [ueV]   quasistatic F   1/f F (N=50)   1/f leak share")
for s_ueV in (1.0, 2.0, 4.0):
    s = float(ueV_to_GHz(s_ueV))
    qs = gates.compose_zcnot(P, settings, noise.quadrature_grid(s, s, s, 4))
    of = gates.compose_zcnot(P, settings, [r.scaled(s) for r in unit])
    share = of.F_leak_deficit / of.infidelity
    print(f"   {s_ueV:4.1f}        {100 * qs.F:7.3f}%       {100 * of.F:7.3f}%      {share:5.2f}")

# The synthesized noise has a 1/f spectrum.
f, p = noise.psd_estimate(noise.one_over_f_ensemble(noise.OneOverFSpec.from_sigma(1.0, seed=2), 200.0, 8))
print(f"\nperiodogram slope: {noise.loglog_slope(f, p, 5e7, 1e11):.3f}")
